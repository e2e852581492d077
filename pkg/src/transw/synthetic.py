"""Small synthetic knowledge graph with a planted compositional translation structure.

Every word carries a hidden vector; an entity or relation's hidden vector is
the sum over its words, and the facts are the triples with the smallest
``||h + r - t||`` under those hidden vectors. Relations form a domain x role
grid ("film starring", "music director", ...) so each relation shares words
with others and can be reconstructed from them when held out.
"""

import os
from dataclasses import dataclass
from itertools import combinations
from typing import List

import numpy as np

from .data import Split, TripleDataset, TripleIndex, Vocab
from .trainer import sample_negatives
from .words import WordEmbeddingTable

ENTITY_WORDS = [
    "amber", "birch", "cedar", "delta", "ember", "falcon", "granite", "harbor", "iris", "juniper",
    "kestrel", "lagoon", "maple", "nebula", "onyx", "prairie", "quartz", "raven", "sierra", "tundra",
    "umber", "valley", "willow", "yarrow", "zephyr", "aspen", "canyon", "dune", "fjord", "glacier",
]
DOMAINS = ["film", "music", "theatre"]
ROLES = ["starring", "director"]
WORD_SCALE = 0.3


@dataclass
class MicroKG:
    dataset: TripleDataset
    words: WordEmbeddingTable
    facts: np.ndarray
    planted_distance: np.ndarray  # (n_e, n_r, n_e) hidden distances

    def relation_names(self) -> List[str]:
        return self.dataset.relations.surfaces


def make_micro_kg(n_entities: int = 50, n_facts: int = 5000, dim: int = 16, n_valid: int = 500,
                  n_test: int = 500, seed: int = 0, hidden_dim: int = 4) -> MicroKG:
    rng = np.random.default_rng(seed)
    pairs = list(combinations(range(len(ENTITY_WORDS)), 2))
    chosen = rng.choice(len(pairs), n_entities, replace=False)
    ent_words = [(ENTITY_WORDS[pairs[i][0]], ENTITY_WORDS[pairs[i][1]]) for i in chosen]
    ent_names = [f"{a.capitalize()}_{b.capitalize()}" for a, b in ent_words]
    rel_words = [(d, r) for d in DOMAINS for r in ROLES]
    rel_names = [f"/{d}/{r}" for d, r in rel_words]

    vocab = ENTITY_WORDS + DOMAINS + ROLES
    hidden = {w: rng.normal(0.0, 1.0, hidden_dim) for w in vocab}
    ent_h = np.array([hidden[a] + hidden[b] for a, b in ent_words])
    rel_h = np.array([hidden[a] + hidden[b] for a, b in rel_words])
    dist = np.linalg.norm(ent_h[:, None, None, :] + rel_h[None, :, None, :] - ent_h[None, None, :, :], axis=-1)
    n_r = len(rel_names)
    flat = dist.ravel()
    keep = np.sort(np.argsort(flat, kind="stable")[:n_facts])
    h, rem = np.divmod(keep, n_r * n_entities)
    r, t = np.divmod(rem, n_entities)
    facts = np.stack([h, r, t], axis=1).astype(np.int64)

    order = rng.permutation(len(facts))
    test_pos = facts[order[:n_test]]
    valid_pos = facts[order[n_test:n_test + n_valid]]
    train = facts[order[n_test + n_valid:]]
    index = TripleIndex(facts, n_entities, n_r)

    def labeled(pos):
        neg = sample_negatives(pos, n_entities, index, rng)
        triples = np.empty((2 * len(pos), 3), dtype=np.int64)
        triples[0::2], triples[1::2] = pos, neg
        labels = np.zeros(2 * len(pos), dtype=bool)
        labels[0::2] = True
        return Split(triples, labels)

    ds = TripleDataset(Vocab(ent_names), Vocab(rel_names), Split(train), labeled(valid_pos), labeled(test_pos))
    word_vecs = rng.normal(0.0, WORD_SCALE, (len(vocab), dim))
    return MicroKG(ds, WordEmbeddingTable(vocab, word_vecs), facts, dist)


def write_micro_kg(kg: MicroKG, directory) -> None:
    """Write the fixture as tab-separated split files plus a GloVe-style ``words.txt``."""
    os.makedirs(directory, exist_ok=True)
    ds = kg.dataset
    for name, split in ds.splits.items():
        with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8") as fh:
            for i, (h, r, t) in enumerate(split.triples.tolist()):
                row = [ds.entities.lookup(h), ds.relations.lookup(r), ds.entities.lookup(t)]
                if split.labels is not None:
                    row.append("1" if split.labels[i] else "-1")
                fh.write("\t".join(row) + "\n")
    with open(os.path.join(directory, "words.txt"), "w", encoding="utf-8") as fh:
        for w, v in zip(kg.words.words, kg.words.vectors):
            fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")
