"""Translational scorers: TransW (word-composed embeddings) and the TransE baseline.

Both models score a triple by the dissimilarity ``||h + r - t||`` (L1 or
squared L2); lower means more plausible. TransW builds every entity and
relation vector from the word vectors of its name::

    e = sum_i  word_i * conn_role[word_i]  +  bias_role        (elementwise *)

with one connection vector per word and role (entity or relation) and one bias
per role. Because the parameters live on words rather than on entity ids, any
surface form can be composed, including ones never seen in training.
"""

import logging
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import serialize
from .data import TripleDataset, Vocab, fingerprint_strings, tokenize, tokenize_entity
from .words import WordEmbeddingTable, default_oov_scale, oov_vector

logger = logging.getLogger(__name__)

NORMS = ("L1", "L2")
ROLES = ("entity", "relation")

# name -> (row indices or None for dense, values)
Gradients = Dict[str, Tuple[Optional[np.ndarray], np.ndarray]]


class CapabilityError(ValueError):
    """The model kind cannot do what was asked (e.g. TransE on an unseen entity)."""


def _check_norm(norm):
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")


def distance(h, r, t, norm: str = "L2"):
    """``||h + r - t||_1`` or ``||h + r - t||_2^2`` over the last axis."""
    h, r, t = np.asarray(h, dtype=float), np.asarray(r, dtype=float), np.asarray(t, dtype=float)
    if h.shape[-1] != r.shape[-1] or h.shape[-1] != t.shape[-1]:
        raise ValueError(f"dimension mismatch: {h.shape[-1]}, {r.shape[-1]}, {t.shape[-1]}")
    diff = h + r - t
    if norm == "L1":
        return np.abs(diff).sum(axis=-1)
    if norm == "L2":
        return (diff * diff).sum(axis=-1)
    raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")


def distance_grad(diff, norm):
    """Derivative of the distance with respect to ``h + r - t``."""
    return np.sign(diff) if norm == "L1" else 2.0 * diff


def _accumulate(rows, values):
    uniq, inv = np.unique(rows, return_inverse=True)
    out = np.zeros((len(uniq), values.shape[1]))
    np.add.at(out, inv, values)
    return uniq, out


class TranslationModel:
    kind = ""

    def __init__(self, dim: int, norm: str, entity_names: Sequence[str], relation_names: Sequence[str]):
        _check_norm(norm)
        self.dim = int(dim)
        self.norm = norm
        self.entity_names = list(entity_names)
        self.relation_names = list(relation_names)
        self.metadata: dict = {}

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def entity_vocab(self) -> Vocab:
        return Vocab(self.entity_names)

    def relation_vocab(self) -> Vocab:
        return Vocab(self.relation_names)

    # -- subclasses provide these -------------------------------------------------
    def _entity_forward(self, ids):
        raise NotImplementedError

    def _relation_forward(self, ids):
        raise NotImplementedError

    def _backprop(self, ids_e, grad_e, ctx_e, ids_r, grad_r, ctx_r) -> Gradients:
        raise NotImplementedError

    def parameters(self) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def end_epoch(self) -> None:
        pass

    # -- shared -------------------------------------------------------------------
    def entity_vectors(self, ids=None) -> np.ndarray:
        ids = np.arange(self.n_entities) if ids is None else np.asarray(ids, dtype=np.int64)
        return self._entity_forward(ids)[0]

    def relation_vectors(self, ids=None) -> np.ndarray:
        ids = np.arange(self.n_relations) if ids is None else np.asarray(ids, dtype=np.int64)
        return self._relation_forward(ids)[0]

    def score(self, triples) -> np.ndarray:
        """Distances for an (n, 3) array of (head, relation, tail) ids."""
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        ids_e, inv_e = np.unique(triples[:, [0, 2]], return_inverse=True)
        ids_r, inv_r = np.unique(triples[:, 1], return_inverse=True)
        inv_e = inv_e.reshape(-1, 2)
        E = self.entity_vectors(ids_e)
        R = self.relation_vectors(ids_r)
        return distance(E[inv_e[:, 0]], R[inv_r.ravel()], E[inv_e[:, 1]], self.norm)

    def score_triple(self, triple) -> float:
        return float(self.score([tuple(triple[:3])])[0])

    def pair_gradients(self, pos, neg, margin: float):
        """Hinge losses ``max(0, margin + d(pos) - d(neg))`` and their summed subgradient.

        ``pos`` and ``neg`` are aligned (n, 3) id arrays. Only rows touched by the
        pairs appear in the returned gradients.
        """
        pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
        neg = np.asarray(neg, dtype=np.int64).reshape(-1, 3)
        both = np.concatenate([pos, neg])
        ids_e, inv_e = np.unique(both[:, [0, 2]], return_inverse=True)
        ids_r, inv_r = np.unique(both[:, 1], return_inverse=True)
        inv_e = inv_e.reshape(-1, 2)
        inv_r = inv_r.ravel()
        E, ctx_e = self._entity_forward(ids_e)
        R, ctx_r = self._relation_forward(ids_r)
        diff = E[inv_e[:, 0]] + R[inv_r] - E[inv_e[:, 1]]
        if self.norm == "L1":
            d = np.abs(diff).sum(axis=1)
        else:
            d = (diff * diff).sum(axis=1)
        n = len(pos)
        losses = margin + d[:n] - d[n:]
        active = losses > 0
        losses = np.where(active, losses, 0.0)
        sign = np.concatenate([active, active]).astype(float)
        sign[n:] *= -1.0
        g = distance_grad(diff, self.norm) * sign[:, None]
        grad_e = np.zeros_like(E)
        grad_r = np.zeros_like(R)
        np.add.at(grad_e, inv_e[:, 0], g)
        np.add.at(grad_e, inv_e[:, 1], -g)
        np.add.at(grad_r, inv_r, g)
        return losses, self._backprop(ids_e, grad_e, ctx_e, ids_r, grad_r, ctx_r)

    def apply_gradients(self, grads: Gradients, lr: float) -> None:
        params = self.parameters()
        for name, (rows, values) in grads.items():
            if rows is None:
                params[name] -= lr * values
            else:
                params[name][rows] -= lr * values

    # -- persistence ----------------------------------------------------------------
    def _header(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "norm": self.norm,
            "entity_fingerprint": fingerprint_strings(self.entity_names),
            "relation_fingerprint": fingerprint_strings(self.relation_names),
        }

    def _sections(self) -> dict:
        raise NotImplementedError

    def to_bytes(self, extra: Optional[dict] = None) -> bytes:
        header = self._header()
        header["metadata"] = dict(self.metadata, **(extra or {}))
        return serialize.dumps(header, self._sections())

    def save(self, path, extra: Optional[dict] = None) -> None:
        serialize.atomic_write(path, self.to_bytes(extra))


class TransE(TranslationModel):
    """One free vector per entity and per relation; entities kept at unit L2 norm."""

    kind = "transe"

    def __init__(self, entity: np.ndarray, relation: np.ndarray, norm: str = "L2",
                 entity_names=None, relation_names=None):
        entity = np.array(entity, dtype=np.float64)
        relation = np.array(relation, dtype=np.float64)
        entity_names = entity_names if entity_names is not None else [str(i) for i in range(len(entity))]
        relation_names = relation_names if relation_names is not None else [str(i) for i in range(len(relation))]
        super().__init__(entity.shape[1], norm, entity_names, relation_names)
        self.entity = entity
        self.relation = relation

    @classmethod
    def init(cls, n_entities, n_relations, dim, norm="L2", seed=0, entity_names=None, relation_names=None):
        rng = np.random.default_rng(seed)
        bound = 6.0 / np.sqrt(dim)
        relation = rng.uniform(-bound, bound, (n_relations, dim))
        relation /= np.linalg.norm(relation, axis=1, keepdims=True)
        entity = rng.uniform(-bound, bound, (n_entities, dim))
        model = cls(entity, relation, norm, entity_names, relation_names)
        model.end_epoch()
        return model

    @classmethod
    def build(cls, dataset: TripleDataset, dim: int, norm: str = "L2", seed: int = 0):
        return cls.init(len(dataset.entities), len(dataset.relations), dim, norm, seed,
                        dataset.entities.surfaces, dataset.relations.surfaces)

    def parameters(self):
        return {"entity": self.entity, "relation": self.relation}

    def _entity_forward(self, ids):
        if len(ids) and (ids.min() < 0 or ids.max() >= self.n_entities):
            raise CapabilityError("TransE has no vector for an entity id outside its training vocabulary")
        return self.entity[ids], None

    def _relation_forward(self, ids):
        if len(ids) and (ids.min() < 0 or ids.max() >= self.n_relations):
            raise CapabilityError("TransE has no vector for a relation id outside its training vocabulary")
        return self.relation[ids], None

    def _backprop(self, ids_e, grad_e, ctx_e, ids_r, grad_r, ctx_r):
        return {"entity": (ids_e, grad_e), "relation": (ids_r, grad_r)}

    def end_epoch(self):
        norms = np.linalg.norm(self.entity, axis=1, keepdims=True)
        self.entity /= np.where(norms > 0, norms, 1.0)

    def score_surfaces(self, head: str, relation: str, tail: str) -> float:
        try:
            h = self.entity_names.index(head)
            t = self.entity_names.index(tail)
            r = self.relation_names.index(relation)
        except ValueError:
            raise CapabilityError("TransE cannot score an entity or relation it was not trained on; "
                                  "use a TransW model to compose unseen surfaces from words") from None
        return self.score_triple((h, r, t))

    def _sections(self):
        return {
            "entity_names": self.entity_names,
            "relation_names": self.relation_names,
            "entity": self.entity,
            "relation": self.relation,
        }

    @classmethod
    def _from_sections(cls, header, s):
        return cls(s["entity"], s["relation"], header["norm"], s["entity_names"], s["relation_names"])


def _flatten(ptr, tok, ids):
    """Token word-ids of the given items, with the item position of each token."""
    starts = ptr[ids]
    lens = ptr[ids + 1] - starts
    seg = np.repeat(np.arange(len(ids)), lens)
    offsets = np.cumsum(lens) - lens
    pos = np.arange(int(lens.sum())) - np.repeat(offsets, lens) + np.repeat(starts, lens)
    return seg, tok[pos]


class ComposedEmbedding(NamedTuple):
    vector: np.ndarray
    role: str
    tokens: Tuple[str, ...]


class TransW(TranslationModel):
    """Entities and relations composed from word vectors through per-word connection vectors."""

    kind = "transw"

    def __init__(self, words: List[str], word_vectors, conn_ent, conn_rel, b_ent, b_rel,
                 entity_tokens: Sequence[Sequence[str]], relation_tokens: Sequence[Sequence[str]],
                 norm: str = "L2", entity_names=None, relation_names=None, fine_tune: bool = False,
                 project: bool = False, oov: str = "hash", oov_scale: Optional[float] = None):
        word_vectors = np.array(word_vectors, dtype=np.float64)
        dim = word_vectors.shape[1]
        entity_names = list(entity_names) if entity_names is not None else [" ".join(t) for t in entity_tokens]
        relation_names = list(relation_names) if relation_names is not None else [" ".join(t) for t in relation_tokens]
        super().__init__(dim, norm, entity_names, relation_names)
        self.words = list(words)
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.word_vectors = word_vectors
        self.conn_ent = np.array(conn_ent, dtype=np.float64)
        self.conn_rel = np.array(conn_rel, dtype=np.float64)
        self.b_ent = np.array(b_ent, dtype=np.float64)
        self.b_rel = np.array(b_rel, dtype=np.float64)
        self.fine_tune = bool(fine_tune)
        self.project = bool(project)
        self.oov = oov
        self.oov_scale = default_oov_scale(dim) if oov_scale is None else float(oov_scale)
        self.ent_ptr, self.ent_tok = self._token_table(entity_tokens)
        self.rel_ptr, self.rel_tok = self._token_table(relation_tokens)
        for name in ("conn_ent", "conn_rel", "word_vectors"):
            if getattr(self, name).shape != (len(self.words), dim):
                raise ValueError(f"{name} must have shape ({len(self.words)}, {dim})")
        if self.b_ent.shape != (dim,) or self.b_rel.shape != (dim,):
            raise ValueError(f"biases must have shape ({dim},)")

    def _token_table(self, token_lists):
        ptr = np.zeros(len(token_lists) + 1, dtype=np.int64)
        flat = []
        for i, toks in enumerate(token_lists):
            for w in toks:
                if w not in self.word_index:
                    raise KeyError(f"token {w!r} has no word row; add it with add_words first")
                flat.append(self.word_index[w])
            ptr[i + 1] = len(flat)
        return ptr, np.array(flat, dtype=np.int64)

    @classmethod
    def init(cls, entity_tokens, relation_tokens, words: WordEmbeddingTable, norm="L2", seed=0,
             fine_tune=False, project=False, entity_names=None, relation_names=None, noise=0.1):
        vocab = []
        seen = set()
        for toks in list(entity_tokens) + list(relation_tokens):
            for w in toks:
                if w not in seen:
                    seen.add(w)
                    vocab.append(w)
        dim = words.dim
        rng = np.random.default_rng(seed)
        wv = words.lookup_many(vocab).reshape(len(vocab), dim)
        conn_ent = 1.0 + rng.uniform(-noise, noise, (len(vocab), dim))
        conn_rel = 1.0 + rng.uniform(-noise, noise, (len(vocab), dim))
        n_oov = sum(1 for w in vocab if w not in words)
        if n_oov:
            logger.info("%d of %d words are out of vocabulary (policy %s)", n_oov, len(vocab), words.oov)
        return cls(vocab, wv, conn_ent, conn_rel, np.zeros(dim), np.zeros(dim), entity_tokens,
                   relation_tokens, norm, entity_names, relation_names, fine_tune, project,
                   words.oov, words.oov_scale)

    @classmethod
    def build(cls, dataset: TripleDataset, words: WordEmbeddingTable, norm="L2", seed=0,
              fine_tune=False, project=False):
        ent_toks = [dataset.entity_tokens(i) for i in range(len(dataset.entities))]
        rel_toks = [dataset.relation_tokens(i) for i in range(len(dataset.relations))]
        empty = sum(1 for t in ent_toks + rel_toks if not t)
        if empty:
            logger.warning("%d names have no word tokens and compose to the role bias alone", empty)
        return cls.init(ent_toks, rel_toks, words, norm, seed, fine_tune, project,
                        dataset.entities.surfaces, dataset.relations.surfaces)

    def parameters(self):
        params = {"conn_ent": self.conn_ent, "conn_rel": self.conn_rel, "b_ent": self.b_ent, "b_rel": self.b_rel}
        if self.fine_tune:
            params["word_vectors"] = self.word_vectors
        return params

    # -- vocabulary growth -------------------------------------------------------------
    def word_vector(self, word: str, words: Optional[WordEmbeddingTable] = None) -> np.ndarray:
        i = self.word_index.get(word)
        if i is not None:
            return self.word_vectors[i]
        if words is not None:
            return words.lookup(word)
        return oov_vector(word, self.dim, self.oov, self.oov_scale)

    def connection(self, word: str, role: str) -> np.ndarray:
        i = self.word_index.get(word)
        if i is None:
            # a word never seen in training has an identity connection
            return np.ones(self.dim)
        return (self.conn_ent if role == "entity" else self.conn_rel)[i]

    def add_words(self, new_words: Sequence[str], words: Optional[WordEmbeddingTable] = None) -> None:
        new_words = [w for w in dict.fromkeys(new_words) if w not in self.word_index]
        if not new_words:
            return
        vecs = np.array([self.word_vector(w, words) for w in new_words]).reshape(-1, self.dim)
        for w in new_words:
            self.word_index[w] = len(self.words)
            self.words.append(w)
        self.word_vectors = np.concatenate([self.word_vectors, vecs])
        ones = np.ones((len(new_words), self.dim))
        self.conn_ent = np.concatenate([self.conn_ent, ones])
        self.conn_rel = np.concatenate([self.conn_rel, ones])

    def add_items(self, role: str, surfaces: Sequence[str], token_lists: Sequence[Sequence[str]],
                  words: Optional[WordEmbeddingTable] = None) -> None:
        """Append entities or relations that were not in the training data."""
        self.add_words([w for toks in token_lists for w in toks], words)
        ptr, tok = self._token_table(token_lists)
        if role == "entity":
            self.ent_ptr = np.concatenate([self.ent_ptr, ptr[1:] + self.ent_ptr[-1]])
            self.ent_tok = np.concatenate([self.ent_tok, tok])
            self.entity_names.extend(surfaces)
        else:
            self.rel_ptr = np.concatenate([self.rel_ptr, ptr[1:] + self.rel_ptr[-1]])
            self.rel_tok = np.concatenate([self.rel_tok, tok])
            self.relation_names.extend(surfaces)

    def item_tokens(self, role: str, idx: int) -> List[str]:
        ptr, tok = (self.ent_ptr, self.ent_tok) if role == "entity" else (self.rel_ptr, self.rel_tok)
        return [self.words[w] for w in tok[ptr[idx]:ptr[idx + 1]]]

    # -- forward / backward ----------------------------------------------------------
    def _compose_rows(self, ptr, tok, ids, conn, bias):
        seg, w = _flatten(ptr, tok, ids)
        out = np.zeros((len(ids), self.dim))
        np.add.at(out, seg, self.word_vectors[w] * conn[w])
        out += bias
        return out, (seg, w)

    def _entity_forward(self, ids):
        raw, (seg, w) = self._compose_rows(self.ent_ptr, self.ent_tok, ids, self.conn_ent, self.b_ent)
        if not self.project:
            return raw, (seg, w, None)
        norms = np.linalg.norm(raw, axis=1)
        big = norms > 1.0
        out = raw.copy()
        out[big] /= norms[big, None]
        return out, (seg, w, (out, norms, big))

    def _relation_forward(self, ids):
        raw, (seg, w) = self._compose_rows(self.rel_ptr, self.rel_tok, ids, self.conn_rel, self.b_rel)
        return raw, (seg, w, None)

    def _backprop(self, ids_e, grad_e, ctx_e, ids_r, grad_r, ctx_r):
        seg_e, w_e, proj = ctx_e
        if proj is not None:
            unit, norms, big = proj
            g = grad_e[big]
            p = unit[big]
            grad_e = grad_e.copy()
            grad_e[big] = (g - p * (p * g).sum(axis=1, keepdims=True)) / norms[big, None]
        seg_r, w_r, _ = ctx_r
        ge = grad_e[seg_e]
        gr = grad_r[seg_r]
        grads: Gradients = {
            "conn_ent": _accumulate(w_e, ge * self.word_vectors[w_e]),
            "conn_rel": _accumulate(w_r, gr * self.word_vectors[w_r]),
            "b_ent": (None, grad_e.sum(axis=0)),
            "b_rel": (None, grad_r.sum(axis=0)),
        }
        if self.fine_tune:
            grads["word_vectors"] = _accumulate(
                np.concatenate([w_e, w_r]),
                np.concatenate([ge * self.conn_ent[w_e], gr * self.conn_rel[w_r]]))
        return grads

    # -- surfaces -------------------------------------------------------------------
    def compose_tokens(self, tokens: Sequence[str], role: str, words: Optional[WordEmbeddingTable] = None):
        return compose(tokens, role, self, words).vector

    def score_surfaces(self, head: str, relation: str, tail: str, names: Optional[dict] = None,
                       words: Optional[WordEmbeddingTable] = None) -> float:
        """Distance of a triple given by surface forms, composing any unseen name from its words."""
        h = self._project_vec(self.compose_tokens(tokenize_entity(head, names), "entity", words))
        t = self._project_vec(self.compose_tokens(tokenize_entity(tail, names), "entity", words))
        r = self.compose_tokens(tokenize(relation), "relation", words)
        return float(distance(h, r, t, self.norm))

    def _project_vec(self, v):
        if self.project:
            n = np.linalg.norm(v)
            if n > 1.0:
                return v / n
        return v

    # -- persistence ----------------------------------------------------------------
    def _header(self):
        header = super()._header()
        header.update(fine_tune=self.fine_tune, project=self.project, oov=self.oov, oov_scale=self.oov_scale)
        return header

    def _sections(self):
        return {
            "words": self.words,
            "entity_names": self.entity_names,
            "relation_names": self.relation_names,
            "entity_token_ptr": self.ent_ptr,
            "entity_token_ids": self.ent_tok,
            "relation_token_ptr": self.rel_ptr,
            "relation_token_ids": self.rel_tok,
            "word_vectors": self.word_vectors,
            "conn_ent": self.conn_ent,
            "conn_rel": self.conn_rel,
            "b_ent": self.b_ent,
            "b_rel": self.b_rel,
        }

    @classmethod
    def _from_sections(cls, header, s):
        words = s["words"]

        def tokens(ptr, ids):
            return [[words[j] for j in ids[ptr[i]:ptr[i + 1]]] for i in range(len(ptr) - 1)]

        return cls(words, s["word_vectors"], s["conn_ent"], s["conn_rel"], s["b_ent"], s["b_rel"],
                   tokens(s["entity_token_ptr"], s["entity_token_ids"]),
                   tokens(s["relation_token_ptr"], s["relation_token_ids"]),
                   header["norm"], s["entity_names"], s["relation_names"], header["fine_tune"],
                   header["project"], header["oov"], header["oov_scale"])


def compose(tokens: Sequence[str], role: str, params: TransW,
            words: Optional[WordEmbeddingTable] = None) -> ComposedEmbedding:
    """Sum of word vector * connection vector over the tokens, plus the role bias.

    An empty token list composes to the role bias alone. Word vectors come from
    the model when it already holds the word, else from ``words``, else from the
    model's out-of-vocabulary policy.
    """
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}")
    if words is not None and words.dim != params.dim:
        raise ValueError(f"word table dimension {words.dim} does not match model dimension {params.dim}")
    acc = np.zeros(params.dim)
    for w in tokens:
        acc = acc + params.word_vector(w, words) * params.connection(w, role)
    bias = params.b_ent if role == "entity" else params.b_rel
    return ComposedEmbedding(acc + bias, role, tuple(tokens))


MODEL_KINDS = {"transw": TransW, "transe": TransE}


def from_bytes(data: bytes, dim: Optional[int] = None, entity_fingerprint: Optional[str] = None,
               relation_fingerprint: Optional[str] = None):
    header, sections = serialize.loads(data)
    kind = header.get("kind")
    if kind not in MODEL_KINDS:
        raise serialize.ModelFormatError(f"unknown model kind {kind!r}")
    if dim is not None and header["dim"] != dim:
        raise serialize.ModelFormatError(f"model dimension is {header['dim']}, expected {dim}")
    if entity_fingerprint is not None and header["entity_fingerprint"] != entity_fingerprint:
        raise serialize.ModelFormatError("entity vocabulary fingerprint does not match the dataset")
    if relation_fingerprint is not None and header["relation_fingerprint"] != relation_fingerprint:
        raise serialize.ModelFormatError("relation vocabulary fingerprint does not match the dataset")
    model = MODEL_KINDS[kind]._from_sections(header, sections)
    model.metadata = header.get("metadata", {})
    return model


def load(path, dim: Optional[int] = None, entity_fingerprint: Optional[str] = None,
         relation_fingerprint: Optional[str] = None):
    with open(path, "rb") as fh:
        data = fh.read()
    return from_bytes(data, dim, entity_fingerprint, relation_fingerprint)


def save(model: TranslationModel, path, extra: Optional[dict] = None) -> None:
    model.save(path, extra)
