"""Knowledge-graph datasets: vocabularies, triple files, tokenization and fold plans."""

import hashlib
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TOKENIZER_VERSION = 1

_SPLIT_RE = re.compile(r"[/_\-.\s]+")
# trailing WordNet sense markers such as "_NN_1" or "_2"
_SENSE_SUFFIX_RE = re.compile(r"(?:_(?:nn|vb|jj|rb|\d+))+$", re.IGNORECASE)
_HAS_WORD_CHAR = re.compile(r"\w", re.UNICODE)


class DataFormatError(ValueError):
    """A triple, manifest or name-map file does not match its schema."""


class Vocab:
    """Bijection between surface forms and contiguous integer ids."""

    def __init__(self, surfaces: Iterable[str] = ()):
        self._surfaces: List[str] = []
        self._ids: Dict[str, int] = {}
        self.frozen = False
        for s in surfaces:
            self.add(s)

    def add(self, surface: str) -> int:
        idx = self._ids.get(surface)
        if idx is None:
            if self.frozen:
                raise KeyError(surface)
            idx = len(self._surfaces)
            self._surfaces.append(surface)
            self._ids[surface] = idx
        return idx

    def id_of(self, surface: str) -> int:
        return self._ids[surface]

    def get(self, surface: str, default=None):
        return self._ids.get(surface, default)

    def lookup(self, idx: int) -> str:
        return self._surfaces[idx]

    def __contains__(self, surface) -> bool:
        return surface in self._ids

    def __len__(self) -> int:
        return len(self._surfaces)

    def __iter__(self):
        return iter(self._surfaces)

    @property
    def surfaces(self) -> List[str]:
        return list(self._surfaces)

    def freeze(self) -> "Vocab":
        self.frozen = True
        return self

    def copy(self) -> "Vocab":
        return Vocab(self._surfaces)

    def fingerprint(self) -> str:
        return fingerprint_strings(self._surfaces)


def fingerprint_strings(items: Sequence[str]) -> str:
    h = hashlib.sha256()
    for s in items:
        h.update(s.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()[:16]


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int
    label: Optional[bool] = None


@dataclass
class Split:
    """One split as an (n, 3) int array of (head, relation, tail) plus optional labels."""

    triples: np.ndarray
    labels: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.triples)

    def positives(self) -> np.ndarray:
        if self.labels is None:
            return self.triples
        return self.triples[self.labels]

    def __iter__(self):
        for i, (h, r, t) in enumerate(self.triples.tolist()):
            label = None if self.labels is None else bool(self.labels[i])
            yield Triple(h, r, t, label)

    @classmethod
    def empty(cls) -> "Split":
        return cls(np.zeros((0, 3), dtype=np.int64))

    @classmethod
    def from_triples(cls, triples: Sequence[Triple]) -> "Split":
        arr = np.array([(t.head, t.relation, t.tail) for t in triples], dtype=np.int64).reshape(-1, 3)
        if triples and triples[0].label is not None:
            return cls(arr, np.array([bool(t.label) for t in triples]))
        return cls(arr)


@dataclass
class TripleDataset:
    entities: Vocab
    relations: Vocab
    train: Split = field(default_factory=Split.empty)
    valid: Split = field(default_factory=Split.empty)
    test: Split = field(default_factory=Split.empty)
    path: Optional[str] = None
    names: Dict[str, str] = field(default_factory=dict)

    @property
    def splits(self) -> Dict[str, Split]:
        return {"train": self.train, "valid": self.valid, "test": self.test}

    def all_facts(self) -> np.ndarray:
        """Every triple asserted true across all splits (labeled negatives excluded)."""
        parts = [s.positives() for s in self.splits.values() if len(s)]
        if not parts:
            return np.zeros((0, 3), dtype=np.int64)
        return np.concatenate(parts)

    def entity_tokens(self, idx: int) -> List[str]:
        return tokenize_entity(self.entities.lookup(idx), self.names)

    def relation_tokens(self, idx: int) -> List[str]:
        return tokenize(self.relations.lookup(idx))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, split in self.splits.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(split.triples, dtype="<i8").tobytes())
            if split.labels is not None:
                h.update(split.labels.astype("u1").tobytes())
        h.update(self.entities.fingerprint().encode())
        h.update(self.relations.fingerprint().encode())
        return h.hexdigest()[:16]


def tokenize(surface: str) -> List[str]:
    """Split a surface form into lowercase word tokens.

    >>> tokenize("/film/film/starring")
    ['film', 'film', 'starring']
    """
    if not surface:
        return []
    stripped = _SENSE_SUFFIX_RE.sub("", surface)
    if _HAS_WORD_CHAR.search(stripped.replace("_", "")):
        surface = stripped
    return [frag.lower() for frag in _SPLIT_RE.split(surface)
            if frag and _HAS_WORD_CHAR.search(frag.replace("_", ""))]


def tokenize_entity(surface: str, names: Optional[Dict[str, str]] = None) -> List[str]:
    if names:
        surface = names.get(surface, surface)
    return tokenize(surface)


_LABELS = {"1": True, "-1": False}


def load_triples(path, schema: str = "auto", entities: Optional[Vocab] = None,
                 relations: Optional[Vocab] = None) -> Split:
    """Read a tab-separated triple file into a :class:`Split`.

    ``schema`` is ``plain`` (h, r, t), ``labeled`` (h, r, t, label in {1, -1})
    or ``auto`` (decided by the first non-blank line). Vocabularies are extended
    in place unless frozen, in which case unknown surfaces raise.
    """
    entities = Vocab() if entities is None else entities
    relations = Vocab() if relations is None else relations
    rows, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if schema == "auto":
                schema = {3: "plain", 4: "labeled"}.get(len(fields), "")
            want = 3 if schema == "plain" else 4
            if len(fields) != want:
                raise DataFormatError(f"{path}:{lineno}: expected {want} tab-separated fields, got {len(fields)}")
            h, r, t = fields[:3]
            try:
                row = (entities.add(h), relations.add(r), entities.add(t))
            except KeyError as exc:
                raise DataFormatError(f"{path}:{lineno}: unknown surface {exc.args[0]!r} in frozen vocabulary") from None
            if want == 4:
                label = _LABELS.get(fields[3].strip())
                if label is None:
                    raise DataFormatError(f"{path}:{lineno}: label must be 1 or -1, got {fields[3]!r}")
                labels.append(label)
            rows.append(row)
    triples = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return Split(triples, np.array(labels, dtype=bool) if schema == "labeled" else None)


def load_name_map(path) -> Dict[str, str]:
    """Two-column ``raw-surface<TAB>human name`` file; duplicate rows keep the last one."""
    names: Dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 2 tab-separated fields")
            if parts[0] in names:
                logger.warning("%s:%d: duplicate name-map row for %r, keeping the last", path, lineno, parts[0])
            names[parts[0]] = parts[1]
    return names


def warn_unmapped(entities: Vocab, names: Dict[str, str]) -> int:
    if not names:
        return 0
    missing = sum(1 for s in entities if s not in names)
    if missing:
        logger.warning("%d of %d entities have no name-map entry; using raw surfaces", missing, len(entities))
    return missing


def load_manifest(path) -> Dict[str, int]:
    counts = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataFormatError(f"{path}:{lineno}: expected split=count")
            counts[key.strip()] = int(value)
    return counts


def _find_split(directory, name):
    candidates = [f"{name}.txt", f"{name}.tsv"]
    if name == "valid":
        candidates += ["dev.txt", "dev.tsv"]
    for cand in candidates:
        if os.path.exists(os.path.join(directory, cand)):
            return os.path.join(directory, cand)
    return None


def load_dataset(directory=None, *, train=None, valid=None, test=None, names=None,
                 manifest=None, entities: Optional[Vocab] = None,
                 relations: Optional[Vocab] = None) -> TripleDataset:
    """Load train/valid/test splits sharing one entity and relation vocabulary.

    Either a directory holding ``train.txt``/``valid.txt`` (or ``dev.txt``)/``test.txt``
    or explicit paths. Missing splits are empty.
    """
    paths = {"train": train, "valid": valid, "test": test}
    if directory is not None:
        for key in paths:
            if paths[key] is None:
                paths[key] = _find_split(directory, key)
        if names is None and os.path.exists(os.path.join(directory, "names.txt")):
            names = os.path.join(directory, "names.txt")
        if manifest is None and os.path.exists(os.path.join(directory, "manifest.txt")):
            manifest = os.path.join(directory, "manifest.txt")
    entities = Vocab() if entities is None else entities
    relations = Vocab() if relations is None else relations
    ds = TripleDataset(entities, relations, path=directory)
    for key, p in paths.items():
        if p is not None:
            if not os.path.exists(p):
                raise FileNotFoundError(p)
            setattr(ds, key, load_triples(p, "auto", entities, relations))
    if names is not None:
        ds.names = load_name_map(names)
        warn_unmapped(entities, ds.names)
    if manifest is not None:
        expected = load_manifest(manifest)
        for key, n in expected.items():
            if key in ds.splits and len(ds.splits[key]) != n:
                raise DataFormatError(f"split {key!r} has {len(ds.splits[key])} triples, manifest says {n}")
    return ds


class TripleIndex:
    """Membership over known (h, r, t) triples.

    Holds a hash set for single lookups and a sorted key array for
    vectorised membership tests during negative sampling and filtering.
    """

    def __init__(self, triples: np.ndarray, n_entities: int, n_relations: int):
        self.n_entities = max(int(n_entities), 1)
        self.n_relations = max(int(n_relations), 1)
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        self.keys = np.unique(self.encode(triples))
        self._set = set(self.keys.tolist())
        self._by_hr: Optional[Dict] = None
        self._by_rt: Optional[Dict] = None

    def encode(self, triples: np.ndarray) -> np.ndarray:
        triples = np.asarray(triples, dtype=np.int64)
        return (triples[..., 0] * self.n_relations + triples[..., 1]) * self.n_entities + triples[..., 2]

    def __len__(self):
        return len(self.keys)

    def contains(self, triple) -> bool:
        h, r, t = triple[:3]
        if not (0 <= h < self.n_entities and 0 <= t < self.n_entities and 0 <= r < self.n_relations):
            return False
        return ((h * self.n_relations + r) * self.n_entities + t) in self._set

    __contains__ = contains

    def contains_many(self, triples: np.ndarray) -> np.ndarray:
        keys = self.encode(triples)
        if not len(self.keys):
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == keys

    def _decode(self):
        t = self.keys % self.n_entities
        hr = self.keys // self.n_entities
        return hr // self.n_relations, hr % self.n_relations, t

    def tails(self, h: int, r: int) -> np.ndarray:
        """Known tails for (h, r, ?)."""
        if self._by_hr is None:
            self._by_hr = self._group(0, 1, 2)
        return self._by_hr.get((h, r), _EMPTY)

    def heads(self, r: int, t: int) -> np.ndarray:
        """Known heads for (?, r, t)."""
        if self._by_rt is None:
            self._by_rt = self._group(1, 2, 0)
        return self._by_rt.get((r, t), _EMPTY)

    def _group(self, a, b, c):
        cols = np.stack(self._decode(), axis=1)
        order = np.lexsort((cols[:, c], cols[:, b], cols[:, a]))
        cols = cols[order]
        out = {}
        if not len(cols):
            return out
        change = np.flatnonzero(np.any(np.diff(cols[:, [a, b]], axis=0) != 0, axis=1)) + 1
        for chunk in np.split(cols, change):
            out[(int(chunk[0, a]), int(chunk[0, b]))] = chunk[:, c]
        return out


_EMPTY = np.zeros(0, dtype=np.int64)


def build_index(splits: Iterable[Split], n_entities: int, n_relations: int) -> TripleIndex:
    """Index the true triples of the given splits; labeled negatives are left out."""
    parts = [s.positives() for s in splits if len(s)]
    triples = np.concatenate(parts) if parts else np.zeros((0, 3), dtype=np.int64)
    return TripleIndex(triples, n_entities, n_relations)


@dataclass
class RelationFoldPlan:
    folds: List[List[int]]
    seed: Optional[int] = None

    @property
    def k(self) -> int:
        return len(self.folds)

    def held_out(self, fold: int) -> List[int]:
        return self.folds[fold]

    def partition(self, triples: np.ndarray, fold: int):
        """Split triples into (train, test) for one fold by relation membership."""
        mask = np.isin(triples[:, 1], self.folds[fold])
        return triples[~mask], triples[mask]


def split_relations_kfold(relation_ids: Sequence[int], k: int, seed: int = 0) -> RelationFoldPlan:
    """Shuffle relation ids with a seeded generator and deal them round-robin into k folds."""
    relation_ids = list(relation_ids)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(relation_ids):
        raise ValueError(f"cannot split {len(relation_ids)} relations into {k} folds")
    order = np.random.default_rng(seed).permutation(len(relation_ids))
    folds: List[List[int]] = [[] for _ in range(k)]
    for i, j in enumerate(order.tolist()):
        folds[i % k].append(relation_ids[j])
    return RelationFoldPlan([sorted(f) for f in folds], seed)
