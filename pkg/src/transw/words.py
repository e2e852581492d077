"""Pretrained word vectors with a deterministic out-of-vocabulary policy."""

import hashlib
import logging
import math
from typing import Dict, Iterable, List, Optional

import numpy as np

logger = logging.getLogger(__name__)

OOV_POLICIES = ("hash", "zero")


class WordVectorError(ValueError):
    pass


def default_oov_scale(dim: int) -> float:
    return 6.0 / math.sqrt(dim)


def oov_vector(word: str, dim: int, policy: str = "hash", scale: Optional[float] = None) -> np.ndarray:
    """Fallback vector for a word missing from the table.

    ``hash`` draws uniform values in [-scale, scale] from a generator seeded by
    a SHA-256 of the word, so the same word gets the same vector in every process.
    """
    if policy == "zero":
        return np.zeros(dim)
    if policy != "hash":
        raise ValueError(f"unknown OOV policy {policy!r}")
    scale = default_oov_scale(dim) if scale is None else scale
    seed = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(seed).uniform(-scale, scale, dim)


class WordEmbeddingTable:
    """Immutable word -> vector map of fixed dimension."""

    def __init__(self, words: List[str], vectors: np.ndarray, oov: str = "hash",
                 oov_scale: Optional[float] = None):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise WordVectorError("vectors must be a (len(words), dim) matrix")
        if oov not in OOV_POLICIES:
            raise ValueError(f"unknown OOV policy {oov!r}")
        vectors.flags.writeable = False
        self.words = list(words)
        self.vectors = vectors
        self.index: Dict[str, int] = {w: i for i, w in enumerate(self.words)}
        self.oov = oov
        self.oov_scale = default_oov_scale(self.dim) if oov_scale is None else oov_scale

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def lookup(self, word: str) -> np.ndarray:
        i = self.index.get(word)
        if i is None:
            return oov_vector(word, self.dim, self.oov, self.oov_scale)
        return self.vectors[i].copy()

    def lookup_many(self, words: Iterable[str]) -> np.ndarray:
        words = list(words)
        out = np.empty((len(words), self.dim))
        for j, w in enumerate(words):
            out[j] = self.lookup(w)
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.dim}:{self.oov}:{self.oov_scale!r}".encode())
        for w in self.words:
            h.update(w.encode("utf-8"))
            h.update(b"\n")
        h.update(np.ascontiguousarray(self.vectors, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def load_word_vectors(path, expected_dim: Optional[int] = None, oov: str = "hash",
                      oov_scale: Optional[float] = None,
                      restrict_to: Optional[Iterable[str]] = None) -> WordEmbeddingTable:
    """Parse a GloVe-style text file: ``word v1 ... vk`` per line, space separated.

    ``restrict_to`` keeps only the listed words, which saves memory when a
    dataset needs a few thousand words out of a 400k-word file.
    """
    keep = None if restrict_to is None else set(restrict_to)
    words, rows = [], []
    seen = set()
    dim = expected_dim
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise WordVectorError(f"{path}:{lineno}: expected {dim} values for {word!r}, got {len(values)}")
            if word in seen:
                logger.warning("%s:%d: duplicate word %r, keeping the first", path, lineno, word)
                continue
            seen.add(word)
            if keep is not None and word not in keep:
                continue
            try:
                rows.append([float(v) for v in values])
            except ValueError:
                raise WordVectorError(f"{path}:{lineno}: non-numeric value in vector for {word!r}") from None
            words.append(word)
    if dim is None:
        raise WordVectorError(f"{path}: empty word-vector file and no expected dimension")
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    logger.info("loaded %d word vectors of dimension %d from %s", len(words), dim, path)
    return WordEmbeddingTable(words, vectors, oov=oov, oov_scale=oov_scale)
