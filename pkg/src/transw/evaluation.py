"""Evaluation protocols: link prediction, triple classification and unknown-relation detection."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .data import RelationFoldPlan, Split, TripleDataset, TripleIndex
from .model import CapabilityError, TranslationModel, distance
from .trainer import sample_negatives

logger = logging.getLogger(__name__)

HITS_AT = (10, 3, 1)
SETTINGS = ("raw", "filtered")


class RankResult(NamedTuple):
    query: Tuple[int, int, int]
    slot: str
    raw_rank: int
    filtered_rank: int

    def rank(self, setting: str) -> int:
        return self.raw_rank if setting == "raw" else self.filtered_rank


def tie_rank(n_better: int, n_tied: int) -> int:
    """Rank of an item sharing its score with ``n_tied - 1`` others: the tie group's mean rank, rounded up."""
    return n_better + (n_tied + 2) // 2


def rank_from_distances(dists: np.ndarray, true_idx: int, known: Optional[np.ndarray] = None) -> Tuple[int, int]:
    """(raw, filtered) rank of ``dists[true_idx]`` under ascending distance.

    ``known`` lists candidate indices that form known true triples; they are
    dropped (except the true one) for the filtered rank.
    """
    d_true = dists[true_idx]
    better = dists < d_true
    tied = dists == d_true
    raw = tie_rank(int(better.sum()), int(tied.sum()))
    if known is None or not len(known):
        return raw, raw
    known = np.unique(known)
    known = known[known != true_idx]
    kd = dists[known]
    filt = tie_rank(int(better.sum() - (kd < d_true).sum()), int(tied.sum() - (kd == d_true).sum()))
    return raw, filt


def candidate_distances(model: TranslationModel, query, slot: str, entity_matrix=None, relation_matrix=None):
    E = model.entity_vectors() if entity_matrix is None else entity_matrix
    R = model.relation_vectors() if relation_matrix is None else relation_matrix
    h, r, t = query[:3]
    if slot == "head":
        return distance(E, R[r], E[t], model.norm)
    if slot == "tail":
        return distance(E[h], R[r], E, model.norm)
    raise ValueError("slot must be 'head' or 'tail'")


def rank_candidates(query, slot: str, model: TranslationModel, index: Optional[TripleIndex] = None,
                    entity_matrix=None, relation_matrix=None) -> RankResult:
    """Rank the query's true entity among every entity placed in ``slot``."""
    h, r, t = (int(x) for x in query[:3])
    dists = candidate_distances(model, (h, r, t), slot, entity_matrix, relation_matrix)
    if slot == "head":
        true_idx, known = h, (index.heads(r, t) if index is not None else None)
    else:
        true_idx, known = t, (index.tails(h, r) if index is not None else None)
    raw, filt = rank_from_distances(dists, true_idx, known)
    return RankResult((h, r, t), slot, raw, filt)


def hits_at_n(results: Sequence[RankResult], n: int, setting: str = "filtered") -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not len(results):
        raise ValueError("no ranking results")
    return sum(1 for res in results if res.rank(setting) <= n) / len(results)


@dataclass
class LinkPredictionReport:
    results: List[RankResult]
    hits: Dict[Tuple[int, str], float]

    def rows(self):
        for n in HITS_AT:
            for setting in SETTINGS:
                yield f"hits@{n}", setting, self.hits[(n, setting)]


def link_prediction_eval(model: TranslationModel, test_triples, index: Optional[TripleIndex],
                         ns: Sequence[int] = HITS_AT, slots=("head", "tail")) -> LinkPredictionReport:
    """Corrupt head and tail of every test triple and report HITS@N raw and filtered."""
    E = model.entity_vectors()
    R = model.relation_vectors()
    results = [rank_candidates(tr, slot, model, index, E, R)
               for tr in np.asarray(test_triples, dtype=np.int64).reshape(-1, 3).tolist()
               for slot in slots]
    hits = {(n, s): hits_at_n(results, n, s) for n in ns for s in SETTINGS}
    return LinkPredictionReport(results, hits)


# -- thresholds --------------------------------------------------------------------------

def best_threshold(scores, labels, balanced: bool = False) -> Tuple[float, float]:
    """Threshold maximising accuracy of ``score <= threshold => positive``.

    Candidates are midpoints between consecutive distinct scores plus the
    largest score; ties go to the smallest threshold. With ``balanced`` the
    mean of the true-positive and true-negative rates is maximised instead.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if not len(scores):
        raise ValueError("cannot fit a threshold on an empty set")
    uniq, inv = np.unique(scores, return_inverse=True)
    pos_at = np.bincount(inv, weights=labels, minlength=len(uniq)).astype(np.int64)
    neg_at = np.bincount(inv, weights=~labels, minlength=len(uniq)).astype(np.int64)
    tp = np.cumsum(pos_at)
    fp = np.cumsum(neg_at)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    tn = n_neg - fp
    if balanced and n_pos and n_neg:
        score_num = tp * n_neg + tn * n_pos
        denom = 2 * n_pos * n_neg
    else:
        score_num = tp + tn
        denom = len(scores)
    j = int(np.argmax(score_num))
    thresholds = np.append((uniq[:-1] + uniq[1:]) / 2.0, uniq[-1])
    return float(thresholds[j]), float(score_num[j] / denom)


def accuracy(scores, labels, threshold: float, balanced: bool = False) -> float:
    pred = np.asarray(scores) <= threshold
    labels = np.asarray(labels, dtype=bool)
    if balanced and labels.any() and (~labels).any():
        return 0.5 * (pred[labels].mean() + (~pred[~labels]).mean())
    return float((pred == labels).mean())


@dataclass
class ThresholdTable:
    per_relation: Dict[int, float]
    fallback: float
    fit_accuracy: Dict[int, float] = field(default_factory=dict)

    def threshold(self, relation: int) -> float:
        return self.per_relation.get(int(relation), self.fallback)

    def to_dict(self):
        return {"per_relation": {str(k): v for k, v in self.per_relation.items()},
                "fallback": self.fallback,
                "fit_accuracy": {str(k): v for k, v in self.fit_accuracy.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls({int(k): v for k, v in d["per_relation"].items()}, d["fallback"],
                   {int(k): v for k, v in d.get("fit_accuracy", {}).items()})


def _labeled(split: Split):
    if split.labels is None:
        raise ValueError("triple classification needs labeled triples")
    return split.triples, split.labels


def fit_relation_thresholds(model: Optional[TranslationModel], valid: Split, scores=None) -> ThresholdTable:
    """Per-relation thresholds chosen for best validation accuracy.

    Relations lacking either a positive or a negative example use the fallback,
    a single threshold fitted over the whole validation set.
    """
    triples, labels = _labeled(valid)
    if not len(triples):
        raise ValueError("empty validation set")
    scores = model.score(triples) if scores is None else np.asarray(scores, dtype=float)
    fallback, _ = best_threshold(scores, labels)
    per_rel, acc = {}, {}
    for r in np.unique(triples[:, 1]).tolist():
        m = triples[:, 1] == r
        if labels[m].all() or not labels[m].any():
            continue
        per_rel[r], acc[r] = best_threshold(scores[m], labels[m])
    return ThresholdTable(per_rel, fallback, acc)


@dataclass
class ClassificationReport:
    accuracy: float
    per_relation: Dict[int, Tuple[float, int]]
    n: int

    def rows(self):
        yield "accuracy", "all", self.accuracy


def triple_classification_eval(model: Optional[TranslationModel], thresholds: ThresholdTable, test: Split,
                               scores=None) -> ClassificationReport:
    triples, labels = _labeled(test)
    scores = model.score(triples) if scores is None else np.asarray(scores, dtype=float)
    sigma = np.array([thresholds.threshold(r) for r in triples[:, 1].tolist()])
    correct = (scores <= sigma) == labels
    per_rel = {}
    for r in np.unique(triples[:, 1]).tolist():
        m = triples[:, 1] == r
        per_rel[r] = (float(correct[m].mean()), int(m.sum()))
    return ClassificationReport(float(correct.mean()), per_rel, len(triples))


def fit_global_threshold(model: TranslationModel, train_triples, index: Optional[TripleIndex],
                         rng: np.random.Generator, n_entities: Optional[int] = None) -> Tuple[float, float]:
    """Global threshold from training facts against one corruption each, maximising balanced accuracy.

    Returns ``(sigma, balanced training accuracy)``.
    """
    pos = np.asarray(train_triples, dtype=np.int64).reshape(-1, 3)
    return _fit_sigma(model.score, pos, index, rng, n_entities or model.n_entities)


# -- unknown relations -------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    held_out: List[int]
    train_facts: int
    train_relations: int
    test_facts: int
    test_relations: int
    sigma: float
    train_accuracy: float
    accuracies: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def bias(self) -> Tuple[float, float]:
        """(min - mean, max - mean) over the repeated test subsamples."""
        return float(min(self.accuracies) - self.mean), float(max(self.accuracies) - self.mean)


@dataclass
class UnknownFactReport:
    folds: List[FoldResult]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.mean for f in self.folds]))

    @property
    def mean_bias(self) -> Tuple[float, float]:
        lo = float(np.mean([f.bias[0] for f in self.folds]))
        hi = float(np.mean([f.bias[1] for f in self.folds]))
        return lo, hi


def unknown_fact_eval(plan: RelationFoldPlan, dataset: TripleDataset, train_fn: Callable,
                      rng: np.random.Generator, cap: int = 5000, repeats: int = 10,
                      kind: str = "transw", oracle_scores: Optional[Callable] = None) -> UnknownFactReport:
    """Hold out each fold's relations, train on the rest, and detect held-out facts with one threshold.

    ``train_fn(train_triples, fold)`` returns a model trained on the given facts.
    Each repeat draws up to ``cap`` facts per held-out relation and pairs every
    drawn fact with one corruption that is not a known fact anywhere in the
    dataset; accuracy is measured on that balanced set with ``d <= sigma``.
    """
    if kind != "transw":
        raise CapabilityError("unknown-fact detection needs a model that composes unseen relations from "
                              "their words; TransE has no vector for a relation absent from training")
    facts = np.unique(dataset.all_facts(), axis=0)
    n_e, n_r = len(dataset.entities), len(dataset.relations)
    full_index = TripleIndex(facts, n_e, n_r)
    out = []
    for fold in range(plan.k):
        train_part, test_part = plan.partition(facts, fold)
        if not len(test_part):
            raise ValueError(f"fold {fold} has no test facts")
        model = train_fn(train_part, fold)
        score = model.score if oracle_scores is None else oracle_scores
        sigma, train_acc = _fit_sigma(score, train_part, TripleIndex(train_part, n_e, n_r), rng, n_e)
        accs = []
        for _ in range(repeats):
            chosen = []
            for r in plan.held_out(fold):
                rows = np.flatnonzero(test_part[:, 1] == r)
                if len(rows) > cap:
                    rows = np.sort(rng.choice(rows, cap, replace=False))
                chosen.append(test_part[rows])
            pos = np.concatenate(chosen)
            neg = sample_negatives(pos, n_e, full_index, rng)
            scores = np.concatenate([score(pos), score(neg)])
            labels = np.concatenate([np.ones(len(pos), bool), np.zeros(len(neg), bool)])
            accs.append(accuracy(scores, labels, sigma, balanced=True))
        res = FoldResult(fold, list(plan.held_out(fold)), len(train_part), len(np.unique(train_part[:, 1])),
                         len(test_part), len(np.unique(test_part[:, 1])), sigma, train_acc, accs)
        logger.info("fold %d: sigma %.4f, accuracy %.4f", fold, sigma, res.mean)
        out.append(res)
    return UnknownFactReport(out)


def _fit_sigma(score, pos, index, rng, n_entities):
    neg = sample_negatives(pos, n_entities, index, rng)
    scores = np.concatenate([score(pos), score(neg)])
    labels = np.concatenate([np.ones(len(pos), bool), np.zeros(len(neg), bool)])
    return best_threshold(scores, labels, balanced=True)
