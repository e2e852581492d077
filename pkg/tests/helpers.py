"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np

from transw.model import TransE, TransW, compose

from conftest import random_transw


def naive_compose(tokens, role, model):
    """Sum of Hadamard products written out component by component."""
    conn = model.conn_ent if role == "entity" else model.conn_rel
    bias = model.b_ent if role == "entity" else model.b_rel
    out = [0.0] * model.dim
    for w in tokens:
        i = model.word_index[w]
        for j in range(model.dim):
            out[j] = out[j] + model.word_vectors[i, j] * conn[i, j]
    return np.array([out[j] + bias[j] for j in range(model.dim)])


def naive_diff(model, triple):
    h, r, t = (int(x) for x in triple)
    if isinstance(model, TransE):
        return model.entity[h] + model.relation[r] - model.entity[t]
    hv = model._project_vec(compose(model.item_tokens("entity", h), "entity", model).vector)
    tv = model._project_vec(compose(model.item_tokens("entity", t), "entity", model).vector)
    rv = compose(model.item_tokens("relation", r), "relation", model).vector
    return hv + rv - tv


def naive_distance(model, triple):
    d = naive_diff(model, triple)
    return float(np.abs(d).sum()) if model.norm == "L1" else float((d * d).sum())


def pair_loss(model, pos, neg, margin):
    return sum(max(0.0, margin + naive_distance(model, p) - naive_distance(model, n)) for p, n in zip(pos, neg))


def dense(model, grads):
    out = {k: np.zeros_like(v) for k, v in model.parameters().items()}
    for name, (rows, values) in grads.items():
        if rows is None:
            out[name] += values
        else:
            np.add.at(out[name], rows, values)
    return out


def numeric_grads(model, pos, neg, margin, eps=1e-5):
    out = {}
    for name, param in model.parameters().items():
        g = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            keep = param[idx]
            param[idx] = keep + eps
            up = pair_loss(model, pos, neg, margin)
            param[idx] = keep - eps
            down = pair_loss(model, pos, neg, margin)
            param[idx] = keep
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


def near_kink(model, pos, neg, margin, tol=1e-3):
    """True when a finite difference could straddle a point where the loss is not differentiable."""
    for p, n in zip(pos, neg):
        if abs(margin + naive_distance(model, p) - naive_distance(model, n)) < tol:
            return True
        if model.norm == "L1" and (np.abs(naive_diff(model, p)).min() < tol or np.abs(naive_diff(model, n)).min() < tol):
            return True
        if isinstance(model, TransW) and model.project:
            for e in (p[0], p[2], n[0], n[2]):
                raw = compose(model.item_tokens("entity", int(e)), "entity", model).vector
                if abs(np.linalg.norm(raw) - 1.0) < tol:
                    return True
    return False


def gradient_instance(rng, norm, fine_tune=False, project=False, n_pairs=2):
    """A random small TransW problem (k <= 4, <= 3 tokens) away from any kink of the loss."""
    while True:
        dim = int(rng.integers(1, 5))
        model, _ = random_transw(rng, dim=dim, n_words=5, n_entities=4, n_relations=2, max_tokens=3,
                                 norm=norm, fine_tune=fine_tune, project=project)
        pos = np.stack([rng.integers(0, 4, n_pairs), rng.integers(0, 2, n_pairs), rng.integers(0, 4, n_pairs)], 1)
        neg = pos.copy()
        neg[:, 2] = (pos[:, 2] + rng.integers(1, 4, n_pairs)) % 4
        margin = float(rng.uniform(0.5, 3.0))
        if pair_loss(model, pos, neg, margin) > 0 and not near_kink(model, pos, neg, margin):
            return model, pos, neg, margin


def relative_error(a, b, floor=1e-4):
    """Norm-wise relative error.

    The floor sits well above central-difference round-off (~1e-10 here), so an
    exact-zero analytic gradient is not compared against pure noise.
    """
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def max_gradient_error(model, pos, neg, margin, eps=1e-5):
    _, grads = model.pair_gradients(pos, neg, margin)
    analytic = dense(model, grads)
    numeric = numeric_grads(model, pos, neg, margin, eps)
    return max(relative_error(analytic[k], numeric[k]) for k in analytic)


def brute_force_ranks(dists, true_idx, known=()):
    """Rank by sorting (distance, candidate) pairs and averaging the tie group's positions."""
    def rank(cands):
        order = sorted(cands, key=lambda c: dists[c])
        positions = [i + 1 for i, c in enumerate(order) if dists[c] == dists[true_idx]]
        return -(-sum(positions) // len(positions))

    everyone = list(range(len(dists)))
    filtered = [c for c in everyone if c == true_idx or c not in set(known)]
    return rank(everyone), rank(filtered)
