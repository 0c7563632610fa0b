"""Supervised cores driven by the MIL wrappers: an SMO-trained kernel
SVM and a random forest with per-node feature subsampling.

Both are deterministic functions of (data, params, seed).  The SVM dual
is solved by sequential minimal optimization with maximal-violating-pair
selection; the forest grows Gini trees on bootstrap resamples with a
numba-compiled inner loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .seeds import seed32

DEFAULT_TOL = 1e-3
MAX_PAIR_UPDATES = 1_000_000


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Kernel:
    """'rbf' with width gamma, or 'linear' (gamma ignored)."""

    name: str = "rbf"
    gamma: float = 1.0

    def __post_init__(self):
        if self.name not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel {self.name!r}")
        if self.name == "rbf" and self.gamma <= 0:
            raise ValueError("rbf kernel requires gamma > 0")

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.name == "linear":
            return a @ b.T
        sq = (
            (a * a).sum(axis=1)[:, None]
            + (b * b).sum(axis=1)[None, :]
            - 2.0 * (a @ b.T)
        )
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-self.gamma * sq)


# ---------------------------------------------------------------------------
# SVM via SMO
# ---------------------------------------------------------------------------

@dataclass
class SvmModel:
    support_vectors: np.ndarray  # (m, d)
    alphas: np.ndarray           # (m,), signed alpha_i * y_i
    bias: float
    kernel: Kernel
    C: float


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    """SVM dual objective sum(alpha) - 0.5 * (alpha y)' K (alpha y)."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


@njit(cache=True)
def _smo_loop(K, y, C, tol, max_updates):
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - sum(a) at alpha = 0
    updates = 0

    while updates < max_updates:
        # maximal violating pair over I_up / I_low
        m = -np.inf
        M = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * grad[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > m:
                    m = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v < M:
                    M = v
                    j = t
        if i < 0 or j < 0 or m - M <= tol:
            break

        a = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if a <= 0:
            a = 1e-12
        delta = (m - M) / a
        # box limits keeping both alphas in [0, C] under the equality constraint
        hi = (C - alpha[i]) if y[i] > 0 else alpha[i]
        hj = alpha[j] if y[j] > 0 else (C - alpha[j])
        if hi < delta:
            delta = hi
        if hj < delta:
            delta = hj

        dai = y[i] * delta
        daj = -y[j] * delta
        alpha[i] += dai
        alpha[j] += daj
        ci = y[i] * dai
        cj = y[j] * daj
        for t in range(n):
            grad[t] += y[t] * (K[t, i] * ci + K[t, j] * cj)
        updates += 1

    return alpha, grad, updates


def _smo_solve(K, y, C, tol, max_updates):
    """Maximal-violating-pair SMO on a precomputed Gram matrix.

    Returns (alpha, f0, bias, n_updates) where f0[t] = sum_j alpha_j y_j
    K[t, j] is the bias-free decision value on the training points.
    """
    alpha, grad, updates = _smo_loop(
        np.ascontiguousarray(K), np.ascontiguousarray(y, dtype=np.float64),
        float(C), float(tol), int(max_updates))

    f0 = y * (grad + 1.0)
    free = (alpha > 1e-12) & (alpha < C - 1e-12)
    if np.any(free):
        bias = float(np.mean(y[free] - f0[free]))
    else:
        viol = -y * grad
        pos = y > 0
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        m = np.max(np.where(up, viol, -np.inf))
        M = np.min(np.where(low, viol, np.inf))
        if not np.isfinite(m):
            m = M
        if not np.isfinite(M):
            M = m
        bias = float((m + M) / 2.0)
    return alpha, f0, bias, updates


def smo_train(X, y, C, kernel: Kernel, tol: float = DEFAULT_TOL,
              seed: int = 0, gram: np.ndarray | None = None,
              max_updates: int = MAX_PAIR_UPDATES) -> SvmModel:
    """Train a soft-margin kernel SVM; y in {-1, +1} (0 accepted as -1).

    ``gram`` lets callers that retrain on fixed X (the MIL wrappers)
    reuse one kernel matrix.  The seed is part of the signature for
    reproducibility bookkeeping; pair selection itself is deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    yv = np.where(np.asarray(y) > 0, 1.0, -1.0)
    if C <= 0:
        raise ValueError("C must be > 0")
    if np.all(yv > 0) or np.all(yv < 0):
        raise ValueError("training data must contain both classes")
    if gram is None:
        gram = kernel.gram(X, X)

    alpha, _, bias, _ = _smo_solve(gram, yv, C, tol, max_updates)
    sv = alpha > 1e-12
    return SvmModel(
        support_vectors=X[sv].copy(),
        alphas=(alpha * yv)[sv].copy(),
        bias=bias,
        kernel=kernel,
        C=C,
    )


def svm_decision(model: SvmModel, x: np.ndarray) -> np.ndarray | float:
    """Decision value f(x); accepts a single vector or an (n, d) batch."""
    arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if arr.shape[1] != model.support_vectors.shape[1]:
        raise ValueError(
            f"expected {model.support_vectors.shape[1]} features, got {arr.shape[1]}"
        )
    k = model.kernel.gram(arr, model.support_vectors)
    out = k @ model.alphas + model.bias
    return float(out[0]) if np.ndim(x) == 1 else out


# ---------------------------------------------------------------------------
# random forest
# ---------------------------------------------------------------------------

@njit(cache=True)
def _grow_tree(X, y, x_d, seed, bootstrap):
    np.random.seed(seed)
    n, d = X.shape
    if bootstrap:
        order = np.random.randint(0, n, n)
    else:
        order = np.arange(n)

    max_nodes = 2 * n + 1
    feat = np.full(max_nodes, -1, np.int32)
    thresh = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    value = np.zeros(max_nodes)

    stack_node = np.empty(max_nodes, np.int32)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_node[0], stack_lo[0], stack_hi[0] = 0, 0, n
    top = 1
    n_nodes = 1
    cand = np.empty(d, np.int64)
    buf = np.empty(n, np.int64)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo, hi = stack_lo[top], stack_hi[top]
        m = hi - lo
        n_pos = 0
        for t in range(lo, hi):
            n_pos += y[order[t]]
        value[node] = n_pos / m
        if n_pos == 0 or n_pos == m:
            continue

        # draw x_d distinct candidate features (partial Fisher-Yates)
        for t in range(d):
            cand[t] = t
        for t in range(x_d):
            swap = t + np.random.randint(0, d - t)
            cand[t], cand[swap] = cand[swap], cand[t]

        best_score = np.inf
        best_feat = -1
        best_thresh = 0.0
        for ci in range(x_d):
            f = cand[ci]
            vals = np.empty(m)
            for t in range(m):
                vals[t] = X[order[lo + t], f]
            sort_idx = np.argsort(vals, kind="mergesort")
            pos_cum = 0
            for t in range(m - 1):
                pos_cum += y[order[lo + sort_idx[t]]]
                v0 = vals[sort_idx[t]]
                v1 = vals[sort_idx[t + 1]]
                if v0 == v1:
                    continue
                nl = t + 1
                nr = m - nl
                pl = pos_cum / nl
                pr = (n_pos - pos_cum) / nr
                score = nl * 2.0 * pl * (1.0 - pl) + nr * 2.0 * pr * (1.0 - pr)
                if score < best_score:
                    best_score = score
                    best_feat = f
                    best_thresh = (v0 + v1) / 2.0

        if best_feat < 0:
            continue  # all candidates constant on this node

        # stable partition of order[lo:hi] around the split
        nl = 0
        for t in range(lo, hi):
            if X[order[t], best_feat] <= best_thresh:
                buf[nl] = order[t]
                nl += 1
        nr = nl
        for t in range(lo, hi):
            if not (X[order[t], best_feat] <= best_thresh):
                buf[nr] = order[t]
                nr += 1
        for t in range(m):
            order[lo + t] = buf[t]
        if nl == 0 or nl == m:
            continue  # fp-degenerate threshold; keep as leaf

        feat[node] = best_feat
        thresh[node] = best_thresh
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top], stack_lo[top], stack_hi[top] = n_nodes, lo, lo + nl
        stack_node[top + 1], stack_lo[top + 1], stack_hi[top + 1] = (
            n_nodes + 1, lo + nl, hi)
        top += 2
        n_nodes += 2

    return (feat[:n_nodes], thresh[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes])


@njit(cache=True)
def _predict_tree(feat, thresh, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thresh[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray


@dataclass
class ForestModel:
    trees: list[Tree]
    n_features: int
    x_d: int
    seed: int
    bootstrap: bool = True


def forest_train(X, y, t: int, x_d: int, seed: int,
                 bootstrap: bool = True) -> ForestModel:
    """Grow t Gini trees on bootstrap resamples; y in {0, 1}.

    Each node scores the best split among x_d features drawn without
    replacement for that node; growth stops at purity (min leaf 1).
    Per-tree seeds are pre-assigned from ``seed`` so results do not
    depend on growth order.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    yv = np.asarray(y, dtype=np.int64)
    n, d = X.shape
    if n == 0:
        raise ValueError("empty training set")
    if t < 1:
        raise ValueError("need at least one tree")
    if not 1 <= x_d <= d:
        raise ValueError(f"x_d must be in [1, {d}]")

    trees = []
    for ti in range(t):
        arrays = _grow_tree(X, yv, x_d, seed32(seed, "tree", ti), bootstrap)
        trees.append(Tree(*arrays))
    return ForestModel(trees=trees, n_features=d, x_d=x_d, seed=seed,
                       bootstrap=bootstrap)


def forest_predict(model: ForestModel, x: np.ndarray) -> np.ndarray | float:
    """Mean of per-tree leaf probabilities for class 1."""
    arr = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    if arr.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} features, got {arr.shape[1]}"
        )
    acc = np.zeros(arr.shape[0])
    for tree in model.trees:
        acc += _predict_tree(tree.feature, tree.threshold, tree.left,
                             tree.right, tree.value, arr)
    acc /= len(model.trees)
    return float(acc[0]) if np.ndim(x) == 1 else acc
