"""The three multiple-instance learners and the signature report.

MI-ACE estimates a discriminative target signature in a background-
whitened space and scores pixels with the adaptive cosine estimator.
miSVM alternates SVM training with instance relabeling under the bag
constraints.  MIForests anneals latent instance labels while retraining
a random forest.  All three keep the final per-instance label
assignment around so the bag constraints can be asserted after
training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bags import Bag
from .features import FEATURE_NAMES
from .learners import (
    ForestModel,
    Kernel,
    SvmModel,
    _smo_solve,
    forest_predict,
    forest_train,
)
from .seeds import rng_from

MIACE_MAX_ITERS = 100
MISVM_MAX_ITERS = 50


@dataclass
class AnnealSchedule:
    """Deterministic-annealing schedule for MIForests."""

    t_initial: float = 1.0
    cooling: float = 0.5
    steps: int = 10


@dataclass
class AceModel:
    signature: np.ndarray        # unit vector in whitened space
    background_mean: np.ndarray
    whitener: np.ndarray         # symmetric inverse square root of Sigma_b
    regularizer: float


@dataclass
class MilTrainInfo:
    """Training internals exposed for constraint checking.

    ``instance_labels`` maps bag id to the final per-instance labels
    (selection flags for MI-ACE).  ``objective_history`` is the MI-ACE
    objective J per refinement iteration.
    """

    instance_labels: dict[str, np.ndarray]
    iterations: int
    objective_history: list[float] = field(default_factory=list)


def _split_bags(bags: list[Bag]):
    pos = [b for b in bags if b.label == 1]
    neg = [b for b in bags if b.label == 0]
    if not pos or not neg:
        raise ValueError("need at least one positive and one negative bag")
    return pos, neg


def _stack(bag: Bag) -> np.ndarray:
    return np.stack([inst.vector for inst in bag.instances])


# ---------------------------------------------------------------------------
# MI-ACE
# ---------------------------------------------------------------------------

def _whiten_stats(neg_matrix: np.ndarray):
    """Background mean, regularized covariance and its inverse square root."""
    d = neg_matrix.shape[1]
    mu = neg_matrix.mean(axis=0)
    centered = neg_matrix - mu
    cov = centered.T @ centered / len(neg_matrix)
    eps = 1e-6 * np.trace(cov) / d
    if eps <= 0.0:
        eps = 1e-12
    cov_reg = cov + eps * np.eye(d)
    evals, evecs = np.linalg.eigh(cov_reg)
    evals = np.maximum(evals, eps)
    whitener = (evecs / np.sqrt(evals)) @ evecs.T
    return mu, whitener, eps


def ace_confidence(model: AceModel, x: np.ndarray) -> np.ndarray | float:
    """Signed ACE statistic in [-1, 1]; 0 exactly at the background mean."""
    arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if arr.shape[1] != model.background_mean.shape[0]:
        raise ValueError(
            f"expected {model.background_mean.shape[0]} features, got {arr.shape[1]}"
        )
    white = (arr - model.background_mean) @ model.whitener.T
    norms = np.linalg.norm(white, axis=1)
    proj = white @ model.signature
    out = np.zeros(len(arr))
    nz = norms > 0
    out[nz] = proj[nz] / norms[nz]
    return float(out[0]) if np.ndim(x) == 1 else out


def _ace_objective(sig, white_pos_bags, white_neg_unit_mean):
    """J = mean over positive bags of the best instance confidence minus
    the mean confidence over negative instances."""
    best = 0.0
    for bag_w in white_pos_bags:
        norms = np.linalg.norm(bag_w, axis=1)
        conf = np.where(norms > 0, bag_w @ sig / np.where(norms > 0, norms, 1.0), 0.0)
        best += conf.max()
    return best / len(white_pos_bags) - float(white_neg_unit_mean @ sig)


def miace_train(bags: list[Bag]) -> tuple[AceModel, MilTrainInfo]:
    """Estimate a target signature from bag-labeled data.

    Whitening statistics come from all negative-bag instances.  The
    initial signature is the positive-bag instance maximizing the
    objective; refinement alternates best-instance selection with a
    signature update from the selected instances' mean direction minus
    the negatives' mean direction, and stops when the selection repeats
    (or after 100 iterations).  No tunable hyperparameters.
    """
    pos, neg = _split_bags(bags)
    neg_matrix = np.vstack([_stack(b) for b in neg])
    mu, whitener, eps = _whiten_stats(neg_matrix)

    white_pos = [(_stack(b) - mu) @ whitener.T for b in pos]
    white_neg = (neg_matrix - mu) @ whitener.T
    neg_norms = np.linalg.norm(white_neg, axis=1)
    unit_neg = np.where(neg_norms[:, None] > 0,
                        white_neg / np.where(neg_norms[:, None] > 0,
                                             neg_norms[:, None], 1.0), 0.0)
    neg_unit_mean = unit_neg.mean(axis=0)

    # initialization: scan every positive-bag instance as the candidate
    pos_sizes = [len(bw) for bw in white_pos]
    starts = np.cumsum([0] + pos_sizes[:-1])
    all_pos = np.vstack(white_pos)
    pos_norms = np.linalg.norm(all_pos, axis=1)
    valid = pos_norms > 0
    if not np.any(valid):
        raise ValueError("all positive instances coincide with the background mean")
    unit_pos = np.where(valid[:, None], all_pos / np.where(valid, pos_norms, 1.0)[:, None], 0.0)
    conf = unit_pos[valid] @ unit_pos.T                      # candidates x instances
    bag_best = np.maximum.reduceat(conf, starts, axis=1)     # candidates x bags
    objectives = bag_best.mean(axis=1) - unit_pos[valid] @ neg_unit_mean
    best_cand = int(np.argmax(objectives))
    sig = unit_pos[valid][best_cand].copy()
    history = [float(objectives[best_cand])]

    # refinement: alternate per-bag best-instance selection with the
    # signature maximizing J for that selection.  The ACE statistic only
    # sees directions, so instances enter both steps as unit vectors;
    # each sweep is then a coordinate ascent on J and J never decreases.
    unit_pos_bags = [unit_pos[s:s + n] for s, n in zip(starts, pos_sizes)]
    prev_selection = None
    iterations = 0
    for iterations in range(1, MIACE_MAX_ITERS + 1):
        selection = []
        picked = []
        for bag_u in unit_pos_bags:
            idx = int(np.argmax(bag_u @ sig))
            selection.append(idx)
            picked.append(bag_u[idx])
        new_sig = np.mean(picked, axis=0) - neg_unit_mean
        nrm = np.linalg.norm(new_sig)
        if nrm > 0:
            sig = new_sig / nrm
        history.append(_ace_objective(sig, white_pos, neg_unit_mean))
        if selection == prev_selection:
            break
        prev_selection = selection

    labels = {}
    for bag, sel in zip(pos, prev_selection):
        flags = np.zeros(len(bag.instances), dtype=np.int64)
        flags[sel] = 1
        labels[bag.id] = flags
    for bag in neg:
        labels[bag.id] = np.zeros(len(bag.instances), dtype=np.int64)

    model = AceModel(signature=sig, background_mean=mu, whitener=whitener,
                     regularizer=eps)
    return model, MilTrainInfo(instance_labels=labels, iterations=iterations,
                               objective_history=history)


def report_signature(model: AceModel, feature_names=FEATURE_NAMES) -> list[tuple[str, float]]:
    """Signature entries paired with feature names, in canonical order."""
    if not isinstance(model, AceModel):
        raise TypeError("signature reports require an ACE model")
    if len(feature_names) != len(model.signature):
        raise ValueError("feature name count does not match signature length")
    return [(name, float(v)) for name, v in zip(feature_names, model.signature)]


def signature_csv(reports: list[list[tuple[str, float]]], path) -> None:
    """Write one or more signature reports as CSV, one run per column.

    With several runs the last two columns carry the per-band mean and
    variance across runs, mirroring the spread analysis of repeated
    trainings.
    """
    n_runs = len(reports)
    names = [name for name, _ in reports[0]]
    mat = np.array([[v for _, v in rep] for rep in reports])  # (runs, 18)
    with open(path, "w") as fh:
        fh.write("# feature order: means, variances, entropies (RGB then LAB)\n")
        cols = ",".join(f"run{r}" for r in range(n_runs))
        header = "feature," + cols
        if n_runs > 1:
            header += ",mean,variance"
        fh.write(header + "\n")
        for i, name in enumerate(names):
            row = name + "," + ",".join(repr(float(v)) for v in mat[:, i])
            if n_runs > 1:
                row += f",{mat[:, i].mean()!r},{mat[:, i].var(ddof=1)!r}"
            fh.write(row + "\n")


# ---------------------------------------------------------------------------
# miSVM
# ---------------------------------------------------------------------------

def misvm_train(bags: list[Bag], C: float, gamma: float, seed: int,
                kernel_name: str = "rbf",
                max_iters: int = MISVM_MAX_ITERS) -> tuple[SvmModel, MilTrainInfo]:
    """Iterate SVM training and instance relabeling under bag constraints.

    Instance labels start as bag labels; positive-bag instances are
    relabeled by the sign of the decision value, with the max-decision
    instance forced positive in bags left with none.  Negative-bag
    instances never change.  Stops when the labels repeat.
    """
    pos, neg = _split_bags(bags)
    ordered = pos + neg
    X = np.vstack([_stack(b) for b in ordered])
    sizes = [len(b.instances) for b in ordered]
    offsets = np.cumsum([0] + sizes)
    n_pos_bags = len(pos)

    kernel = Kernel(kernel_name, gamma)
    gram = kernel.gram(X, X)
    y = np.concatenate([
        np.full(sz, 1.0 if k < n_pos_bags else -1.0)
        for k, sz in enumerate(sizes)
    ])

    model_alpha = None
    iterations = 0
    for iterations in range(1, max_iters + 1):
        alpha, f0, bias, _ = _smo_solve(gram, y, C, DEFAULT_TOL_MISVM, 10**6)
        model_alpha = (alpha, bias, y.copy())
        decisions = f0 + bias
        new_y = y.copy()
        for k in range(n_pos_bags):
            lo, hi = offsets[k], offsets[k + 1]
            lab = np.where(decisions[lo:hi] > 0, 1.0, -1.0)
            if not np.any(lab > 0):
                lab[int(np.argmax(decisions[lo:hi]))] = 1.0
            new_y[lo:hi] = lab
        if np.array_equal(new_y, y):
            break
        y = new_y

    alpha, bias, y_final = model_alpha
    sv = alpha > 1e-12
    model = SvmModel(support_vectors=X[sv].copy(),
                     alphas=(alpha * y_final)[sv].copy(),
                     bias=bias, kernel=kernel, C=C)
    labels = {
        bag.id: (y_final[offsets[k]:offsets[k + 1]] > 0).astype(np.int64)
        for k, bag in enumerate(ordered)
    }
    return model, MilTrainInfo(instance_labels=labels, iterations=iterations)


DEFAULT_TOL_MISVM = 1e-3


# ---------------------------------------------------------------------------
# MIForests
# ---------------------------------------------------------------------------

def _temper(p1: np.ndarray, temperature: float) -> np.ndarray:
    """P(label 1) after sharpening class probabilities by 1/T.

    Computed through the log-odds so T -> 0 saturates to the argmax
    instead of underflowing.
    """
    p1 = np.clip(p1, 0.0, 1.0)
    out = np.empty_like(p1)
    interior = (p1 > 0.0) & (p1 < 1.0)
    with np.errstate(over="ignore"):
        logits = (np.log(p1[interior]) - np.log1p(-p1[interior])) / temperature
        out[interior] = 1.0 / (1.0 + np.exp(-logits))
    out[p1 <= 0.0] = 0.0
    out[p1 >= 1.0] = 1.0
    return out


def miforests_train(bags: list[Bag], t: int, x_d: int, seed: int,
                    schedule: AnnealSchedule | None = None
                    ) -> tuple[ForestModel, MilTrainInfo]:
    """Deterministic-annealing random forest over latent instance labels.

    Labels start as bag labels.  Each annealing step retrains the
    forest, redraws positive-bag labels from the temperature-sharpened
    forest probabilities, forces one positive instance per positive bag
    when the draw produced none, then cools.  A final hard-label
    (argmax) retrain produces the returned model.
    """
    schedule = schedule or AnnealSchedule()
    pos, neg = _split_bags(bags)
    ordered = pos + neg
    X = np.vstack([_stack(b) for b in ordered])
    sizes = [len(b.instances) for b in ordered]
    offsets = np.cumsum([0] + sizes)
    n_pos_bags = len(pos)
    n_pos_inst = offsets[n_pos_bags]

    rng = rng_from(seed, "miforests")
    y = np.concatenate([
        np.full(sz, 1 if k < n_pos_bags else 0, dtype=np.int64)
        for k, sz in enumerate(sizes)
    ])

    temperature = schedule.t_initial
    for step in range(schedule.steps):
        forest = forest_train(X, y, t, x_d, rng_from(seed, "step", step).integers(2**31))
        p1 = np.asarray(forest_predict(forest, X[:n_pos_inst]))
        sharp = _temper(p1, temperature)
        draws = (rng.random(n_pos_inst) < sharp).astype(np.int64)
        for k in range(n_pos_bags):
            lo, hi = offsets[k], offsets[k + 1]
            if not np.any(draws[lo:hi]):
                draws[lo + int(np.argmax(p1[lo:hi]))] = 1
        y[:n_pos_inst] = draws
        temperature *= schedule.cooling

    # hard assignment and one last retrain
    forest = forest_train(X, y, t, x_d, rng_from(seed, "step", schedule.steps).integers(2**31))
    p1 = np.asarray(forest_predict(forest, X[:n_pos_inst]))
    hard = (p1 > 0.5).astype(np.int64)
    for k in range(n_pos_bags):
        lo, hi = offsets[k], offsets[k + 1]
        if not np.any(hard[lo:hi]):
            hard[lo + int(np.argmax(p1[lo:hi]))] = 1
    y[:n_pos_inst] = hard
    final = forest_train(X, y, t, x_d, rng_from(seed, "final").integers(2**31))

    labels = {
        bag.id: y[offsets[k]:offsets[k + 1]].copy()
        for k, bag in enumerate(ordered)
    }
    return final, MilTrainInfo(instance_labels=labels,
                               iterations=schedule.steps + 1)
