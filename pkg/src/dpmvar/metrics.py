"""Evaluation metrics: clustering agreement, estimation error, interval-based
feature selection with ROC/PR curves, FDR-controlled selection, forecasting
error, and cross-run reliability summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def adjusted_rand_index(a, b) -> float:
    """Chance-adjusted Rand agreement between two partitions of the same items."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError("label vectors must have equal length")
    if a.size < 2:
        raise ValueError("need at least two items")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(a.size)
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        # both partitions trivial; identical iff contingency is a permutation
        return 1.0 if sum_cells == max_index else 0.0
    return float((sum_cells - expected) / (max_index - expected))


def relative_error(est, truth, order: int = 2) -> float:
    """||est - truth||_p / ||truth||_p over the flattened arrays, p in {1, 2}."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    est = np.asarray(est, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if est.shape != truth.shape:
        raise ValueError("est and truth must have the same shape")
    denom = np.linalg.norm(truth, ord=order)
    if denom == 0:
        raise ValueError("truth has zero norm")
    return float(np.linalg.norm(est - truth, ord=order) / denom)


@dataclass
class CurvePoints:
    """Operating points of a selection curve plus its trapezoidal area."""

    points: np.ndarray  # (m, 2), x nondecreasing
    auc: float


def _interval_selection(draws: np.ndarray, level: float) -> np.ndarray:
    lo = np.quantile(draws, level / 2.0, axis=0)
    hi = np.quantile(draws, 1.0 - level / 2.0, axis=0)
    return (lo > 0) | (hi < 0)


def credible_curves(draws, truth_mask, grid=None):
    """ROC and PR curves from credible-interval selection swept over levels.

    For each level g in the grid a coefficient is selected iff its
    equal-tailed (1-g) posterior interval excludes zero. Points with no
    selections (undefined precision) are dropped from the PR curve. Returns
    (roc, pr) as CurvePoints; the ROC curve is anchored at (0, 0) and (1, 1)
    and the PR curve at (recall 0, precision 1), the usual convention for
    threshold curves that cannot be traced all the way to empty selections.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    draws = draws.reshape(draws.shape[0], -1)
    if draws.shape[0] < 2:
        raise ValueError("need at least two posterior draws per coefficient")
    truth_mask = np.asarray(truth_mask, dtype=bool).ravel()
    if truth_mask.shape[0] != draws.shape[1]:
        raise ValueError("truth_mask must have one entry per coefficient")
    n_pos = int(truth_mask.sum())
    n_neg = truth_mask.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("truth_mask must contain both classes")
    if grid is None:
        # dense at the small-level end where the high-precision points live
        grid = np.unique(
            np.concatenate([np.geomspace(1e-4, 0.1, 60), np.linspace(0.1, 0.998, 190)])
        )
    grid = np.sort(np.asarray(grid, dtype=float))
    if np.any(grid <= 0.0) or np.any(grid >= 1.0):
        raise ValueError("grid levels must lie in (0, 1)")
    # one quantile pass for every level: rows 0..L-1 are lower bounds, L.. upper
    qs = np.concatenate([grid / 2.0, 1.0 - grid / 2.0])
    bounds = np.quantile(draws, qs, axis=0)
    roc_pts = [(0.0, 0.0)]
    pr_pts = []
    for j, level in enumerate(grid):
        lo, hi = bounds[j], bounds[len(grid) + j]
        sel = (lo > 0) | (hi < 0)
        tp = int(np.sum(sel & truth_mask))
        fp = int(np.sum(sel & ~truth_mask))
        roc_pts.append((fp / n_neg, tp / n_pos))
        if tp + fp > 0:
            pr_pts.append((tp / n_pos, tp / (tp + fp)))
    roc_pts.append((1.0, 1.0))
    roc = np.array(sorted(roc_pts))
    roc_auc = float(np.trapezoid(roc[:, 1], roc[:, 0]))
    # dominated operating points (same recall, lower precision) do not belong
    # to the achievable precision envelope
    envelope = {0.0: 1.0}
    for recall, precision in pr_pts:
        envelope[recall] = max(envelope.get(recall, 0.0), precision)
    pr = np.array(sorted(envelope.items()))
    pr_auc = float(np.trapezoid(pr[:, 1], pr[:, 0])) if len(pr) > 1 else 0.0
    return CurvePoints(roc, roc_auc), CurvePoints(pr, pr_auc)


@dataclass
class SelectionResult:
    """FDR-controlled selection over posterior coefficient draws."""

    lower: np.ndarray
    upper: np.ndarray
    tail_prob: np.ndarray  # doubled minimal posterior tail probability
    selected: np.ndarray
    fdr_level: float


def fdr_select(draws, level: float, interval_level: float = 0.05) -> SelectionResult:
    """Benjamini-Hochberg selection on doubled posterior tail probabilities.

    For each coefficient p_j = 2 * min(P(theta_j > 0), P(theta_j < 0)),
    estimated from the draws, then BH at the requested level over all
    coefficients. Interval bounds at `interval_level` are reported alongside.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    flat = draws.reshape(draws.shape[0], -1)
    # non-strict tails: identical for continuous posteriors, and a point mass
    # exactly at zero (no sign preference at all) gets p = 1, never p = 0
    p_pos = np.mean(flat >= 0, axis=0)
    p_neg = np.mean(flat <= 0, axis=0)
    pvals = np.minimum(2.0 * np.minimum(p_pos, p_neg), 1.0)
    selected = _benjamini_hochberg(pvals, level)
    lo = np.quantile(flat, interval_level / 2.0, axis=0)
    hi = np.quantile(flat, 1.0 - interval_level / 2.0, axis=0)
    return SelectionResult(lo, hi, pvals, selected, level)


def _benjamini_hochberg(pvals: np.ndarray, level: float) -> np.ndarray:
    m = pvals.size
    order = np.argsort(pvals, kind="stable")
    ranked = pvals[order]
    below = ranked <= level * (np.arange(1, m + 1) / m)
    selected = np.zeros(m, dtype=bool)
    if np.any(below):
        cutoff = np.max(np.nonzero(below)[0])
        selected[order[: cutoff + 1]] = True
    return selected


def forecast_error(predicted, actual):
    """Relative L2 forecast error per horizon and pooled over the block.

    Returns (per_step, pooled) where per_step[h] = ||pred_h - actual_h|| /
    ||actual_h|| for the h-th predicted scan.
    """
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape:
        raise ValueError("predicted and actual must have the same shape")
    norms = np.linalg.norm(actual, axis=0)
    if np.any(norms == 0):
        raise ValueError("actual has a zero column; relative error undefined")
    per_step = np.linalg.norm(predicted - actual, axis=0) / norms
    pooled = float(np.linalg.norm(predicted - actual) / np.linalg.norm(actual))
    return per_step, pooled


def similarity_matrix(label_draws) -> np.ndarray:
    """Posterior co-clustering frequencies: entry (i, j) is the fraction of
    draws assigning i and j the same label."""
    label_draws = np.asarray(label_draws)
    if label_draws.ndim == 1:
        label_draws = label_draws[None, :]
    if label_draws.shape[0] < 1:
        raise ValueError("need at least one draw")
    sim = np.zeros((label_draws.shape[1], label_draws.shape[1]))
    for row in label_draws:
        sim += row[:, None] == row[None, :]
    return sim / label_draws.shape[0]


def point_clustering(label_draws) -> np.ndarray:
    """Least-squares point partition against the posterior co-clustering matrix.

    Among the sampled partitions, returns the one whose 0/1 co-clustering
    matrix is closest in squared error to the posterior similarity matrix,
    with labels compacted to 0..C-1.
    """
    label_draws = np.asarray(label_draws)
    if label_draws.ndim == 1:
        label_draws = label_draws[None, :]
    sim = similarity_matrix(label_draws)
    best, best_loss = None, np.inf
    for row in label_draws:
        eq = (row[:, None] == row[None, :]).astype(float)
        loss = float(np.sum((eq - sim) ** 2))
        if loss < best_loss:
            best, best_loss = row, loss
    _, compact = np.unique(best, return_inverse=True)
    return compact


def reproducibility_correlation(fit_a, fit_b) -> np.ndarray:
    """Pearson correlation per (subject, row) between two fits' coefficients.

    Inputs are (n, K, D, D) subject-level estimates from two sessions of the
    same subjects. Rows with zero variance in either fit give NaN.
    """
    fit_a = np.asarray(fit_a, dtype=float)
    fit_b = np.asarray(fit_b, dtype=float)
    if fit_a.shape != fit_b.shape:
        raise ValueError("fits must have the same shape")
    n, K, D, _ = fit_a.shape
    out = np.full((n, D), np.nan)
    for i in range(n):
        for d in range(D):
            x = fit_a[i, :, d, :].ravel()
            y = fit_b[i, :, d, :].ravel()
            sx, sy = x.std(), y.std()
            if sx > 0 and sy > 0:
                out[i, d] = float(np.corrcoef(x, y)[0, 1])
    return out
