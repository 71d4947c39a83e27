import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpmvar import metrics


# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------


def ari_pair_counting(a, b):
    """ARI from explicit pair counts over all C(n, 2) pairs."""
    n = len(a)
    ss = sd = ds = dd = 0
    for i, j in itertools.combinations(range(n), 2):
        same_a, same_b = a[i] == a[j], b[i] == b[j]
        if same_a and same_b:
            ss += 1
        elif same_a:
            sd += 1
        elif same_b:
            ds += 1
        else:
            dd += 1
    denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd)
    if denom == 0:
        return 1.0 if sd + ds == 0 else 0.0
    return 2.0 * (ss * dd - sd * ds) / denom


def bh_oracle(pvals, q):
    """Benjamini-Hochberg by direct sort and threshold scan."""
    m = len(pvals)
    order = sorted(range(m), key=lambda j: pvals[j])
    k_max = 0
    for rank, j in enumerate(order, start=1):
        if pvals[j] <= q * rank / m:
            k_max = rank
    selected = [False] * m
    for j in order[:k_max]:
        selected[j] = True
    return np.array(selected)


# ---------------------------------------------------------------------------
# adjusted Rand index
# ---------------------------------------------------------------------------


def test_ari_identical_partitions():
    for labels in ([0, 0, 1, 2], [5, 5, 5, 5], [0, 1, 2, 3]):
        assert metrics.adjusted_rand_index(labels, labels) == pytest.approx(1.0)


def test_ari_frozen_crossed_case():
    # a=(1,1,2,2) vs b=(1,2,1,2): pair counting gives exactly -0.5
    a, b = [1, 1, 2, 2], [1, 2, 1, 2]
    assert metrics.adjusted_rand_index(a, b) == pytest.approx(-0.5)
    assert ari_pair_counting(a, b) == pytest.approx(-0.5)


def test_ari_singletons_vs_one_cluster():
    a = list(range(6))
    b = [0] * 6
    assert metrics.adjusted_rand_index(a, b) == pytest.approx(ari_pair_counting(a, b))
    assert metrics.adjusted_rand_index(a, b) == pytest.approx(0.0)


def test_ari_matches_pair_counting_on_random_partitions():
    rng = np.random.default_rng(0)
    for _ in range(40):
        n = int(rng.integers(2, 12))
        a = rng.integers(0, 4, size=n)
        b = rng.integers(0, 3, size=n)
        assert metrics.adjusted_rand_index(a, b) == pytest.approx(
            ari_pair_counting(list(a), list(b)), abs=1e-12
        )


def test_ari_shape_errors():
    with pytest.raises(ValueError):
        metrics.adjusted_rand_index([0, 1], [0, 1, 2])
    with pytest.raises(ValueError):
        metrics.adjusted_rand_index([0], [0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=10), st.data())
def test_ari_symmetric_and_label_invariant(a, data):
    b = data.draw(st.lists(st.integers(0, 3), min_size=len(a), max_size=len(a)))
    lhs = metrics.adjusted_rand_index(a, b)
    assert lhs == pytest.approx(metrics.adjusted_rand_index(b, a), abs=1e-12)
    # relabeling either side leaves ARI unchanged
    remap = {v: 10 - v for v in set(a)}
    assert lhs == pytest.approx(
        metrics.adjusted_rand_index([remap[v] for v in a], b), abs=1e-12
    )


# ---------------------------------------------------------------------------
# relative errors
# ---------------------------------------------------------------------------


def test_relative_error_trivial_cases():
    truth = np.arange(1.0, 7.0).reshape(2, 3)
    assert metrics.relative_error(truth, truth, 1) == 0.0
    assert metrics.relative_error(truth, truth, 2) == 0.0
    assert metrics.relative_error(2 * truth, truth, 1) == pytest.approx(1.0)
    assert metrics.relative_error(2 * truth, truth, 2) == pytest.approx(1.0)


def test_relative_error_matches_direct_summation():
    rng = np.random.default_rng(1)
    est, truth = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    l1 = sum(abs(e - t) for e, t in zip(est.ravel(), truth.ravel())) / sum(
        abs(t) for t in truth.ravel()
    )
    l2 = math.sqrt(sum((e - t) ** 2 for e, t in zip(est.ravel(), truth.ravel()))) / math.sqrt(
        sum(t * t for t in truth.ravel())
    )
    assert metrics.relative_error(est, truth, 1) == pytest.approx(l1, abs=1e-12)
    assert metrics.relative_error(est, truth, 2) == pytest.approx(l2, abs=1e-12)


def test_relative_error_zero_truth_rejected():
    with pytest.raises(ValueError):
        metrics.relative_error(np.ones(3), np.zeros(3))


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=-50, max_value=50).filter(lambda c: abs(c) > 1e-3))
def test_relative_error_scale_invariance(c):
    rng = np.random.default_rng(2)
    est, truth = rng.normal(size=5), rng.normal(size=5) + 0.1
    for order in (1, 2):
        assert metrics.relative_error(c * est, c * truth, order) == pytest.approx(
            metrics.relative_error(est, truth, order), rel=1e-9
        )


# ---------------------------------------------------------------------------
# credible-interval curves
# ---------------------------------------------------------------------------


def test_curves_perfect_separation():
    rng = np.random.default_rng(3)
    n_draw = 400
    strong = rng.normal(1.0, 0.01, size=(n_draw, 3))
    null = rng.normal(0.0, 0.01, size=(n_draw, 5))
    draws = np.concatenate([strong, null], axis=1)
    mask = np.array([True] * 3 + [False] * 5)
    roc, pr = metrics.credible_curves(draws, mask)
    assert roc.auc == pytest.approx(1.0, abs=0.02)
    assert pr.auc == pytest.approx(1.0, abs=0.02)


def test_curves_chance_level():
    rng = np.random.default_rng(4)
    aucs = []
    for _ in range(20):
        draws = rng.normal(0, 1, size=(120, 60)) + rng.normal(0, 1, size=60)
        mask = rng.random(60) < 0.5
        if mask.all() or not mask.any():
            continue
        roc, _ = metrics.credible_curves(draws, mask)
        aucs.append(roc.auc)
    assert abs(np.mean(aucs) - 0.5) < 0.08


def test_curves_hand_enumerated_three_coefficients():
    # coef0 draws all +1 (selected at every level), coef1 symmetric around 0
    # (never selected), coef2 all -0.5 (selected at every level)
    draws = np.zeros((10, 3))
    draws[:, 0] = 1.0
    draws[:, 1] = np.tile([-1.0, 1.0], 5)
    draws[:, 2] = -0.5
    mask = np.array([True, False, True])
    roc, pr = metrics.credible_curves(draws, mask, grid=np.linspace(0.05, 0.95, 19))
    # every grid point gives sensitivity 1, FPR 0: the ROC is the unit step
    assert roc.auc == pytest.approx(1.0)
    assert pr.auc == pytest.approx(1.0)
    # flipping the mask turns both selections into false positives
    roc2, pr2 = metrics.credible_curves(
        draws, ~mask, grid=np.linspace(0.05, 0.95, 19)
    )
    # points all at FPR 1, sensitivity 0 -> area of triangle under (1,0)-(1,1)
    assert roc2.auc == pytest.approx(0.0, abs=1e-12)
    assert pr2.auc == pytest.approx(0.0, abs=1e-12)


def test_curves_mixed_hand_case():
    # one false positive among the always-selected: precision 2/3, recall 1
    draws = np.zeros((10, 3))
    draws[:, 0] = 1.0
    draws[:, 1] = 0.1
    draws[:, 2] = -0.5
    mask = np.array([True, False, True])
    roc, pr = metrics.credible_curves(draws, mask, grid=np.linspace(0.05, 0.95, 19))
    # ROC points all at (1, 1): AUC is the triangle 0.5
    assert roc.auc == pytest.approx(0.5)
    # PR anchored at (0, 1), observed point (1, 2/3): trapezoid 5/6
    assert pr.auc == pytest.approx(5.0 / 6.0)


def test_curves_validate_inputs():
    draws = np.random.default_rng(5).normal(size=(50, 4))
    with pytest.raises(ValueError):
        metrics.credible_curves(draws, np.array([True, True, True, True]))
    with pytest.raises(ValueError):
        metrics.credible_curves(draws[:1], np.array([True, False, True, False]))
    with pytest.raises(ValueError):
        metrics.credible_curves(
            draws, np.array([True, False, True, False]), grid=[0.0, 0.5]
        )


def test_roc_curve_monotone():
    rng = np.random.default_rng(6)
    draws = rng.normal(0, 1, size=(200, 40)) + np.linspace(-1, 1, 40)
    mask = np.linspace(-1, 1, 40) > 0
    roc, _ = metrics.credible_curves(draws, mask)
    assert np.all(np.diff(roc.points[:, 0]) >= -1e-12)
    assert np.all(np.diff(roc.points[:, 1]) >= -1e-12)
    assert 0.0 <= roc.auc <= 1.0


# ---------------------------------------------------------------------------
# FDR selection
# ---------------------------------------------------------------------------


def test_fdr_symmetric_posteriors_select_nothing():
    rng = np.random.default_rng(7)
    draws = rng.normal(0, 1, size=(500, 6))
    draws -= draws.mean(axis=0, keepdims=True)
    sel = metrics.fdr_select(draws, 0.05)
    assert not sel.selected.any()


def test_fdr_one_clear_signal():
    rng = np.random.default_rng(8)
    draws = rng.normal(0, 1, size=(400, 5))
    draws -= draws.mean(axis=0, keepdims=True)
    draws[:, 2] = np.abs(draws[:, 2]) + 0.1  # all positive
    sel = metrics.fdr_select(draws, 0.05)
    assert sel.selected[2]
    assert sel.selected.sum() == 1


def test_fdr_matches_bh_oracle():
    rng = np.random.default_rng(9)
    for _ in range(25):
        m = int(rng.integers(3, 20))
        draws = rng.normal(rng.normal(0, 0.5, size=m), 1.0, size=(200, m))
        sel = metrics.fdr_select(draws, 0.1)
        assert np.array_equal(sel.selected, bh_oracle(list(sel.tail_prob), 0.1))


def test_fdr_level_domain():
    with pytest.raises(ValueError):
        metrics.fdr_select(np.zeros((10, 2)), 0.0)


def test_fdr_identically_zero_draws_never_selected():
    draws = np.zeros((100, 3))
    draws[:, 1] = 1.0
    sel = metrics.fdr_select(draws, 0.5)
    assert sel.selected[1]
    assert not sel.selected[0] and not sel.selected[2]
    assert sel.tail_prob[0] == 1.0


def test_fdr_tiny_level_needs_zero_tail_probability():
    rng = np.random.default_rng(10)
    draws = rng.normal(0.5, 1, size=(300, 4))
    sel = metrics.fdr_select(draws, 1e-9)
    # only coefficients whose draws never cross zero can survive q -> 0
    all_one_sided = (draws > 0).all(axis=0) | (draws < 0).all(axis=0)
    assert np.array_equal(sel.selected, sel.selected & all_one_sided)


# ---------------------------------------------------------------------------
# forecast error
# ---------------------------------------------------------------------------


def test_forecast_error_trivial():
    actual = np.arange(1.0, 11.0).reshape(2, 5)
    step, pooled = metrics.forecast_error(actual, actual)
    assert np.all(step == 0) and pooled == 0
    step, pooled = metrics.forecast_error(np.zeros_like(actual), actual)
    assert np.allclose(step, 1.0) and pooled == pytest.approx(1.0)


def test_forecast_error_matches_direct_computation():
    rng = np.random.default_rng(11)
    pred, actual = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)) + 1.0
    step, pooled = metrics.forecast_error(pred, actual)
    for h in range(4):
        expect = np.linalg.norm(pred[:, h] - actual[:, h]) / np.linalg.norm(actual[:, h])
        assert step[h] == pytest.approx(expect, abs=1e-12)
    assert pooled == pytest.approx(
        np.linalg.norm(pred - actual) / np.linalg.norm(actual), abs=1e-12
    )


def test_forecast_error_zero_column_rejected():
    actual = np.ones((2, 3))
    actual[:, 1] = 0.0
    with pytest.raises(ValueError):
        metrics.forecast_error(np.ones((2, 3)), actual)


# ---------------------------------------------------------------------------
# similarity, point clustering, reproducibility
# ---------------------------------------------------------------------------


def test_similarity_single_draw_is_indicator():
    sim = metrics.similarity_matrix(np.array([[0, 0, 1]]))
    assert np.array_equal(sim, [[1, 1, 0], [1, 1, 0], [0, 0, 1]])


def test_similarity_two_draw_hand_count():
    sim = metrics.similarity_matrix(np.array([[0, 0, 1], [0, 1, 1]]))
    assert np.allclose(sim, [[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]])
    assert np.all(np.diag(sim) == 1.0)


def test_point_clustering_picks_majority_partition():
    draws = np.array([[0, 0, 1, 1]] * 8 + [[0, 1, 2, 3]] * 2)
    part = metrics.point_clustering(draws)
    assert metrics.adjusted_rand_index(part, [0, 0, 1, 1]) == 1.0


def test_reproducibility_correlation_extremes():
    rng = np.random.default_rng(12)
    fit = rng.normal(size=(3, 2, 4, 4))
    ones = metrics.reproducibility_correlation(fit, fit.copy())
    assert np.allclose(ones, 1.0)
    neg = metrics.reproducibility_correlation(fit, -fit)
    assert np.allclose(neg, -1.0)


def test_reproducibility_correlation_matches_pearson():
    rng = np.random.default_rng(13)
    a, b = rng.normal(size=(2, 1, 3, 3)), rng.normal(size=(2, 1, 3, 3))
    out = metrics.reproducibility_correlation(a, b)
    for i in range(2):
        for d in range(3):
            x, y = a[i, :, d, :].ravel(), b[i, :, d, :].ravel()
            expect = np.corrcoef(x, y)[0, 1]
            assert out[i, d] == pytest.approx(expect, abs=1e-12)


def test_reproducibility_zero_variance_row_is_nan():
    a = np.zeros((1, 1, 2, 2))
    b = np.random.default_rng(14).normal(size=(1, 1, 2, 2))
    out = metrics.reproducibility_correlation(a, b)
    assert np.isnan(out).all()
