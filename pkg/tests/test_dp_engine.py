import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpmvar import dp_engine
from dpmvar.exceptions import StateCorruptionError


class CaptureRng:
    """Records the parameters of distribution calls; returns fixed values."""

    def __init__(self):
        self.calls = []

    def beta(self, a, b):
        self.calls.append(("beta", np.asarray(a, dtype=float), np.asarray(b, dtype=float)))
        return np.full(np.broadcast(np.asarray(a), np.asarray(b)).shape, 0.5)

    def random(self, n=None):
        self.calls.append(("random", n))
        return 0.5 if n is None else np.full(n, 0.5)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def test_weights_near_unit_stick():
    w = dp_engine.weights_from_sticks(np.array([1.0 - 1e-12]))
    assert w[0] == pytest.approx(1.0, abs=1e-10)


def test_weights_halves():
    w = dp_engine.weights_from_sticks(np.array([0.5, 0.5]))
    assert np.allclose(w, [0.5, 0.25])


def test_weights_prefix_too_long():
    with pytest.raises(IndexError):
        dp_engine.weights_from_sticks(np.array([0.5]), 2)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=1e-6, max_value=1.0 - 1e-6), min_size=1, max_size=12)
)
def test_residual_mass_identity(sticks):
    # 1 - sum_h pi_h == prod_h (1 - nu_h) for any prefix
    sticks = np.asarray(sticks)
    w = dp_engine.weights_from_sticks(sticks)
    assert 1.0 - w.sum() == pytest.approx(np.prod(1.0 - sticks), abs=1e-12)


# ---------------------------------------------------------------------------
# stick updates
# ---------------------------------------------------------------------------


def test_update_sticks_beta_parameters_exact():
    # counts n_h and above-counts m_h go straight into Beta(1 + n_h, a + m_h)
    labels = np.array([0, 0, 0, 1, 1])
    rng = CaptureRng()
    dp_engine.update_sticks(labels, 2, 1.0, rng)
    kind, a, b = rng.calls[0]
    assert kind == "beta"
    assert np.array_equal(a, [4.0, 3.0])  # 1 + (3, 2)
    assert np.array_equal(b, [3.0, 1.0])  # alpha + (2, 0)


def test_update_sticks_empty_component_gets_prior():
    labels = np.array([0, 0])
    rng = CaptureRng()
    dp_engine.update_sticks(labels, 2, 2.5, rng)
    _, a, b = rng.calls[0]
    assert a[1] == 1.0 and b[1] == 2.5  # Beta(1, alpha) for the empty slot


def test_update_sticks_moment_oracle():
    # n_h=3, m_h=2, alpha=1 -> Beta(4, 3), mean 4/7
    labels = np.array([0, 0, 0, 1, 1])
    rng = np.random.default_rng(0)
    draws = np.array([dp_engine.update_sticks(labels, 2, 1.0, rng)[0] for _ in range(20000)])
    mean, sd = 4.0 / 7.0, np.sqrt(4 * 3 / (49.0 * 8.0))
    assert abs(draws.mean() - mean) < 3 * sd / np.sqrt(len(draws))


def test_update_sticks_requires_positive_alpha():
    with pytest.raises(ValueError):
        dp_engine.update_sticks(np.array([0]), 1, 0.0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# slice variables
# ---------------------------------------------------------------------------


def test_slice_support():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 2, size=500)
    weights = np.array([0.6, 0.3])
    u = dp_engine.sample_slice(labels, weights, rng)
    assert np.all(u >= 0) and np.all(u < weights[labels])


def test_slice_uniform_moment_oracle():
    rng = np.random.default_rng(2)
    labels = np.zeros(10000, dtype=int)
    weights = np.array([0.37])
    u = dp_engine.sample_slice(labels, weights, rng)
    ratio = u / 0.37
    assert abs(ratio.mean() - 0.5) < 4 * np.sqrt(1.0 / 12 / len(u))


def test_slice_zero_weight_is_corruption():
    with pytest.raises(StateCorruptionError):
        dp_engine.sample_slice(np.array([1]), np.array([0.5, 0.0]), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# truncation growth
# ---------------------------------------------------------------------------


def test_required_components_no_growth_when_residual_small():
    n, sticks = dp_engine.required_components(
        np.array([0.5]), np.array([0.9]), 1.0, np.random.default_rng(0)
    )
    assert n == 1 and len(sticks) == 1


def test_required_components_grows_for_small_slice():
    rng = np.random.default_rng(3)
    n, sticks = dp_engine.required_components(np.array([1e-6]), np.array([0.5]), 1.0, rng)
    assert n > 1
    assert np.prod(1.0 - sticks) < 1e-6


def test_required_components_respects_cap():
    n, sticks = dp_engine.required_components(
        np.array([1e-12]), np.array([0.5]), 1.0, np.random.default_rng(0), max_components=1
    )
    assert n == 1 and len(sticks) == 1


def test_required_components_distribution_matches_direct_simulation():
    # oracle: H* = min{h: prod_{l<=h}(1 - nu_l) < u} with nu ~ Beta(1, alpha),
    # simulated directly
    alpha, u = 1.0, 0.05
    rng = np.random.default_rng(4)
    ours = []
    for _ in range(4000):
        n, _ = dp_engine.required_components(np.array([u]), np.zeros(0), alpha, rng)
        ours.append(n)
    oracle_rng = np.random.default_rng(5)
    oracle = []
    for _ in range(4000):
        residual, h = 1.0, 0
        while residual >= u:
            residual *= 1.0 - oracle_rng.beta(1.0, alpha)
            h += 1
        oracle.append(h)
    ours, oracle = np.array(ours), np.array(oracle)
    se = np.sqrt(ours.var() / len(ours) + oracle.var() / len(oracle))
    assert abs(ours.mean() - oracle.mean()) < 4 * se


# ---------------------------------------------------------------------------
# assignment draws
# ---------------------------------------------------------------------------


def test_assignment_single_admissible_component():
    rng = np.random.default_rng(6)
    for _ in range(20):
        lab = dp_engine.sample_assignment(
            np.array([-5.0, 100.0]), 0.4, np.array([0.6, 0.1]), rng
        )
        assert lab == 0  # component 1 is gated out by u=0.4 > 0.1


def test_assignment_symmetric_pair():
    rng = np.random.default_rng(7)
    picks = [
        dp_engine.sample_assignment(np.array([3.0, 3.0]), 0.1, np.array([0.5, 0.5]), rng)
        for _ in range(10000)
    ]
    frac = np.mean(picks)
    assert abs(frac - 0.5) < 4 * 0.5 / np.sqrt(len(picks))


def test_assignment_multinomial_oracle():
    # logliks (0, ln 2, ln 3) admissible everywhere -> probabilities (1, 2, 3)/6
    rng = np.random.default_rng(8)
    logl = np.array([0.0, np.log(2.0), np.log(3.0)])
    picks = np.array(
        [
            dp_engine.sample_assignment(logl, 0.01, np.array([0.3, 0.3, 0.3]), rng)
            for _ in range(30000)
        ]
    )
    for lab, p in enumerate([1 / 6, 2 / 6, 3 / 6]):
        frac = np.mean(picks == lab)
        assert abs(frac - p) < 4 * np.sqrt(p * (1 - p) / len(picks))


def test_assignment_never_returns_gated_label():
    rng = np.random.default_rng(9)
    for _ in range(200):
        weights = rng.uniform(0.01, 0.5, size=4)
        u = rng.uniform(0, weights.max())
        logl = rng.normal(size=4) * 5
        lab = dp_engine.sample_assignment(logl, u, weights, rng)
        assert u < weights[lab]


def test_assignment_all_gated_is_corruption():
    with pytest.raises(StateCorruptionError):
        dp_engine.sample_assignment(
            np.array([0.0, 0.0]), 0.9, np.array([0.5, 0.3]), np.random.default_rng(0)
        )


def test_assignment_extreme_logliks_are_stable():
    rng = np.random.default_rng(10)
    lab = dp_engine.sample_assignment(
        np.array([-1e6, 2e6, 1e6]), 0.01, np.array([0.3, 0.3, 0.3]), rng
    )
    assert lab == 1


def test_slice_kernel_targets_weighted_mixture_marginally():
    # alternate u | label and label | u on fixed weights and likelihoods:
    # the stationary label distribution must be pi_h * L_h normalized
    rng = np.random.default_rng(11)
    weights = np.array([0.55, 0.25])
    logl = np.array([0.0, np.log(1.8)])
    target = weights * np.exp(logl)
    target /= target.sum()
    n_steps = 100_000
    label = 0
    hits = np.zeros(n_steps, dtype=int)
    for s in range(n_steps):
        u = weights[label] * rng.random()
        label = dp_engine.sample_assignment(logl, u, weights, rng)
        hits[s] = label
    frac1 = hits.mean()
    # batch-means SE: the label sequence is a Markov chain
    batches = hits[: n_steps // 100 * 100].reshape(100, -1).mean(axis=1)
    se = batches.std(ddof=1) / np.sqrt(100)
    assert abs(frac1 - target[1]) < 4 * se
