import numpy as np
import pytest
from sklearn.base import clone

from dpmvar import DPMixtureVAR, metrics, var_core


def easy_two_cluster_panels(rng, n_per=4, T=150):
    """Two groups with opposite strong AR(1) signs; trivially separable."""
    panels = []
    labels = []
    for g, a in enumerate((0.7, -0.7)):
        for _ in range(n_per):
            x = np.zeros((2, T))
            for t in range(1, T):
                x[:, t] = a * x[:, t - 1] + rng.normal(size=2)
            panels.append(x)
            labels.append(g)
    return panels, np.array(labels)


def test_get_set_params_roundtrip():
    est = DPMixtureVAR(variant="rg", n_lags=2, n_iter=10, burn_in=5)
    params = est.get_params()
    assert params["variant"] == "rg"
    assert params["n_lags"] == 2
    est2 = clone(est)
    assert est2.get_params() == params


def test_fit_accepts_array_and_panel_inputs():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(3, 2, 40))
    est = DPMixtureVAR(n_iter=8, burn_in=4, random_state=1).fit(X)
    assert est.subject_A_.shape == (3, 1, 2, 2)
    assert est.n_features_in_ == 2
    panels = [var_core.SubjectPanel("a", X[0]), var_core.SubjectPanel("b", X[1])]
    est2 = DPMixtureVAR(n_iter=8, burn_in=4, random_state=1).fit(panels)
    assert est2.draws_.subject_ids == ["a", "b"]


def test_predict_shape_and_determinism():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(2, 3, 30))
    est = DPMixtureVAR(n_iter=6, burn_in=3, random_state=7).fit(X)
    pred = est.predict(horizon=4)
    assert pred.shape == (2, 3, 4)
    est2 = DPMixtureVAR(n_iter=6, burn_in=3, random_state=7).fit(X)
    assert np.array_equal(pred, est2.predict(horizon=4))


def test_predict_before_fit_raises():
    with pytest.raises(RuntimeError):
        DPMixtureVAR().predict()


def test_estimator_recovers_planted_clusters():
    rng = np.random.default_rng(2)
    panels, labels = easy_two_cluster_panels(rng)
    est = DPMixtureVAR(n_lags=1, n_factors=1, burn_in=150, n_iter=300,
                       random_state=3).fit(panels)
    assert metrics.adjusted_rand_index(est.autocov_labels_[0], labels) == 1.0


def test_score_is_finite_and_improves_with_signal():
    rng = np.random.default_rng(3)
    panels, _ = easy_two_cluster_panels(rng, n_per=2, T=80)
    est = DPMixtureVAR(n_lags=1, n_factors=1, burn_in=40, n_iter=80,
                       random_state=4).fit(panels)
    assert np.isfinite(est.score())
