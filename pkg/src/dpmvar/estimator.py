"""Scikit-learn style estimator wrapping the multi-subject clustered VAR."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import metrics, var_core
from .exceptions import ConfigError
from .samplers import HyperParams, run_chain


class DPMixtureVAR(BaseEstimator):
    """Multi-subject VAR with Dirichlet-process mixture clustering.

    Fits the block Gibbs sampler to a collection of subject panels and
    exposes posterior summaries as fitted attributes. `variant` picks the
    clustering granularity of the coefficient axis: "pdpm" clusters whole
    coefficient sets, "lg" clusters per lag, "rg" clusters per row.

    Parameters mirror the sampler configuration; see HyperParams. X for
    fit() is either an (n_subjects, D, T) array or a list of (D, T_i)
    arrays/SubjectPanel objects.
    """

    def __init__(
        self,
        variant="pdpm",
        n_lags=1,
        n_factors=None,
        burn_in=1000,
        n_iter=4000,
        thin=1,
        alpha_cov=1.0,
        alpha_autocov=1.0,
        a_sigma=2.0,
        b_sigma=1.0,
        lasso_r=1.0,
        lasso_delta=2.0,
        max_components=None,
        random_state=0,
    ):
        self.variant = variant
        self.n_lags = n_lags
        self.n_factors = n_factors
        self.burn_in = burn_in
        self.n_iter = n_iter
        self.thin = thin
        self.alpha_cov = alpha_cov
        self.alpha_autocov = alpha_autocov
        self.a_sigma = a_sigma
        self.b_sigma = b_sigma
        self.lasso_r = lasso_r
        self.lasso_delta = lasso_delta
        self.max_components = max_components
        self.random_state = random_state

    def _hyper(self) -> HyperParams:
        return HyperParams(
            alpha_cov=self.alpha_cov,
            alpha_autocov=self.alpha_autocov,
            a_sigma=self.a_sigma,
            b_sigma=self.b_sigma,
            lasso_r=self.lasso_r,
            lasso_delta=self.lasso_delta,
            n_factors=self.n_factors,
            n_lags=self.n_lags,
            burn_in=self.burn_in,
            n_iter=self.n_iter,
            thin=self.thin,
            max_components=self.max_components,
        )

    @staticmethod
    def _as_panels(X):
        if isinstance(X, np.ndarray) and X.ndim == 3:
            return [var_core.SubjectPanel(str(i), X[i]) for i in range(X.shape[0])]
        panels = []
        for i, item in enumerate(X):
            if isinstance(item, var_core.SubjectPanel):
                panels.append(item)
            else:
                panels.append(var_core.SubjectPanel(str(i), np.asarray(item, dtype=float)))
        if not panels:
            raise ConfigError("X must contain at least one subject panel")
        return panels

    def fit(self, X, y=None):
        """Run the Gibbs sampler on the panels in X. y is ignored."""
        panels = self._as_panels(X)
        self.panels_ = panels
        self.draws_ = run_chain(panels, self._hyper(), self.variant, int(self.random_state))
        self.subject_A_ = self.draws_.posterior_mean_A()
        self.subject_sigma_ = self.draws_.posterior_mean_sigma()
        if self.draws_.n_draws:
            self.cov_labels_ = metrics.point_clustering(self.draws_.cov_labels)
            self.autocov_labels_ = np.stack(
                [
                    metrics.point_clustering(self.draws_.autocov_labels[:, g, :])
                    for g in range(self.draws_.autocov_labels.shape[1])
                ]
            )
        self.n_features_in_ = panels[0].n_nodes
        return self

    def predict(self, horizon=5):
        """Iterated point forecasts for every fitted subject, (n, D, horizon)."""
        self._check_fitted()
        return np.stack(
            [
                var_core.forecast(panel, self.subject_A_[i], horizon)
                for i, panel in enumerate(self.panels_)
            ]
        )

    def score(self, X=None, y=None) -> float:
        """Mean stored log likelihood per subject and scan (higher is better)."""
        self._check_fitted()
        total_scans = sum(p.n_scans for p in self.panels_)
        return float(self.draws_.loglik.mean() / total_scans)

    def _check_fitted(self):
        if not hasattr(self, "draws_"):
            raise RuntimeError("estimator is not fitted; call fit first")
