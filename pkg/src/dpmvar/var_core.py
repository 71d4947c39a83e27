"""Subject-level VAR(K) model: lag stacking, likelihoods, stability, forecasting.

Conventions: a panel is a D x T array (rows = nodes, columns = scans), an
autocovariance set is a (K, D, D) array of lag matrices, and time indices in
the public API are 1-based to match the usual time-series notation. The
first scan has no history, so its lagged predictor is all zeros and its
likelihood term is a zero-mean Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class SubjectPanel:
    """One subject's multivariate time course.

    Parameters
    ----------
    id : str
        Unique subject identifier.
    data : ndarray, shape (D, T)
        Observations; rows are nodes/variables, columns are scans.
    """

    id: str
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("panel data must be a 2-D (D x T) array")
        if self.data.shape[0] < 1 or self.data.shape[1] < 2:
            raise ValueError("panel needs D >= 1 nodes and T >= 2 scans")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("panel data must be finite")

    @property
    def n_nodes(self) -> int:
        return self.data.shape[0]

    @property
    def n_scans(self) -> int:
        return self.data.shape[1]


@dataclass
class LowRankCovariance:
    """Residual covariance in factor form, Sigma = loadings @ loadings.T + diag(idio_var)."""

    loadings: np.ndarray  # (D, B)
    idio_var: np.ndarray  # (D,), strictly positive

    def __post_init__(self):
        self.loadings = np.asarray(self.loadings, dtype=float)
        self.idio_var = np.asarray(self.idio_var, dtype=float)
        if self.loadings.ndim != 2:
            raise ValueError("loadings must be 2-D (D x B)")
        if self.idio_var.shape != (self.loadings.shape[0],):
            raise ValueError("idio_var must have one entry per node")
        if np.any(self.idio_var <= 0):
            raise ValueError("idio_var entries must be strictly positive")

    def dense(self) -> np.ndarray:
        return self.loadings @ self.loadings.T + np.diag(self.idio_var)


def _panel_data(panel) -> np.ndarray:
    if isinstance(panel, SubjectPanel):
        return panel.data
    return np.asarray(panel, dtype=float)


def _as_autocov(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        A = A[None]
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError("autocovariance set must have shape (K, D, D)")
    return A


def _flat_coeffs(A: np.ndarray) -> np.ndarray:
    """Reshape (K, D, D) lag matrices into the (D, D*K) block row [A_1 ... A_K]."""
    K, D, _ = A.shape
    return np.concatenate(list(A), axis=1).reshape(D, D * K)


def build_lagged_vector(panel, t: int, n_lags: int) -> np.ndarray:
    """Stack the n_lags previous scans before 1-based time t, zero-padded.

    Returns the length D*n_lags vector (x_{t-1}', ..., x_{t-K}')' with zeros
    in any block whose scan would precede the start of the series.
    """
    data = _panel_data(panel)
    D, T = data.shape
    if not 1 <= t <= T:
        raise IndexError(f"time index {t} outside 1..{T}")
    z = np.zeros(D * n_lags)
    for k in range(1, n_lags + 1):
        if t - k >= 1:
            z[(k - 1) * D : k * D] = data[:, t - k - 1]
    return z


def lagged_design(data: np.ndarray, n_lags: int) -> np.ndarray:
    """All lagged predictors at once: column t-1 holds build_lagged_vector(.., t, K)."""
    data = np.asarray(data, dtype=float)
    D, T = data.shape
    Z = np.zeros((D * n_lags, T))
    for k in range(1, n_lags + 1):
        Z[(k - 1) * D : k * D, k:] = data[:, : T - k]
    return Z


def conditional_mean(A, z: np.ndarray) -> np.ndarray:
    """Conditional mean [A_1 ... A_K] @ z for one lagged predictor."""
    A = _as_autocov(A)
    z = np.asarray(z, dtype=float)
    flat = _flat_coeffs(A)
    if z.shape[0] != flat.shape[1]:
        raise ValueError(f"lagged vector has length {z.shape[0]}, expected {flat.shape[1]}")
    return flat @ z


def gaussian_loglik_dense(resid: np.ndarray, sigma: np.ndarray) -> float:
    """Sum over columns of log N(r_t; 0, sigma). Raises LinAlgError if sigma is not SPD."""
    resid = np.atleast_2d(np.asarray(resid, dtype=float))
    D, T = resid.shape
    chol = np.linalg.cholesky(np.asarray(sigma, dtype=float))
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    w = np.linalg.solve(chol, resid)
    quad = float(np.sum(w * w))
    return -0.5 * (T * D * _LOG_2PI + T * logdet + quad)


class LowRankFactor:
    """Precomputed pieces for repeated low-rank Gaussian likelihood evaluation.

    Uses the Woodbury identity and the matrix determinant lemma so each scan
    costs O(D*B + B^2) instead of O(D^2).
    """

    def __init__(self, loadings: np.ndarray, idio_var: np.ndarray):
        loadings = np.asarray(loadings, dtype=float)
        idio_var = np.asarray(idio_var, dtype=float)
        if np.any(idio_var <= 0):
            raise ValueError("idio_var entries must be strictly positive")
        self.n_nodes = loadings.shape[0]
        self.inv_idio = 1.0 / idio_var
        self.scaled = loadings * self.inv_idio[:, None]  # Omega^{-1} Gamma
        cap = np.eye(loadings.shape[1]) + loadings.T @ self.scaled
        self.chol_cap = np.linalg.cholesky(cap)
        self.logdet = float(np.sum(np.log(idio_var))) + 2.0 * float(
            np.sum(np.log(np.diag(self.chol_cap)))
        )

    def loglik(self, resid: np.ndarray) -> float:
        """Sum over columns of log N(r_t; 0, loadings@loadings.T + diag(idio_var))."""
        resid = np.atleast_2d(np.asarray(resid, dtype=float))
        D, T = resid.shape
        quad = float(np.sum(resid * resid * self.inv_idio[:, None]))
        s = self.scaled.T @ resid
        w = np.linalg.solve(self.chol_cap, s)
        quad -= float(np.sum(w * w))
        return -0.5 * (T * D * _LOG_2PI + T * self.logdet + quad)


def residual_matrix(panel, A) -> np.ndarray:
    """Residuals x_t - conditional mean at every scan, as a D x T matrix."""
    data = _panel_data(panel)
    A = _as_autocov(A)
    Z = lagged_design(data, A.shape[0])
    return data - _flat_coeffs(A) @ Z


def log_likelihood(panel, A, sigma: np.ndarray) -> float:
    """Exact VAR(K) log likelihood with dense residual covariance sigma.

    The t-th term is log N(x_t - sum_k A_k x_{t-k}; 0, sigma) with the sum
    over available history only, so the t=1 term is log N(x_1; 0, sigma).
    """
    return gaussian_loglik_dense(residual_matrix(panel, A), sigma)


def log_likelihood_lowrank(panel, A, cov: LowRankCovariance) -> float:
    """Same likelihood as log_likelihood with sigma = cov.dense(), via Woodbury."""
    factor = LowRankFactor(cov.loadings, cov.idio_var)
    return factor.loglik(residual_matrix(panel, A))


def companion_matrix(A) -> np.ndarray:
    """Companion form: top block row [A_1 ... A_K], identity sub-diagonal blocks."""
    A = _as_autocov(A)
    K, D, _ = A.shape
    comp = np.zeros((D * K, D * K))
    comp[:D] = _flat_coeffs(A)
    if K > 1:
        comp[D:, : D * (K - 1)] = np.eye(D * (K - 1))
    return comp


def spectral_radius(A) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(A)))))


def is_stable(A, margin: float = 0.0) -> bool:
    """True iff the companion spectral radius is below 1 - margin."""
    if not 0.0 <= margin < 1.0:
        raise ValueError("margin must lie in [0, 1)")
    return spectral_radius(A) < 1.0 - margin


def forecast(panel, A, horizon: int) -> np.ndarray:
    """Iterated conditional-mean point forecasts for the next `horizon` scans.

    Step j conditions on the observed panel extended with the j-1 previous
    forecasts, matching repeated application of the one-step conditional mean.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    data = _panel_data(panel)
    A = _as_autocov(A)
    K, D, _ = A.shape
    flat = _flat_coeffs(A)
    history = np.concatenate([data, np.zeros((D, horizon))], axis=1)
    T = data.shape[1]
    for j in range(horizon):
        t = T + j + 1  # 1-based index of the scan being predicted
        zvec = np.zeros(D * K)
        for k in range(1, K + 1):
            if t - k >= 1:
                zvec[(k - 1) * D : k * D] = history[:, t - k - 1]
        history[:, t - 1] = flat @ zvec
    return history[:, T:]
