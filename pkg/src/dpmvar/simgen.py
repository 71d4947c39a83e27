"""Synthetic multi-subject VAR datasets with known clustering ground truth.

Four generation settings control how the subject-level coefficient sets are
shared: (1) whole-set clusters, (2) per-lag clusters, (3) per-row clusters
with exact sharing, (4) per-row clusters with subject-level jitter on the
nonzero entries. Coefficients are sparse with an exact number of structural
zeros per lag matrix; nonzeros are uniform on +-[0.1, 0.5] and all atoms are
rescaled together until every subject's companion spectral radius is safely
below 0.9. Residual covariances are inverse-Wishart draws shared within
covariance clusters that are assigned independently of the coefficient axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, GenerationError
from .seeding import derive_rng
from .var_core import spectral_radius

_TARGET_RADIUS = 0.895
_BURN_SCANS = 50
_SETTING4_NOISE_SD = 0.05
_N_COV_CLUSTERS = 3


@dataclass
class SimConfig:
    """Generation settings for one simulation cell."""

    setting: int = 1
    n_subjects: int = 20
    n_nodes: int = 4
    n_lags: int = 2
    n_scans: int = 250
    sparsity: float = 0.75
    holdout: int = 5
    seed: int = 0
    replicates: int = 1
    row_cluster_range: tuple = (2, 5)  # settings 3 and 4 only
    # residual-covariance degrees of freedom; None means n_nodes, the minimal
    # proper value. At small D that draw is extremely ill-conditioned, so
    # desk-scale studies can raise it for a better-behaved covariance.
    iw_dof: int | None = None

    def validate(self) -> None:
        if self.setting not in (1, 2, 3, 4):
            raise ConfigError("setting must be 1, 2, 3 or 4")
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be >= 1")
        if self.n_nodes < 1:
            raise ConfigError("n_nodes must be >= 1")
        if self.n_lags < 1:
            raise ConfigError("n_lags must be >= 1")
        if self.n_scans < 2:
            raise ConfigError("n_scans must be >= 2")
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError("sparsity must lie in [0, 1)")
        if self.holdout < 0:
            raise ConfigError("holdout must be >= 0")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        lo, hi = self.row_cluster_range
        if not 1 <= lo <= hi:
            raise ConfigError("row_cluster_range must satisfy 1 <= lo <= hi")
        if self.iw_dof is not None and self.iw_dof < self.n_nodes:
            raise ConfigError("iw_dof must be at least n_nodes")


@dataclass
class GroundTruth:
    """Everything the evaluator needs: parameters, labels and masks."""

    setting: int
    subject_A: np.ndarray  # (n, K, D, D)
    A_labels: np.ndarray  # (n_groups, n): 1 group (setting 1), K (2), D (3, 4)
    cov_labels: np.ndarray  # (n,)
    cluster_sigma: np.ndarray  # (C, D, D)
    sparsity_mask: np.ndarray  # (n, K, D, D) bool, True where structurally zero


def _row_zero_counts(D: int, sparsity: float, rng) -> np.ndarray:
    """Per-row zero counts summing exactly to round(sparsity * D^2)."""
    total = int(round(sparsity * D * D))
    base = total // D
    counts = np.full(D, base, dtype=int)
    extra = total - base * D
    if extra:
        counts[rng.choice(D, size=extra, replace=False)] += 1
    return counts


def _sparse_row(D: int, n_zeros: int, rng) -> tuple:
    """One row of coefficients with exactly n_zeros structural zeros."""
    mask = np.zeros(D, dtype=bool)
    mask[rng.choice(D, size=n_zeros, replace=False)] = True
    row = rng.uniform(0.1, 0.5, size=D) * rng.choice([-1.0, 1.0], size=D)
    row[mask] = 0.0
    return row, mask


def sample_inverse_wishart(dof: int, scale: np.ndarray, rng) -> np.ndarray:
    """Inverse-Wishart draw via the Bartlett decomposition of the Wishart.

    X ~ IW(dof, scale) is returned as the inverse of W ~ Wishart(dof,
    scale^{-1}); requires dof >= D.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    D = scale.shape[0]
    if dof < D:
        raise ValueError("dof must be at least the matrix dimension")
    chol_inv_scale = np.linalg.cholesky(np.linalg.inv(scale))
    bart = np.zeros((D, D))
    for i in range(D):
        bart[i, i] = np.sqrt(rng.chisquare(dof - i))
        bart[i, :i] = rng.standard_normal(i)
    L = chol_inv_scale @ bart  # W = L L'
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def gen_truth(cfg: SimConfig, rng) -> GroundTruth:
    """Draw the ground-truth parameters for one replicate."""
    cfg.validate()
    n, D, K = cfg.n_subjects, cfg.n_nodes, cfg.n_lags

    if cfg.setting == 1:
        atoms, masks, labels = _truth_whole_set(cfg, rng)
    elif cfg.setting == 2:
        atoms, masks, labels = _truth_per_lag(cfg, rng)
    else:
        atoms, masks, labels = _truth_per_row(cfg, rng)

    subject_A, subject_mask = _assemble_subjects(cfg, atoms, masks, labels)
    subject_A, atoms = _rescale_until_stable(cfg, subject_A, atoms, masks, labels)

    if cfg.setting == 4:
        subject_A = _add_subject_noise(subject_A, subject_mask, rng)

    cov_labels = rng.integers(0, _N_COV_CLUSTERS, size=n)
    scale = np.eye(D) * (D / 2.0)
    dof = D if cfg.iw_dof is None else cfg.iw_dof
    cluster_sigma = np.stack(
        [sample_inverse_wishart(dof, scale, rng) for _ in range(_N_COV_CLUSTERS)]
    )
    return GroundTruth(
        setting=cfg.setting,
        subject_A=subject_A,
        A_labels=labels,
        cov_labels=cov_labels,
        cluster_sigma=cluster_sigma,
        sparsity_mask=subject_mask,
    )


def _truth_whole_set(cfg, rng):
    n, D, K = cfg.n_subjects, cfg.n_nodes, cfg.n_lags
    n_clusters = 3
    atoms, masks = [], []
    for _ in range(n_clusters):
        A = np.zeros((K, D, D))
        M = np.zeros((K, D, D), dtype=bool)
        for k in range(K):
            counts = _row_zero_counts(D, cfg.sparsity, rng)
            for d in range(D):
                A[k, d], M[k, d] = _sparse_row(D, counts[d], rng)
        atoms.append(A)
        masks.append(M)
    labels = rng.integers(0, n_clusters, size=n)[None, :]
    return [atoms], [masks], labels


def _truth_per_lag(cfg, rng):
    n, D, K = cfg.n_subjects, cfg.n_nodes, cfg.n_lags
    cluster_counts = [3] + [2] * (K - 1)
    atoms, masks, labels = [], [], np.zeros((K, n), dtype=int)
    for k in range(K):
        lag_atoms, lag_masks = [], []
        for _ in range(cluster_counts[k]):
            A = np.zeros((D, D))
            M = np.zeros((D, D), dtype=bool)
            counts = _row_zero_counts(D, cfg.sparsity, rng)
            for d in range(D):
                A[d], M[d] = _sparse_row(D, counts[d], rng)
            lag_atoms.append(A)
            lag_masks.append(M)
        atoms.append(lag_atoms)
        masks.append(lag_masks)
        labels[k] = rng.integers(0, cluster_counts[k], size=n)
    return atoms, masks, labels


def _truth_per_row(cfg, rng):
    n, D, K = cfg.n_subjects, cfg.n_nodes, cfg.n_lags
    lo, hi = cfg.row_cluster_range
    # shared per-row zero counts keep every assembled lag matrix at the exact total
    counts = np.stack([_row_zero_counts(D, cfg.sparsity, rng) for _ in range(K)])
    atoms, masks, labels = [], [], np.zeros((D, n), dtype=int)
    for d in range(D):
        c_d = int(rng.integers(lo, hi + 1))
        row_atoms, row_masks = [], []
        for _ in range(c_d):
            A = np.zeros((K, D))
            M = np.zeros((K, D), dtype=bool)
            for k in range(K):
                A[k], M[k] = _sparse_row(D, counts[k, d], rng)
            row_atoms.append(A)
            row_masks.append(M)
        atoms.append(row_atoms)
        masks.append(row_masks)
        labels[d] = rng.integers(0, c_d, size=n)
    return atoms, masks, labels


def _assemble_subjects(cfg, atoms, masks, labels):
    n, D, K = cfg.n_subjects, cfg.n_nodes, cfg.n_lags
    A = np.zeros((n, K, D, D))
    M = np.zeros((n, K, D, D), dtype=bool)
    for i in range(n):
        if cfg.setting == 1:
            A[i] = atoms[0][labels[0, i]]
            M[i] = masks[0][labels[0, i]]
        elif cfg.setting == 2:
            for k in range(K):
                A[i, k] = atoms[k][labels[k, i]]
                M[i, k] = masks[k][labels[k, i]]
        else:
            for d in range(D):
                A[i, :, d, :] = atoms[d][labels[d, i]]
                M[i, :, d, :] = masks[d][labels[d, i]]
    return A, M


def _rescale_until_stable(cfg, subject_A, atoms, masks, labels, max_attempts: int = 100):
    """Scale every atom by a common factor until all subjects are comfortably stable.

    A shared factor preserves the exact-sharing contracts across subjects and
    the structural zeros.
    """
    for _ in range(max_attempts):
        radius = max(spectral_radius(subject_A[i]) for i in range(len(subject_A)))
        if radius < _TARGET_RADIUS:
            return subject_A, atoms
        if radius <= 0:
            return subject_A, atoms
        factor = min(0.95, _TARGET_RADIUS / radius)
        subject_A = subject_A * factor
        atoms = _scale_atoms(atoms, factor)
    raise GenerationError("could not rescale coefficients to a stable system")


def _scale_atoms(atoms, factor):
    return [[np.asarray(a) * factor for a in group] for group in atoms]


def _add_subject_noise(subject_A, subject_mask, rng, max_attempts: int = 100):
    out = subject_A.copy()
    for i in range(len(out)):
        nonzero = ~subject_mask[i]
        for _ in range(max_attempts):
            noisy = subject_A[i].copy()
            noisy[nonzero] += rng.normal(0.0, _SETTING4_NOISE_SD, size=int(nonzero.sum()))
            if spectral_radius(noisy) < 1.0:
                out[i] = noisy
                break
        else:
            raise GenerationError(f"subject {i}: noise kept breaking stability")
    return out


def simulate_panel(truth: GroundTruth, subject: int, n_scans: int, holdout: int, rng):
    """Simulate one subject's panel plus its holdout block.

    The series starts from x_1 ~ N(0, Sigma) and recurses through the VAR;
    the first scans are discarded as warm-up so the recorded panel starts
    near stationarity.
    """
    A = truth.subject_A[subject]
    sigma = truth.cluster_sigma[truth.cov_labels[subject]]
    K, D, _ = A.shape
    chol = np.linalg.cholesky(sigma)
    total = _BURN_SCANS + n_scans + holdout
    innov = chol @ rng.standard_normal((D, total))
    x = np.zeros((D, total))
    flat = A.transpose(1, 0, 2).reshape(D, K * D)
    for t in range(total):
        z = np.zeros(K * D)
        for k in range(1, K + 1):
            if t - k >= 0:
                z[(k - 1) * D : k * D] = x[:, t - k]
        x[:, t] = flat @ z + innov[:, t]
    panel = x[:, _BURN_SCANS : _BURN_SCANS + n_scans]
    hold = x[:, _BURN_SCANS + n_scans :]
    return panel, hold


def generate_replicate(cfg: SimConfig, replicate: int = 0):
    """Ground truth plus all subject panels for one replicate of a cell.

    Returns (truth, panels, holdouts) with panels a list of (D, T) arrays.
    The replicate stream is derived from (seed, replicate) so cells can be
    generated independently and reproducibly.
    """
    cfg.validate()
    rng = derive_rng(cfg.seed, "truth", replicate)
    truth = gen_truth(cfg, rng)
    panels, holdouts = [], []
    for i in range(cfg.n_subjects):
        prng = derive_rng(cfg.seed, "panel", replicate, i)
        panel, hold = simulate_panel(truth, i, cfg.n_scans, cfg.holdout, prng)
        panels.append(panel)
        holdouts.append(hold)
    return truth, panels, holdouts
