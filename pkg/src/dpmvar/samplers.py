"""Block Gibbs samplers for the three clustered multi-subject VAR variants.

Variants differ only in how the autocovariance coefficients are grouped for
clustering:

- "pdpm": one label per subject; a cluster atom is the full (K, D, D) set.
- "lg":   one label per subject and lag; an atom is a single (D, D) matrix.
- "rg":   one label per subject and row; an atom is that row across lags,
          a (K, D) array.

Internally all three are handled through a list of clustering "groups"
(1, K, or D of them). With K = 1 the lag-wise variant is the same kernel as
the subject-level one, and is dispatched to it so the two chains coincide
draw for draw.

The residual covariance axis is shared by all variants: each cluster atom
holds expanded factor loadings (lower-triangular leading D x B), the
latent-factor variances psi, and the idiosyncratic variances. The expanded
parameters are mapped to identified loadings by a sign/scale transform that
leaves the implied covariance unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dp_engine, var_core
from .exceptions import ChainNumericalError, ConfigError
from .seeding import derive_rng
from .var_core import LowRankFactor

VARIANTS = ("pdpm", "lg", "rg")

_ABAR_SQ_FLOOR = 1e-12  # keeps the inverse-Gaussian mean finite at zero cluster means
_TINY = 1e-300


@dataclass
class HyperParams:
    """Sampler configuration; one instance drives a whole chain.

    alpha_cov and alpha_autocov are the Dirichlet-process concentrations of
    the residual-covariance axis and of every autocovariance group. a_sigma,
    b_sigma parameterise the Gamma prior on the idiosyncratic precisions;
    lasso_r, lasso_delta the Gamma hyperprior on the shrinkage parameter.
    n_factors defaults to ceil(sqrt(D)) when left unset. max_components caps
    the slice-sampler truncation (mainly for diagnostics that need a fixed
    number of components).
    """

    alpha_cov: float = 1.0
    alpha_autocov: float = 1.0
    a_sigma: float = 2.0
    b_sigma: float = 1.0
    lasso_r: float = 1.0
    lasso_delta: float = 2.0
    n_factors: int | None = None
    n_lags: int = 1
    burn_in: int = 1000
    n_iter: int = 4000
    thin: int = 1
    max_components: int | None = None

    def validate(self, n_nodes: int | None = None) -> None:
        for name in ("alpha_cov", "alpha_autocov", "a_sigma", "b_sigma", "lasso_delta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lasso_r <= 0:
            raise ConfigError("lasso_r must be positive")
        if self.n_lags < 1:
            raise ConfigError("n_lags must be >= 1")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.n_iter < 0:
            raise ConfigError("n_iter must be >= 0")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.n_factors is not None and self.n_factors < 1:
            raise ConfigError("n_factors must be >= 1")
        if self.max_components is not None and self.max_components < 1:
            raise ConfigError("max_components must be >= 1")
        if n_nodes is not None and self.n_factors is not None and self.n_factors > n_nodes:
            raise ConfigError("n_factors must not exceed the number of nodes")

    def resolved_factors(self, n_nodes: int) -> int:
        if self.n_factors is not None:
            return self.n_factors
        return min(n_nodes, int(math.ceil(math.sqrt(n_nodes))))


@dataclass
class CovarianceAtom:
    """Expanded factor-model parameters of one residual-covariance cluster.

    psi holds the latent-factor variances; its Gibbs update draws the
    corresponding precisions from their Gamma full conditional and inverts.
    """

    loadings_expanded: np.ndarray  # (D, B), lower-triangular leading
    psi: np.ndarray  # (B,)
    idio_var: np.ndarray  # (D,)


def identify_expanded_params(atom: CovarianceAtom) -> np.ndarray:
    """Identified loadings: column b is sign(Gamma*_{bb}) * Gamma*_{., b} * sqrt(psi_b)."""
    B = atom.loadings_expanded.shape[1]
    diag = atom.loadings_expanded[np.arange(B), np.arange(B)]
    signs = np.where(diag >= 0, 1.0, -1.0)
    return atom.loadings_expanded * (signs * np.sqrt(atom.psi))[None, :]


def _atom_sigma_factor(atom: CovarianceAtom) -> LowRankFactor:
    # Gamma* sqrt(psi) spans the same covariance as the identified loadings.
    return LowRankFactor(atom.loadings_expanded * np.sqrt(atom.psi)[None, :], atom.idio_var)


class ChainData:
    """Immutable per-run view of the panels with precomputed lag designs."""

    def __init__(self, panels, n_lags: int):
        if not panels:
            raise ConfigError("dataset must contain at least one subject")
        self.ids = []
        self.X = []
        for p in panels:
            if isinstance(p, var_core.SubjectPanel):
                self.ids.append(p.id)
                self.X.append(np.asarray(p.data, dtype=float))
            else:
                self.ids.append(str(len(self.ids)))
                self.X.append(np.asarray(p, dtype=float))
        dims = {x.shape[0] for x in self.X}
        if len(dims) != 1:
            raise ConfigError("all subjects must share the same number of nodes")
        self.n = len(self.X)
        self.D = self.X[0].shape[0]
        self.K = n_lags
        self.T = np.array([x.shape[1] for x in self.X])
        self.Z = [var_core.lagged_design(x, n_lags) for x in self.X]
        self.G = [z @ z.T for z in self.Z]


@dataclass
class ChainState:
    """Full mutable Gibbs state for one chain."""

    variant: str  # requested variant, kept for reporting
    kind: str  # resolved kernel ("lg" with K = 1 runs as "pdpm")
    hyper: HyperParams
    n_factors: int
    rng: np.random.Generator
    cov_labels: np.ndarray
    cov_sticks: np.ndarray
    cov_slice: np.ndarray
    cov_atoms: list
    A_labels: np.ndarray  # (n_groups, n)
    A_sticks: list
    A_slice: np.ndarray  # (n_groups, n)
    A_atoms: list  # per group, list of atom arrays
    eta: list  # per subject, (B, T_i)
    tau2: np.ndarray  # (K, D, D)
    lambda2: np.ndarray  # (n_groups,)

    @property
    def n_groups(self) -> int:
        return self.A_labels.shape[0]


def resolve_kind(variant: str, n_lags: int) -> str:
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}")
    if variant == "lg" and n_lags == 1:
        return "pdpm"
    return variant


def _n_groups(kind: str, data: ChainData) -> int:
    return {"pdpm": 1, "lg": data.K, "rg": data.D}[kind]


def assemble_subject_A(state: ChainState, data: ChainData, i: int) -> np.ndarray:
    """Subject i's (K, D, D) coefficient set implied by its labels and the atoms."""
    K, D = data.K, data.D
    if state.kind == "pdpm":
        return np.array(state.A_atoms[0][state.A_labels[0, i]])
    if state.kind == "lg":
        return np.stack([state.A_atoms[k][state.A_labels[k, i]] for k in range(K)])
    A = np.empty((K, D, D))
    for d in range(D):
        A[:, d, :] = state.A_atoms[d][state.A_labels[d, i]]
    return A


def _flat(A: np.ndarray) -> np.ndarray:
    K, D, _ = A.shape
    return A.transpose(1, 0, 2).reshape(D, K * D)


def autocov_residuals(state: ChainState, data: ChainData) -> list:
    """Per-subject residuals x_t - A_i z_t under the currently assembled coefficients."""
    out = []
    for i in range(data.n):
        A = assemble_subject_A(state, data, i)
        out.append(data.X[i] - _flat(A) @ data.Z[i])
    return out


# ---------------------------------------------------------------------------
# prior draws for fresh components
# ---------------------------------------------------------------------------


def draw_cov_atom_from_prior(rng, D: int, B: int, a_sigma: float, b_sigma: float) -> CovarianceAtom:
    load = rng.standard_normal((D, B))
    for d in range(min(D, B)):
        load[d, d + 1 :] = 0.0  # lower-triangular leading structure
    if B > D:
        load[:, D:] = 0.0
    psi = 1.0 / np.maximum(rng.gamma(0.5, 2.0, size=B), _TINY)
    idio = 1.0 / np.maximum(rng.gamma(a_sigma, 1.0 / b_sigma, size=D), _TINY)
    return CovarianceAtom(load, psi, idio)


def _prior_tau2_slots(state: ChainState, group: int, data: ChainData) -> np.ndarray:
    if state.kind == "pdpm":
        return state.tau2
    if state.kind == "lg":
        return state.tau2[group]
    return state.tau2[:, group, :]


def draw_autocov_atom_from_prior(state: ChainState, group: int, data: ChainData) -> np.ndarray:
    slots = _prior_tau2_slots(state, group, data)
    return state.rng.standard_normal(slots.shape) * np.sqrt(slots)


# ---------------------------------------------------------------------------
# residual covariance axis
# ---------------------------------------------------------------------------


def update_cov_sticks_and_slices(state: ChainState, data: ChainData) -> None:
    h = state.hyper
    n_comp = len(state.cov_atoms)
    state.cov_sticks = dp_engine.update_sticks(state.cov_labels, n_comp, h.alpha_cov, state.rng)
    weights = dp_engine.weights_from_sticks(state.cov_sticks)
    state.cov_slice = dp_engine.sample_slice(state.cov_labels, weights, state.rng)
    n_keep, sticks = dp_engine.required_components(
        state.cov_slice, state.cov_sticks, h.alpha_cov, state.rng, h.max_components
    )
    state.cov_sticks = sticks
    for _ in range(len(state.cov_atoms), n_keep):
        state.cov_atoms.append(
            draw_cov_atom_from_prior(state.rng, data.D, state.n_factors, h.a_sigma, h.b_sigma)
        )


def update_cov_assignments(state: ChainState, data: ChainData, resid: list) -> None:
    """Reassign each subject's covariance cluster from the slice-gated multinomial.

    Candidate log likelihoods marginalise the latent factors: the residuals
    x_t - A_i z_t are scored under each candidate's full covariance
    Gamma Gamma' + Omega across the whole panel.
    """
    weights = dp_engine.weights_from_sticks(state.cov_sticks)
    factors = [_atom_sigma_factor(a) for a in state.cov_atoms]
    for i in range(data.n):
        logl = np.array([f.loglik(resid[i]) for f in factors])
        state.cov_labels[i] = dp_engine.sample_assignment(
            logl, state.cov_slice[i], weights, state.rng
        )


def update_factor_loadings(state: ChainState, data: ChainData, resid: list) -> None:
    """Row-wise Normal full conditionals for the expanded loadings of every cluster.

    Row d' updates its first min(d'+1, B) entries; empty clusters reduce to
    the N(0, I) prior.
    """
    B = state.n_factors
    for h, atom in enumerate(state.cov_atoms):
        members = np.flatnonzero(state.cov_labels == h)
        S = np.zeros((B, B))
        F = np.zeros((B, data.D))
        for i in members:
            S += state.eta[i] @ state.eta[i].T
            F += state.eta[i] @ resid[i].T
        inv_idio = 1.0 / atom.idio_var
        for d in range(data.D):
            m = min(d + 1, B)
            precision = np.eye(m) + inv_idio[d] * S[:m, :m]
            shift = inv_idio[d] * F[:m, d]
            atom.loadings_expanded[d, :m] = _draw_mvn_from_precision(
                state.rng, precision, shift
            )
            atom.loadings_expanded[d, m:] = 0.0


def update_latent_factors(state: ChainState, data: ChainData, resid: list) -> None:
    """Per-scan Normal draws of the expanded latent factors given their cluster."""
    for i in range(data.n):
        atom = state.cov_atoms[state.cov_labels[i]]
        load = atom.loadings_expanded
        inv_idio = 1.0 / atom.idio_var
        M = np.diag(1.0 / atom.psi) + (load * inv_idio[:, None]).T @ load
        L = np.linalg.cholesky(M)
        rhs = load.T @ (resid[i] * inv_idio[:, None])
        means = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        noise = np.linalg.solve(L.T, state.rng.standard_normal(rhs.shape))
        state.eta[i] = means + noise


def update_psi(state: ChainState, data: ChainData) -> None:
    """Gamma full conditional of the latent-factor precisions, stored inverted.

    Shape (1 + N_h)/2 and rate (1 + sum eta^2)/2 with N_h the total scan
    count of the cluster; an empty cluster draws from the Gamma(1/2, 1/2)
    prior on the precision.
    """
    for h, atom in enumerate(state.cov_atoms):
        members = np.flatnonzero(state.cov_labels == h)
        n_scans = int(data.T[members].sum()) if len(members) else 0
        sum_sq = np.zeros(state.n_factors)
        for i in members:
            sum_sq += np.sum(state.eta[i] ** 2, axis=1)
        shape = 0.5 * (1.0 + n_scans)
        rate = 0.5 * (1.0 + sum_sq)
        atom.psi = 1.0 / np.maximum(state.rng.gamma(shape, 1.0 / rate), _TINY)


def update_idio_precision(state: ChainState, data: ChainData, resid: list) -> None:
    """Gamma(a + N/2, b + rss/2) draws of the idiosyncratic precisions, inverted."""
    h = state.hyper
    for c, atom in enumerate(state.cov_atoms):
        members = np.flatnonzero(state.cov_labels == c)
        n_scans = int(data.T[members].sum()) if len(members) else 0
        rss = np.zeros(data.D)
        for i in members:
            err = resid[i] - atom.loadings_expanded @ state.eta[i]
            rss += np.sum(err * err, axis=1)
        shape = h.a_sigma + 0.5 * n_scans
        rate = h.b_sigma + 0.5 * rss
        atom.idio_var = 1.0 / np.maximum(state.rng.gamma(shape, 1.0 / rate), _TINY)


# ---------------------------------------------------------------------------
# autocovariance axis
# ---------------------------------------------------------------------------


def update_autocov_sticks_and_slices(state: ChainState, data: ChainData) -> None:
    h = state.hyper
    for g in range(state.n_groups):
        labels = state.A_labels[g]
        n_comp = len(state.A_atoms[g])
        sticks = dp_engine.update_sticks(labels, n_comp, h.alpha_autocov, state.rng)
        weights = dp_engine.weights_from_sticks(sticks)
        state.A_slice[g] = dp_engine.sample_slice(labels, weights, state.rng)
        n_keep, sticks = dp_engine.required_components(
            state.A_slice[g], sticks, h.alpha_autocov, state.rng, h.max_components
        )
        state.A_sticks[g] = sticks
        for _ in range(len(state.A_atoms[g]), n_keep):
            state.A_atoms[g].append(draw_autocov_atom_from_prior(state, g, data))


def _subject_sigma_factors(state: ChainState, data: ChainData) -> list:
    by_cluster = {}
    out = []
    for i in range(data.n):
        h = state.cov_labels[i]
        if h not in by_cluster:
            by_cluster[h] = _atom_sigma_factor(state.cov_atoms[h])
        out.append(by_cluster[h])
    return out


def update_autocov_assignments(state: ChainState, data: ChainData) -> None:
    """Slice-gated multinomial label draws on the variant's clustering groups.

    Subject-level and lag-wise groups score full-vector residuals under the
    subject's current residual covariance (the lag-wise form holds the other
    lags at their assigned atoms). Row-wise groups score only that row's
    residual with the subject's idiosyncratic variance for the row.
    """
    if state.kind == "rg":
        _update_assignments_rowwise(state, data)
    else:
        _update_assignments_fullvector(state, data)


def _update_assignments_fullvector(state: ChainState, data: ChainData) -> None:
    factors = _subject_sigma_factors(state, data)
    for g in range(state.n_groups):
        weights = dp_engine.weights_from_sticks(state.A_sticks[g])
        atoms = state.A_atoms[g]
        for i in range(data.n):
            if state.kind == "pdpm":
                cand = [data.X[i] - _flat(np.asarray(a)) @ data.Z[i] for a in atoms]
            else:
                A_cur = assemble_subject_A(state, data, i)
                base = data.X[i] - _flat(A_cur) @ data.Z[i]
                zg = data.Z[i][g * data.D : (g + 1) * data.D]
                cur = A_cur[g] @ zg
                cand = [base + cur - a @ zg for a in atoms]
            logl = np.array([factors[i].loglik(r) for r in cand])
            state.A_labels[g, i] = dp_engine.sample_assignment(
                logl, state.A_slice[g, i], weights, state.rng
            )


def _update_assignments_rowwise(state: ChainState, data: ChainData) -> None:
    log2pi = float(np.log(2.0 * np.pi))
    for d in range(data.D):
        weights = dp_engine.weights_from_sticks(state.A_sticks[d])
        stacked = np.stack([a.reshape(-1) for a in state.A_atoms[d]])  # (C, K*D)
        for i in range(data.n):
            sig2 = state.cov_atoms[state.cov_labels[i]].idio_var[d]
            means = stacked @ data.Z[i]  # (C, T)
            r = data.X[i][d][None, :] - means
            logl = -0.5 * (
                data.T[i] * (log2pi + np.log(sig2)) + np.sum(r * r, axis=1) / sig2
            )
            state.A_labels[d, i] = dp_engine.sample_assignment(
                logl, state.A_slice[d, i], weights, state.rng
            )


def _draw_mvn_from_precision(rng, precision: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Draw from N(P^{-1} shift, P^{-1}) via the Cholesky factor of P."""
    L = np.linalg.cholesky(precision)
    mean = np.linalg.solve(L.T, np.linalg.solve(L, shift))
    return mean + np.linalg.solve(L.T, rng.standard_normal(len(shift)))


def _factor_adjusted_responses(state: ChainState, data: ChainData) -> list:
    out = []
    for i in range(data.n):
        atom = state.cov_atoms[state.cov_labels[i]]
        out.append(data.X[i] - atom.loadings_expanded @ state.eta[i])
    return out


def _row_prior_inv_var(state: ChainState, d: int) -> np.ndarray:
    # prior precision of the stacked row-d coefficient vector across lags
    return 1.0 / state.tau2[:, d, :].reshape(-1)


def update_autocov_atoms(state: ChainState, data: ChainData) -> None:
    """Normal full-conditional draws of the cluster coefficient atoms.

    Responses have the factor contribution removed; weights are the
    subjects' idiosyncratic precisions for the row being updated. The
    lag-wise variant stacks all lags and clusters of a row into a single
    joint draw; the other variants draw per cluster and row.
    """
    Y = _factor_adjusted_responses(state, data)
    inv_idio = np.stack(
        [1.0 / state.cov_atoms[state.cov_labels[i]].idio_var for i in range(data.n)]
    )
    if state.kind == "lg":
        _update_atoms_lagwise(state, data, Y, inv_idio)
        return
    n_groups = state.n_groups
    for g in range(n_groups):
        atoms = state.A_atoms[g]
        labels = state.A_labels[g]
        rows = range(data.D) if state.kind == "pdpm" else (g,)
        for h in range(len(atoms)):
            members = np.flatnonzero(labels == h)
            gram = {}
            shift = {}
            for d in rows:
                gram[d] = np.zeros((data.K * data.D, data.K * data.D))
                shift[d] = np.zeros(data.K * data.D)
            for i in members:
                zy = data.Z[i] @ Y[i].T  # (K*D, D)
                for d in rows:
                    gram[d] += inv_idio[i, d] * data.G[i]
                    shift[d] += inv_idio[i, d] * zy[:, d]
            for d in rows:
                precision = gram[d] + np.diag(_row_prior_inv_var(state, d))
                draw = _draw_mvn_from_precision(state.rng, precision, shift[d])
                if state.kind == "pdpm":
                    atoms[h][:, d, :] = draw.reshape(data.K, data.D)
                else:
                    atoms[h][:, :] = draw.reshape(data.K, data.D)


def _update_atoms_lagwise(state, data, Y, inv_idio) -> None:
    K, D, n = data.K, data.D, data.n
    counts = [len(state.A_atoms[k]) for k in range(K)]
    offsets = np.concatenate([[0], np.cumsum([c * D for c in counts])])
    total = int(offsets[-1])

    def slot(k, h):
        return int(offsets[k] + h * D)

    # per-subject scatter indices into the stacked coefficient vector
    idx = []
    for i in range(n):
        ind = np.concatenate(
            [np.arange(slot(k, state.A_labels[k, i]), slot(k, state.A_labels[k, i]) + D) for k in range(K)]
        )
        idx.append(ind)
    for d in range(D):
        gram = np.zeros((total, total))
        shift = np.zeros(total)
        for i in range(n):
            w = inv_idio[i, d]
            gram[np.ix_(idx[i], idx[i])] += w * data.G[i]
            shift[idx[i]] += w * (data.Z[i] @ Y[i][d])
        prior = np.concatenate([np.tile(1.0 / state.tau2[k, d, :], counts[k]) for k in range(K)])
        precision = gram + np.diag(prior)
        draw = _draw_mvn_from_precision(state.rng, precision, shift)
        for k in range(K):
            for h in range(counts[k]):
                state.A_atoms[k][h][d, :] = draw[slot(k, h) : slot(k, h) + D]


def update_tau2(state: ChainState, data: ChainData) -> None:
    """Inverse-Gaussian draws of the per-coefficient shrinkage precisions.

    The mean parameter is sqrt(lambda^2 / (C * Abar^2)) with Abar the
    cluster-average coefficient for the slot and C the cluster count of the
    slot's group; Abar^2 is floored to keep the mean finite.
    """
    rng = state.rng
    if state.kind == "pdpm":
        atoms = np.stack(state.A_atoms[0])  # (C, K, D, D)
        abar_sq = np.maximum(np.mean(atoms, axis=0) ** 2, _ABAR_SQ_FLOOR)
        lam2 = state.lambda2[0]
        mean = np.sqrt(lam2 / (atoms.shape[0] * abar_sq))
        state.tau2 = 1.0 / np.maximum(rng.wald(mean, lam2), _TINY)
    elif state.kind == "lg":
        for k in range(data.K):
            atoms = np.stack(state.A_atoms[k])  # (C_k, D, D)
            abar_sq = np.maximum(np.mean(atoms, axis=0) ** 2, _ABAR_SQ_FLOOR)
            lam2 = state.lambda2[k]
            mean = np.sqrt(lam2 / (atoms.shape[0] * abar_sq))
            state.tau2[k] = 1.0 / np.maximum(rng.wald(mean, lam2), _TINY)
    else:
        for d in range(data.D):
            atoms = np.stack(state.A_atoms[d])  # (C_d, K, D)
            abar_sq = np.maximum(np.mean(atoms, axis=0) ** 2, _ABAR_SQ_FLOOR)
            lam2 = state.lambda2[d]
            mean = np.sqrt(lam2 / (atoms.shape[0] * abar_sq))
            state.tau2[:, d, :] = 1.0 / np.maximum(rng.wald(mean, lam2), _TINY)


def update_lambda2(state: ChainState, data: ChainData) -> None:
    """Gamma full conditionals of the shrinkage parameter, one per group axis."""
    h = state.hyper
    K, D = data.K, data.D
    if state.kind == "pdpm":
        shape = K * D * D + h.lasso_r
        rate = h.lasso_delta + 0.5 * float(np.sum(state.tau2))
        state.lambda2[0] = state.rng.gamma(shape, 1.0 / rate)
    elif state.kind == "lg":
        for k in range(K):
            shape = D * D + h.lasso_r
            rate = h.lasso_delta + 0.5 * float(np.sum(state.tau2[k]))
            state.lambda2[k] = state.rng.gamma(shape, 1.0 / rate)
    else:
        for d in range(D):
            shape = D * K + h.lasso_r
            rate = h.lasso_delta + 0.5 * float(np.sum(state.tau2[:, d, :]))
            state.lambda2[d] = state.rng.gamma(shape, 1.0 / rate)


def _compact_axis(labels: np.ndarray, atoms: list, sticks: np.ndarray):
    occupied = np.unique(labels)
    remap = np.zeros(len(atoms), dtype=int)
    remap[occupied] = np.arange(len(occupied))
    return remap[labels], [atoms[h] for h in occupied], sticks[occupied]


def prune_empty_components(state: ChainState) -> None:
    """Drop unoccupied components and compact labels to 0..C-1 on every axis."""
    state.cov_labels, state.cov_atoms, state.cov_sticks = _compact_axis(
        state.cov_labels, state.cov_atoms, state.cov_sticks
    )
    for g in range(state.n_groups):
        state.A_labels[g], state.A_atoms[g], state.A_sticks[g] = _compact_axis(
            state.A_labels[g], state.A_atoms[g], state.A_sticks[g]
        )


def gibbs_sweep(state: ChainState, data: ChainData) -> None:
    """One full sweep in the fixed block order.

    Covariance sticks/slices/assignments, then loadings, latent factors,
    psi, idiosyncratic variances, then autocovariance sticks/slices/
    assignments, atoms, shrinkage precisions and the shrinkage parameter;
    empty components are pruned at the very end.
    """
    resid = autocov_residuals(state, data)
    update_cov_sticks_and_slices(state, data)
    update_cov_assignments(state, data, resid)
    update_factor_loadings(state, data, resid)
    update_latent_factors(state, data, resid)
    update_psi(state, data)
    update_idio_precision(state, data, resid)
    update_autocov_sticks_and_slices(state, data)
    update_autocov_assignments(state, data)
    update_autocov_atoms(state, data)
    update_tau2(state, data)
    update_lambda2(state, data)
    prune_empty_components(state)


# ---------------------------------------------------------------------------
# chain driver
# ---------------------------------------------------------------------------


def init_state(data: ChainData, hyper: HyperParams, variant: str, rng) -> ChainState:
    """Deterministic start with one component per subject on every axis.

    Atoms start at the base measure means (zeros) except the idiosyncratic
    variances, which are set to pooled per-node residual variances from a
    ridge least-squares VAR pre-fit. Starting from singletons matters: this
    conditional sampler merges components easily but essentially never
    splits a pooled one, because freshly instantiated prior atoms cannot
    compete with a fitted atom over a whole panel's likelihood. The
    component count is capped by max_components when set.
    """
    kind = resolve_kind(variant, hyper.n_lags)
    B = hyper.resolved_factors(data.D)
    n_groups = {"pdpm": 1, "lg": data.K, "rg": data.D}[kind]
    n_init = data.n if hyper.max_components is None else min(data.n, hyper.max_components)
    init_labels = np.minimum(np.arange(data.n), n_init - 1)

    idio0 = _ridge_residual_variance(data)
    cov_atoms = [
        CovarianceAtom(np.zeros((data.D, B)), np.ones(B), idio0.copy())
        for _ in range(n_init)
    ]

    lam0 = hyper.lasso_r / hyper.lasso_delta
    tau0 = np.full((data.K, data.D, data.D), 2.0 / lam0)
    atom_shape = {
        "pdpm": (data.K, data.D, data.D),
        "lg": (data.D, data.D),
        "rg": (data.K, data.D),
    }[kind]
    return ChainState(
        variant=variant,
        kind=kind,
        hyper=hyper,
        n_factors=B,
        rng=rng,
        cov_labels=init_labels.copy(),
        cov_sticks=np.full(n_init, 0.5),
        cov_slice=np.zeros(data.n),
        cov_atoms=cov_atoms,
        A_labels=np.tile(init_labels, (n_groups, 1)),
        A_sticks=[np.full(n_init, 0.5) for _ in range(n_groups)],
        A_slice=np.zeros((n_groups, data.n)),
        A_atoms=[[np.zeros(atom_shape) for _ in range(n_init)] for _ in range(n_groups)],
        eta=[np.zeros((B, t)) for t in data.T],
        tau2=tau0,
        lambda2=np.full(n_groups, lam0),
    )


def _ridge_residual_variance(data: ChainData) -> np.ndarray:
    out = np.zeros(data.D)
    for i in range(data.n):
        G = data.G[i]
        ridge = 1e-3 * max(np.trace(G) / G.shape[0], 1.0)
        coef = np.linalg.solve(G + ridge * np.eye(G.shape[0]), data.Z[i] @ data.X[i].T)
        resid = data.X[i] - coef.T @ data.Z[i]
        out += np.mean(resid * resid, axis=1)
    return np.maximum(out / data.n, 1e-8)


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in draws with subject-level assembled parameters.

    Subject-level storage keeps every record a fixed shape and makes all
    downstream summaries label-invariant; cluster-level values can be
    recovered through the stored label draws.
    """

    variant: str
    n_lags: int
    n_factors: int
    subject_ids: list
    seed: int
    subject_A: np.ndarray  # (S, n, K, D, D)
    subject_loadings: np.ndarray  # (S, n, D, B), identified
    subject_idio: np.ndarray  # (S, n, D)
    cov_labels: np.ndarray  # (S, n)
    autocov_labels: np.ndarray  # (S, n_groups, n)
    lambda2: np.ndarray  # (S, n_groups)
    loglik: np.ndarray  # (S,)

    @property
    def n_draws(self) -> int:
        return self.subject_A.shape[0]

    def posterior_mean_A(self) -> np.ndarray:
        return self.subject_A.mean(axis=0)

    def posterior_mean_sigma(self) -> np.ndarray:
        """Per-subject posterior mean of the dense residual covariance."""
        S, n, D, B = self.subject_loadings.shape
        out = np.zeros((n, D, D))
        for s in range(S):
            for i in range(n):
                L = self.subject_loadings[s, i]
                out[i] += L @ L.T + np.diag(self.subject_idio[s, i])
        return out / max(S, 1)


def run_chain(panels, hyper: HyperParams, variant: str, seed: int, chain: int = 0) -> PosteriorDraws:
    """Run one Gibbs chain and collect thinned post-burn-in draws.

    The RNG stream is derived from (seed, chain) so multiple chains from one
    master seed are independent and individually reproducible. Numerical
    failures abort with the failing sweep index.
    """
    hyper.validate()
    data = ChainData(panels, hyper.n_lags)
    hyper.validate(n_nodes=data.D)
    rng = derive_rng(seed, "chain", chain)
    state = init_state(data, hyper, variant, rng)

    kept = {
        "subject_A": [],
        "subject_loadings": [],
        "subject_idio": [],
        "cov_labels": [],
        "autocov_labels": [],
        "lambda2": [],
        "loglik": [],
    }
    total = hyper.burn_in + hyper.n_iter
    for sweep in range(total):
        try:
            gibbs_sweep(state, data)
        except np.linalg.LinAlgError as err:
            raise ChainNumericalError(sweep, f"sweep {sweep} failed: {err}") from err
        post = sweep - hyper.burn_in
        if post >= 0 and (post + 1) % hyper.thin == 0:
            _record_draw(state, data, kept)

    B = state.n_factors
    n_groups = state.n_groups
    empty_shapes = {
        "subject_A": (0, data.n, data.K, data.D, data.D),
        "subject_loadings": (0, data.n, data.D, B),
        "subject_idio": (0, data.n, data.D),
        "cov_labels": (0, data.n),
        "autocov_labels": (0, n_groups, data.n),
        "lambda2": (0, n_groups),
        "loglik": (0,),
    }
    arrays = {}
    for name, rows in kept.items():
        if rows:
            arrays[name] = np.stack(rows)
        else:
            arrays[name] = np.zeros(empty_shapes[name])
    for name in ("cov_labels", "autocov_labels"):
        arrays[name] = arrays[name].astype(np.int64)
    return PosteriorDraws(
        variant=variant,
        n_lags=data.K,
        n_factors=B,
        subject_ids=list(data.ids),
        seed=seed,
        **arrays,
    )


def _record_draw(state: ChainState, data: ChainData, kept: dict) -> None:
    A = np.stack([assemble_subject_A(state, data, i) for i in range(data.n)])
    loadings = np.stack(
        [identify_expanded_params(state.cov_atoms[state.cov_labels[i]]) for i in range(data.n)]
    )
    idio = np.stack([state.cov_atoms[state.cov_labels[i]].idio_var for i in range(data.n)])
    ll = 0.0
    factors = _subject_sigma_factors(state, data)
    for i in range(data.n):
        ll += factors[i].loglik(data.X[i] - _flat(A[i]) @ data.Z[i])
    kept["subject_A"].append(A)
    kept["subject_loadings"].append(loadings)
    kept["subject_idio"].append(idio.copy())
    kept["cov_labels"].append(state.cov_labels.copy())
    kept["autocov_labels"].append(state.A_labels.copy())
    kept["lambda2"].append(state.lambda2.copy())
    kept["loglik"].append(ll)
