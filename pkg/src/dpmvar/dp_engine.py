"""Stick-breaking Dirichlet-process machinery with slice-sampler truncation.

The same functions drive every clustering axis in the model (residual
covariance, and whichever autocovariance axis the variant uses). Labels are
0-based integers; component h is instantiated iff h < len(sticks). Each
clustered unit i carries a slice variable u_i uniform on (0, pi_{label_i}),
and the admissible components for its next assignment are those with
u_i < pi_h.
"""

from __future__ import annotations

import numpy as np

from .exceptions import StateCorruptionError

# Hard cap on slice-sampler truncation growth; reaching it means the slice
# variables are degenerate (e.g. an exact zero), not a heavy-tailed draw.
_MAX_COMPONENTS = 16384


def weights_from_sticks(sticks: np.ndarray, n_components: int | None = None) -> np.ndarray:
    """Stick-breaking weights pi_h = nu_h * prod_{l<h} (1 - nu_l)."""
    sticks = np.asarray(sticks, dtype=float)
    if n_components is None:
        n_components = sticks.shape[0]
    if n_components > sticks.shape[0]:
        raise IndexError("requested more weights than instantiated sticks")
    s = sticks[:n_components]
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - s[:-1])]) if n_components else np.ones(0)
    return s * remaining


def update_sticks(labels: np.ndarray, n_components: int, alpha: float, rng) -> np.ndarray:
    """Draw nu_h ~ Beta(1 + n_h, alpha + m_h) for every instantiated component.

    n_h counts units currently at component h and m_h counts units at any
    later component.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_components).astype(float)
    # m_h = number of labels strictly greater than h
    above = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0.0]])
    return rng.beta(1.0 + counts, alpha + above)


def sample_slice(labels: np.ndarray, weights: np.ndarray, rng) -> np.ndarray:
    """Draw u_i ~ Uniform(0, pi_{label_i}) independently per unit."""
    w = np.asarray(weights, dtype=float)[np.asarray(labels)]
    if np.any(w <= 0):
        raise StateCorruptionError("occupied component has zero stick-breaking weight")
    return w * rng.random(len(w))


def required_components(
    u: np.ndarray,
    sticks: np.ndarray,
    alpha: float,
    rng,
    max_components: int | None = None,
) -> tuple[int, np.ndarray]:
    """Smallest truncation H* with residual mass below every slice variable.

    Extends the stick vector with fresh Beta(1, alpha) prior draws until
    1 - sum_{h<H*} pi_h < min_i u_i, and returns (H*, extended sticks). New
    components beyond the old length must be given freshly drawn atoms by
    the caller. `max_components` caps H* (primarily for forcing a fixed
    truncation in diagnostics).
    """
    u_min = float(np.min(u))
    sticks = list(np.asarray(sticks, dtype=float))
    cap = max_components if max_components is not None else _MAX_COMPONENTS
    residual = 1.0
    h = 0
    while True:
        if h < len(sticks):
            residual *= 1.0 - sticks[h]
        elif h >= cap:
            break
        else:
            nu = rng.beta(1.0, alpha)
            sticks.append(nu)
            residual *= 1.0 - nu
        h += 1
        if residual < u_min:
            break
        if h >= cap:
            break
    if max_components is None and h >= _MAX_COMPONENTS:
        raise StateCorruptionError("slice truncation failed to terminate")
    return max(h, 1), np.asarray(sticks[: max(h, 1)])


def sample_assignment(
    unit_logliks: np.ndarray, u_i: float, weights: np.ndarray, rng
) -> int:
    """Draw a component label proportional to 1{u_i < pi_h} * exp(loglik_h).

    Log weights are stabilised by subtracting the max before exponentiation;
    the multinomial draw uses a single uniform against the CDF with strict
    inequality.
    """
    weights = np.asarray(weights, dtype=float)
    logl = np.asarray(unit_logliks, dtype=float)
    admissible = u_i < weights
    if not np.any(admissible):
        raise StateCorruptionError("all components gated out by the slice variable")
    logp = np.full(len(weights), -np.inf)
    logp[admissible] = logl[admissible]
    logp -= np.max(logp)
    p = np.exp(logp)
    p /= p.sum()
    v = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), v, side="right"))
    return min(idx, len(p) - 1)
