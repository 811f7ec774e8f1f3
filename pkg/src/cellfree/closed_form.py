"""Closed-form rate approximations from large-scale fading only.

Four per-user approximations (upper/lower, perfect/imperfect CSI) are built
from the retained antenna set of each user: all antennas except those that
are the strongest antenna of some *other* user. The co-located limits of the
same four expressions are available through :func:`colocated_bound`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import LargeScaleMatrix, estimation_params
from .errors import DegenerateFitError, EmptyInputError

UB_PERFECT = "ub_perfect"
LB_PERFECT = "lb_perfect"
UB_IMPERFECT = "ub_imperfect"
LB_IMPERFECT = "lb_imperfect"
KINDS = (UB_PERFECT, LB_PERFECT, UB_IMPERFECT, LB_IMPERFECT)

# Smallest admissible Gamma shape excess (shape - 1) for the inverse moment.
PSI_MIN_EXCESS = 1e-9


@dataclass(frozen=True)
class ExclusionSets:
    """Antennas removed for (``excluded``) and kept for (``retained``) one user.

    Both hold 0-based antenna indices in increasing order.
    """

    excluded: np.ndarray
    retained: np.ndarray


@dataclass(frozen=True)
class GammaFit:
    shape: float
    scale: float

    @property
    def mean(self):
        return self.shape * self.scale

    def inverse_mean(self):
        """``E[1/X]`` for ``X ~ Gamma(shape, scale)``; needs shape > 1."""
        return 1.0 / (self.scale * (self.shape - 1.0))


@dataclass(frozen=True)
class ApproxRate:
    value: float
    kind: str
    colocated: bool = False

    def __float__(self):
        return float(self.value)


def _gamma_of(ls):
    return ls.gamma if isinstance(ls, LargeScaleMatrix) else np.asarray(ls, dtype=float)


def strongest_antennas(ls):
    """Index of the largest path gain per user (first index on ties)."""
    return np.argmax(_gamma_of(ls), axis=0)


def exclusion_sets(ls, k):
    """Split the antennas for user ``k``.

    The excluded set is the de-duplicated collection of strongest antennas
    of every other user; ties resolve to the smallest antenna index.
    """
    gamma = _gamma_of(ls)
    L, K = gamma.shape
    if not 0 <= k < K:
        raise IndexError(f"user index {k} out of range for K={K}")
    star = strongest_antennas(gamma)
    excluded = np.unique(np.delete(star, k))
    retained = np.setdiff1d(np.arange(L), excluded, assume_unique=True)
    return ExclusionSets(excluded, retained)


def forced_exclusion_sets(L, K, k=None):
    """Exclusion sets with exactly ``K - 1`` distinct dummy antennas removed.

    Used for identical-row gain matrices, where the argmax is degenerate: the
    first ``K - 1`` antennas are excluded so ``L - K + 1`` remain, the large-L
    limit of the cell-free construction. ``k`` is accepted for signature
    symmetry with :func:`exclusion_sets` and ignored.
    """
    if L < K:
        raise ValueError("need L >= K")
    return ExclusionSets(np.arange(K - 1), np.arange(K - 1, L))


def gamma_moment_match(scales, shapes=None):
    """Fit one Gamma law to a sum of independent Gamma variables.

    With unit shapes (sums of exponentials with means ``scales``) this gives
    ``shape = (sum s)^2 / sum s^2`` and ``scale = sum s^2 / sum s``, which
    preserves the first two moments of the sum.
    """
    theta = np.asarray(scales, dtype=float).ravel()
    eta = np.ones_like(theta) if shapes is None else np.asarray(shapes, dtype=float).ravel()
    if theta.size == 0:
        raise EmptyInputError("need at least one weight")
    if theta.shape != eta.shape:
        raise ValueError("scales and shapes differ in length")
    if np.any(theta <= 0) or np.any(eta <= 0) or not np.all(np.isfinite(theta)):
        raise ValueError("weights must be finite and positive")
    m1 = np.sum(eta * theta)
    m2 = np.sum(eta * theta ** 2)
    return GammaFit(shape=m1 * m1 / m2, scale=m2 / m1)


def _cross_sum(w):
    """``sum_i w_i * (sum_{j != i} w_j)`` without cancellation."""
    head = np.concatenate(([0.0], np.cumsum(w)[:-1]))
    tail = np.concatenate((np.cumsum(w[::-1])[::-1][1:], [0.0]))
    return float(np.sum(w * (head + tail)))


def _effective_gain_lb(w):
    """``Phi * (Psi - 1)`` of the moment-matched fit over weights ``w``.

    Algebraically ``(S1^2 - S2) / S1``; evaluated from cross products so a
    single dominant weight does not wipe out the result.
    """
    w = np.asarray(w, dtype=float)
    if w.size < 2:
        raise DegenerateFitError("need at least two retained antennas for the lower bound")
    s1 = w.sum()
    s2 = np.sum(w * w)
    cross = _cross_sum(w)
    excess = cross / s2
    if not excess > PSI_MIN_EXCESS:
        raise DegenerateFitError(f"Gamma shape {1 + excess!r} too close to 1")
    return cross / s1


def _retained(ls, k, sets):
    sets = exclusion_sets(ls, k) if sets is None else sets
    if sets.retained.size == 0:
        raise EmptyInputError(f"user {k} has no retained antennas")
    return sets.retained


def _log2_1p(x):
    return np.log1p(x) / np.log(2.0)


def approx_ub_perfect(ls, k, rho_u, sets=None):
    """``log2(1 + rho_u * sum of retained gains)`` for user ``k``."""
    gamma = _gamma_of(ls)
    ret = _retained(gamma, k, sets)
    return ApproxRate(float(_log2_1p(rho_u * gamma[ret, k].sum())), UB_PERFECT)


def approx_lb_perfect(ls, k, rho_u, sets=None):
    """``log2(1 + rho_u * Phi * (Psi - 1))`` with a Gamma fit on retained gains.

    Raises
    ------
    DegenerateFitError
        If the fitted shape does not exceed 1 by at least ``PSI_MIN_EXCESS``.
    """
    gamma = _gamma_of(ls)
    ret = _retained(gamma, k, sets)
    return ApproxRate(float(_log2_1p(rho_u * _effective_gain_lb(gamma[ret, k]))), LB_PERFECT)


def _error_row_sums(gamma, rho_p):
    return estimation_params(LargeScaleMatrix(gamma, 1.0), rho_p).error_row_sums()


def approx_ub_imperfect(ls, k, rho_u, rho_p, sets=None):
    """Upper-bound approximation with MMSE-estimated channels.

    Uses the smallest per-antenna error-variance row sum in the effective
    SNR prefactor.
    """
    gamma = _gamma_of(ls)
    ret = _retained(gamma, k, sets)
    est = estimation_params(LargeScaleMatrix(gamma, 1.0), rho_p)
    t_min = est.error_row_sums().min()
    snr = rho_u / (rho_u * t_min + 1.0) * est.gamma_hat[ret, k].sum()
    return ApproxRate(float(_log2_1p(snr)), UB_IMPERFECT)


def approx_lb_imperfect(ls, k, rho_u, rho_p, sets=None):
    """Lower-bound approximation with MMSE-estimated channels.

    Gamma fit on the retained estimate variances, with the largest
    per-antenna error-variance row sum in the prefactor.
    """
    gamma = _gamma_of(ls)
    ret = _retained(gamma, k, sets)
    est = estimation_params(LargeScaleMatrix(gamma, 1.0), rho_p)
    t_max = est.error_row_sums().max()
    snr = rho_u / (rho_u * t_max + 1.0) * _effective_gain_lb(est.gamma_hat[ret, k])
    return ApproxRate(float(_log2_1p(snr)), LB_IMPERFECT)


def approximations(ls, rho_u, rho_p=None, sets=None):
    """All applicable approximations for every user.

    Parameters
    ----------
    ls : LargeScaleMatrix or ndarray
    rho_u : float
        Uplink data power (linear).
    rho_p : float, optional
        Pilot power (linear). The imperfect-CSI kinds are only computed when
        given.
    sets : list of ExclusionSets, optional
        Override the per-user exclusion sets.

    Returns
    -------
    dict
        Kind name -> ndarray of shape ``(K,)`` in bits/s/Hz.
    """
    gamma = _gamma_of(ls)
    L, K = gamma.shape
    if sets is None:
        sets = [exclusion_sets(gamma, k) for k in range(K)]
    out = {UB_PERFECT: np.empty(K), LB_PERFECT: np.empty(K)}
    for k, s in enumerate(sets):
        w = gamma[s.retained, k]
        out[UB_PERFECT][k] = _log2_1p(rho_u * w.sum())
        out[LB_PERFECT][k] = _log2_1p(rho_u * _effective_gain_lb(w))
    if rho_p is not None:
        est = estimation_params(LargeScaleMatrix(gamma, 1.0), rho_p)
        t = est.error_row_sums()
        pre_ub = rho_u / (rho_u * t.min() + 1.0)
        pre_lb = rho_u / (rho_u * t.max() + 1.0)
        out[UB_IMPERFECT] = np.empty(K)
        out[LB_IMPERFECT] = np.empty(K)
        for k, s in enumerate(sets):
            w = est.gamma_hat[s.retained, k]
            out[UB_IMPERFECT][k] = _log2_1p(pre_ub * w.sum())
            out[LB_IMPERFECT][k] = _log2_1p(pre_lb * _effective_gain_lb(w))
    return out


def colocated_bound(kind, L, K, gains, rho_u, rho_p=None):
    """Exact ZF rate bounds of a co-located array.

    Parameters
    ----------
    kind : str
        One of ``KINDS``.
    L, K : int
        Antenna and user counts.
    gains : array_like, shape (K,)
        Path gain of every user (identical across antennas).
    rho_u, rho_p : float
        Linear powers; ``rho_p`` is required for the imperfect kinds.

    Returns
    -------
    ndarray, shape (K,)
        Per-user bound in bits/s/Hz.
    """
    gains = np.asarray(gains, dtype=float)
    if gains.shape != (K,):
        raise ValueError(f"expected {K} per-user gains, got shape {gains.shape}")
    if np.any(gains <= 0):
        raise ValueError("gains must be positive")
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if kind.startswith("lb"):
        if L <= K:
            raise ValueError("lower bounds need L > K")
        dof = L - K
    else:
        if L < K:
            raise ValueError("upper bounds need L >= K")
        dof = L - K + 1
    if kind.endswith("_perfect"):
        return _log2_1p(rho_u * dof * gains)
    if rho_p is None or not rho_p > 0:
        raise ValueError("imperfect-CSI bounds need a positive rho_p")
    err_sum = np.sum(gains / (rho_p * gains + 1.0))
    gain_hat = rho_p * gains / (rho_p * gains + 1.0) * gains
    return _log2_1p(rho_u * dof / (rho_u * err_sum + 1.0) * gain_hat)
