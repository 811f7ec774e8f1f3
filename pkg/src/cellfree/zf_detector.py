"""Zero-forcing detection kernels.

All functions accept a single ``(L, K)`` channel matrix or a stack
``(n, L, K)``; the trailing two axes are always antennas x users.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedError

# Limit on the condition number of the column-equilibrated Gram matrix.
COND_LIMIT = 1e12


@dataclass(frozen=True)
class ZfSolution:
    """ZF detector summary for one channel (or a stack of channels).

    ``column_sq_norms[..., k]`` equals ``||a_k||^2`` = ``[(G^H G)^-1]_kk``.
    """

    column_sq_norms: np.ndarray
    detector: np.ndarray | None = None


def gram(g):
    """``G^H G`` over the trailing two axes."""
    g = np.asarray(g)
    return np.swapaxes(g.conj(), -1, -2) @ g


def equilibrated_condition(gram_matrix):
    """2-norm condition number of ``D^-1/2 (G^H G) D^-1/2``, ``D = diag(G^H G)``.

    Equilibration removes the spread caused by very different user path
    gains, which ZF handles exactly and which must not trigger rejection.
    A zero column gives ``inf``.
    """
    d = np.sqrt(np.real(np.diagonal(gram_matrix, axis1=-2, axis2=-1)))
    zero = np.any(d == 0.0, axis=-1)
    d = np.where(d == 0.0, 1.0, d)
    scaled = gram_matrix / (d[..., :, None] * d[..., None, :])
    with np.errstate(all="ignore"):
        c = np.linalg.cond(scaled)
    return np.where(zero | ~np.isfinite(c), np.inf, c)


def well_conditioned(g, limit=COND_LIMIT):
    """Boolean mask over the batch: which channels are safe to invert."""
    return equilibrated_condition(gram(g)) <= limit


def _check_condition(gram_matrix, limit):
    cond = np.atleast_1d(equilibrated_condition(gram_matrix))
    bad = np.flatnonzero(~(cond <= limit))
    if bad.size:
        i = int(bad[0])
        trial = i if gram_matrix.ndim > 2 else None
        raise IllConditionedError(
            f"Gram matrix of trial {i} is ill-conditioned (cond={cond[i]:.3g})",
            trial=trial, condition=float(cond[i]))


def _hermitian_inverse(gram_matrix):
    """Invert Hermitian positive-definite matrices via Cholesky.

    Slices where the factorization breaks down fall back to an LU solve with
    partial pivoting.
    """
    eye = np.eye(gram_matrix.shape[-1])
    try:
        m = np.linalg.solve(np.linalg.cholesky(gram_matrix), eye)
        return np.swapaxes(m.conj(), -1, -2) @ m
    except np.linalg.LinAlgError:
        pass
    flat = gram_matrix.reshape((-1,) + gram_matrix.shape[-2:])
    out = np.empty_like(flat)
    for i, g2 in enumerate(flat):
        try:
            m = np.linalg.solve(np.linalg.cholesky(g2), eye)
            out[i] = m.conj().T @ m
        except np.linalg.LinAlgError:
            out[i] = np.linalg.solve(g2, eye)
    return out.reshape(gram_matrix.shape)


def gram_inverse(g, limit=COND_LIMIT):
    """``(G^H G)^-1`` after a conditioning check."""
    gm = gram(g)
    _check_condition(gm, limit)
    return _hermitian_inverse(gm)


def zf_column_norms(g, limit=COND_LIMIT):
    """Squared ZF column norms ``||a_k||^2``, i.e. ``diag((G^H G)^-1)``.

    Needs only a K x K factorization; the detector itself is not formed.

    Raises
    ------
    IllConditionedError
        If a Gram matrix is (numerically) singular; ``trial`` names the
        first offending slice of a batch.
    """
    g = np.asarray(g)
    if g.shape[-2] < g.shape[-1]:
        raise ValueError("zero-forcing needs at least as many antennas as users")
    inv = gram_inverse(g, limit)
    return np.real(np.diagonal(inv, axis1=-2, axis2=-1)).copy()


def zf_detector_matrix(g, limit=COND_LIMIT):
    """The ZF detector ``A = G (G^H G)^-1`` (same shape as ``G``)."""
    g = np.asarray(g)
    if g.shape[-2] < g.shape[-1]:
        raise ValueError("zero-forcing needs at least as many antennas as users")
    return g @ gram_inverse(g, limit)


def zf_solve(g, materialize=False, limit=COND_LIMIT):
    """Bundle the column norms and, optionally, the detector matrix."""
    if materialize:
        a = zf_detector_matrix(g, limit)
        return ZfSolution(np.sum(np.abs(a) ** 2, axis=-2), a)
    return ZfSolution(zf_column_norms(g, limit))


def imperfect_csi_denominator(a_hat, est, rho_u, k=None):
    """Effective noise term of the imperfect-CSI rate for one realization.

    Computes ``rho_u * sum_l |a_hat[l, k]|^2 * t_l + ||a_hat_k||^2`` where
    ``t_l = sum_n gamma_tilde[l, n]``.

    Parameters
    ----------
    a_hat : ndarray, shape (..., L, K)
        ZF detector built from the channel estimate.
    est : EstimationParams or ndarray
        Estimation statistics, or directly the ``(L, K)`` error variances.
    rho_u : float
        Uplink data power (linear).
    k : int, optional
        User index; all users are returned when omitted.
    """
    gamma_tilde = est.gamma_tilde if hasattr(est, "gamma_tilde") else np.asarray(est)
    a_hat = np.asarray(a_hat)
    if a_hat.shape[-2:] != gamma_tilde.shape:
        raise ValueError(f"shape mismatch: {a_hat.shape} vs {gamma_tilde.shape}")
    p = np.abs(a_hat) ** 2
    t = gamma_tilde.sum(axis=1)
    den = rho_u * np.einsum("...lk,l->...k", p, t) + p.sum(axis=-2)
    return den if k is None else den[..., k]
