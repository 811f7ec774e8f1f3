"""Path gains, Rayleigh small-scale fading and MMSE estimation statistics.

Powers (``rho_u``, ``rho_p``) are linear throughout this module; use
:func:`db_to_linear` at the boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, SingularDistanceError


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(value)


@dataclass(frozen=True)
class LargeScaleMatrix:
    """Path gains ``gamma[l, k] = d[l, k] ** -alpha`` (unitless).

    Rows index antennas, columns index users.
    """

    gamma: np.ndarray
    alpha: float

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float, ndmin=2)
        if g.ndim != 2 or g.size == 0:
            raise EmptyInputError("gamma must be a non-empty L x K matrix")
        if not np.all(np.isfinite(g)) or np.any(g <= 0.0):
            raise ValueError("path gains must be finite and strictly positive")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    @property
    def L(self):
        return self.gamma.shape[0]

    @property
    def K(self):
        return self.gamma.shape[1]


@dataclass(frozen=True)
class EstimationParams:
    """Per-entry variances of the MMSE estimate and of its error.

    ``gamma_hat + gamma_tilde == gamma`` entrywise, up to rounding.
    """

    gamma_hat: np.ndarray
    gamma_tilde: np.ndarray
    rho_p: float

    def error_row_sums(self):
        """``sum_n gamma_tilde[l, n]`` for every antenna ``l``."""
        return self.gamma_tilde.sum(axis=1)


def large_scale_fading(distances, alpha, min_distance=0.0):
    """Map distances to path gains ``max(d, min_distance) ** -alpha``.

    With the default ``min_distance=0`` an exactly zero distance raises
    :class:`SingularDistanceError` rather than producing ``inf``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if min_distance < 0:
        raise ValueError("min_distance must be non-negative")
    d = np.maximum(np.asarray(distances, dtype=float), min_distance)
    if np.any(d == 0.0):
        l, k = np.argwhere(d == 0.0)[0]
        raise SingularDistanceError(
            f"antenna {l} and user {k} coincide; set min_distance > 0 to guard")
    return LargeScaleMatrix(d ** (-float(alpha)), float(alpha))


def sample_small_scale(L, K, rng, size=None):
    """i.i.d. CN(0, 1) entries of shape ``(L, K)`` or ``(size, L, K)``.

    Real and imaginary parts are interleaved in one draw, so the first ``n``
    matrices of a batch do not depend on the batch size.
    """
    if L < 1 or K < 1:
        raise EmptyInputError("L and K must be at least 1")
    shape = (L, K) if size is None else (size, L, K)
    z = rng.standard_normal(shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


def compose_channel(ls, h):
    """``g[l, k] = h[l, k] * sqrt(gamma[l, k])``; ``h`` may carry a batch axis."""
    gamma = ls.gamma if isinstance(ls, LargeScaleMatrix) else np.asarray(ls)
    h = np.asarray(h)
    if h.shape[-2:] != gamma.shape:
        raise ValueError(f"shape mismatch: h {h.shape} vs gamma {gamma.shape}")
    return h * np.sqrt(gamma)


def estimation_params(ls, rho_p):
    """MMSE estimate/error variances for orthogonal pilots of power ``rho_p``."""
    if not rho_p > 0:
        raise ValueError("pilot power must be positive")
    gamma = ls.gamma
    denom = rho_p * gamma + 1.0
    gamma_hat = rho_p * gamma / denom * gamma
    gamma_tilde = gamma / denom
    for a in (gamma_hat, gamma_tilde):
        a.setflags(write=False)
    return EstimationParams(gamma_hat, gamma_tilde, float(rho_p))


def sample_estimated_channel(params, rng, size=None):
    """Draw the estimate directly from its marginal CN(0, diag(gamma_hat))."""
    L, K = params.gamma_hat.shape
    return sample_small_scale(L, K, rng, size) * np.sqrt(params.gamma_hat)


def sample_pilot_estimate(ls, rho_p, rng, size=None):
    """Simulate pilot reception and return ``(g, g_hat)``.

    ``g_hat = sqrt(rho_p) * gamma / (rho_p * gamma + 1) * (sqrt(rho_p) * g + w)``
    with ``w ~ CN(0, 1)``. Slower than :func:`sample_estimated_channel` but
    keeps the joint law of channel and estimate.
    """
    gamma = ls.gamma
    L, K = gamma.shape
    g = compose_channel(ls, sample_small_scale(L, K, rng, size))
    w = sample_small_scale(L, K, rng, size)
    coef = np.sqrt(rho_p) * gamma / (rho_p * gamma + 1.0)
    return g, coef * (np.sqrt(rho_p) * g + w)


def write_matrix_csv(matrix, path):
    """Write ``l,k,value`` triplets with 17 significant digits."""
    m = matrix.gamma if isinstance(matrix, LargeScaleMatrix) else np.asarray(matrix)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["l", "k", "value"])
        for (l, k), v in np.ndenumerate(m):
            writer.writerow([l, k, f"{v:.17g}"])


def read_matrix_csv(path):
    with Path(path).open(newline="") as fh:
        rows = [(int(r["l"]), int(r["k"]), float(r["value"])) for r in csv.DictReader(fh)]
    L = max(r[0] for r in rows) + 1
    K = max(r[1] for r in rows) + 1
    out = np.full((L, K), np.nan)
    for l, k, v in rows:
        out[l, k] = v
    return out


def write_estimation_csv(params, prefix):
    """Write ``<prefix>_gamma_hat.csv`` and ``<prefix>_gamma_tilde.csv``."""
    prefix = Path(prefix)
    paths = (prefix.with_name(prefix.name + "_gamma_hat.csv"),
             prefix.with_name(prefix.name + "_gamma_tilde.csv"))
    write_matrix_csv(params.gamma_hat, paths[0])
    write_matrix_csv(params.gamma_tilde, paths[1])
    return paths
