"""Access-distance laws on the unit disk and moments of their order statistics.

A user at radius ``x`` sees an antenna placed uniformly on the disk at
distance ``d``. For ``y <= 1 - x`` the disk of radius ``y`` around the user
lies inside the unit disk, so ``F(y; x) = y**2``. Beyond that the covered
fraction is the lens (circle-circle intersection) area over ``pi``.

The moment ``E[(d_(l))**alpha]`` of the ``l``-th nearest of
``m = L - K + 1`` antennas, averaged over a uniformly placed user, decays as
``L**(-alpha/2)``; :func:`q_l_numeric` computes it by quadrature and
:func:`q_l_asymptotic` gives the leading power law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DomainError, QuadratureError

HERON_TOL = 1e-14
INVERSE_TOL = 1e-12
_DOMAIN_SLACK = 1e-12
_LOG_TINY = -745.0


@dataclass(frozen=True)
class MomentResult:
    value: float
    abs_error_estimate: float
    method: str  # "quadrature", "montecarlo" or "asymptotic"

    def __float__(self):
        return float(self.value)


def heron_term(x, y):
    """Area of the triangle with sides ``x``, ``y`` and 1.

    Uses Kahan's ordering of Heron's product so nearly degenerate triangles
    keep their accuracy. Radicands that are negative by no more than
    ``HERON_TOL`` (rounding) map to 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sides = np.sort(np.stack(np.broadcast_arrays(x, y, np.ones_like(x + y))), axis=0)
    c, b, a = sides[0], sides[1], sides[2]
    rad = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    if np.any(rad < -HERON_TOL):
        raise DomainError("sides (x, y, 1) do not form a triangle")
    area = 0.25 * np.sqrt(np.maximum(rad, 0.0))
    return area if area.ndim else float(area)


def _flat_pair(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return a.shape, a.ravel(), b.ravel()


def _unflat(out, shape):
    return out.reshape(shape) if shape else float(out[0])


def _check_domain(y, x):
    if np.any((x < 0) | (x > 1)):
        raise DomainError("user radius x must lie in [0, 1]")
    if np.any((y < 0) | (y > 1 + x + _DOMAIN_SLACK)):
        raise DomainError("distance y must lie in [0, 1 + x]")


def _lens_cos(y, x):
    """Cosine of the half-angle of the arc of radius ``y`` inside the disk."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.clip((x * x + y * y - 1.0) / (2.0 * x * y), -1.0, 1.0)


def access_distance_cdf(y, x):
    """``P(d <= y)`` for a uniform antenna and a user at radius ``x``."""
    shape, y, x = _flat_pair(y, x)
    _check_domain(y, x)
    out = y * y
    outer = y > 1.0 - x
    if np.any(outer):
        yo, xo = y[outer], x[outer]
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.clip((1.0 + xo * xo - yo * yo) / (2.0 * xo), -1.0, 1.0)
        lens = (yo * yo * np.arccos(_lens_cos(yo, xo)) + np.arccos(v)
                - 2.0 * heron_term(xo, np.minimum(yo, 1.0 + xo)))
        out[outer] = np.clip(lens / np.pi, 0.0, 1.0)
        out[y >= 1.0 + x] = 1.0
    return _unflat(out, shape)


def access_distance_pdf(y, x):
    """Density of the access distance; integrates to 1 over ``[0, 1 + x]``."""
    shape, y, x = _flat_pair(y, x)
    _check_domain(y, x)
    out = 2.0 * y
    outer = y > 1.0 - x
    if np.any(outer):
        out[outer] = 2.0 * y[outer] / np.pi * np.arccos(_lens_cos(y[outer], x[outer]))
    return _unflat(out, shape)


def _log_order_coef(l, m):
    """``log(m! / ((l-1)! (m-l)!))``."""
    return math.lgamma(m + 1) - math.lgamma(l) - math.lgamma(m - l + 1)


def order_stat_pdf(l, m, y, x):
    """Density of the ``l``-th smallest of ``m`` i.i.d. access distances.

    The combinatorial factor and the powers of ``F`` and ``1 - F`` are
    combined in the log domain, so ``m`` in the millions is fine.
    """
    if not 1 <= l <= m:
        raise ValueError(f"order {l} outside 1..{m}")
    F = np.asarray(access_distance_cdf(y, x), dtype=float)
    f = np.asarray(access_distance_pdf(y, x), dtype=float)
    with np.errstate(divide="ignore"):
        logp = _log_order_coef(l, m) + (m - l) * np.log1p(-F) + np.log(f)
        if l > 1:
            logp = logp + (l - 1) * np.log(F)
    out = np.exp(logp)
    return out if out.ndim else float(out)


def inverse_cdf(z, x, tol=INVERSE_TOL):
    """Distance ``y`` with ``F(y; x) = z``, by bisection.

    ``z <= (1 - x)**2`` is inverted exactly as ``sqrt(z)``; the lens branch
    is bracketed on ``[1 - x, 1 + x]`` and bisected until the bracket is
    below ``tol`` (the CDF slope is at most 2, so ``|F(y) - z| <= 2 tol``).
    """
    shape, z, x = _flat_pair(z, x)
    if np.any((z < 0) | (z > 1)) or np.any((x < 0) | (x > 1)):
        raise DomainError("need z in [0, 1] and x in [0, 1]")
    y = np.sqrt(z)
    outer = z > (1.0 - x) ** 2
    if np.any(outer):
        zo, xo = z[outer], x[outer]
        lo, hi = 1.0 - xo, 1.0 + xo
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = access_distance_cdf(mid, xo) < zo
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) <= tol * 0.5:
                break
        y[outer] = 0.5 * (lo + hi)
    return _unflat(y, shape)


# Scalar kernels for the quadrature hot loop (same formulas as above).

def _cdf_outer(y, x):
    u = min(1.0, max(-1.0, (x * x + y * y - 1.0) / (2.0 * x * y)))
    v = min(1.0, max(-1.0, (1.0 + x * x - y * y) / (2.0 * x)))
    c, b, a = sorted((x, y, 1.0))
    rad = max((a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c)), 0.0)
    F = (y * y * math.acos(u) + math.acos(v) - 0.5 * math.sqrt(rad)) / math.pi
    return min(1.0, max(0.0, F)), 2.0 * y / math.pi * math.acos(u)


def _outer_integrand(y, x, l, m, alpha, log_coef):
    F, f = _cdf_outer(y, x)
    if f <= 0.0 or F <= 0.0 or F >= 1.0:
        return 0.0
    logv = (log_coef + (l - 1) * math.log(F) + (m - l) * math.log1p(-F)
            + math.log(f) + alpha * math.log(y))
    return math.exp(logv) if logv > _LOG_TINY else 0.0


def _kernel_cutoff(l, m):
    """``z`` beyond which ``z**(l-1) (1-z)**(m-l)`` is below e**-40 of its peak."""
    return min(1.0, (l + 40.0 + 10.0 * math.sqrt(l)) / max(m - l, 1))


def _q_given_radius(x, l, m, alpha, log_coef, epsabs, epsrel):
    """``E[(d_(l))**alpha | user radius x]`` and its error estimate.

    On ``y <= 1 - x`` the substitution ``z = y**2`` turns the integral into
    a regularized incomplete Beta function; only the lens branch needs
    adaptive quadrature.
    """
    a = l + 0.5 * alpha
    b = m - l + 1.0
    inner = math.exp(log_coef + special.betaln(a, b)) * special.betainc(a, b, (1.0 - x) ** 2)
    lo = 1.0 - x
    z_cut = _kernel_cutoff(l, m)
    if x == 0.0 or lo * lo >= z_cut:
        return inner, 0.0
    hi = 1.0 + x if z_cut >= 1.0 else float(inverse_cdf(z_cut, x))
    peak = float(inverse_cdf(min(l / m, 1.0), x))
    margin = 0.01 * (hi - lo)
    points = [p for p in (peak, 2 * peak) if lo + margin < p < hi - margin]
    val, err, info, *msg = integrate.quad(
        _outer_integrand, lo, hi, args=(x, l, m, alpha, log_coef),
        points=points or None, epsabs=epsabs, epsrel=epsrel, limit=200, full_output=1)
    if msg and "roundoff" not in msg[0]:
        raise QuadratureError(f"lens-branch quadrature failed at x={x}: {msg[0]}",
                              partial=inner + val)
    return inner + val, err


def q_l_numeric(l, L, K, alpha, epsrel=1e-9):
    """``E[(d_(l))**alpha]`` averaged over the user radius, by quadrature.

    ``d_(l)`` is the ``l``-th nearest of ``L - K + 1`` uniform antennas.
    Tolerances are relative; the absolute floor is ``epsrel`` times the
    ``y**2``-branch value, which sets the scale of the result.

    Raises
    ------
    QuadratureError
        If either level of the nested quadrature misses its tolerance; the
        partial estimate is attached.
    """
    m = L - K + 1
    if not 1 <= l <= m:
        raise ValueError(f"need 1 <= l <= L - K + 1 = {m}")
    log_coef = _log_order_coef(l, m)
    scale = q_l_inner_exact(l, L, K, alpha)
    errs = []

    def outer(x):
        v, e = _q_given_radius(x, l, m, alpha, log_coef, 0.1 * epsrel * scale, 0.1 * epsrel)
        errs.append(e)
        return 2.0 * x * v

    # the lens branch matters only within a few peak widths of the rim
    width = math.sqrt(l / m)
    points = [p for p in (1 - 8 * width, 1 - 3 * width, 1 - width) if 0 < p < 1]
    val, err, info, *msg = integrate.quad(outer, 0.0, 1.0, points=points or None,
                                          epsabs=epsrel * scale, epsrel=epsrel, limit=200,
                                          full_output=1)
    total_err = err + 2.0 * max(errs, default=0.0)
    if msg and "roundoff" not in msg[0]:
        raise QuadratureError(f"radius quadrature failed: {msg[0]}",
                              partial=MomentResult(val, total_err, "quadrature"))
    return MomentResult(val, total_err, "quadrature")


def q_l_inner_exact(l, L, K, alpha):
    """Contribution of the ``y**2`` branch extended to all ``z``.

    ``m! / ((l-1)! (m-l)!) * B(l + alpha/2, m - l + 1)``; a lower bound of
    the full moment for every user radius.
    """
    m = L - K + 1
    return math.exp(_log_order_coef(l, m) + special.betaln(l + 0.5 * alpha, m - l + 1.0))


def q_l_asymptotic(l, L, K, alpha):
    """Leading power law of the moment for large ``L``.

    Replaces ``B(a, n)`` by ``Gamma(a) n**-a`` with ``a = l + alpha/2`` and
    ``n = L - K + 2 - l``, keeping the exact combinatorial prefactor.
    """
    m = L - K + 1
    a = l + 0.5 * alpha
    n = L - K + 2 - l
    return math.exp(_log_order_coef(l, m) + math.lgamma(a) - a * math.log(n))


def beta_asymptote_ratio(a, y):
    """``B(a, y) * y**a / Gamma(a)``, which tends to 1 as ``y`` grows."""
    return math.exp(special.betaln(a, y) + a * math.log(y) - math.lgamma(a))


def sample_order_distances(l, m, n, rng, chunk=10000):
    """``n`` draws of the ``l``-th nearest of ``m`` uniform antennas.

    Each draw places a fresh user and fresh antennas uniformly on the disk
    (radius ``sqrt(u)``, uniform angle). By rotational symmetry the user is
    put on the positive x-axis and distances follow from the law of cosines.
    """
    if not 1 <= l <= m:
        raise ValueError(f"order {l} outside 1..{m}")
    out = np.empty(n)
    done = 0
    while done < n:
        c = min(chunk, n - done)
        x = np.sqrt(rng.random((c, 1)))
        u = rng.random((c, m, 2))
        r2 = u[..., 0]
        cos_t = np.cos(2.0 * np.pi * u[..., 1])
        d2 = x * x + r2 - 2.0 * x * np.sqrt(r2) * cos_t
        out[done:done + c] = np.sqrt(np.maximum(np.partition(d2, l - 1, axis=1)[:, l - 1], 0.0))
        done += c
    return out


def q_l_montecarlo(l, L, K, alpha, n, rng):
    """Sampling estimate of the same moment; error is one standard error."""
    d = sample_order_distances(l, L - K + 1, n, rng) ** alpha
    return MomentResult(float(d.mean()), float(d.std(ddof=1) / math.sqrt(n)), "montecarlo")
