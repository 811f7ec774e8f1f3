import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, special, stats

from cellfree.errors import DomainError
from cellfree.geometry import sample_disk_points
from cellfree.order_stats import (access_distance_cdf, access_distance_pdf,
                                  beta_asymptote_ratio, heron_term, inverse_cdf,
                                  order_stat_pdf, q_l_asymptotic, q_l_inner_exact,
                                  q_l_montecarlo, q_l_numeric, sample_order_distances)


def distances_from(x, n, rng, chunk=1_000_000):
    """Distances from a user at (x, 0) to n uniform disk points."""
    out = []
    while n > 0:
        c = min(chunk, n)
        p = sample_disk_points(c, rng)
        out.append(np.hypot(p[:, 0] - x, p[:, 1]))
        n -= c
    return np.concatenate(out)


def test_heron_degenerate():
    assert heron_term(0.3, 0.7) == pytest.approx(0.0, abs=1e-8)


def test_heron_equilateral():
    assert heron_term(1.0, 1.0) == pytest.approx(math.sqrt(1.5 * 0.5 ** 3), rel=1e-15)
    assert heron_term(1.0, 1.0) == pytest.approx(0.433013, abs=1e-6)


def coordinate_area(x, y):
    """Area from the apex height, in exact rational arithmetic."""
    x, y = Fraction(x), Fraction(y)
    cx = (x * x - y * y + 1) / 2
    return 0.5 * math.sqrt(max(x * x - cx * cx, 0))


@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_heron_matches_coordinates(x, frac):
    y = min((1 - x) + frac * 2 * x, 1 + x)
    assert heron_term(x, y) == pytest.approx(coordinate_area(x, y), abs=1e-12)


def test_heron_rejects_non_triangle():
    with pytest.raises(DomainError):
        heron_term(0.1, 0.2)


def test_cdf_concentric():
    y = np.linspace(0, 1, 11)
    np.testing.assert_allclose(access_distance_cdf(y, 0.0), y ** 2, rtol=0, atol=0)


@pytest.mark.parametrize("x", [0.0, 0.2, 0.5, 1.0])
def test_cdf_full_coverage(x):
    assert access_distance_cdf(1 + x, x) == 1.0


def test_cdf_against_sampling(rng):
    n = 10_000_000
    hit = distances_from(0.5, n, rng) <= 0.8
    p = hit.mean()
    assert abs(access_distance_cdf(0.8, 0.5) - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_cdf_domain():
    with pytest.raises(DomainError):
        access_distance_cdf(0.5, 1.5)
    with pytest.raises(DomainError):
        access_distance_cdf(1.8, 0.5)


@pytest.mark.parametrize("x", [0.0, 0.3, 0.7, 0.99])
def test_pdf_normalizes(x):
    pts = [1 - x] if 0 < x < 1 else None
    val, _ = integrate.quad(access_distance_pdf, 0, 1 + x, args=(x,), points=pts,
                            epsabs=1e-12, limit=200)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_pdf_concentric_value():
    assert access_distance_pdf(0.5, 0.0) == 1.0


@pytest.mark.parametrize("x", [0.1, 0.45, 0.8, 1.0])
def test_cdf_derivative_is_pdf(x):
    h = 1e-6
    ys = [y for y in np.linspace(0.02, 1 + x - 0.02, 25) if abs(y - (1 - x)) > 1e-3]
    for y in ys:
        fd = (access_distance_cdf(y + h, x) - access_distance_cdf(y - h, x)) / (2 * h)
        assert fd == pytest.approx(access_distance_pdf(y, x), abs=1e-6)


def test_order_pdf_first_of_one():
    y = np.linspace(0.05, 1.25, 9)
    np.testing.assert_allclose(order_stat_pdf(1, 1, y, 0.3), access_distance_pdf(y, 0.3),
                               rtol=1e-13)


@pytest.mark.parametrize("l, m, x", [(1, 50, 0.4), (2, 300, 0.0), (5, 100, 0.9)])
def test_order_pdf_normalizes(l, m, x):
    peak = math.sqrt(l / m)
    pts = sorted({p for p in (peak, 2 * peak, 1 - x) if 0 < p < 1 + x})
    val, _ = integrate.quad(lambda y: order_stat_pdf(l, m, y, x), 0, 1 + x, points=pts,
                            epsabs=1e-12, limit=400)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_order_pdf_matches_beta_transform():
    # d/dy I_F(y)(l, m - l + 1) is the order-statistic density
    l, m, x, h = 3, 40, 0.6, 1e-6
    for y in (0.1, 0.25, 0.5, 0.9):
        cdf = lambda t: special.betainc(l, m - l + 1, access_distance_cdf(t, x))
        fd = (cdf(y + h) - cdf(y - h)) / (2 * h)
        assert order_stat_pdf(l, m, y, x) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_order_stat_ks(rng):
    l, m, x, n = 2, 200, 0.6, 100_000
    samples = np.empty(n)
    for i in range(0, n, 2000):
        p = sample_disk_points(2000 * m, rng).reshape(2000, m, 2)
        d = np.hypot(p[..., 0] - x, p[..., 1])
        samples[i:i + 2000] = np.partition(d, l - 1, axis=1)[:, l - 1]
    cdf = lambda y: special.betainc(l, m - l + 1, access_distance_cdf(np.minimum(y, 1 + x), x))
    assert stats.kstest(samples, cdf).pvalue > 0.01


def test_access_distance_ks(rng):
    d = distances_from(0.7, 100_000, rng)
    assert stats.kstest(d, lambda y: access_distance_cdf(np.minimum(y, 1.7), 0.7)).pvalue > 0.01


def test_inverse_junction_and_inner():
    assert inverse_cdf(0.25, 0.5) == pytest.approx(0.5, abs=1e-10)
    assert inverse_cdf(0.25, 0.0) == 0.5


def test_inverse_round_trip(rng):
    z, x = rng.random(1000), rng.random(1000)
    np.testing.assert_allclose(access_distance_cdf(inverse_cdf(z, x), x), z, atol=1e-10, rtol=0)


def test_geometric_sandwich(rng):
    x = rng.uniform(1e-3, 1.0, 10_000)
    lo = (1 - x) ** 2
    z = lo + (1 - lo) * rng.uniform(1e-9, 1.0, x.size)
    inner = np.sqrt(z)
    lens = inverse_cdf(z, x)
    assert np.all(1 - x < inner)
    assert np.all(inner < lens)
    assert np.all(lens <= 2 * inner - (1 - x) + 1e-10)


def test_sampler_matches_direct_geometry(rng):
    # law-of-cosines sampler vs explicit 2-D points
    a = sample_order_distances(1, 30, 50_000, rng)
    b = np.empty(50_000)
    for i in range(0, 50_000, 5000):
        users = sample_disk_points(5000, rng)
        ants = sample_disk_points(5000 * 30, rng).reshape(5000, 30, 2)
        b[i:i + 5000] = np.hypot(*(ants - users[:, None, :]).transpose(2, 0, 1)).min(axis=1)
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_q_numeric_vs_sampling(rng):
    q = q_l_numeric(1, 100, 10, 4.0)
    mc = q_l_montecarlo(1, 100, 10, 4.0, 200_000, rng)
    assert abs(q.value - mc.value) < 4 * mc.abs_error_estimate
    assert q.abs_error_estimate < 1e-6 * q.value


def test_q_orders_increase():
    assert q_l_numeric(1, 200, 10, 4.0).value < q_l_numeric(2, 200, 10, 4.0).value


def test_q_inner_is_lower_bound():
    for L in (100, 1000):
        assert q_l_inner_exact(1, L, 10, 3.0) < q_l_numeric(1, L, 10, 3.0).value


def test_numeric_over_asymptote_bounded():
    ratio = q_l_numeric(1, 4000, 10, 3.0).value / q_l_asymptotic(1, 4000, 10, 3.0)
    assert 1.0 <= ratio <= 2 ** 3


def test_asymptote_decreasing():
    vals = [q_l_asymptotic(2, L, 10, 4.0) for L in (50, 100, 1000, 10_000)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("l, alpha", [(1, 3.0), (1, 4.0), (3, 4.0)])
def test_beta_asymptote(l, alpha):
    for y in (1e3, 1e4):
        assert beta_asymptote_ratio(l + alpha / 2, y) == pytest.approx(1.0, rel=0.01)


def test_q_argument_checks():
    with pytest.raises(ValueError):
        q_l_numeric(0, 100, 10, 4.0)
    with pytest.raises(ValueError):
        q_l_numeric(92, 100, 10, 4.0)
