"""Monte Carlo estimation of ZF uplink rates and approximation errors.

A run averages over ``n_user_topologies x n_antenna_topologies`` large-scale
realizations, each with ``n_small_scale`` Rayleigh draws. Every random
quantity comes from its own counter-based (Philox) stream keyed by
``(master_seed, role, index...)``, so results do not depend on evaluation
order or on the number of worker processes.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import closed_form as cf
from .channel import (LargeScaleMatrix, db_to_linear, estimation_params,
                      large_scale_fading, sample_small_scale)
from .errors import ConditioningAlarm
from .geometry import (CELLFREE, COLOCATED, MODES, colocated_topology,
                       pairwise_distances, sample_disk_points, Topology)
from .zf_detector import (COND_LIMIT, _hermitian_inverse, equilibrated_condition,
                          gram, imperfect_csi_denominator)

log = logging.getLogger(__name__)

PERFECT = "perfect"
IMPERFECT = "imperfect"
CSI_KINDS = (PERFECT, IMPERFECT)

# Largest tolerated share of resampled (ill-conditioned) small-scale trials.
MAX_REJECT_FRACTION = 0.01
# Complex entries per small-scale batch; bounds peak memory.
_BATCH_ENTRIES = 1 << 21

_USER_STREAM, _ANTENNA_STREAM, _FADING_STREAM = 0, 1, 2


def make_rng(seed, *key):
    """Independent Philox generator for ``(seed, *key)``."""
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def _log2_1p(x):
    return np.log1p(x) / math.log(2.0)


@dataclass
class SimConfig:
    """Parameters of one simulation point. Powers are in dB."""

    L: int = 300
    K: int = 10
    alpha: float = 4.0
    rho_u_db: float = -10.0
    rho_p_db: float = 0.0
    n_user_topologies: int = 30
    n_antenna_topologies: int = 30
    n_small_scale: int = 200
    master_seed: int = 0
    csi: str = PERFECT
    mode: str = CELLFREE
    min_distance: float = 0.0
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("L", "K", "n_user_topologies", "n_antenna_topologies",
                     "n_small_scale", "workers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.L <= self.K:
            raise ValueError("zero-forcing needs L > K")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.csi not in CSI_KINDS:
            raise ValueError(f"csi must be one of {CSI_KINDS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.min_distance < 0:
            raise ValueError("min_distance must be non-negative")

    @property
    def rho_u(self):
        return float(db_to_linear(self.rho_u_db))

    @property
    def rho_p(self):
        return float(db_to_linear(self.rho_p_db))

    @property
    def n_topologies(self):
        return self.n_user_topologies * self.n_antenna_topologies

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class RateEstimate:
    """Small-scale average of per-user rates for one large-scale matrix."""

    rates: np.ndarray
    stderr: np.ndarray
    rejected: int = 0


@dataclass
class TopologyResult:
    """Per-user quantities for one large-scale realization (arrays of length K)."""

    sim: np.ndarray
    true_ub: np.ndarray
    true_lb: np.ndarray
    approx_ub: np.ndarray
    approx_lb: np.ndarray
    rejected: int = 0


@dataclass
class RateReport:
    """Averages over large-scale realizations; rates in bits/s/Hz.

    ``per_topology`` maps ``sim``, ``true_ub``, ``true_lb``, ``approx_ub``,
    ``approx_lb`` to ``(n_topologies, K)`` arrays. Standard errors are over
    topologies of the user-averaged value, clustered by user layout.
    """

    config: SimConfig
    per_user_rate: np.ndarray
    average_rate: float
    average_rate_se: float
    approx_ub: float
    approx_ub_se: float
    approx_lb: float
    approx_lb_se: float
    rae_ub: float
    rae_ub_se: float
    rae_lb: float
    rae_lb_se: float
    rejected: int
    per_topology: dict = field(default_factory=dict, repr=False)

    def topology_means(self, key):
        """User-averaged value of ``key`` per realization (CDF input)."""
        return self.per_topology[key].mean(axis=1)


# -- small-scale sampling ----------------------------------------------------

def _batches(n, L, K):
    step = max(1, _BATCH_ENTRIES // (L * K))
    for start in range(0, n, step):
        yield min(step, n - start)


def _draw_grams(std, n, rng, limit, keep_channels):
    """Draw ``n`` channels ``h * std`` and their Gram matrices.

    Ill-conditioned draws are replaced by fresh draws from the same stream.
    Returns ``(channels or None, grams, rejected)``.
    """
    L, K = std.shape
    g = std * sample_small_scale(L, K, rng, n)
    gm = gram(g)
    bad = np.flatnonzero(~(equilibrated_condition(gm) <= limit))
    rejected = 0
    while bad.size:
        rejected += bad.size
        if rejected > max(1.0, MAX_REJECT_FRACTION * n):
            raise ConditioningAlarm(
                f"{rejected} of {n} small-scale trials ill-conditioned (first: {bad[0]})")
        log.info("resampling %d ill-conditioned trials", bad.size)
        fresh = std * sample_small_scale(L, K, rng, bad.size)
        g[bad] = fresh
        gm[bad] = gram(fresh)
        bad = bad[~(equilibrated_condition(gm[bad]) <= limit)]
    return (g if keep_channels else None), gm, rejected


def perfect_csi_norms(ls, n_trials, seed, limit=COND_LIMIT):
    """``||a_k||^2`` for ``n_trials`` draws, shape ``(n_trials, K)``.

    Draw ``t`` depends only on ``(seed, t)``: a longer run extends a shorter
    one with the same seed.
    """
    gamma = ls.gamma if isinstance(ls, LargeScaleMatrix) else np.asarray(ls)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    std = np.sqrt(gamma)
    out, rejected = [], 0
    for b in _batches(n_trials, *gamma.shape):
        _, gm, r = _draw_grams(std, b, rng, limit, False)
        rejected += r
        out.append(np.real(np.diagonal(_hermitian_inverse(gm), axis1=-2, axis2=-1)))
    return np.concatenate(out), rejected


def imperfect_csi_terms(ls, rho_u, rho_p, n_trials, seed, limit=COND_LIMIT):
    """Per-trial ``(||a_hat_k||^2, denominator)`` for estimated-channel ZF.

    Estimates are drawn from CN(0, gamma_hat); the denominator is
    ``rho_u * sum_l |a_hat[l, k]|^2 t_l + ||a_hat_k||^2``. Both arrays have
    shape ``(n_trials, K)``.
    """
    gamma = ls.gamma if isinstance(ls, LargeScaleMatrix) else np.asarray(ls)
    est = estimation_params(LargeScaleMatrix(gamma, 1.0), rho_p)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    std = np.sqrt(est.gamma_hat)
    norms, dens, rejected = [], [], 0
    for b in _batches(n_trials, *gamma.shape):
        g, gm, r = _draw_grams(std, b, rng, limit, True)
        rejected += r
        inv = _hermitian_inverse(gm)
        a = g @ inv
        norms.append(np.real(np.diagonal(inv, axis1=-2, axis2=-1)))
        dens.append(imperfect_csi_denominator(a, est.gamma_tilde, rho_u))
    return np.concatenate(norms), np.concatenate(dens), rejected


def _mean_se(samples):
    n = samples.shape[0]
    se = samples.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(samples.shape[1:])
    return samples.mean(axis=0), se


def rate_perfect_csi(ls, rho_u, n_trials, seed):
    """Ergodic ZF rate with perfect CSI, ``E[log2(1 + rho_u / ||a_k||^2)]``."""
    norms, rejected = perfect_csi_norms(ls, n_trials, seed)
    rates, se = _mean_se(_log2_1p(rho_u / norms))
    return RateEstimate(rates, se, rejected)


def rate_imperfect_csi(ls, rho_u, rho_p, n_trials, seed):
    """Ergodic ZF rate with MMSE-estimated CSI (estimation error as noise)."""
    if not rho_p > 0:
        raise ValueError("pilot power must be positive")
    _, dens, rejected = imperfect_csi_terms(ls, rho_u, rho_p, n_trials, seed)
    rates, se = _mean_se(_log2_1p(rho_u / dens))
    return RateEstimate(rates, se, rejected)


# -- one large-scale realization ---------------------------------------------

def evaluate_large_scale(ls, rho_u, rho_p, n_trials, rng, csi=PERFECT, colocated=False):
    """Simulated rate, Jensen bounds and closed-form approximations.

    The Jensen bounds move the small-scale expectation inside the log
    (upper: mean of ``1/||a_k||^2``; lower: mean of ``||a_k||^2``), with the
    min/max error-variance prefactors in the imperfect case. In co-located
    mode the approximations are the exact co-located closed forms.
    """
    gamma = ls.gamma if isinstance(ls, LargeScaleMatrix) else np.asarray(ls)
    L, K = gamma.shape
    if csi == PERFECT:
        norms, rejected = perfect_csi_norms(gamma, n_trials, rng)
        sim = _log2_1p(rho_u / norms).mean(axis=0)
        pre_ub = pre_lb = rho_u
    else:
        norms, dens, rejected = imperfect_csi_terms(gamma, rho_u, rho_p, n_trials, rng)
        sim = _log2_1p(rho_u / dens).mean(axis=0)
        t = estimation_params(LargeScaleMatrix(gamma, 1.0), rho_p).error_row_sums()
        pre_ub = rho_u / (rho_u * t.min() + 1.0)
        pre_lb = rho_u / (rho_u * t.max() + 1.0)
    true_ub = _log2_1p(pre_ub * np.mean(1.0 / norms, axis=0))
    true_lb = _log2_1p(pre_lb / np.mean(norms, axis=0))
    if colocated:
        kinds = (cf.UB_PERFECT, cf.LB_PERFECT) if csi == PERFECT else (cf.UB_IMPERFECT, cf.LB_IMPERFECT)
        ub, lb = (cf.colocated_bound(k, L, K, gamma[0], rho_u, rho_p) for k in kinds)
    else:
        approx = cf.approximations(gamma, rho_u, rho_p if csi == IMPERFECT else None)
        key = "perfect" if csi == PERFECT else "imperfect"
        ub, lb = approx[f"ub_{key}"], approx[f"lb_{key}"]
    return TopologyResult(sim, true_ub, true_lb, ub, lb, rejected)


# -- nested expectation over topologies ----------------------------------------

def user_positions(config, i):
    return sample_disk_points(config.K, make_rng(config.master_seed, _USER_STREAM, i))


def antenna_positions(config, j):
    return sample_disk_points(config.L, make_rng(config.master_seed, _ANTENNA_STREAM, j))


def topology_for(config, i, j):
    """Large-scale realization ``(i, j)``: user layout ``i``, antenna layout ``j``."""
    users = user_positions(config, i)
    if config.mode == COLOCATED:
        return colocated_topology(config.L, users)
    return Topology(antenna_positions(config, j), users, CELLFREE)


def _evaluate_pair(config, i, j):
    topo = topology_for(config, i, j)
    ls = large_scale_fading(pairwise_distances(topo), config.alpha, config.min_distance)
    rng = make_rng(config.master_seed, _FADING_STREAM, i, j)
    return evaluate_large_scale(ls, config.rho_u, config.rho_p, config.n_small_scale, rng,
                                config.csi, config.mode == COLOCATED)


def _evaluate_chunk(args):
    config, pairs = args
    return [_evaluate_pair(config, i, j) for i, j in pairs]


def _topology_results(config):
    pairs = [(i, j) for i in range(config.n_user_topologies)
             for j in range(config.n_antenna_topologies)]
    if config.workers == 1 or len(pairs) == 1:
        return _evaluate_chunk((config, pairs))
    n_chunks = min(len(pairs), 4 * config.workers)
    chunks = [pairs[c::n_chunks] for c in range(n_chunks)]
    results = [None] * len(pairs)
    with ProcessPoolExecutor(config.workers) as pool:
        for c, part in enumerate(pool.map(_evaluate_chunk, [(config, ch) for ch in chunks])):
            for idx, res in zip(range(c, len(pairs), n_chunks), part):
                results[idx] = res
    return results


def outer_mean_se(values, n_user_topologies):
    """Mean and standard error of per-realization values.

    Realizations sharing a user layout are correlated, so the error is taken
    over the per-user-layout means (realizations are ordered user-major).
    With a single user layout the antenna layouts are treated as independent.
    """
    values = np.asarray(values, dtype=float)
    groups = values.reshape(n_user_topologies, -1).mean(axis=1)
    if groups.size == 1:
        groups = values
    se = groups.std(ddof=1) / math.sqrt(groups.size) if groups.size > 1 else 0.0
    return float(values.mean()), float(se)


def rae_percent(true, approx):
    """``100 * |true - approx| / true`` elementwise."""
    true = np.asarray(true, dtype=float)
    if np.any(true <= 0):
        raise ArithmeticError("non-positive reference rate; relative error undefined")
    return 100.0 * np.abs(true - np.asarray(approx, dtype=float)) / true


def average_over_topologies(config):
    """Nested Monte Carlo estimate of average rates, bounds and RAE.

    Returns
    -------
    RateReport
    """
    config.validate()
    results = _topology_results(config)
    keys = ("sim", "true_ub", "true_lb", "approx_ub", "approx_lb")
    per = {k: np.array([getattr(r, k) for r in results]) for k in keys}
    per["rae_ub"] = rae_percent(per["true_ub"], per["approx_ub"])
    per["rae_lb"] = rae_percent(per["true_lb"], per["approx_lb"])

    def stat(key):
        return outer_mean_se(per[key].mean(axis=1), config.n_user_topologies)

    avg, avg_se = stat("sim")
    ub, ub_se = stat("approx_ub")
    lb, lb_se = stat("approx_lb")
    rae_ub, rae_ub_se = stat("rae_ub")
    rae_lb, rae_lb_se = stat("rae_lb")
    return RateReport(
        config=config, per_user_rate=per["sim"].mean(axis=0), average_rate=avg,
        average_rate_se=avg_se, approx_ub=ub, approx_ub_se=ub_se, approx_lb=lb,
        approx_lb_se=lb_se, rae_ub=rae_ub, rae_ub_se=rae_ub_se, rae_lb=rae_lb,
        rae_lb_se=rae_lb_se, rejected=sum(r.rejected for r in results), per_topology=per)


def rae_table(config, bound_kind, L_values=(150, 200, 250, 300, 350, 400, 450, 500),
              alphas=None, csis=CSI_KINDS):
    """Average per-user RAE (percent) of one bound over an ``(L, alpha, csi)`` grid.

    Returns a list of dicts with keys ``L, alpha, csi, rae_pct, stderr``.
    """
    if bound_kind not in ("ub", "lb"):
        raise ValueError("bound_kind must be 'ub' or 'lb'")
    alphas = (config.alpha,) if alphas is None else alphas
    rows = []
    for alpha in alphas:
        for csi in csis:
            for L in L_values:
                rep = average_over_topologies(replace(config, L=L, alpha=alpha, csi=csi))
                rows.append({"L": L, "alpha": alpha, "csi": csi,
                             "rae_pct": getattr(rep, f"rae_{bound_kind}"),
                             "stderr": getattr(rep, f"rae_{bound_kind}_se")})
    return rows


# -- closed-form-only sweeps -------------------------------------------------

def closed_form_sweep(L_values, K=10, alpha=4.0, rho_u_db=-10.0, rho_p_db=None,
                      n_topologies=100, master_seed=0):
    """Average closed-form approximations against ``L`` (no small-scale draws).

    User layouts are shared across ``L`` (common random numbers). Returns a
    dict of arrays over ``L_values``: cell-free ``ub``/``lb`` and co-located
    ``coloc_ub``/``coloc_lb`` (imperfect-CSI kinds when ``rho_p_db`` is set).
    """
    rho_u = float(db_to_linear(rho_u_db))
    rho_p = None if rho_p_db is None else float(db_to_linear(rho_p_db))
    ub_kind, lb_kind = ((cf.UB_PERFECT, cf.LB_PERFECT) if rho_p is None
                        else (cf.UB_IMPERFECT, cf.LB_IMPERFECT))
    out = {k: np.zeros(len(L_values)) for k in ("ub", "lb", "coloc_ub", "coloc_lb")}
    for t in range(n_topologies):
        users = sample_disk_points(K, make_rng(master_seed, _USER_STREAM, t))
        radii = np.hypot(users[:, 0], users[:, 1])
        gains = large_scale_fading(radii[None, :], alpha).gamma[0]
        for i, L in enumerate(L_values):
            ants = sample_disk_points(L, make_rng(master_seed, _ANTENNA_STREAM, t, L))
            ls = large_scale_fading(pairwise_distances(Topology(ants, users)), alpha)
            approx = cf.approximations(ls, rho_u, rho_p)
            out["ub"][i] += approx[ub_kind].mean()
            out["lb"][i] += approx[lb_kind].mean()
            out["coloc_ub"][i] += cf.colocated_bound(ub_kind, L, K, gains, rho_u, rho_p).mean()
            out["coloc_lb"][i] += cf.colocated_bound(lb_kind, L, K, gains, rho_u, rho_p).mean()
    return {k: v / n_topologies for k, v in out.items()}


def slope_per_doubling(L_values, values):
    """Least-squares slope of ``values`` against ``log2(L)``."""
    return float(np.polyfit(np.log2(np.asarray(L_values, dtype=float)), values, 1)[0])


def config_dict(config):
    return asdict(config)
