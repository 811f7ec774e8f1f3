"""Command-line front end: ``python -m cellfree <command> ...``.

Configuration is flat ``key=value`` text with dotted keys::

    # sim.* fields map onto SimConfig
    sim.L=300
    sim.rho_u_db=-10
    sweep.L=150,200,250
    experiment.name=fig2a

Any key can be overridden on the command line as ``--sim.L 500`` or
``--sim.L=500``. ``CELLFREE_SEED`` overrides ``sim.master_seed``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import closed_form as cf
from .channel import large_scale_fading, write_matrix_csv
from .errors import CellFreeError, NumericalError
from .geometry import (CELLFREE, COLOCATED, pairwise_distances, random_topology,
                       read_topology_csv, write_topology_csv)
from .montecarlo import (IMPERFECT, PERFECT, SimConfig, average_over_topologies,
                         make_rng)
from .order_stats import q_l_asymptotic, q_l_numeric

log = logging.getLogger("cellfree")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

RATE_HEADER = ["L", "K", "alpha", "rho_u_db", "rho_p_db", "csi", "mode",
               "metric", "value", "stderr"]
APPROX_HEADER = ["user", "kind", "colocated", "rho_u_db", "rho_p_db", "value_bits"]
ASYMPTOTICS_HEADER = ["l", "L", "K", "alpha", "q_numeric", "q_error", "q_asymptotic"]
CDF_HEADER = ["L", "alpha", "rho_u_db", "rho_p_db", "csi", "mode", "series",
              "rank", "value", "cdf"]

FAST_PRESET = {"n_user_topologies": 5, "n_antenna_topologies": 5, "n_small_scale": 50}
L_GRID = tuple(range(150, 501, 50))
RHO_P_GRID = tuple(range(-10, 31, 5))
TARGETS = ("fig2a", "fig2b", "fig3a", "fig3b", "fig4", "table1", "table2")

_NUMERIC_FAILURES = (NumericalError, ArithmeticError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


# -- configuration -------------------------------------------------------------

def parse_config_text(text):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        out[key] = value
    return out


def load_config(path):
    try:
        return parse_config_text(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def parse_overrides(tokens):
    """Turn ``--a.b 1`` / ``--a.b=1`` tokens into a dict."""
    out, it = {}, iter(tokens)
    for tok in it:
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise ConfigError(f"unrecognized argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            value = next(it, None)
            if value is None:
                raise ConfigError(f"missing value for {tok}")
        out[key] = value
    return out


def _coerce(name, value):
    types = {f.name: f.type for f in fields(SimConfig)}
    kind = types[name]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"sim.{name}: cannot parse {value!r}") from exc
    return str(value)


def sim_config_from(flat, base=None):
    """Build a :class:`SimConfig` from ``sim.*`` keys (others are ignored)."""
    names = set(SimConfig.field_names())
    kwargs = {}
    for key, value in flat.items():
        if not key.startswith("sim."):
            continue
        name = key[4:]
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[name] = _coerce(name, value)
    seed = os.environ.get("CELLFREE_SEED")
    if seed is not None:
        try:
            kwargs["master_seed"] = int(seed)
        except ValueError as exc:
            raise ConfigError(f"CELLFREE_SEED={seed!r} is not an integer") from exc
    try:
        return replace(base, **kwargs) if base is not None else SimConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_sweep(flat):
    """``sweep.<field>=v1,v2`` entries in file order."""
    names = set(SimConfig.field_names())
    sweep = []
    for key, value in flat.items():
        if not key.startswith("sweep."):
            continue
        name = key[6:]
        if name not in names:
            raise ConfigError(f"sweep over unknown field {name!r}")
        sweep.append((name, [_coerce(name, v.strip()) for v in value.split(",") if v.strip()]))
    return sweep


# -- experiments ---------------------------------------------------------------

@dataclass
class ExperimentSpec:
    """A named Cartesian sweep over :class:`SimConfig` fields.

    ``metrics`` restricts the emitted metric names; ``fast`` only labels the
    manifest (the trial budget itself lives in ``config``).
    """

    name: str
    config: SimConfig
    sweep: list = field(default_factory=list)
    output_dir: Path = Path("results")
    metrics: tuple | None = None
    fast: bool = False
    notes: dict = field(default_factory=dict)

    def validate(self):
        names = set(SimConfig.field_names())
        for param, values in self.sweep:
            if param not in names:
                raise ConfigError(f"sweep over unknown field {param!r}")
            if not values:
                raise ConfigError(f"empty sweep for {param!r}")
        for point in self.points():
            point.validate()

    def points(self):
        """Configs of every sweep point, last parameter varying fastest."""
        if not self.sweep:
            return [self.config]
        params = [p for p, _ in self.sweep]
        combos = itertools.product(*(v for _, v in self.sweep))
        try:
            return [replace(self.config, **dict(zip(params, c))) for c in combos]
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _fmt(x):
    return f"{x:.17g}" if isinstance(x, float) else str(x)


def report_rows(report, metrics=None):
    """Rows of the rate CSV schema for one :class:`RateReport`."""
    c = report.config
    bound = "coloc" if c.mode == COLOCATED else "approx"
    values = {
        "sim_rate": (report.average_rate, report.average_rate_se),
        f"{bound}_ub": (report.approx_ub, report.approx_ub_se),
        f"{bound}_lb": (report.approx_lb, report.approx_lb_se),
        "rae_ub_pct": (report.rae_ub, report.rae_ub_se),
        "rae_lb_pct": (report.rae_lb, report.rae_lb_se),
    }
    rows = []
    for metric, (v, se) in values.items():
        if metrics is not None and metric not in metrics:
            continue
        rows.append([c.L, c.K, _fmt(float(c.alpha)), _fmt(float(c.rho_u_db)),
                     _fmt(float(c.rho_p_db)), c.csi, c.mode, metric, _fmt(float(v)),
                     _fmt(float(se))])
    return rows


def _point_tag(config, sweep):
    parts = [f"{p}={getattr(config, p)}" for p, _ in sweep]
    return "__".join(parts) if parts else "base"


def _cache_key(config):
    # perfect-CSI runs do not depend on the pilot power
    c = replace(config, rho_p_db=0.0) if config.csi == PERFECT else config
    return tuple(vars(c).items())


def write_manifest(spec, path, extra):
    """Manifest in config syntax so it can be fed back with ``--config``."""
    lines = [f"# cellfree {__version__} manifest"]
    lines += [f"experiment.name={spec.name}"]
    lines += [f"sim.{k}={_fmt(v)}" for k, v in vars(spec.config).items()]
    lines += [f"sweep.{p}={','.join(_fmt(v) for v in vals)}" for p, vals in spec.sweep]
    if spec.metrics:
        lines.append(f"experiment.metrics={','.join(spec.metrics)}")
    lines.append(f"meta.version={__version__}")
    lines.append(f"meta.fast={int(spec.fast)}")
    lines += [f"meta.{k}={v}" for k, v in {**spec.notes, **extra}.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_experiment(spec):
    """Run every sweep point and write CSVs, a manifest and a gnuplot script.

    Layout under ``output_dir``: ``<name>.csv`` (all rows),
    ``points/<tag>__<metric>.csv`` (one file per metric per point),
    ``<name>.manifest`` and ``<name>.gp``. While running, rows go to
    ``<name>.csv.partial``, which is left in place if the run fails.

    Returns
    -------
    int
        Exit status.
    """
    try:
        spec.validate()
    except (ConfigError, ValueError) as exc:
        log.error("invalid experiment: %s", exc)
        return EXIT_CONFIG
    out = Path(spec.output_dir)
    (out / "points").mkdir(parents=True, exist_ok=True)
    combined = out / f"{spec.name}.csv"
    partial = combined.with_name(combined.name + ".partial")
    t0 = time.time()
    cache = {}
    status = EXIT_OK
    with partial.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RATE_HEADER)
        for point in spec.points():
            key = _cache_key(point)
            try:
                if key not in cache:
                    log.info("running %s", _point_tag(point, spec.sweep))
                    cache[key] = average_over_topologies(point)
            except _NUMERIC_FAILURES + (CellFreeError,) as exc:
                log.error("numerical failure at %s: %s", _point_tag(point, spec.sweep), exc)
                status = EXIT_NUMERICAL
                break
            rep = replace(cache[key], config=point)
            rows = report_rows(rep, spec.metrics)
            writer.writerows(rows)
            fh.flush()
            tag = _point_tag(point, spec.sweep)
            for row in rows:
                _write_csv(out / "points" / f"{tag}__{row[7]}.csv", RATE_HEADER, [row])
    extra = {"wall_time_s": f"{time.time() - t0:.3f}", "complete": int(status == EXIT_OK)}
    write_manifest(spec, out / f"{spec.name}.manifest", extra)
    if status == EXIT_OK:
        partial.replace(combined)
        (out / f"{spec.name}.gp").write_text(gnuplot_script(spec))
    return status


def cdf_rows(report):
    """Sorted per-realization averages for ``sim``, ``ub`` and ``lb``."""
    c = report.config
    rows = []
    for series, key in (("sim", "sim"), ("ub", "approx_ub"), ("lb", "approx_lb")):
        values = np.sort(report.topology_means(key))
        n = values.size
        for r, v in enumerate(values):
            rows.append([c.L, _fmt(float(c.alpha)), _fmt(float(c.rho_u_db)),
                         _fmt(float(c.rho_p_db)), c.csi, c.mode, series, r + 1,
                         _fmt(float(v)), _fmt((r + 1) / n)])
    return rows


def run_cdf_experiment(spec):
    """Empirical CDF of the per-realization average rate for each sweep point."""
    try:
        spec.validate()
    except (ConfigError, ValueError) as exc:
        log.error("invalid experiment: %s", exc)
        return EXIT_CONFIG
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{spec.name}.csv"
    partial = target.with_name(target.name + ".partial")
    t0 = time.time()
    status = EXIT_OK
    with partial.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CDF_HEADER)
        for point in spec.points():
            try:
                rep = average_over_topologies(point)
            except _NUMERIC_FAILURES + (CellFreeError,) as exc:
                log.error("numerical failure: %s", exc)
                status = EXIT_NUMERICAL
                break
            writer.writerows(cdf_rows(rep))
            fh.flush()
    write_manifest(spec, out / f"{spec.name}.manifest",
                   {"wall_time_s": f"{time.time() - t0:.3f}",
                    "complete": int(status == EXIT_OK)})
    if status == EXIT_OK:
        partial.replace(target)
        (out / f"{spec.name}.gp").write_text(gnuplot_script(spec, cdf=True))
    return status


def gnuplot_script(spec, cdf=False):
    """Stand-alone gnuplot script reading ``<name>.csv``."""
    data = f"{spec.name}.csv"
    head = [f"# gnuplot script for {spec.name}", "set datafile separator ','",
            "set key top left", "set grid", "set terminal pngcairo size 900,600",
            f"set output '{spec.name}.png'"]
    if cdf:
        head += ["set xlabel 'Average rate (bits/s/Hz)'", "set ylabel 'CDF'"]
        plots = []
        for mode in (CELLFREE, COLOCATED):
            for series in ("sim", "ub", "lb"):
                sel = f"(strcol(6) eq '{mode}' && strcol(7) eq '{series}' ? $10 : NaN)"
                plots.append(f"'{data}' skip 1 using 9:{sel} with lines title '{mode} {series}'")
        return "\n".join(head + ["plot " + ", \\\n     ".join(plots)]) + "\n"
    swept = [p for p, _ in spec.sweep if p not in ("mode", "csi", "alpha")]
    xcol = {"L": 1, "rho_p_db": 5}.get(swept[-1] if swept else "L", 1)
    xlabel = "Pilot power (dB)" if xcol == 5 else "Number of antennas L"
    head += [f"set xlabel '{xlabel}'"]
    metrics = spec.metrics or ("sim_rate", "approx_ub", "approx_lb", "coloc_ub", "coloc_lb")
    head += ["set ylabel '" + ("RAE (%)" if all(m.startswith("rae") for m in metrics)
                               else "Average rate (bits/s/Hz)") + "'"]
    plots = []
    for metric in metrics:
        for csi in (PERFECT, IMPERFECT):
            for mode in (CELLFREE, COLOCATED):
                sel = (f"(strcol(6) eq '{csi}' && strcol(7) eq '{mode}' && "
                       f"strcol(8) eq '{metric}' ? $9 : NaN)")
                plots.append(f"'{data}' skip 1 using {xcol}:{sel} with linespoints "
                             f"title '{metric} {csi} {mode}'")
    return "\n".join(head + ["plot " + ", \\\n     ".join(plots)]) + "\n"


def reproduction_spec(target, config, output_dir, fast=False, alphas=None):
    """Experiment definition for one figure or table target."""
    modes = [CELLFREE, COLOCATED]
    notes = {}
    if target in ("fig2a", "fig2b"):
        csi = PERFECT if target == "fig2a" else IMPERFECT
        config = replace(config, csi=csi)
        sweep = [("mode", modes), ("L", list(L_GRID))]
        notes["L_grid"] = "150..500 step 50 (assumed; figure grid not stated)"
        return ExperimentSpec(target, config, sweep, output_dir, fast=fast, notes=notes)
    if target in ("fig3a", "fig3b"):
        csi = PERFECT if target == "fig3a" else IMPERFECT
        config = replace(config, csi=csi, L=300, rho_u_db=0.0, rho_p_db=10.0)
        return ExperimentSpec(target, config, [("mode", modes)], output_dir, fast=fast)
    if target == "fig4":
        config = replace(config, L=300, rho_u_db=-10.0)
        sweep = [("csi", [PERFECT, IMPERFECT]), ("mode", modes), ("rho_p_db", list(RHO_P_GRID))]
        notes["rho_p_grid"] = "-10..30 dB step 5 (assumed)"
        return ExperimentSpec(target, config, sweep, output_dir,
                              metrics=("sim_rate", "approx_ub", "approx_lb", "coloc_ub",
                                       "coloc_lb"), fast=fast, notes=notes)
    if target in ("table1", "table2"):
        metric = "rae_ub_pct" if target == "table1" else "rae_lb_pct"
        alphas = list(alphas) if alphas else [3.0, 4.0]
        config = replace(config, mode=CELLFREE, rho_u_db=-10.0, rho_p_db=0.0)
        sweep = [("alpha", alphas), ("csi", [PERFECT, IMPERFECT]), ("L", list(L_GRID))]
        notes["L_grid"] = "150..500 step 50"
        return ExperimentSpec(target, config, sweep, output_dir, metrics=(metric,),
                              fast=fast, notes=notes)
    raise ConfigError(f"unknown target {target!r}")


# -- argument parsing ------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--fast", action="store_true",
                   help="5x5x50 trial budget instead of 30x30x200")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--alpha", type=float, action="append",
                   help="path-loss exponent (repeatable for tables)")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="cellfree", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topology", help="sample a layout and its path gains")
    _add_common(p)
    p.add_argument("--out", required=True, help="topology CSV path")
    p.add_argument("--gamma-out", help="also write the path-gain matrix here")

    p = sub.add_parser("rates", help="simulated rates and approximations for one config")
    _add_common(p)
    p.add_argument("--out", help="CSV path (stdout if omitted)")

    p = sub.add_parser("approx", help="closed-form approximations for one layout")
    _add_common(p)
    p.add_argument("--topology", help="topology CSV (random layout if omitted)")
    p.add_argument("--out", help="CSV path (stdout if omitted)")

    p = sub.add_parser("asymptotics", help="order-statistic moment vs its asymptote")
    _add_common(p)
    p.add_argument("--l", type=int, action="append", help="order index (repeatable)")
    p.add_argument("--L-values", default="500,1000,2000,4000")
    p.add_argument("--out", help="CSV path (stdout if omitted)")

    p = sub.add_parser("reproduce", help="regenerate a figure or table as data files")
    _add_common(p)
    p.add_argument("target", choices=TARGETS)
    p.add_argument("--out", default="results", help="output directory")
    return parser


def _resolve_config(args, overrides):
    flat = load_config(args.config) if args.config else {}
    flat.update(overrides)
    base = SimConfig(**FAST_PRESET) if args.fast else None
    config = sim_config_from(flat, base)
    direct = {}
    if args.seed is not None and "CELLFREE_SEED" not in os.environ:
        direct["master_seed"] = args.seed
    if args.alpha and len(args.alpha) == 1:
        direct["alpha"] = args.alpha[0]
    if args.workers is not None:
        direct["workers"] = args.workers
    try:
        config = replace(config, **direct)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return flat, config


def _open_out(path):
    return Path(path).open("w", newline="") if path else sys.stdout


def _cmd_topology(args, flat, config):
    topo = random_topology(config.L, config.K, make_rng(config.master_seed), config.mode)
    write_topology_csv(topo, args.out)
    if args.gamma_out:
        ls = large_scale_fading(pairwise_distances(topo), config.alpha, config.min_distance)
        write_matrix_csv(ls, args.gamma_out)
    return EXIT_OK


def _cmd_rates(args, flat, config):
    rep = average_over_topologies(config)
    fh = _open_out(args.out)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RATE_HEADER)
    w.writerows(report_rows(rep))
    if fh is not sys.stdout:
        fh.close()
    return EXIT_OK


def _cmd_approx(args, flat, config):
    if args.topology:
        topo = read_topology_csv(args.topology)
    else:
        topo = random_topology(config.L, config.K, make_rng(config.master_seed), config.mode)
    ls = large_scale_fading(pairwise_distances(topo), config.alpha, config.min_distance)
    rho_u, rho_p = config.rho_u, config.rho_p
    rows = []
    if topo.mode == COLOCATED:
        for kind in cf.KINDS:
            vals = cf.colocated_bound(kind, topo.L, topo.K, ls.gamma[0], rho_u, rho_p)
            rows += [(k, kind, 1, v) for k, v in enumerate(vals)]
    else:
        for kind, vals in cf.approximations(ls, rho_u, rho_p).items():
            rows += [(k, kind, 0, v) for k, v in enumerate(vals)]
    rows.sort(key=lambda r: (r[0], cf.KINDS.index(r[1])))
    fh = _open_out(args.out)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(APPROX_HEADER)
    for k, kind, coloc, v in rows:
        w.writerow([k, kind, coloc, _fmt(float(config.rho_u_db)),
                    _fmt(float(config.rho_p_db)), _fmt(float(v))])
    if fh is not sys.stdout:
        fh.close()
    return EXIT_OK


def _cmd_asymptotics(args, flat, config):
    try:
        L_values = [int(v) for v in args.L_values.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --L-values: {exc}") from exc
    ls_ = args.l or [1]
    alphas = args.alpha or [config.alpha]
    for L in L_values:
        for l in ls_:
            if not 1 <= l <= L - config.K + 1:
                raise ConfigError(f"order index {l} out of range for L={L}, K={config.K}")
    fh = _open_out(args.out)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(ASYMPTOTICS_HEADER)
    for alpha in alphas:
        for l in ls_:
            for L in L_values:
                q = q_l_numeric(l, L, config.K, alpha)
                w.writerow([l, L, config.K, _fmt(float(alpha)), _fmt(q.value),
                            _fmt(q.abs_error_estimate),
                            _fmt(float(q_l_asymptotic(l, L, config.K, alpha)))])
    if fh is not sys.stdout:
        fh.close()
    return EXIT_OK


def _cmd_reproduce(args, flat, config):
    alphas = args.alpha if args.target in ("table1", "table2") else None
    spec = reproduction_spec(args.target, config, Path(args.out), args.fast, alphas)
    sweep = parse_sweep(flat)
    if sweep:
        given = dict(sweep)
        spec.sweep = [(p, given.pop(p, v)) for p, v in spec.sweep] + list(given.items())
    if args.target in ("fig3a", "fig3b"):
        return run_cdf_experiment(spec)
    return run_experiment(spec)


COMMANDS = {"topology": _cmd_topology, "rates": _cmd_rates, "approx": _cmd_approx,
            "asymptotics": _cmd_asymptotics, "reproduce": _cmd_reproduce}


def main(argv=None):
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = parse_overrides(rest)
        flat, config = _resolve_config(args, overrides)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, flat, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_FAILURES + (CellFreeError,) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
