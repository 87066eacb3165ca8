"""Command-line front end.

Exit codes: 0 success, 1 statistical-check failure, 2 usage error, 3 I/O error.
"""

import argparse
import csv
import hashlib
import io
import json
from pathlib import Path
import secrets
import sys
import time

import numpy as np
from scipy import integrate

from . import __version__, benchmark_tests
from .constants import (
    PAPER_Q_TILDE,
    compute_constants,
    printed_c1_formulas,
    solve_q_tilde,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)
from .copulas import BivariateSample, CopulaSpec
from .exceptions import (
    ConvergenceError,
    DegenerateSampleError,
    DomainError,
    InputParseError,
    SimulationError,
)
from .monte_carlo import (
    ALL_STATS,
    NullStore,
    PowerCell,
    canonical_stat,
    kde,
    p_value,
    simulate,
    symmetric_threshold,
    threshold,
)
from .pipeline import DEFAULT_SIDES, ReturnPanel, analyze, gaussianize, load_prices, log_returns
from .test_statistics import RejectionSide, compute

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

EXIT_OK, EXIT_STAT, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
_PAPER_VALUES = {
    "q_tilde": 0.19808,
    "c1": 3.1989,
    "c2": 3.6412,
    "c3": 33.4424,
    "k1": 22.0766,
    "k2": -29.8012,
    "k3": 33.4424,
    "c1_t": 1.2792,
    "k1_t": 8.8484,
    "k2_t": -11.9491,
    "k3_t": 13.4091,
}


class CheckFailed(Exception):
    """A statistical or numerical self-check did not pass."""


# ------------------------------------------------------------------ helpers


def _g12(x):
    return float(f"{x:.12g}")


def digest(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _meta(seed, config):
    return {"version": __version__, "seed": seed, "config_digest": digest(config)}


def _seed(value):
    return int(value) if value is not None else secrets.randbits(32)


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def load_config(path):
    """TOML config, or JSON when the file ends in .json or fails to parse as TOML."""
    p = Path(path)
    if not p.exists():
        bundled = Path(__file__).parent / "configs" / p.name
        if bundled.exists():
            p = bundled
    raw = p.read_bytes()
    if p.suffix.lower() == ".json":
        return json.loads(raw)
    try:
        return _toml.loads(raw.decode())
    except _toml.TOMLDecodeError:
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            raise InputParseError(f"{path}: neither valid TOML nor JSON") from None


# ---------------------------------------------------------------- constants


def constant_checks(c, perturb=None):
    """Residuals that must vanish (up to rounding) for a consistent constant set."""
    vals = c.as_dict()
    for name, delta in (perturb or {}).items():
        vals[name] = vals[name] + delta
    q = vals["q_tilde"]
    x = float(std_normal_quantile(q))
    res = {
        "c3_closed_form": vals["c3"] - (4.0 / q + 8.0 / (1.0 - 2.0 * q)),
        "c3_t_closed_form": vals["c3_t"] - 2.0 * (1.0 - q) / (q * (1.0 - 2.0 * q)),
        "k1_identity": vals["k1"] - (vals["c1"] - 4.0 * vals["c2"] + vals["c3"]),
        "k2_identity": vals["k2"] - (vals["c2"] - vals["c3"]),
        "k3_identity": vals["k3"] - vals["c3"],
        "k1_t_identity": vals["k1_t"] - (vals["c1_t"] - 4.0 * vals["c2_t"] + vals["c3_t"]),
        "k2_t_identity": vals["k2_t"] - (vals["c2_t"] - vals["c3_t"]),
        "k3_t_identity": vals["k3_t"] - vals["c3_t"],
        "q_tilde_equation": -x * std_normal_cdf(x) - std_normal_pdf(x) * (1.0 - 2.0 * std_normal_cdf(x)),
        "q_tilde_fixed_point": q - solve_q_tilde(tol=1e-13),
        "tail_vs_center_variance": (vals["lambda2_tail"] - vals["lambda1_tail"] ** 2) - vals["lambda2_mid"],
    }
    f1 = lambda p: float(std_normal_quantile(p)) if 0 < p < 1 else 0.0
    lam1_quad = integrate.quad(f1, 0.0, q, epsabs=1e-13, limit=200)[0] / q
    lam2_quad = integrate.quad(lambda p: f1(p) ** 2, 0.0, q, epsabs=1e-13, limit=200)[0] / q
    res["lambda1_tail_quadrature"] = vals["lambda1_tail"] - lam1_quad
    res["lambda2_tail_quadrature"] = vals["lambda2_tail"] - lam2_quad
    return vals, {k: float(v) for k, v in res.items()}


def cmd_constants(args):
    c = compute_constants()
    perturb = {}
    for item in args.perturb or []:
        name, _, delta = item.partition("=")
        if name not in c.as_dict():
            raise DomainError(f"unknown constant {name!r}")
        perturb[name] = float(delta)
    vals, res = constant_checks(c, perturb)
    at_paper_q = compute_constants(PAPER_Q_TILDE).as_dict()
    printed = printed_c1_formulas(c.q_tilde)
    config = {"command": "constants", "tolerance": args.tolerance, "perturb": perturb}
    failed = sorted(k for k, v in res.items() if not abs(v) <= args.tolerance)
    out = {
        **_meta(None, config),
        "constants": {k: _g12(v) for k, v in vals.items()},
        "residuals": {k: _g12(v) for k, v in res.items()},
        "tolerance": args.tolerance,
        "checks_passed": not failed,
        "failed_checks": failed,
        "reference_values": _PAPER_VALUES,
        "deviation_from_reference": {k: _g12(vals[k] - v) for k, v in _PAPER_VALUES.items()},
        "constants_at_q_0.19808": {k: _g12(v) for k, v in at_paper_q.items()},
        "printed_c1_transcription": {"c1": _g12(printed[0]), "c1_t": _g12(printed[1])},
    }
    _emit(_dump(out), args.output)
    if failed:
        raise CheckFailed(f"constant checks failed: {', '.join(failed)}")


# --------------------------------------------------------------------- test


def _read_pair(args):
    prices = load_prices(args.input)
    if args.kind == "prices":
        panel = log_returns(prices)
    else:
        panel = ReturnPanel(prices.dates, prices.names, prices.values)
    if args.rows:
        panel = ReturnPanel(panel.dates[: args.rows], panel.names, panel.values[: args.rows])
    if not args.no_gaussianize:
        panel = gaussianize(panel)
    cols = args.columns or list(panel.names[:2])
    if len(cols) != 2:
        raise DomainError("--columns takes exactly two names")
    for cname in cols:
        if cname not in panel.names:
            raise DomainError(f"no column {cname!r}; available: {', '.join(panel.names)}")
    return panel.column(cols[0]), panel.column(cols[1]), cols


def cmd_test(args):
    stat = canonical_stat(args.stat)
    side = RejectionSide(args.side) if args.side else DEFAULT_SIDES[stat]
    seed = _seed(args.seed)
    x1, x2, cols = _read_pair(args)
    sample = BivariateSample(x1, x2)
    if stat in ("BHEP", "AD", "CM", "MS"):
        value = float(getattr(benchmark_tests, stat.lower())(sample.as_matrix()))
    else:
        value = compute(stat, sample)
    null = NullStore(args.cache, threads=args.threads).get(stat, sample.n, args.n_null, seed)
    thr = threshold(null, args.size, side)
    p = p_value(null, value, side)
    config = {
        "command": "test",
        "input": Path(args.input).name,
        "columns": cols,
        "stat": stat,
        "side": side.value,
        "n_null": args.n_null,
        "size": args.size,
        "kind": args.kind,
        "rows": args.rows,
        "gaussianize": not args.no_gaussianize,
    }
    out = {
        **_meta(seed, config),
        "stat": stat,
        "side": side.value,
        "n": sample.n,
        "columns": cols,
        "value": value,
        "threshold": thr.to_dict(),
        "p_value": p,
        "reject": bool(thr.rejects(value)),
        "size": args.size,
        "N": args.n_null,
    }
    _emit(_dump(out), args.output)


# -------------------------------------------------------------------- power


def _cells(config):
    cells = []
    for i, raw in enumerate(config.get("cells", [])):
        spec = CopulaSpec.from_dict(raw["copula"])
        ns = raw["n"] if isinstance(raw["n"], list) else [raw["n"]]
        stats = [canonical_stat(s) for s in raw.get("stats", ALL_STATS)]
        side = raw.get("side")
        sides = {}
        for s in stats:
            if isinstance(side, dict):
                sides[s] = RejectionSide(side.get(s, DEFAULT_SIDES[s].value))
            elif side:
                sides[s] = RejectionSide(side)
            else:
                sides[s] = DEFAULT_SIDES[s]
        for n in ns:
            cells.append({"index": len(cells), "copula": spec, "n": int(n), "stats": stats, "sides": sides})
    if not cells:
        raise DomainError("config defines no cells")
    return cells


def _cell_id(cell, N, null_N, size, seed, verbose=False):
    key = {
        "copula": cell["copula"].to_dict(),
        "n": cell["n"],
        "stats": cell["stats"],
        "sides": {k: v.value for k, v in cell["sides"].items()},
        "N": N,
        "null_N": null_N,
        "size": size,
        "seed": seed,
        "verbose": bool(verbose),
    }
    return digest(key)


_POWER_FIELDS = ["cell", "copula", "n", "N", "stat", "side", "rejection_rate", "mc_stderr", "failures", "status"]


def _run_cell(cell, N, null_N, size, seed, store, threads, verbose):
    stats = cell["stats"]
    nulls = store.get_many(stats, cell["n"], null_N, seed)
    thr = {s: threshold(nulls[s], size, cell["sides"][s]) for s in stats}
    values, failures = simulate(cell["copula"], cell["n"], N, stats, seed, "power", threads)
    rows = []
    for s in stats:
        v = values[s]
        ok = np.isfinite(v)
        if failures[s] > 1e-3 * N:
            raise SimulationError(f"{s}: {failures[s]} of {N} replications failed", failures[s], N)
        pc = PowerCell.from_counts(cell["copula"], cell["n"], N, s, thr[s].side, int(thr[s].rejects(v[ok]).sum()), int(ok.sum()), failures[s])
        row = {"cell": cell["index"], **pc.to_row(), "status": "ok"}
        if verbose and thr[s].side is RejectionSide.TWO_SIDED:
            sym = symmetric_threshold(nulls[s], size)
            row["rejection_rate_symmetric"] = float(sym.rejects(v[ok]).mean())
        rows.append(row)
    return rows


def cmd_power(args):
    config = load_config(args.config)
    seed = _seed(config.get("seed") if args.seed is None else args.seed)
    N = int(args.N or config.get("N", 20000))
    null_N = int(config.get("null_N", N))
    size = float(config.get("size", 0.05))
    cells = _cells(config)
    eff = {"command": "power", "config": config, "seed": seed, "N": N, "null_N": null_N, "size": size}
    meta = _meta(seed, eff)
    if args.dry_run:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", "copula", "n", "stats", "sides"])
        for c in cells:
            w.writerow([c["index"], c["copula"].label(), c["n"], " ".join(c["stats"]), " ".join(v.value for v in c["sides"].values())])
        _emit(buf.getvalue(), args.output)
        return
    state = Path(args.state_dir or (Path(args.output).with_suffix(".state") if args.output and args.output != "-" else ".ccgof_state"))
    state.mkdir(parents=True, exist_ok=True)
    store = NullStore(state / "cache", threads=args.threads)
    started = time.time()
    all_rows, any_failed = [], False
    for cell in cells:
        marker = state / f"cell_{_cell_id(cell, N, null_N, size, seed, args.verbose)}.json"
        if marker.exists():
            rows = json.loads(marker.read_text())
        else:
            try:
                rows = _run_cell(cell, N, null_N, size, seed, store, args.threads, args.verbose)
            except (SimulationError, DegenerateSampleError, ConvergenceError) as exc:
                rows = [{"cell": cell["index"], "copula": cell["copula"].label(), "n": cell["n"], "N": N, "stat": s, "side": cell["sides"][s].value, "rejection_rate": "", "mc_stderr": "", "failures": "", "status": f"failed: {exc}"} for s in cell["stats"]]
            else:
                tmp = marker.with_suffix(".tmp")
                tmp.write_text(json.dumps(rows, sort_keys=True))
                tmp.replace(marker)
        any_failed |= any(r["status"] != "ok" for r in rows)
        all_rows.extend(rows)
        if args.stop_after is not None and cell["index"] + 1 >= args.stop_after:
            break
    fields = list(_POWER_FIELDS)
    if any("rejection_rate_symmetric" in r for r in all_rows):
        fields.insert(7, "rejection_rate_symmetric")
    buf = io.StringIO()
    buf.write(f"# version={meta['version']} seed={seed} config_digest={meta['config_digest']}\n")
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in all_rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    _emit(buf.getvalue(), args.output)
    if args.output and args.output != "-":
        info = {**meta, "elapsed_seconds": round(time.time() - started, 3), "cells": len(cells), "rows": len(all_rows)}
        Path(args.output).with_suffix(".meta.json").write_text(_dump(info))
    if any_failed:
        raise CheckFailed("some power cells failed")


# ------------------------------------------------------------------ analyze


def cmd_analyze(args):
    seed = _seed(args.seed)
    stats = [canonical_stat(s) for s in (args.stats or ALL_STATS)]
    sides = dict(DEFAULT_SIDES)
    for item in args.side or []:
        name, _, side = item.partition("=")
        sides[canonical_stat(name)] = RejectionSide(side)
    config = {
        "command": "analyze",
        "input": Path(args.input).name,
        "stats": stats,
        "N": args.N,
        "size": args.size,
        "loading": args.loading,
        "sides": {s: sides[s].value for s in stats},
    }
    meta = _meta(seed, config)
    report, _ = analyze(args.input, args.out, stats, args.size, args.N, seed, args.loading, sides, args.cache, args.threads, meta)
    summary = {"out": str(args.out), "pairs": len(report["pairs"]), "% rejections": report["% rejections"], **meta}
    sys.stdout.write(_dump(summary))


# ----------------------------------------------------------------- nulldist


def cmd_nulldist(args):
    seed = _seed(args.seed)
    stat = canonical_stat(args.stat)
    null = NullStore(args.cache, threads=args.threads).get(stat, args.n, args.N, seed)
    config = {"command": "nulldist", "stat": stat, "n": args.n, "N": args.N}
    meta = _meta(seed, config)
    head = f"# version={meta['version']} seed={seed} config_digest={meta['config_digest']} stat={stat} n={args.n} N={args.N}\n"
    buf = io.StringIO()
    buf.write(head)
    buf.write("value\n")
    for v in null.values:
        buf.write(f"{float(v)!r}\n")
    _emit(buf.getvalue(), args.output)
    if args.kde:
        v = null.values
        pad = 4.0 * v.std()
        grid = np.linspace(v.min() - pad, v.max() + pad, args.grid_points)
        dens = kde(v, grid)
        out = io.StringIO()
        out.write(head)
        out.write("x,density\n")
        for g, d in zip(grid, dens):
            out.write(f"{float(g)!r},{float(d)!r}\n")
        Path(args.kde).write_text(out.getvalue())


# ------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="ccgof", description="Conditional-covariance goodness-of-fit tests for Gaussian dependence.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("constants", help="print all split constants and self-check residuals as JSON")
    c.add_argument("--tolerance", type=float, default=1e-9)
    c.add_argument("--perturb", action="append", metavar="NAME=DELTA", help="add DELTA to a constant before checking (test hook)")
    c.add_argument("--output", "-o")
    c.set_defaults(func=cmd_constants)

    t = sub.add_parser("test", help="test one pair of columns against a simulated null")
    t.add_argument("--input", "-i", required=True)
    t.add_argument("--columns", nargs=2, metavar=("X1", "X2"))
    t.add_argument("--stat", default="T")
    t.add_argument("--side", choices=[s.value for s in RejectionSide])
    t.add_argument("--n-null", type=int, default=20000)
    t.add_argument("--size", type=float, default=0.05)
    t.add_argument("--seed", type=int)
    t.add_argument("--kind", choices=["prices", "returns"], default="prices")
    t.add_argument("--rows", type=int, help="use only the first ROWS observations")
    t.add_argument("--no-gaussianize", action="store_true")
    t.add_argument("--cache")
    t.add_argument("--threads", type=int)
    t.add_argument("--output", "-o")
    t.set_defaults(func=cmd_test)

    w = sub.add_parser("power", help="size/power sweep from a TOML or JSON config")
    w.add_argument("--config", "-c", required=True)
    w.add_argument("--output", "-o")
    w.add_argument("--state-dir")
    w.add_argument("--seed", type=int)
    w.add_argument("--N", type=int)
    w.add_argument("--threads", type=int)
    w.add_argument("--dry-run", action="store_true")
    w.add_argument("--verbose", "-v", action="store_true", help="also report |stat|-symmetric two-sided rates")
    w.add_argument("--stop-after", type=int, help=argparse.SUPPRESS)
    w.set_defaults(func=cmd_power)

    a = sub.add_parser("analyze", help="pairwise tests and band correlation matrices for a price panel")
    a.add_argument("--input", "-i", required=True)
    a.add_argument("--out", default="out")
    a.add_argument("--stats", nargs="+")
    a.add_argument("--side", action="append", metavar="STAT=SIDE")
    a.add_argument("--N", type=int, default=20000)
    a.add_argument("--size", type=float, default=0.05)
    a.add_argument("--seed", type=int)
    a.add_argument("--loading", type=float, nargs="+")
    a.add_argument("--cache")
    a.add_argument("--threads", type=int)
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("nulldist", help="dump a simulated null distribution (and optional KDE curve)")
    d.add_argument("--stat", default="T")
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--N", type=int, default=20000)
    d.add_argument("--seed", type=int)
    d.add_argument("--kde", metavar="PATH")
    d.add_argument("--grid-points", type=int, default=401)
    d.add_argument("--cache")
    d.add_argument("--threads", type=int)
    d.add_argument("--output", "-o")
    d.set_defaults(func=cmd_nulldist)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_STAT
    except (DegenerateSampleError, SimulationError, ConvergenceError) as exc:
        print(f"statistical error: {exc}", file=sys.stderr)
        return EXIT_STAT
    except (InputParseError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, ValueError, KeyError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
