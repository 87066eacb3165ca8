"""Empirical workflow: prices -> log returns -> Gaussianized margins -> pairwise tests.

Input CSV schema is ``date,<name1>,...,<namek>`` with ISO-8601 dates and plain
decimal numerals.  Outputs are ``report.json`` and ``bands.json``.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field
import datetime as _dt
from importlib import resources
from itertools import combinations
import json
from pathlib import Path

import numpy as np
from scipy import special, stats as _sps

from .conditional_moments import conditional_corr_matrices
from .copulas import BivariateSample
from .exceptions import DegenerateSampleError, DomainError, InputParseError
from .monte_carlo import ALL_STATS, NullStore, canonical_stat, evaluate, p_value, threshold
from .test_statistics import STAT_NAMES, RejectionSide

__all__ = [
    "PricePanel",
    "ReturnPanel",
    "PairReport",
    "DEFAULT_SIDES",
    "load_prices",
    "log_returns",
    "gaussianize",
    "pairwise_report",
    "rejection_summary",
    "band_matrices",
    "generate_prices",
    "write_prices",
    "fixture_path",
    "analyze",
]

DEFAULT_SIDES = {**{s: RejectionSide.TWO_SIDED for s in STAT_NAMES}, **{s: RejectionSide.RIGHT for s in ("BHEP", "AD", "CM", "MS")}}


@dataclass(frozen=True)
class PricePanel:
    dates: tuple
    names: tuple
    values: np.ndarray

    @property
    def n(self):
        return len(self.dates)


@dataclass(frozen=True)
class ReturnPanel:
    dates: tuple
    names: tuple
    values: np.ndarray

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DomainError("column names must be unique")
        if np.any(~np.isfinite(self.values)):
            raise DomainError("return panel contains missing or non-finite values")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def columns(self):
        return {nm: self.values[:, j] for j, nm in enumerate(self.names)}

    def column(self, name):
        return self.values[:, self.names.index(name)]


# ------------------------------------------------------------------ input


def _parse_file(path):
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0].lower() != "date":
            raise InputParseError(f"{path}: header must be 'date,<name1>,...'", row=1)
        names = header[1:]
        if len(set(names)) != len(names):
            raise InputParseError(f"{path}: duplicate column names", row=1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise InputParseError(f"{path}: expected {len(header)} fields, got {len(rec)}", row=lineno)
            try:
                day = _dt.date.fromisoformat(rec[0].strip())
            except ValueError:
                raise InputParseError(f"{path}: bad ISO date {rec[0]!r}", row=lineno, column="date") from None
            if day in rows:
                raise InputParseError(f"{path}: duplicate date {day.isoformat()}", row=lineno, column="date")
            vals = []
            for name, cell in zip(names, rec[1:]):
                cell = cell.strip()
                if cell == "":
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise InputParseError(f"{path}: not a decimal number {cell!r}", row=lineno, column=name) from None
            rows[day] = vals
    return names, rows


def load_prices(path, format="csv"):
    """Read one CSV (or a list of CSVs) and inner-join on dates.

    Dates missing from any file, or with an empty cell, are dropped.
    """
    if format != "csv":
        raise DomainError(f"unsupported format {format!r}")
    paths = [path] if isinstance(path, (str, Path)) else list(path)
    names, tables = [], []
    for p in paths:
        nm, rows = _parse_file(p)
        names.extend(nm)
        tables.append(rows)
    if len(set(names)) != len(names):
        raise InputParseError("column names repeat across files")
    common = set(tables[0])
    for t in tables[1:]:
        common &= set(t)
    dates, values = [], []
    for day in sorted(common):
        row = [v for t in tables for v in t[day]]
        if any(np.isnan(row)):
            continue
        dates.append(day.isoformat())
        values.append(row)
    if len(dates) < 2:
        raise InputParseError("fewer than two aligned rows after joining")
    return PricePanel(tuple(dates), tuple(names), np.asarray(values, dtype=float))


def log_returns(prices):
    vals = prices.values
    bad = np.argwhere(vals <= 0)
    if bad.size:
        i, j = bad[0]
        raise DomainError(f"nonpositive price {vals[i, j]} on {prices.dates[i]} in {prices.names[j]!r}")
    return ReturnPanel(prices.dates[1:], prices.names, np.diff(np.log(vals), axis=0))


def gaussianize(panel):
    """Map each column through ``Phi^-1(rank / (n + 1))`` with average ranks for ties."""
    n = panel.n
    if n < 20:
        raise DomainError(f"need at least 20 observations per column, got {n}")
    x = panel.values
    for j, nm in enumerate(panel.names):
        if np.all(x[:, j] == x[0, j]):
            raise DegenerateSampleError(f"column {nm!r} is constant")
    ranks = _sps.rankdata(x, method="average", axis=0)
    return ReturnPanel(panel.dates, panel.names, special.ndtri(ranks / (n + 1)))


# ---------------------------------------------------------------- reports


@dataclass
class PairReport:
    pair: tuple
    values: dict = field(default_factory=dict)
    p_values: dict = field(default_factory=dict)
    reject: dict = field(default_factory=dict)
    reject_bonferroni: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "pair": list(self.pair),
            "statistic": self.values,
            "p_value": self.p_values,
            "reject": self.reject,
            "reject_bonferroni": self.reject_bonferroni,
            "errors": self.errors,
        }


def _sides(stats, sides):
    out = {}
    for s in stats:
        side = (sides or {}).get(s, DEFAULT_SIDES[s])
        out[s] = side if isinstance(side, RejectionSide) else RejectionSide(side)
    return out


def pairwise_report(panel, stats=ALL_STATS, size=0.05, null_store=None, N=20000, seed=0, sides=None, threads=None):
    """Test every pair of columns with every statistic against simulated nulls.

    Returns ``(reports, nulls)``; the null distributions are shared by all pairs.
    """
    stats = [canonical_stat(s) for s in stats]
    side_of = _sides(stats, sides)
    store = null_store or NullStore(threads=threads)
    nulls = store.get_many(stats, panel.n, N, seed)
    pairs = list(combinations(panel.names, 2))
    level = size / max(1, len(pairs))

    def one(pair):
        rep = PairReport(pair)
        x1 = panel.column(pair[0])[None, :]
        x2 = panel.column(pair[1])[None, :]
        try:
            BivariateSample(x1[0], x2[0])
            vals = evaluate(x1, x2, stats)
        except (DegenerateSampleError, DomainError) as exc:
            rep.errors = {s: str(exc) for s in stats}
            return rep
        for s in stats:
            v = float(vals[s][0])
            if not np.isfinite(v):
                rep.errors[s] = "statistic undefined on this pair"
                continue
            p = p_value(nulls[s], v, side_of[s])
            rep.values[s] = v
            rep.p_values[s] = p
            rep.reject[s] = bool(p < size)
            rep.reject_bonferroni[s] = bool(p < level)
        return rep

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(one, pairs))
    else:
        reports = [one(p) for p in pairs]
    return reports, nulls


def rejection_summary(reports, stats):
    """Percentage of pairs rejected per statistic (pairs with errors count as not rejected)."""
    total = len(reports)
    return {canonical_stat(s): 100.0 * sum(r.reject.get(canonical_stat(s), False) for r in reports) / total for s in stats}


def band_matrices(panel, loading=None):
    loading = np.ones(len(panel.names)) if loading is None else np.asarray(loading, dtype=float)
    mats = conditional_corr_matrices(panel.values, loading)
    return {
        "names": list(panel.names),
        "loading": loading.tolist(),
        "bands": {lab: m.tolist() for lab, m in zip(("A1", "A2", "A3"), mats)},
    }


# --------------------------------------------------------------- fixtures


def generate_prices(n_rows=2528, names=("AL", "CU", "NI", "PB", "SN", "ZN"), copula="t", nu=3.0, rho=0.5, seed=0, vol=0.015, start="2010-01-04"):
    """Synthetic price panel whose returns have an equicorrelated t (or Gaussian) copula."""
    k = len(names)
    rng = np.random.default_rng(seed)
    corr = np.full((k, k), rho) + (1.0 - rho) * np.eye(k)
    chol = np.linalg.cholesky(corr)
    e = rng.standard_normal((n_rows - 1, k)) @ chol.T
    if copula == "t":
        w = rng.chisquare(nu, (n_rows - 1, 1))
        t = e * np.sqrt(nu / w)
        z = special.ndtri(np.clip(special.stdtr(nu, t), 1e-16, 1 - 1e-16))
    elif copula == "gaussian":
        z = e
    else:
        raise DomainError(f"unknown fixture copula {copula!r}")
    logp = np.vstack([np.zeros(k), np.cumsum(vol * z, axis=0)]) + np.log(1000.0)
    days = []
    d = _dt.date.fromisoformat(start)
    while len(days) < n_rows:
        if d.weekday() < 5:
            days.append(d.isoformat())
        d += _dt.timedelta(days=1)
    return PricePanel(tuple(days), tuple(names), np.exp(logp))


def write_prices(panel, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.names])
        for day, row in zip(panel.dates, panel.values):
            w.writerow([day, *(f"{v:.6f}" for v in row)])


def fixture_path(name="synthetic_t_prices.csv"):
    return resources.files("ccgof") / "data" / name


# -------------------------------------------------------------- analysis


def analyze(csv_path, out_dir, stats=ALL_STATS, size=0.05, N=20000, seed=0, loading=None, sides=None, cache_dir=None, threads=None, meta=None):
    """Full pipeline; writes ``report.json`` and ``bands.json`` and returns both dicts."""
    prices = load_prices(csv_path)
    panel = gaussianize(log_returns(prices))
    store = NullStore(cache_dir, threads=threads)
    stats = [canonical_stat(s) for s in stats]
    reports, nulls = pairwise_report(panel, stats, size, store, N, seed, sides, threads)
    side_of = _sides(stats, sides)
    report = {
        **(meta or {}),
        "input": str(Path(csv_path).name),
        "n": panel.n,
        "names": list(panel.names),
        "size": size,
        "bonferroni_level": size / max(1, len(reports)),
        "N": N,
        "seed": seed,
        "sides": {s: side_of[s].value for s in stats},
        "thresholds": {s: threshold(nulls[s], size, side_of[s]).to_dict() for s in stats},
        "null_failures": {s: nulls[s].failures for s in stats},
        "pairs": [r.to_dict() for r in reports],
        "% rejections": rejection_summary(reports, stats),
    }
    bands = {**(meta or {}), **band_matrices(panel, loading)}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "bands.json").write_text(json.dumps(bands, indent=2, sort_keys=True) + "\n")
    return report, bands
