"""Seeded Monte Carlo engine: null distributions, thresholds, p-values and power.

Replications are grouped in fixed-size blocks.  Block ``j`` of a run draws from
its own Philox stream keyed by ``(purpose, cell, j)`` under the master seed, so
results do not depend on how blocks are scheduled across threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import datetime as _dt
import math
import os
from pathlib import Path
import tempfile
import zlib

import numpy as np
from scipy import stats as _sps

from .benchmark_tests import BENCHMARK_NAMES, benchmark_batch
from .constants import default_constants
from .copulas import CopulaSpec, draw_scores
from .exceptions import DomainError, SimulationError
from .test_statistics import STAT_NAMES, RejectionSide, canonical_name, statistics_batch

__all__ = [
    "ALL_STATS",
    "BLOCK_SIZE",
    "PURPOSES",
    "NullDistribution",
    "Threshold",
    "PowerCell",
    "NullStore",
    "stream",
    "stream_key",
    "simulate",
    "evaluate",
    "simulate_null",
    "simulate_nulls",
    "canonical_stat",
    "NULL_SPEC",
    "threshold",
    "symmetric_threshold",
    "p_value",
    "power",
    "power_many",
    "type1_sweep",
    "kde",
    "kde_bandwidth",
    "cache_filename",
    "save_null",
    "load_null",
]

ALL_STATS = STAT_NAMES + BENCHMARK_NAMES
BLOCK_SIZE = 500
PURPOSES = {"null": 1, "power": 2}
MAX_FAILURE_FRACTION = 1e-3
_MAGIC = b"CCGNULL1"
NULL_SPEC = CopulaSpec("Gaussian", rho=0.0)


def canonical_stat(name):
    name = str(name)
    if name.upper() in BENCHMARK_NAMES:
        return name.upper()
    return canonical_name(name)


def _side(side):
    return side if isinstance(side, RejectionSide) else RejectionSide(side)


# ---------------------------------------------------------------- streams


def _cell_code(text):
    return zlib.crc32(text.encode("utf-8"))


def stream_key(purpose, cell, block):
    """Spawn key identifying one block's random stream."""
    return (PURPOSES[purpose], _cell_code(cell), int(block))


def stream(master_seed, purpose, cell, block):
    ss = np.random.SeedSequence(int(master_seed), spawn_key=stream_key(purpose, cell, block))
    return np.random.Generator(np.random.Philox(ss))


# ------------------------------------------------------------- evaluation


def evaluate(x1, x2, names, constants=None, alpha=None):
    """All requested statistics on a batch ``(B, n)``, computed from the same draws."""
    fam = [nm for nm in names if nm in STAT_NAMES]
    bench = [nm for nm in names if nm in BENCHMARK_NAMES]
    out = {}
    if fam:
        out.update(statistics_batch(x1, x2, fam, constants, alpha))
    if bench:
        out.update(benchmark_batch(np.stack([x1, x2], axis=-1), bench))
    return out


def _blocks(N):
    return [(j, min(BLOCK_SIZE, N - j * BLOCK_SIZE)) for j in range(math.ceil(N / BLOCK_SIZE))]


def simulate(spec, n, N, names, master_seed, purpose="power", threads=None, constants=None, alpha=None):
    """Raw statistic values (replication order) for ``N`` samples of size ``n`` from ``spec``.

    Returns ``(values, failures)`` where ``values[name]`` may contain NaN.
    """
    names = [canonical_stat(nm) for nm in names]
    if n < 20:
        raise DomainError(f"n must be >= 20, got {n}")
    if N < 1:
        raise DomainError("N must be positive")
    constants = constants or default_constants()
    cell = f"{spec.to_json()}|n={n}" if purpose != "null" else f"n={n}"

    def run(block):
        j, size = block
        rng = stream(master_seed, purpose, cell, j)
        z1, z2 = draw_scores(spec, (size, n), rng)
        return evaluate(z1, z2, names, constants, alpha)

    blocks = _blocks(N)
    workers = max(1, threads or os.cpu_count() or 1)
    if workers == 1 or len(blocks) == 1:
        parts = [run(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    values = {nm: np.concatenate([p[nm] for p in parts]) for nm in names}
    failures = {nm: int(np.count_nonzero(~np.isfinite(v))) for nm, v in values.items()}
    return values, failures


def _check_failures(failures, N):
    for nm, f in failures.items():
        if f > MAX_FAILURE_FRACTION * N:
            raise SimulationError(f"{nm}: {f} of {N} replications failed", failures=f, total=N)


# ----------------------------------------------------------------- nulls


@dataclass(frozen=True, eq=False)
class NullDistribution:
    values: np.ndarray
    stat: str
    n: int
    N: int
    master_seed: int
    failures: int = 0
    created: str = field(default="", compare=False)

    def __post_init__(self):
        vals = np.sort(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        if not isinstance(other, NullDistribution):
            return NotImplemented
        same = (self.stat, self.n, self.N, self.master_seed, self.failures) == (other.stat, other.n, other.N, other.master_seed, other.failures)
        return same and np.array_equal(self.values, other.values)

    __hash__ = None


def simulate_null(stat, n, N, master_seed, threads=None, constants=None):
    return simulate_nulls([stat], n, N, master_seed, threads, constants)[canonical_stat(stat)]


def simulate_nulls(stats, n, N, master_seed, threads=None, constants=None):
    """Null distributions of several statistics from one shared set of null samples."""
    if N < 1000:
        raise DomainError(f"null distributions need N >= 1000, got {N}")
    values, failures = simulate(NULL_SPEC, n, N, stats, master_seed, "null", threads, constants)
    _check_failures(failures, N)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return {
        nm: NullDistribution(v[np.isfinite(v)], nm, n, N, int(master_seed), failures[nm], stamp)
        for nm, v in values.items()
    }


@dataclass(frozen=True)
class Threshold:
    side: RejectionSide
    lower: float | None = None
    upper: float | None = None

    def rejects(self, values):
        values = np.asarray(values, dtype=float)
        out = np.zeros(values.shape, dtype=bool)
        if self.lower is not None:
            out |= values < self.lower
        if self.upper is not None:
            out |= values > self.upper
        return out

    def to_dict(self):
        return {"side": self.side.value, "lower": self.lower, "upper": self.upper}


def _upper(sorted_vals, size):
    N = sorted_vals.size
    idx = math.ceil((1.0 - size) * N - 1e-9) - 1
    if N - 1 - idx < 1:
        raise DomainError(f"N={N} too small for a right tail of size {size}")
    return float(sorted_vals[idx])


def _lower(sorted_vals, size):
    N = sorted_vals.size
    idx = math.floor(size * N + 1e-9)
    if idx < 1:
        raise DomainError(f"N={N} too small for a left tail of size {size}")
    return float(sorted_vals[idx])


def threshold(null, size, side):
    """Empirical rejection region of the given size on a simulated null."""
    if not 0.0 < size < 1.0:
        raise DomainError("size must lie in (0, 1)")
    side = _side(side)
    v = null.values
    if side is RejectionSide.RIGHT:
        return Threshold(side, upper=_upper(v, size))
    if side is RejectionSide.LEFT:
        return Threshold(side, lower=_lower(v, size))
    return Threshold(side, lower=_lower(v, size / 2), upper=_upper(v, size / 2))


def symmetric_threshold(null, size):
    """Two-sided region ``|stat| > c`` with ``c`` the empirical (1 - size)-quantile of ``|null|``."""
    if not 0.0 < size < 1.0:
        raise DomainError("size must lie in (0, 1)")
    c = _upper(np.sort(np.abs(null.values)), size)
    return Threshold(RejectionSide.TWO_SIDED, lower=-c, upper=c)


def p_value(null, observed, side):
    """Add-one Monte Carlo p-value."""
    side = _side(side)
    v = null.values
    N = v.size
    right = (1 + N - np.searchsorted(v, observed, side="left")) / (N + 1)
    left = (1 + np.searchsorted(v, observed, side="right")) / (N + 1)
    if side is RejectionSide.RIGHT:
        return float(right)
    if side is RejectionSide.LEFT:
        return float(left)
    return float(min(1.0, 2.0 * min(left, right)))


# ----------------------------------------------------------------- power


@dataclass(frozen=True)
class PowerCell:
    copula: CopulaSpec
    n: int
    N: int
    stat: str
    side: RejectionSide
    rejection_rate: float
    mc_stderr: float
    failures: int = 0

    @classmethod
    def from_counts(cls, copula, n, N, stat, side, rejected, valid, failures):
        rate = rejected / valid if valid else float("nan")
        se = math.sqrt(rate * (1.0 - rate) / valid) if valid else float("nan")
        return cls(copula, n, N, stat, _side(side), rate, se, failures)

    def to_row(self):
        return {
            "copula": self.copula.label(),
            "n": self.n,
            "N": self.N,
            "stat": self.stat,
            "side": self.side.value,
            "rejection_rate": self.rejection_rate,
            "mc_stderr": self.mc_stderr,
            "failures": self.failures,
        }


def power(stat, spec, n, N, threshold, side, master_seed, threads=None, constants=None):
    return power_many({canonical_stat(stat): threshold}, spec, n, N, master_seed, threads, constants, side)[0]


def power_many(thresholds, spec, n, N, master_seed, threads=None, constants=None, side=None):
    """Rejection rates of several statistics evaluated on the same alternative samples.

    ``thresholds`` maps statistic name to a :class:`Threshold`.
    """
    names = list(thresholds)
    values, failures = simulate(spec, n, N, names, master_seed, "power", threads, constants)
    _check_failures(failures, N)
    cells = []
    for nm in names:
        thr = thresholds[nm]
        if side is not None and _side(side) is not thr.side:
            raise DomainError(f"threshold side {thr.side.value} does not match requested {side}")
        v = values[nm]
        ok = np.isfinite(v)
        rej = int(np.count_nonzero(thr.rejects(v[ok])))
        cells.append(PowerCell.from_counts(spec, n, N, nm, thr.side, rej, int(ok.sum()), failures[nm]))
    return cells


def type1_sweep(rho_grid, n_grid, stats, size, N, seed, side=RejectionSide.TWO_SIDED, threads=None, null_N=None):
    """Size of each statistic under correlated Gaussian data, thresholds from the independent null."""
    stats = [canonical_stat(s) for s in stats]
    cells = []
    for n in n_grid:
        nulls = simulate_nulls(stats, n, null_N or N, seed, threads)
        thr = {s: threshold(nulls[s], size, side) for s in stats}
        for rho in rho_grid:
            cells.extend(power_many(thr, CopulaSpec("Gaussian", rho=rho), n, N, seed, threads))
    return cells


# ------------------------------------------------------------------- KDE


def kde_bandwidth(values):
    values = np.asarray(values, dtype=float)
    return 1.06 * values.std(ddof=1) * values.size ** (-0.2)


def kde(values, grid):
    """Gaussian-kernel density at ``grid`` with bandwidth ``1.06 sd N^{-1/5}``."""
    values = np.asarray(values, dtype=float)
    if values.size < 100:
        raise DomainError("kde needs at least 100 values")
    est = _sps.gaussian_kde(values, bw_method=1.06 * values.size ** (-0.2))
    return est(np.asarray(grid, dtype=float))


# ----------------------------------------------------------------- cache


def cache_filename(stat, n, N, seed):
    tag = canonical_stat(stat).replace("~", "tilde")
    return f"null_{tag}_{n}_{N}_{seed}.bin"


def save_null(null, directory):
    """Write sorted values atomically; concurrent writers of the same key are harmless."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / cache_filename(null.stat, null.n, null.N, null.master_seed)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=".bin")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(null.values.astype("<f8").tobytes())
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return target


def load_null(path, stat, n, N, seed):
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC or (len(raw) - 8) % 8:
        raise OSError(f"{path}: not a null-distribution cache file")
    vals = np.frombuffer(raw[8:], dtype="<f8").astype(float)
    return NullDistribution(vals, canonical_stat(stat), n, N, seed, N - vals.size)


class NullStore:
    """Null distributions keyed by ``(stat, n, N, seed)``, kept in memory and optionally on disk."""

    def __init__(self, directory=None, threads=None):
        self.directory = Path(directory) if directory is not None else None
        self.threads = threads
        self._mem = {}

    def _load(self, stat, n, N, seed):
        key = (stat, n, N, seed)
        if key in self._mem:
            return self._mem[key]
        if self.directory is not None:
            path = self.directory / cache_filename(stat, n, N, seed)
            if path.exists():
                self._mem[key] = load_null(path, stat, n, N, seed)
                return self._mem[key]
        return None

    def get_many(self, stats, n, N, seed):
        stats = [canonical_stat(s) for s in stats]
        found = {s: self._load(s, n, N, seed) for s in stats}
        missing = [s for s, v in found.items() if v is None]
        if missing:
            fresh = simulate_nulls(missing, n, N, seed, self.threads)
            for s, nd in fresh.items():
                self._mem[(s, n, N, seed)] = nd
                if self.directory is not None:
                    save_null(nd, self.directory)
                found[s] = nd
        return found

    def get(self, stat, n, N, seed):
        return self.get_many([stat], n, N, seed)[canonical_stat(stat)]
