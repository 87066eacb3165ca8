"""Numerical constants of the 20/60/20 conditional covariance test.

Everything here is derived from the standard normal distribution alone:

* the split probability ``q_tilde`` at which the conditional variance of a
  standard normal on the lower tail equals the one on the central band,
* truncated-normal moments on the resulting bands,
* the asymptotic variance constants ``C1..C3`` of the equilibrium gap
  ``r_A1 - 2 r_A2 + r_A3`` (and of the one-sided gap ``r_A1 - r_A2``), and
  the combinations ``K1..K3`` used by the normalising statistics.

The variance constants are evaluated exactly.  The limit of
``sqrt(n) * (r_hat_A - r_A)`` is driven by the influence function of a
trimmed sum of order statistics, which for a standard normal benchmark is a
piecewise polynomial of degree two in ``V`` with breakpoints at the band
edges.  Its variance is therefore a finite combination of partial moments
``int v**k phi(v) dv``, which satisfy a two-term recursion.
"""

from dataclasses import asdict, dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import special

from .exceptions import ConvergenceError, DomainError

__all__ = [
    "SplitConstants",
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_quantile",
    "chi2_cdf",
    "partial_moments",
    "truncated_moment",
    "lambda1",
    "lambda2",
    "tail_moment",
    "solve_q_tilde",
    "gap_variance_constants",
    "compute_constants",
    "default_constants",
    "printed_c1_formulas",
    "PAPER_Q_TILDE",
]

# Rounded split value quoted alongside the 20/60/20 rule.  The reported
# C/K constants were evaluated at this rounded value, not at the exact root.
PAPER_Q_TILDE = 0.19808

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def std_normal_cdf(x):
    """Standard normal CDF (``scipy.special.ndtr``)."""
    return special.ndtr(x)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def std_normal_quantile(p):
    """Inverse of the standard normal CDF.

    Raises
    ------
    DomainError
        If any ``p`` lies outside the open interval (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise DomainError(f"normal quantile needs 0 < p < 1, got {p!r}")
    out = special.ndtri(arr)
    return float(out) if np.ndim(out) == 0 else out


def chi2_cdf(x, k):
    """Regularized lower incomplete gamma ``P(k/2, x/2)``."""
    if k < 1 or int(k) != k:
        raise DomainError(f"degrees of freedom must be a positive integer, got {k!r}")
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise DomainError("chi-square CDF is defined for x >= 0")
    out = special.gammainc(0.5 * k, 0.5 * arr)
    return float(out) if np.ndim(out) == 0 else out


def _edge_terms(x, kmax):
    # x**j * phi(x) for j = 0..kmax; vanishes at +-inf
    if math.isinf(x):
        return np.zeros(kmax + 1)
    f = math.exp(-0.5 * x * x) / _SQRT_2PI
    return np.array([x**j * f for j in range(kmax + 1)])


def _normal_mass(lo, hi):
    if lo >= 0.0:
        return float(special.ndtr(-lo) - special.ndtr(-hi))
    return float(special.ndtr(hi) - special.ndtr(lo))


def partial_moments(lo, hi, kmax=4):
    """Return ``[int_lo^hi v**k phi(v) dv for k in 0..kmax]``.

    Uses ``P_k = (k-1) P_{k-2} + lo**(k-1) phi(lo) - hi**(k-1) phi(hi)``.
    Infinite bounds are allowed.
    """
    if not lo < hi:
        raise DomainError(f"need lo < hi, got ({lo}, {hi})")
    el = _edge_terms(lo, kmax)
    eh = _edge_terms(hi, kmax)
    out = np.zeros(kmax + 1)
    out[0] = _normal_mass(lo, hi)
    if kmax >= 1:
        out[1] = el[0] - eh[0]
    for k in range(2, kmax + 1):
        out[k] = (k - 1) * out[k - 2] + el[k - 1] - eh[k - 1]
    return out


def _band_edges(a, b):
    if not (0.0 <= a < b <= 1.0):
        raise DomainError(f"need 0 <= a < b <= 1, got ({a}, {b})")
    lo = -math.inf if a == 0.0 else float(special.ndtri(a))
    hi = math.inf if b == 1.0 else float(special.ndtri(b))
    return lo, hi


def truncated_moment(k, a, b):
    """``E[V**k | Phi^-1(a) < V < Phi^-1(b)]`` for a standard normal ``V``."""
    lo, hi = _band_edges(a, b)
    return float(partial_moments(lo, hi, k)[k] / (b - a))


def lambda1(a, b):
    """Conditional mean of a standard normal on the quantile band (a, b)."""
    lo, hi = _band_edges(a, b)
    return float((_edge_terms(lo, 0)[0] - _edge_terms(hi, 0)[0]) / (b - a))


def lambda2(a, b):
    """Conditional second moment of a standard normal on the quantile band (a, b)."""
    lo, hi = _band_edges(a, b)
    return float(1.0 + (_edge_terms(lo, 1)[1] - _edge_terms(hi, 1)[1]) / (b - a))


def tail_moment(k, a=0.0, b=None):
    """Third or fourth conditional moment on a quantile band.

    Defaults to the lower ``q_tilde`` tail ``(0, q_tilde)``.
    """
    if k not in (3, 4):
        raise DomainError(f"tail_moment supports k in {{3, 4}}, got {k!r}")
    if b is None:
        b = solve_q_tilde()
    return truncated_moment(k, a, b)


def _equilibrium(x):
    # -x Phi(x) - phi(x) (1 - 2 Phi(x)); zero at the split point x_tilde < 0
    p = special.ndtr(x)
    f = math.exp(-0.5 * x * x) / _SQRT_2PI
    g = -x * p - f * (1.0 - 2.0 * p)
    dg = -p - 2.0 * x * f * p + 2.0 * f * f
    return g, dg


def solve_q_tilde(tol=1e-12, max_iter=200):
    """Split probability equalising tail and central conditional variances.

    Bracketing bisection on ``x = Phi^-1(q)`` followed by Newton polishing.
    Returns ``q = Phi(x)``.
    """
    lo, hi = -3.0, -1e-3
    glo, _ = _equilibrium(lo)
    ghi, _ = _equilibrium(hi)
    if not (glo < 0.0 < ghi):
        raise ConvergenceError("equilibrium equation is not bracketed")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        gm, _ = _equilibrium(mid)
        if gm < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6:
            break
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        g, dg = _equilibrium(x)
        step = g / dg
        x_new = x - step
        if not lo <= x_new <= hi:
            x_new = 0.5 * (lo + hi)
        x = x_new
        g, _ = _equilibrium(x)
        if g < 0.0:
            lo = x
        else:
            hi = x
        if abs(g) < tol and abs(step) < 1e-15 + 1e-3 * tol:
            return float(special.ndtr(x))
    g, _ = _equilibrium(x)
    if abs(g) < tol:
        return float(special.ndtr(x))
    raise ConvergenceError(f"q_tilde solver residual {g:.3e} above {tol:.1e}")


def _bands(q):
    return ((0.0, q), (q, 1.0 - q), (1.0 - q, 1.0))


def _influence_polys(v_rep, bands, weights, lam1, lam2, edges):
    """Coefficients (c0, c1, c2) of the combined influence function at ``v_rep``.

    Each band contributes ``w / (b - a) * (Z2 - 2 lambda1 Z1)`` where ``Z1`` and
    ``Z2`` are the trimmed-sum influence functions of ``V`` and ``V**2``.
    """
    c = np.zeros(3)
    for (a, b), w, l1, l2, (lo, hi) in zip(bands, weights, lam1, lam2, edges):
        if w == 0.0:
            continue
        p = np.zeros(3)  # Z2 - 2 l1 Z1 as polynomial in v
        inside = lo < v_rep < hi
        if inside:
            p += [-l2, 0.0, 1.0]
            p += -2.0 * l1 * np.array([-l1, 1.0, 0.0])
        if a > 0.0:
            ind = 1.0 if v_rep <= lo else 0.0
            p[0] += (ind - a) * ((lo * lo - l2) - 2.0 * l1 * (lo - l1))
        if b < 1.0:
            ind = 1.0 if v_rep <= hi else 0.0
            p[0] += (b - ind) * ((hi * hi - l2) - 2.0 * l1 * (hi - l1))
        c += w / (b - a) * p
    return c


def gap_variance_constants(weights, q):
    """Variance constants ``(C1, C2, C3)`` for the gap ``sum_j w_j r_hat_{A_j}``.

    ``weights`` refers to the three 20/60/20 bands; ``(1, -2, 1)`` gives the
    symmetric gap, ``(1, -1, 0)`` the one-sided gap.  The asymptotic variance
    of ``sqrt(n) * gap`` for a bivariate normal with margins written as
    ``X_j = mu_j + sigma_j (cos g_j V + sin g_j W)`` is
    ``s1^2 s2^2 (cos^2 g1 cos^2 g2 C1 + sin^2(g1 + g2) C2 + sin^2 g1 sin^2 g2 C3)``.
    """
    bands = _bands(q)
    weights = [float(w) for w in weights]
    edges = [_band_edges(a, b) for a, b in bands]
    pm = [partial_moments(lo, hi, 4) for lo, hi in edges]
    lam1 = [m[1] / (b - a) for m, (a, b) in zip(pm, bands)]
    lam2 = [m[2] / (b - a) for m, (a, b) in zip(pm, bands)]

    # pieces between consecutive finite band edges
    cuts = sorted({e for lo_hi in edges for e in lo_hi if math.isfinite(e)})
    knots = [-math.inf] + cuts + [math.inf]
    mean = 0.0
    c1 = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        if math.isinf(lo):
            rep = hi - 1.0
        elif math.isinf(hi):
            rep = lo + 1.0
        else:
            rep = 0.5 * (lo + hi)
        c = _influence_polys(rep, bands, weights, lam1, lam2, edges)
        mom = partial_moments(lo, hi, 4)
        mean += c @ mom[:3]
        sq = np.convolve(c, c)
        c1 += sq @ mom[:5]
    c1 -= mean * mean

    c2 = 0.0
    c3 = 0.0
    for (a, b), w, l1, l2 in zip(bands, weights, lam1, lam2):
        c2 += w * w * (l2 - l1 * l1) / (b - a)
        c3 += 2.0 * w * w / (b - a)
    return float(c1), float(c2), float(c3)


@dataclass(frozen=True)
class SplitConstants:
    """All numbers fixed by the 20/60/20 split.

    ``*_t`` fields belong to the one-sided statistics ``L`` and ``R``.
    """

    q_tilde: float
    lambda1_tail: float
    lambda2_tail: float
    kappa_tail: float
    xi_tail: float
    lambda2_mid: float
    c1: float
    c2: float
    c3: float
    k1: float
    k2: float
    k3: float
    c1_t: float
    c2_t: float
    c3_t: float
    k1_t: float
    k2_t: float
    k3_t: float

    def as_dict(self):
        return asdict(self)


def compute_constants(q_tilde=None):
    """Evaluate every split constant.

    Parameters
    ----------
    q_tilde : float, optional
        Split probability.  Defaults to the exact root from
        :func:`solve_q_tilde`; pass :data:`PAPER_Q_TILDE` to reproduce the
        published four-decimal values.
    """
    q = solve_q_tilde() if q_tilde is None else float(q_tilde)
    if not 0.0 < q < 0.5:
        raise DomainError(f"q_tilde must lie in (0, 0.5), got {q}")
    c1, c2, c3 = gap_variance_constants((1.0, -2.0, 1.0), q)
    c1_t, c2_t, c3_t = gap_variance_constants((1.0, -1.0, 0.0), q)
    return SplitConstants(
        q_tilde=q,
        lambda1_tail=lambda1(0.0, q),
        lambda2_tail=lambda2(0.0, q),
        kappa_tail=truncated_moment(4, 0.0, q),
        xi_tail=truncated_moment(3, 0.0, q),
        lambda2_mid=lambda2(q, 1.0 - q),
        c1=c1,
        c2=c2,
        c3=c3,
        k1=c1 - 4.0 * c2 + c3,
        k2=c2 - c3,
        k3=c3,
        c1_t=c1_t,
        c2_t=c2_t,
        c3_t=c3_t,
        k1_t=c1_t - 4.0 * c2_t + c3_t,
        k2_t=c2_t - c3_t,
        k3_t=c3_t,
    )


@lru_cache(maxsize=None)
def default_constants():
    """Constants at the exact split point, computed once per process."""
    return compute_constants()


def printed_c1_formulas(q):
    """Evaluate the long closed-form expressions for C1 and its one-sided analogue
    exactly as typeset in the source derivation.

    They are kept only as a diagnostic: as printed they do not reproduce the
    quoted values (about 3.199 and 1.279), whereas :func:`gap_variance_constants`
    does and agrees with direct simulation.
    """
    a = float(special.ndtri(q))
    l11 = lambda1(0.0, q)
    l12 = lambda2(0.0, q)
    l21 = 0.0
    l22 = lambda2(q, 1.0 - q)
    k1 = truncated_moment(4, 0.0, q)
    k2 = truncated_moment(4, q, 1.0 - q)
    x1 = truncated_moment(3, 0.0, q)
    lam = {(1, 1): l11, (1, 2): l12, (2, 1): l21, (2, 2): l22}

    def M(i, j, k):
        return a**k - lam[(i, j)]

    def N(k):
        return q - a**k

    c1 = (
        2 * k1 + 4 * k2 - 8 * l11 * x1 + 2 * q * l12**2
        + 2 * q * (1 - q) * (M(1, 2, 2) ** 2 + 4 * M(2, 2, 2) ** 2)
        + 2 * (q * M(1, 2, 2)) ** 2 + 4 * q * l22**2
        + 8 * M(2, 2, 2) * M(2, 2, 1) ** 2 * (l22 * (2 * q - l22) - q)
        + 8 * l11**2 * (2 * q * l12 - q * l11**2 + q * (1 - q) * M(1, 1, 1))
        - 8 * l11 * (q * (1 - q) * M(1, 1, 1) * M(1, 2, 2) + a**2 * M(1, 2, 1) ** 2 * M(1, 1, 1))
        + 16 * l11 * N(1) * ((1 - 2 * q) * ((1 - q) * l11 + q * l22 - q - l11 * l22)
                             + N(2) * (1 - 2 * q) * l12)
    )
    c1_t = (
        k1 + k2 - 4 * l11 * x1 + q * (l12**2 + l22**2)
        + q * (1 - q) * (M(1, 2, 2) ** 2 + 2 * M(2, 2, 2) ** 2)
        + 2 * M(2, 2, 2) * M(2, 2, 1) ** 2 * (l22 * (2 * q - l22) - q)
        + 4 * l11**2 * (2 * q * l12 - q * l11**2 + q * (1 - q) * M(1, 1, 1))
        + 4 * l11 * (q * (1 - q) * M(1, 1, 1) * M(1, 2, 2))
        + 4 * l11 * N(1) * ((1 - 2 * q) * ((1 - q) * l11 + q * l22 - q - l11 * l22)
                            + N(2) * (1 - 2 * q))
        - 2 * N(2) * ((1 - 2 * q) * (q + l11 * l22 - (1 - q) * l11 - q * l22)
                      + N(2) * (1 - 2 * q) * l12)
    )
    return c1, c1_t
