"""Benchmark ordering, band (quantile-conditioned) moments and the equilibrium gap."""

from dataclasses import dataclass
import math

import numpy as np

from .constants import default_constants, lambda1, lambda2
from .copulas import BivariateSample
from .exceptions import DegenerateSampleError, DomainError, SubsampleTooSmallError

__all__ = [
    "LoadingFactor",
    "QuantileSplit",
    "OrderedSample",
    "CondMoments",
    "benchmark",
    "order_by_benchmark",
    "band_bounds",
    "twenty_sixty_twenty",
    "cond_moments",
    "band_covariances",
    "theoretical_cond_cov",
    "equilibrium_gap",
    "conditional_corr_matrices",
]


@dataclass(frozen=True)
class LoadingFactor:
    alpha1: float = 1.0
    alpha2: float = 1.0

    def __post_init__(self):
        if self.alpha1 == 0 and self.alpha2 == 0:
            raise DomainError("loading factor must be nonzero")

    def as_tuple(self):
        return (float(self.alpha1), float(self.alpha2))


@dataclass(frozen=True)
class QuantileSplit:
    a: float
    b: float

    def __post_init__(self):
        if not 0.0 <= self.a < self.b <= 1.0:
            raise DomainError(f"need 0 <= a < b <= 1, got ({self.a}, {self.b})")


@dataclass(frozen=True)
class OrderedSample:
    perm: np.ndarray
    sample: BivariateSample

    @property
    def x1(self):
        return self.sample.x1[self.perm]

    @property
    def x2(self):
        return self.sample.x2[self.perm]


@dataclass(frozen=True)
class CondMoments:
    mu1: float
    mu2: float
    r: float
    m: int


def _alpha(alpha):
    if alpha is None:
        return LoadingFactor()
    if isinstance(alpha, LoadingFactor):
        return alpha
    return LoadingFactor(*alpha)


def benchmark(sample, alpha=None):
    a1, a2 = _alpha(alpha).as_tuple()
    return a1 * sample.x1 + a2 * sample.x2


def order_by_benchmark(sample, alpha=None):
    y = benchmark(sample, alpha)
    return OrderedSample(np.argsort(y, kind="stable"), sample)


def band_bounds(n, split):
    """0-based half-open index range of ranks ``floor(n a)+1 .. floor(n b)``."""
    return math.floor(n * split.a), math.floor(n * split.b)


def twenty_sixty_twenty(q=None):
    if q is None:
        q = default_constants().q_tilde
    return (QuantileSplit(0.0, q), QuantileSplit(q, 1.0 - q), QuantileSplit(1.0 - q, 1.0))


def cond_moments(ordered, split):
    n = ordered.sample.n
    lo, hi = band_bounds(n, split)
    m = hi - lo
    if m < 2:
        raise SubsampleTooSmallError(f"band ({split.a}, {split.b}) holds {m} points", m=m, n=n)
    idx = ordered.perm[lo:hi]
    x1 = ordered.sample.x1[idx]
    x2 = ordered.sample.x2[idx]
    mu1 = x1.mean()
    mu2 = x2.mean()
    r = np.mean((x1 - mu1) * (x2 - mu2))
    return CondMoments(float(mu1), float(mu2), float(r), m)


def band_covariances(x1, x2, alpha=(1.0, 1.0), q=None):
    """Covariances on the three 20/60/20 bands, batched over leading axes.

    ``x1`` and ``x2`` have shape ``(..., n)``; the result has shape ``(..., 3)``.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    n = x1.shape[-1]
    splits = twenty_sixty_twenty(q)
    cuts = [band_bounds(n, s) for s in splits]
    if min(hi - lo for lo, hi in cuts) < 2:
        raise SubsampleTooSmallError(f"n={n} leaves a band with fewer than 2 points", n=n)
    a1, a2 = _alpha(alpha).as_tuple()
    order = np.argsort(a1 * x1 + a2 * x2, axis=-1, kind="stable")
    s1 = np.take_along_axis(x1, order, axis=-1)
    s2 = np.take_along_axis(x2, order, axis=-1)
    out = np.empty(x1.shape[:-1] + (3,))
    for j, (lo, hi) in enumerate(cuts):
        b1 = s1[..., lo:hi]
        b2 = s2[..., lo:hi]
        d1 = b1 - b1.mean(axis=-1, keepdims=True)
        d2 = b2 - b2.mean(axis=-1, keepdims=True)
        out[..., j] = np.mean(d1 * d2, axis=-1)
    return out


def theoretical_cond_cov(mu, sigma, alpha, split):
    """Covariance of a Gaussian vector given its benchmark lies in a quantile band.

    ``cov + (Var[Y | A] - Var[Y]) beta beta^T`` with ``beta = sigma alpha / Var[Y]``.
    The mean does not enter; it is accepted for signature symmetry.
    """
    sigma = np.asarray(sigma, dtype=float)
    if isinstance(alpha, LoadingFactor):
        alpha = alpha.as_tuple()
    alpha = np.asarray(alpha, dtype=float)
    if sigma.shape != (alpha.size, alpha.size) or not np.allclose(sigma, sigma.T):
        raise DomainError("sigma must be a symmetric matrix matching alpha")
    if np.linalg.eigvalsh(sigma).min() <= 0:
        raise DegenerateSampleError("sigma is not positive definite")
    var_y = float(alpha @ sigma @ alpha)
    beta = sigma @ alpha / var_y
    scale = lambda2(split.a, split.b) - lambda1(split.a, split.b) ** 2
    return sigma + (var_y * scale - var_y) * np.outer(beta, beta)


def equilibrium_gap(sample, alpha=None, constants=None):
    q = (constants or default_constants()).q_tilde
    r = band_covariances(sample.x1, sample.x2, _alpha(alpha).as_tuple(), q)
    return float(r[0] - 2.0 * r[1] + r[2])


def conditional_corr_matrices(data, alpha=None, q=None):
    """Pearson correlation matrices of ``data`` on the three benchmark bands."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] < 2:
        raise DomainError("data must be an n x k matrix with k >= 2")
    n, k = data.shape
    alpha = np.ones(k) if alpha is None else np.asarray(alpha, dtype=float)
    if alpha.shape != (k,) or not np.any(alpha):
        raise DomainError("alpha must be a nonzero k-vector")
    order = np.argsort(data @ alpha, kind="stable")
    mats = []
    for split in twenty_sixty_twenty(q):
        lo, hi = band_bounds(n, split)
        if hi - lo < k + 1:
            raise SubsampleTooSmallError(f"band ({split.a:.5f}, {split.b:.5f}) too small for k={k}", m=hi - lo)
        band = data[order[lo:hi]]
        sd = band.std(axis=0)
        if np.any(sd == 0):
            raise DegenerateSampleError("constant column inside a band", band=(split.a, split.b))
        centered = (band - band.mean(axis=0)) / sd
        corr = centered.T @ centered / (hi - lo)
        np.fill_diagonal(corr, 1.0)
        mats.append(corr)
    return tuple(mats)
