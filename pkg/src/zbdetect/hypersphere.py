"""Hypersphere geometry: sigma-cap area ratios, class capacity and the
Monte Carlo estimate of the false-negative upper bound (``RU_FNR``).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from zbdetect.errors import DimensionMismatch, DomainError

_TINY = 1e-300
_CF_EPS = 1e-16
_CF_MAX_ITER = 100_000


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    x, a, b = float(x), float(a), float(b)
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if not (a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b)):
        raise DomainError(f"a and b must be positive and finite, got a={a}, b={b}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        value = front * _beta_cf(a, b, x) / a
    else:
        value = 1.0 - front * _beta_cf(b, a, 1.0 - x) / b
    return min(1.0, max(0.0, value))


@dataclass(frozen=True)
class CapSpec:
    m: int
    sigma: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise DomainError(f"dimension m must be an integer >= 2, got {self.m}")
        if not (0.0 < self.sigma <= math.pi / 2):
            raise DomainError(f"sigma must lie in (0, pi/2], got {self.sigma}")


def sigma_cap_ratio(m: int, sigma: float) -> float:
    """Fraction of the unit sphere in R^m covered by a cap of angular radius ``sigma``.

    With ``h = 1 - cos(sigma)`` the argument ``2h - h^2`` equals ``sin(sigma)^2``,
    which is the form evaluated here (no cancellation for small sigma).
    """
    spec = CapSpec(m, sigma)
    x = math.sin(spec.sigma) ** 2
    return 0.5 * reg_inc_beta(x, (spec.m - 1) / 2.0, 0.5)


def max_classes(m: int, sigma: float) -> int:
    """Area-packing bound on the number of non-overlapping sigma-caps."""
    r0 = sigma_cap_ratio(m, sigma)
    if r0 == 0.0:
        raise DomainError(f"cap ratio underflows for m={m}, sigma={sigma}")
    # the tolerance keeps exact ratios such as 1/4 from flooring to 3
    return int(math.floor(1.0 / r0 + 1e-9))


def capacity_table(ms, sigmas) -> list[tuple[int, float, float, int]]:
    return [(int(m), float(s), sigma_cap_ratio(m, s), max_classes(m, s)) for m in ms for s in sigmas]


def uniform_sphere_sample(n: int, m: int, seed: int | np.random.Generator) -> np.ndarray:
    """``n`` points drawn uniformly from the unit sphere in R^m, shape ``(n, m)``."""
    if n < 1 or m < 2:
        raise DomainError(f"need n >= 1 and m >= 2, got n={n}, m={m}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.standard_normal((n, m))
    return g / np.sqrt(np.einsum("ij,ij->i", g, g))[:, None]


@dataclass(frozen=True)
class McConfig:
    m_points: int = 20_000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.m_points < 1 or self.workers < 1:
            raise ValueError("m_points and workers must be >= 1")


def binomial_halfwidth(p: float, n: int) -> float:
    return 1.96 * math.sqrt(p * (1.0 - p) / n)


_CHUNK = 8192


def _count_captured(boundaries, n: int, seed: int) -> int:
    rng = np.random.default_rng(seed)
    captured = 0
    remaining = n
    while remaining:
        k = min(remaining, _CHUNK)
        pts = uniform_sphere_sample(k, boundaries.dim, rng)
        captured += int(np.count_nonzero(boundaries.contains(pts.T)))
        remaining -= k
    return captured


def estimate_ru_fnr(boundaries, cfg: McConfig = McConfig(), dim: int | None = None) -> tuple[float, float]:
    """Share of uniform unit-sphere points captured by any class boundary.

    ``boundaries`` is anything with a ``dim`` attribute and a ``contains``
    method taking a ``(dim, q)`` matrix (a ``BoundaryModelSet``).  Samples are
    split across ``cfg.workers`` sub-streams seeded ``seed + worker``, so the
    result depends only on ``(seed, workers)``.  Returns the ratio and its 95%
    binomial half-width.
    """
    if dim is not None and dim != boundaries.dim:
        raise DimensionMismatch(f"boundary dimension {boundaries.dim} != sample dimension {dim}")
    if len(boundaries) == 0:
        return 0.0, 0.0
    base, extra = divmod(cfg.m_points, cfg.workers)
    sizes = [base + (1 if w < extra else 0) for w in range(cfg.workers)]
    jobs = [(size, cfg.seed + w) for w, size in enumerate(sizes) if size]
    if cfg.workers == 1:
        counts = [_count_captured(boundaries, n, s) for n, s in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            counts = list(pool.map(lambda job: _count_captured(boundaries, *job), jobs))
    ratio = sum(counts) / cfg.m_points
    return ratio, binomial_halfwidth(ratio, cfg.m_points)
