"""Quickest change detection over the detector's binary output stream.

Before the change the detector emits 1 with probability ``fpr``; after it,
with some unknown ``tpr`` in ``[tpr_lower, tpr_max]``.  Three charts are
provided: a single Bernoulli CUSUM, a windowed Bernoulli GLR chart that
estimates the post-change rate, and a bank of CUSUMs on a quadratic TPR grid
that approximates the GLR chart.

Statistics accumulate natural-log likelihood ratios.  Every chart resets to
its zero state after an alarm and keeps running.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from zbdetect.errors import DomainError, NotDetectable


def _check_prob(name: str, p: float) -> None:
    if not (0.0 < p < 1.0):
        raise DomainError(f"{name} must lie in (0, 1), got {p}")


def bernoulli_llr(i: int, p1: float, p0: float) -> float:
    """Log-likelihood ratio of one binary observation under Bernoulli(p1) vs Bernoulli(p0)."""
    _check_prob("p1", p1)
    _check_prob("p0", p0)
    if i:
        return math.log(p1 / p0)
    return math.log((1.0 - p1) / (1.0 - p0))


def kl_bernoulli(p1: float, p0: float) -> float:
    """KL divergence I(P1, P0) between Bernoulli(p1) and Bernoulli(p0)."""
    _check_prob("p1", p1)
    _check_prob("p0", p0)
    return p1 * math.log(p1 / p0) + (1.0 - p1) * math.log((1.0 - p1) / (1.0 - p0))


def threshold_from_arl(arl: float, fpr: float) -> float:
    """``h = log10(ARL * FPR)``; the recipe is kept in base 10 as published."""
    if not arl > 0:
        raise DomainError(f"arl must be > 0, got {arl}")
    _check_prob("fpr", fpr)
    if arl * fpr <= 1.0:
        raise DomainError(f"arl * fpr must exceed 1 for a positive threshold, got {arl * fpr}")
    return math.log10(arl * fpr)


def approx_delay(h: float, kl: float) -> float:
    """First-order worst-case mean delay ``h / I(P1, P0)``."""
    if not kl > 0:
        raise DomainError(f"KL divergence must be > 0 (change not detectable), got {kl}")
    return h / kl


@dataclass(frozen=True)
class BernoulliChangeModel:
    fpr: float
    tpr_lower: float
    epsilon: float = 0.01

    def __post_init__(self):
        _check_prob("fpr", self.fpr)
        if not (0.0 < self.epsilon < 1.0):
            raise DomainError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not (self.fpr < self.tpr_lower <= self.tpr_max):
            raise NotDetectable(
                f"need fpr < tpr_lower <= tpr_max, got fpr={self.fpr}, "
                f"tpr_lower={self.tpr_lower}, tpr_max={self.tpr_max}"
            )

    @property
    def tpr_max(self) -> float:
        return 1.0 - self.epsilon

    @classmethod
    def from_bounds(cls, fpr_upper: float, tpr_lower: float, epsilon: float = 0.01, fpr_floor: float = 1e-3):
        """Model from detector bounds, flooring a zero FPR and capping the TPR bound at ``1 - epsilon``."""
        return cls(max(fpr_upper, fpr_floor), min(tpr_lower, 1.0 - epsilon), epsilon)


@dataclass
class AlarmEvent:
    time: int
    statistic: float
    chart: str
    tau_hat: int | None = None
    chart_index: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.chart_index is None:
            del d["chart_index"]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# ---------------------------------------------------------------------------
# CUSUM


@dataclass
class CusumChart:
    model: BernoulliChangeModel
    h: float
    tpr: float | None = None
    s: float = 0.0
    k: int = 0

    def __post_init__(self):
        if self.tpr is None:
            self.tpr = self.model.tpr_max
        _check_prob("tpr", self.tpr)
        if self.h < 0:
            raise DomainError(f"threshold must be >= 0, got {self.h}")
        self._inc = (bernoulli_llr(0, self.tpr, self.model.fpr), bernoulli_llr(1, self.tpr, self.model.fpr))

    def step(self, i: int) -> AlarmEvent | None:
        self.k += 1
        self.s = max(0.0, self.s + self._inc[1 if i else 0])
        if self.s > self.h:
            alarm = AlarmEvent(self.k, self.s, "cusum")
            self.s = 0.0
            return alarm
        return None


def cusum_step(chart: CusumChart, i: int) -> tuple[CusumChart, AlarmEvent | None]:
    return chart, chart.step(i)


def bank_tprs(model: BernoulliChangeModel, u: int) -> np.ndarray:
    """Quadratic TPR grid spanning ``[tpr_lower, tpr_max]``; chart ``u`` sits at ``tpr_max``."""
    if u < 1:
        raise DomainError(f"u must be >= 1, got {u}")
    i = np.arange(1, u + 1, dtype=float)
    grid = model.tpr_lower + (model.tpr_max - model.tpr_lower) * i**2 / u**2
    grid = np.minimum(grid, model.tpr_max)
    grid[-1] = model.tpr_max
    return grid


class CusumBatch:
    """``trials`` independent copies of a CUSUM bank, stepped together.

    Each row holds ``len(tprs)`` CUSUM statistics.  A row alarms when any of
    its charts exceeds ``h``; the lowest crossing index is reported and every
    chart in that row resets.
    """

    def __init__(self, model: BernoulliChangeModel, tprs, h: float, trials: int = 1):
        if h < 0:
            raise DomainError(f"threshold must be >= 0, got {h}")
        self.model = model
        self.tprs = np.asarray(tprs, dtype=float)
        self.h = float(h)
        # same scalar function as CusumChart so single charts and banks agree bit for bit
        self._inc0 = np.array([bernoulli_llr(0, p, model.fpr) for p in self.tprs])
        self._inc1 = np.array([bernoulli_llr(1, p, model.fpr) for p in self.tprs])
        self.s = np.zeros((trials, self.tprs.size))

    def keep(self, rows: np.ndarray) -> None:
        self.s = self.s[rows]

    def step(self, obs: np.ndarray):
        obs = np.asarray(obs).astype(bool)
        self.s += np.where(obs[:, None], self._inc1, self._inc0)
        np.maximum(self.s, 0.0, out=self.s)
        crossed = self.s > self.h
        alarm = crossed.any(axis=1)
        index = np.where(alarm, crossed.argmax(axis=1), -1)
        rows = np.arange(self.s.shape[0])
        stat = self.s.max(axis=1)
        stat[alarm] = self.s[rows[alarm], index[alarm]]
        self.s[alarm] = 0.0
        return alarm, stat, np.full(alarm.shape, -1), index


@dataclass
class CusumBank:
    model: BernoulliChangeModel
    u: int
    h: float
    k: int = 0

    def __post_init__(self):
        self._batch = CusumBatch(self.model, bank_tprs(self.model, self.u), self.h, 1)

    @property
    def tprs(self) -> np.ndarray:
        return self._batch.tprs

    @property
    def statistics(self) -> np.ndarray:
        return self._batch.s[0].copy()

    @property
    def charts(self) -> list[CusumChart]:
        """Snapshot of the bank as standalone charts."""
        return [
            CusumChart(self.model, self.h, float(p), float(s), self.k)
            for p, s in zip(self.tprs, self._batch.s[0])
        ]

    def step(self, i: int) -> AlarmEvent | None:
        self.k += 1
        alarm, stat, _, index = self._batch.step(np.array([i]))
        if alarm[0]:
            return AlarmEvent(self.k, float(stat[0]), "bank", chart_index=int(index[0]) + 1)
        return None


def make_bank(model: BernoulliChangeModel, u: int, h: float) -> CusumBank:
    return CusumBank(model, u, h)


def bank_step(bank: CusumBank, i: int) -> tuple[CusumBank, AlarmEvent | None]:
    return bank, bank.step(i)


# ---------------------------------------------------------------------------
# GLR


def glr_table(model: BernoulliChangeModel, m: int) -> np.ndarray:
    """Segment log-likelihood ratio indexed by ``[ones, length]``.

    The post-change rate of a segment is its sample mean clamped to
    ``[tpr_lower, tpr_max]``.  Entries with ``ones > length`` are ``-inf``.
    """
    ones = np.arange(m + 1, dtype=float)[:, None]
    length = np.arange(m + 1, dtype=float)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.clip(ones / length, model.tpr_lower, model.tpr_max)
    value = ones * np.log(p / model.fpr) + (length - ones) * np.log((1.0 - p) / (1.0 - model.fpr))
    value[(ones > length) | (length == 0)] = -np.inf
    return value


class GlrBatch:
    """``trials`` independent windowed Bernoulli GLR charts, stepped together.

    ``ones[:, d]`` counts the ones among the last ``d + 1`` observations, so
    the candidate change points are ``tau = k - d - 1`` for ``d < m``.
    """

    def __init__(self, model: BernoulliChangeModel, h: float, m: int = 200, trials: int = 1):
        if m < 1:
            raise DomainError(f"window must be >= 1, got {m}")
        if h < 0:
            raise DomainError(f"threshold must be >= 0, got {h}")
        self.model = model
        self.h = float(h)
        self.m = int(m)
        self._table = glr_table(model, m)
        self._lengths = np.arange(1, m + 1)
        self.ones = np.zeros((trials, m), dtype=np.int32)
        self.k = np.zeros(trials, dtype=np.int64)
        self.since_reset = np.zeros(trials, dtype=np.int64)

    def keep(self, rows: np.ndarray) -> None:
        self.ones = self.ones[rows]
        self.k = self.k[rows]
        self.since_reset = self.since_reset[rows]

    def step(self, obs: np.ndarray):
        obs = np.asarray(obs).astype(np.int32)
        self.k += 1
        self.since_reset += 1
        self.ones[:, 1:] = self.ones[:, :-1] + obs[:, None]
        self.ones[:, 0] = obs
        # Columns d >= since_reset describe segments padded with phantom zeros.
        # With tpr_lower > fpr every extra zero strictly lowers the likelihood
        # ratio, so those columns never beat the real segment with the same
        # ones and no masking is needed.
        values = self._table[self.ones, self._lengths]
        d_star = values.argmax(axis=1)
        stat = np.maximum(values[np.arange(values.shape[0]), d_star], 0.0)
        tau = np.where(stat > 0, self.k - d_star - 1, -1)
        alarm = stat > self.h
        self.ones[alarm] = 0
        self.since_reset[alarm] = 0
        return alarm, stat, tau, np.full(alarm.shape, -1)


@dataclass
class GlrChart:
    model: BernoulliChangeModel
    h: float
    m: int = 200
    k: int = 0
    last_stat: float = 0.0
    tau_hat: int | None = None
    window: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        self._batch = GlrBatch(self.model, self.h, self.m, 1)
        self.window = deque(self.window, maxlen=self.m)

    def step(self, i: int) -> AlarmEvent | None:
        self.k += 1
        self._batch.k[0] = self.k - 1
        alarm, stat, tau, _ = self._batch.step(np.array([1 if i else 0]))
        self.window.append(1 if i else 0)
        self.last_stat = float(stat[0])
        self.tau_hat = int(tau[0]) if tau[0] >= 0 else None
        if alarm[0]:
            event = AlarmEvent(self.k, self.last_stat, "glr", tau_hat=self.tau_hat)
            self.window.clear()
            self.last_stat = 0.0
            self.tau_hat = None
            return event
        return None


def glr_step(chart: GlrChart, i: int) -> tuple[GlrChart, AlarmEvent | None]:
    return chart, chart.step(i)
