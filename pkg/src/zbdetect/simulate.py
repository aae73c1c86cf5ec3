"""Monte Carlo measurement of run lengths and detection delays.

Trials run vectorized: every chart kind has a batch runner stepping all
live trials at once.  Each trial draws one uniform number per step from its
own generator seeded with ``(seed, trial)``, so a trial's stream does not
depend on how many trials run beside it or on the chart being measured
(different charts measured with the same seed see identical streams).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from zbdetect.charts import (
    BernoulliChangeModel,
    CusumBatch,
    GlrBatch,
    bank_tprs,
    threshold_from_arl,
)

CHART_KINDS = ("glr", "cusum", "bank")
ARL_CAP = 10**6


@dataclass(frozen=True)
class ChartConfig:
    kind: str = "glr"
    fpr: float = 0.01
    tpr_lower: float = 0.6
    epsilon: float = 0.01
    h: float | None = None
    arl: float | None = None
    m: int = 200
    u: int = 128
    tpr: float | None = None  # post-change rate of a single CUSUM; tpr_max when unset

    def __post_init__(self):
        if self.kind not in CHART_KINDS:
            raise ValueError(f"chart kind must be one of {CHART_KINDS}, got {self.kind!r}")
        if self.h is None and self.arl is None:
            raise ValueError("set either h or arl")

    @property
    def model(self) -> BernoulliChangeModel:
        return BernoulliChangeModel(self.fpr, self.tpr_lower, self.epsilon)

    @property
    def threshold(self) -> float:
        if self.h is not None:
            return float(self.h)
        return threshold_from_arl(self.arl, self.fpr)

    def with_(self, **changes) -> ChartConfig:
        return ChartConfig(**{**asdict(self), **changes})


def make_runner(cfg: ChartConfig, trials: int):
    model = cfg.model
    if cfg.kind == "glr":
        return GlrBatch(model, cfg.threshold, cfg.m, trials)
    if cfg.kind == "bank":
        return CusumBatch(model, bank_tprs(model, cfg.u), cfg.threshold, trials)
    tpr = model.tpr_max if cfg.tpr is None else cfg.tpr
    return CusumBatch(model, [tpr], cfg.threshold, trials)


@dataclass(frozen=True)
class Source:
    """Where binary observations come from: Bernoulli(p), or resampling a pool of
    detector decisions with replacement."""

    p: float | None = None
    pool: tuple[int, ...] | None = None
    name: str = ""

    def __post_init__(self):
        if (self.p is None) == (self.pool is None):
            raise ValueError("give exactly one of p or pool")
        if self.pool is not None and len(self.pool) == 0:
            raise ValueError("empty pool")

    @classmethod
    def bernoulli(cls, p: float) -> Source:
        return cls(p=float(p), name=f"bernoulli({p})")

    @classmethod
    def from_decisions(cls, decisions, name: str = "pool") -> Source:
        return cls(pool=tuple(int(v) for v in np.asarray(decisions).reshape(-1)), name=name)

    @property
    def rate(self) -> float:
        return self.p if self.p is not None else float(np.mean(self.pool))

    def transform(self, u: np.ndarray) -> np.ndarray:
        if self.p is not None:
            return (u < self.p).astype(np.int8)
        pool = np.asarray(self.pool, dtype=np.int8)
        return pool[np.minimum((u * len(pool)).astype(np.int64), len(pool) - 1)]


@dataclass(frozen=True)
class StreamScenario:
    """Observations ``1..change_time`` come from ``pre``, later ones from ``post``."""

    pre: Source
    post: Source
    change_time: int
    length: int
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.change_time <= self.length):
            raise ValueError(f"need 0 < change_time <= length, got {self.change_time}, {self.length}")


@dataclass
class FirstAlarms:
    time: np.ndarray  # 0 where censored
    statistic: np.ndarray
    tau_hat: np.ndarray  # -1 when the chart gives no estimate
    chart_index: np.ndarray


def run_first_alarms(
    cfg: ChartConfig,
    pre: Source,
    post: Source,
    change_time: int,
    cap: int,
    trials: int,
    seed: int,
) -> FirstAlarms:
    """Step ``trials`` streams until each alarms once or ``cap`` steps pass."""
    runner = make_runner(cfg, trials)
    rngs = [np.random.default_rng([seed, t]) for t in range(trials)]
    live = np.arange(trials)
    out = FirstAlarms(
        np.zeros(trials, dtype=np.int64),
        np.zeros(trials),
        np.full(trials, -1, dtype=np.int64),
        np.full(trials, -1, dtype=np.int64),
    )
    block = min(cap, 1024)
    t = 0
    while t < cap and live.size:
        nb = min(block, cap - t)
        u = np.stack([rngs[i].random(nb) for i in live])
        steps = np.arange(t + 1, t + nb + 1)
        before = steps <= change_time
        obs = np.where(before, pre.transform(u), post.transform(u))
        for j in range(nb):
            alarm, stat, tau, index = runner.step(obs[:, j])
            if alarm.any():
                hit = live[alarm]
                out.time[hit] = t + j + 1
                out.statistic[hit] = stat[alarm]
                out.tau_hat[hit] = tau[alarm]
                out.chart_index[hit] = index[alarm]
                keep = ~alarm
                live = live[keep]
                obs = obs[keep]
                runner.keep(np.flatnonzero(keep))
                if not live.size:
                    break
        t += nb
    return out


def _mean_ci(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), float("nan")
    return float(x.mean()), float(1.96 * x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class ArlResult:
    mean_run_length: float
    ci_halfwidth: float
    alarmed: int
    censored: int
    false_alarm_rate: float  # alarms per observed step
    trials: int
    cap: int

    def to_dict(self) -> dict:
        return asdict(self)


def measure_arl(cfg: ChartConfig, trials: int, seed: int, cap: int = ARL_CAP) -> ArlResult:
    """Run length to the first (false) alarm on pure pre-change Bernoulli(fpr) streams.

    Runs with no alarm within ``cap`` steps are censored: they are excluded from
    the mean run length but their steps count in the false-alarm rate.
    """
    src = Source.bernoulli(cfg.fpr)
    res = run_first_alarms(cfg, src, src, cap, cap, trials, seed)
    alarmed = res.time > 0
    lengths = res.time[alarmed].astype(float)
    mean, ci = _mean_ci(lengths)
    steps = lengths.sum() + cap * int((~alarmed).sum())
    return ArlResult(mean, ci, int(alarmed.sum()), int((~alarmed).sum()), float(alarmed.sum() / steps), trials, cap)


@dataclass
class DelaySummary:
    mean: float
    ci_halfwidth: float
    std: float
    median: float
    q10: float
    q90: float
    n: int
    false_alarms: int
    censored: int
    trials: int
    median_tau_hat: float
    delays: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        del d["delays"]
        return d


def measure_delay(cfg: ChartConfig, scenario: StreamScenario, trials: int) -> DelaySummary:
    """Delay ``alarm_time - change_time`` over trials whose first alarm follows the change.

    A first alarm at or before ``change_time`` counts as a false alarm; no alarm
    within ``scenario.length`` steps counts as censored.
    """
    res = run_first_alarms(
        cfg, scenario.pre, scenario.post, scenario.change_time, scenario.length, trials, scenario.seed
    )
    valid = res.time > scenario.change_time
    delays = (res.time[valid] - scenario.change_time).astype(float)
    early = (res.time > 0) & ~valid
    mean, ci = _mean_ci(delays)
    taus = res.tau_hat[valid]
    taus = taus[taus >= 0]
    if delays.size:
        std = float(delays.std(ddof=1)) if delays.size > 1 else 0.0
        q10, median, q90 = (float(v) for v in np.quantile(delays, [0.1, 0.5, 0.9]))
    else:
        std = q10 = median = q90 = float("nan")
    return DelaySummary(
        mean,
        ci,
        std,
        median,
        q10,
        q90,
        int(valid.sum()),
        int(early.sum()),
        int((res.time == 0).sum()),
        trials,
        float(np.median(taus)) if taus.size else float("nan"),
        delays,
    )


def bernoulli_scenario(fpr: float, tpr: float, change_time: int, length: int, seed: int) -> StreamScenario:
    return StreamScenario(Source.bernoulli(fpr), Source.bernoulli(tpr), change_time, length, seed)
