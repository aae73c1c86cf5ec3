"""Streaming monitor: CSV feature rows in, detector decisions and JSON alarms out.

Rows are processed strictly in order; each row's decision feeds every chart
before the next row is read.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable, Iterator

import numpy as np

from zbdetect.boundary import BoundaryModelSet, detect_inputs
from zbdetect.charts import AlarmEvent, CusumBank, CusumChart, GlrChart
from zbdetect.errors import MalformedRow, ModelMismatch
from zbdetect.head import FeatureExtractor, ZeroBiasHead
from zbdetect.serialize import check_compatible, input_width
from zbdetect.simulate import ChartConfig


def make_chart(cfg: ChartConfig):
    model = cfg.model
    if cfg.kind == "glr":
        return GlrChart(model, cfg.threshold, cfg.m)
    if cfg.kind == "bank":
        return CusumBank(model, cfg.u, cfg.threshold)
    return CusumChart(model, cfg.threshold, cfg.tpr)


def parse_rows(lines: Iterable[str], width: int) -> Iterator[np.ndarray]:
    """Yield one float vector per non-blank line; row numbers are 1-based."""
    for row, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        fields = text.split(",")
        try:
            values = np.array([float(f) for f in fields])
        except ValueError:
            raise MalformedRow(row, "non-numeric field") from None
        if not np.all(np.isfinite(values)):
            raise MalformedRow(row, "non-finite value")
        if values.size != width:
            raise ModelMismatch(f"row {row}: expected {width} values, got {values.size}")
        yield values


@dataclass
class Monitor:
    extractor: FeatureExtractor
    head: ZeroBiasHead
    boundaries: BoundaryModelSet
    charts: list

    def __post_init__(self):
        check_compatible(self.extractor, self.head, self.boundaries)

    @property
    def width(self) -> int:
        return input_width(self.extractor, self.head)

    def decide(self, x: np.ndarray) -> int:
        return int(detect_inputs(self.extractor, self.head, self.boundaries, x[:, None])[0])

    def feed(self, decision: int) -> list[AlarmEvent]:
        return [e for e in (chart.step(decision) for chart in self.charts) if e is not None]

    def run(self, lines: Iterable[str], alarms: IO[str], decisions: IO[str] | None = None) -> int:
        """Process every row; returns the number of alarms written."""
        count = 0
        for x in parse_rows(lines, self.width):
            decision = self.decide(x)
            if decisions is not None:
                decisions.write(f"{decision}\n")
            for event in self.feed(decision):
                alarms.write(event.to_json() + "\n")
                alarms.flush()
                count += 1
        return count
