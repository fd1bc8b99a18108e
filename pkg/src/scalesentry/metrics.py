"""Append-only status-code counters with exact windowed-increase queries."""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, NamedTuple, Union


class Labels(NamedTuple):
    tier: str
    status_class: str
    status_code: int


def status_class(code: int) -> str:
    if code == 499:
        return "499"
    if 200 <= code < 300:
        return "2xx"
    if 400 <= code < 500:
        return "4xx"
    if 500 <= code < 600:
        return "5xx"
    return "other"


def labels_for(tier: str, code: int) -> Labels:
    return Labels(tier, status_class(code), int(code))


Selector = Union[Mapping[str, object], Callable[[Labels], bool], None]


@dataclass(frozen=True)
class QueryWindow:
    duration_s: float

    def __post_init__(self) -> None:
        if not self.duration_s > 0:
            raise ValueError("window duration must be positive")


class CounterStore:
    """Events are kept per label set as sorted timestamp lists.

    ``increase`` counts events with ``now - duration < t <= now``.
    """

    def __init__(self) -> None:
        self._series: dict[Labels, list[float]] = {}
        self._last_t = -math.inf
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def series(self) -> dict[Labels, list[float]]:
        return self._series

    def record(self, t: float, labels: Labels | Mapping[str, object]) -> None:
        if t < self._last_t:
            raise ValueError(f"time regression: {t} < {self._last_t}")
        if not isinstance(labels, Labels):
            labels = Labels(str(labels["tier"]), str(labels["status_class"]), int(labels["status_code"]))
        self._series.setdefault(labels, []).append(t)
        self._last_t = t
        self._size += 1

    def record_many(self, items: Iterable[tuple[float, Labels]]) -> None:
        for t, labels in items:
            self.record(t, labels)

    def matching(self, selector: Selector) -> list[Labels]:
        if selector is None:
            return list(self._series)
        if callable(selector):
            return [key for key in self._series if selector(key)]
        return [key for key in self._series
                if all(getattr(key, name) == value for name, value in selector.items())]

    def increase(self, selector: Selector, window: QueryWindow | float, now: float) -> int:
        duration = window.duration_s if isinstance(window, QueryWindow) else float(window)
        lo = now - duration
        total = 0
        for key in self.matching(selector):
            times = self._series[key]
            total += bisect.bisect_right(times, now) - bisect.bisect_right(times, lo)
        return total

    def total(self, selector: Selector = None, now: float = math.inf) -> int:
        return sum(bisect.bisect_right(self._series[k], now) for k in self.matching(selector))

    def snapshot_rows(self, step_s: float = 1.0) -> list[tuple]:
        """Cumulative counts per label set at every ``step_s`` boundary."""
        if not self._series:
            return []
        end = math.ceil(self._last_t / step_s) * step_s if self._last_t > 0 else 0.0
        keys = sorted(self._series)
        rows = []
        n_steps = int(round(end / step_s))
        for i in range(n_steps + 1):
            t = i * step_s
            for key in keys:
                count = bisect.bisect_right(self._series[key], t)
                if count:
                    rows.append((t, key.tier, key.status_class, key.status_code, count))
        return rows

    def export_csv(self, path, step_s: float = 1.0) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "tier", "status_class", "status_code", "count_cumulative"])
            for t, tier, cls, code, count in self.snapshot_rows(step_s):
                writer.writerow([f"{t:g}", tier, cls, code, count])


FIVE_XX_SERVICE = {"tier": "service", "status_class": "5xx"}
