"""Bang-bang HPA analog driven by the 5xx custom metric."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field


@dataclass
class HpaSpec:
    min_replicas: int = 1
    max_replicas: int = 5
    trigger_threshold: int = 50
    trigger_window_s: float = 300.0
    stabilization_s: float = 60.0
    reconcile_period_s: float = 15.0

    def __post_init__(self) -> None:
        if self.min_replicas < 1 or self.max_replicas < self.min_replicas:
            raise ValueError("need 1 <= min_replicas <= max_replicas")


@dataclass
class HpaStatus:
    desired: int = 1
    last_trigger_t: float | None = None
    history: list[tuple[float, int, int]] = field(default_factory=list)


class Autoscaler:
    """Holds the spec and live status; every state change is appended to history."""

    def __init__(self, spec: HpaSpec | None = None, status: HpaStatus | None = None):
        self.spec = spec or HpaSpec()
        self.status = status or HpaStatus(desired=self.spec.min_replicas)

    @property
    def desired(self) -> int:
        return self.status.desired

    def _clamp(self, value: int) -> int:
        return max(self.spec.min_replicas, min(self.spec.max_replicas, value))

    def _log(self, now: float) -> None:
        self.status.history.append((now, self.status.desired, self.spec.max_replicas))

    def triggered(self, metric_value: int) -> bool:
        return metric_value > self.spec.trigger_threshold

    def reconcile(self, metric_value: int, now: float) -> HpaStatus:
        status = self.status
        if self.triggered(metric_value):
            status.desired = self.spec.max_replicas
            status.last_trigger_t = now
        elif status.last_trigger_t is None or now - status.last_trigger_t >= self.spec.stabilization_s:
            status.desired = self.spec.min_replicas
        status.desired = self._clamp(status.desired)
        self._log(now)
        return status

    def set_max_replicas(self, m: int, now: float) -> HpaSpec:
        if m < 1:
            raise ValueError(f"max_replicas must be >= 1, got {m}")
        if m == self.spec.max_replicas:
            return self.spec
        self.spec.max_replicas = m
        if m < self.spec.min_replicas:
            self.spec.min_replicas = m
        self.status.desired = self._clamp(self.status.desired)
        self._log(now)
        return self.spec

    def export_history(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "desired", "max_replicas"])
            for t, desired, max_replicas in self.status.history:
                writer.writerow([f"{t:g}", desired, max_replicas])


def reconcile(spec: HpaSpec, status: HpaStatus, metric_value: int, now: float) -> HpaStatus:
    return Autoscaler(spec, status).reconcile(metric_value, now)


def set_max_replicas(spec: HpaSpec, status: HpaStatus, m: int, now: float) -> HpaSpec:
    return Autoscaler(spec, status).set_max_replicas(m, now)
