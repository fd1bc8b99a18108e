"""The scheduled detection script: train, rank, redirect, retune maxReplicas."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .autoscaler import Autoscaler
from .cluster import RoutingTable
from .forest import ForestModel, ForestParams, ModelUnavailable, top_k_attackers, train
from .logpipe import ABNORMAL_STATUS, LabeledRecord


@dataclass
class SentinelPolicy:
    run_times_s: tuple[float, ...] = (180.0, 300.0)
    window_s: float = 300.0
    threshold: float = 0.10
    redirect_proba_cutoff: float = 0.5
    top_k: int = 10
    max_on_attack: int = 1
    max_on_clear: int = 5

    def __post_init__(self) -> None:
        self.run_times_s = tuple(float(t) for t in self.run_times_s)
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if list(self.run_times_s) != sorted(self.run_times_s):
            raise ValueError("run_times_s must be ascending")
        if self.window_s <= 0:
            raise ValueError("window_s must be positive")


@dataclass
class SentinelDecision:
    t: float
    attack_rate: float
    f1: float
    redirected_ips: list[str]
    max_replicas_set: int
    ranking: list[tuple[str, float]] = field(default_factory=list)
    model_available: bool = True
    degenerate: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "t": self.t,
            "attack_rate": self.attack_rate,
            "f1": self.f1,
            "redirected_ips": self.redirected_ips,
            "max_replicas_set": self.max_replicas_set,
            "ranking": [[ip, score] for ip, score in self.ranking],
            "model_available": self.model_available,
            "degenerate": self.degenerate,
        }, sort_keys=True)


def in_window(records: Sequence[LabeledRecord], now: float, window_s: float) -> list[LabeledRecord]:
    lo = now - window_s
    return [r for r in records if lo < r.t <= now]


def attack_rate(records: Sequence[LabeledRecord], now: float, window_s: float) -> float:
    """Share of access records in ``(now - window_s, now]`` answered 403/404."""
    total = hits = 0
    lo = now - window_s
    for r in records:
        if r.source != "access" or not lo < r.t <= now:
            continue
        total += 1
        hits += r.status in ABNORMAL_STATUS
    return hits / total if total else 0.0


def ip_level_targets(records: Sequence[LabeledRecord]) -> list[LabeledRecord]:
    """Relabel every record with whether its source IP ever drew a 403/404.

    With the source address as the only feature, all records of one IP share
    a feature vector, so the learnable question is per IP.
    """
    abnormal = {r.xff_ip for r in records if r.source == "access" and r.status in ABNORMAL_STATUS}
    return [LabeledRecord(r.xff_ip, r.path, r.status, r.t, int(r.xff_ip in abnormal), r.source)
            for r in records]


def run_script(now: float, policy: SentinelPolicy, records: Sequence[LabeledRecord],
               model_params: ForestParams, routing_table: RoutingTable,
               hpa: Autoscaler) -> tuple[SentinelDecision, ForestModel | None]:
    """One script execution against the service-route records seen up to ``now``.

    Returns the decision and the trained model (``None`` when no records exist).
    """
    records = [r for r in records if r.t <= now]
    window = in_window(records, now, policy.window_s)
    model = None
    f1_score = 0.0
    degenerate = False
    ranking: list[tuple[str, float]] = []
    redirected: list[str] = []
    try:
        model = train(ip_level_targets(records), model_params)
    except ModelUnavailable:
        model = None
    if model is not None:
        f1_score, degenerate = model.f1, model.degenerate
        if window:
            ranking = top_k_attackers(model, window, policy.top_k)
            redirected = sorted(ip for ip, score in ranking if score >= policy.redirect_proba_cutoff)
            routing_table.add(redirected, now)

    rate = attack_rate(window, now, policy.window_s)
    target = policy.max_on_attack if rate > policy.threshold else policy.max_on_clear
    hpa.set_max_replicas(target, now)
    decision = SentinelDecision(
        t=now,
        attack_rate=rate,
        f1=f1_score,
        redirected_ips=redirected,
        max_replicas_set=target,
        ranking=ranking,
        model_available=model is not None,
        degenerate=degenerate,
    )
    return decision, model


def append_decision(path: str | Path, decision: SentinelDecision) -> None:
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(decision.to_json() + "\n")
