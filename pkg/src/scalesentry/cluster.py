"""Discrete-time model of the proxy, service and honeypot tiers.

Time advances in whole ticks of ``TICK_S`` seconds. Within a tick the
service tier first expires queue entries whose clients gave up (499), then
drains its FIFO queue, then takes new arrivals: served at once while spare
capacity remains, queued while the queue has room, rejected (503) otherwise.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .workload import HOMEPAGE, RequestEvent

TICK_S = 1.0


class Tier(str, enum.Enum):
    SERVICE = "service"
    HONEYPOT = "honeypot"
    NONE = "none"


@dataclass(frozen=True, slots=True)
class Outcome:
    request: RequestEvent
    status: int
    tier: Tier  # tier the request was routed to
    t_complete: float
    t_sent: float

    @property
    def tier_served(self) -> Tier:
        return Tier.NONE if self.status in (499, 503) else self.tier

    @property
    def waited(self) -> float:
        return self.t_complete - self.t_sent


def served_status(path: str) -> int:
    return 200 if path == HOMEPAGE else 404


@dataclass(frozen=True)
class RoutingVersion:
    version: int
    honeypot_ips: frozenset[str]
    effective_from: float


class RoutingTable:
    """Versioned IP -> honeypot redirect map with a propagation delay."""

    def __init__(self, propagation_delay_s: float = 5.0):
        self.propagation_delay_s = propagation_delay_s
        self.versions: list[RoutingVersion] = [RoutingVersion(0, frozenset(), float("-inf"))]

    @property
    def latest(self) -> RoutingVersion:
        return self.versions[-1]

    @property
    def version(self) -> int:
        return self.latest.version

    @property
    def honeypot_ips(self) -> frozenset[str]:
        return self.latest.honeypot_ips

    @property
    def effective_from(self) -> float:
        return self.latest.effective_from

    def add(self, ips: Iterable[str], now: float) -> bool:
        """Publish a new version containing ``ips``; returns False when nothing changed."""
        merged = self.latest.honeypot_ips | frozenset(ips)
        if merged == self.latest.honeypot_ips:
            return False
        effective = max(now + self.propagation_delay_s, self.latest.effective_from)
        self.versions.append(RoutingVersion(self.latest.version + 1, merged, effective))
        return True

    def at(self, now: float) -> RoutingVersion:
        for v in reversed(self.versions):
            if v.effective_from <= now:
                return v
        return self.versions[0]

    def route(self, event: RequestEvent, now: float) -> Tier:
        return route(event, self, now)


def route(event: RequestEvent, table: RoutingTable, now: float) -> Tier:
    if event.source_ip in table.at(now).honeypot_ips:
        return Tier.HONEYPOT
    return Tier.SERVICE


@dataclass
class PodTier:
    tier: Tier = Tier.SERVICE
    replicas_ready: int = 1
    replicas_desired: int = 1
    per_pod_capacity_rps: float = 150.0
    pod_startup_delay_s: float = 15.0
    queue_cap: int = 150
    client_timeout_s: float = 2.0
    queue: deque = field(default_factory=deque)
    ready_at: float | None = None
    # per-tick scratch state
    capacity_left: int = 0
    rejected_in_tick: int = 0

    def __post_init__(self) -> None:
        if self.tier is Tier.HONEYPOT:
            self.replicas_ready = self.replicas_desired = 1

    @property
    def busy(self) -> int:
        """Client slots held by this tier: queued requests plus this tick's rejections."""
        return len(self.queue) + self.rejected_in_tick

    def _settle(self, now: float) -> None:
        if self.ready_at is not None and self.ready_at <= now:
            self.replicas_ready = self.replicas_desired
            self.ready_at = None

    def apply_scale(self, desired: int, now: float) -> None:
        if desired < 1:
            raise ValueError(f"desired replicas must be >= 1, got {desired}")
        if self.tier is Tier.HONEYPOT:
            return
        self._settle(now)
        if desired <= self.replicas_ready:
            self.replicas_ready = self.replicas_desired = desired
            self.ready_at = None
            return
        if self.ready_at is None:
            self.ready_at = now + self.pod_startup_delay_s
        self.replicas_desired = desired

    def begin_tick(self, now: float, dt: float = TICK_S) -> list[Outcome]:
        """Expire abandoned requests and drain the queue at the tick boundary."""
        self._settle(now)
        self.rejected_in_tick = 0
        if self.tier is Tier.HONEYPOT:
            self.capacity_left = -1
            return []
        out = []
        queue = self.queue
        while queue and now - queue[0][1] > self.client_timeout_s:
            event, t_sent = queue.popleft()
            out.append(Outcome(event, 499, self.tier, now, t_sent))
        capacity = int(round(self.replicas_ready * self.per_pod_capacity_rps * dt))
        while queue and capacity > 0:
            event, t_sent = queue.popleft()
            out.append(Outcome(event, served_status(event.path), self.tier, now, t_sent))
            capacity -= 1
        self.capacity_left = capacity
        return out

    def offer(self, event: RequestEvent, t_sent: float) -> Outcome | None:
        """Admit one arrival; ``None`` means it was queued."""
        if self.tier is Tier.HONEYPOT:
            return Outcome(event, served_status(event.path), self.tier, t_sent, t_sent)
        if self.capacity_left > 0:
            self.capacity_left -= 1
            return Outcome(event, served_status(event.path), self.tier, t_sent, t_sent)
        if len(self.queue) < self.queue_cap:
            self.queue.append((event, t_sent))
            return None
        self.rejected_in_tick += 1
        return Outcome(event, 503, self.tier, t_sent, t_sent)

    def tick(self, arrivals: Sequence[RequestEvent], now: float,
             inflight_cap: int | None = None, dt: float = TICK_S) -> tuple[list[Outcome], int]:
        """Run one tick; returns the outcomes and how many arrivals were admitted.

        Arrivals past the point where ``busy`` reaches ``inflight_cap`` are not
        admitted and produce no outcome; the caller keeps them pending.
        """
        out = self.begin_tick(now, dt)
        admitted = 0
        for event in arrivals:
            if inflight_cap is not None and self.busy >= inflight_cap:
                break
            result = self.offer(event, max(event.t_arrival, now))
            if result is not None:
                out.append(result)
            admitted += 1
        out.sort(key=_completion_key)
        return out, admitted


def _completion_key(outcome: Outcome) -> float:
    return outcome.t_complete


def tick(tier_state: PodTier, arrivals: Sequence[RequestEvent], now: float,
         inflight_cap: int | None = None) -> tuple[list[Outcome], int]:
    return tier_state.tick(arrivals, now, inflight_cap)


def apply_scale(tier_state: PodTier, desired: int, now: float) -> PodTier:
    tier_state.apply_scale(desired, now)
    return tier_state


class LoadClient:
    """The load tool: replays a schedule with at most ``concurrency`` requests outstanding.

    When every slot is busy the client stalls, and the rest of the schedule
    shifts later by the stall time (no catch-up burst afterwards).
    """

    def __init__(self, events: Sequence[RequestEvent], concurrency: int):
        self.events = events
        self.concurrency = concurrency
        self.cursor = 0
        self.lag = 0.0

    @property
    def exhausted(self) -> bool:
        return self.cursor >= len(self.events)

    def next_send_time(self) -> float | None:
        if self.exhausted:
            return None
        return self.events[self.cursor].t_arrival + self.lag

    def step(self, now: float, router: Callable[[RequestEvent, float], Tier],
             service: PodTier, honeypot: PodTier, dt: float = TICK_S) -> list[Outcome]:
        out = service.begin_tick(now, dt)
        honeypot.begin_tick(now, dt)
        end = now + dt
        events = self.events
        n = len(events)
        while self.cursor < n:
            event = events[self.cursor]
            t_sent = event.t_arrival + self.lag
            if t_sent >= end:
                break
            if t_sent < now:
                t_sent = now
            if router(event, t_sent) is Tier.HONEYPOT:
                out.append(honeypot.offer(event, t_sent))
            else:
                if service.busy >= self.concurrency:
                    self.lag += end - t_sent
                    break
                result = service.offer(event, t_sent)
                if result is not None:
                    out.append(result)
            self.cursor += 1
        out.sort(key=_completion_key)
        return out
