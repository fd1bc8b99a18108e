"""Experimental conditions and the seeded request stream they generate."""

from __future__ import annotations

import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .seeding import rng_for

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

SCAN_PATHS = ("/admin", "/data", "/login")
HOMEPAGE = "/"
TOTAL_IPS = 200


class ConfigError(ValueError):
    """Raised for unknown conditions and invalid configuration values."""


@dataclass(frozen=True)
class TrafficSpec:
    condition_id: int
    total_requests: int = 200_000
    concurrency: int = 200
    arrival_rate_min: int = 400
    arrival_rate_max: int = 600
    normal_ip_count: int = 190
    attacker_ip_count: int = 10
    attacker_traffic_share: float = 0.20
    scan_share_within_attacker_traffic: float = 0.60
    scan_paths: tuple[str, ...] = SCAN_PATHS
    malformed_log_rate: float = 0.01
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.normal_ip_count + self.attacker_ip_count != TOTAL_IPS:
            raise ConfigError(f"IP pool must hold {TOTAL_IPS} addresses")
        if not 0 < self.arrival_rate_min <= self.arrival_rate_max:
            raise ConfigError("arrival rate range is empty")
        for name in ("attacker_traffic_share", "scan_share_within_attacker_traffic",
                     "malformed_log_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.total_requests < 0 or self.concurrency < 1:
            raise ConfigError("total_requests must be >= 0 and concurrency >= 1")
        if not self.scan_paths or HOMEPAGE in self.scan_paths:
            raise ConfigError("scan_paths must be non-empty and exclude the homepage")
        object.__setattr__(self, "scan_paths", tuple(self.scan_paths))

    @property
    def effective_attack_probability(self) -> float:
        return self.attacker_traffic_share * self.scan_share_within_attacker_traffic

    @property
    def arrival_rate_rps(self) -> tuple[int, int]:
        return (self.arrival_rate_min, self.arrival_rate_max)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["scan_paths"] = list(self.scan_paths)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrafficSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown TrafficSpec fields: {sorted(unknown)}")
        data = dict(data)
        if "scan_paths" in data:
            data["scan_paths"] = tuple(data["scan_paths"])
        return cls(**data)

    def to_toml(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, list):
                rendered = "[" + ", ".join(json.dumps(v) for v in value) + "]"
            elif isinstance(value, str):
                rendered = json.dumps(value)
            else:
                rendered = repr(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"


def save_spec(spec: TrafficSpec, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    else:
        path.write_text(spec.to_toml(), encoding="utf-8")


def load_spec(path: str | Path) -> TrafficSpec:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    return TrafficSpec.from_dict(data)


@dataclass(frozen=True)
class Condition:
    """One row of the experiment table: traffic plus the sentinel's policy knobs."""

    spec: TrafficSpec
    threshold: float
    window_s: float


# condition -> (scan share within attacker traffic, threshold, window seconds)
CONDITION_TABLE = {
    1: (0.60, 0.10, 300.0),
    2: (0.60, 0.20, 300.0),
    3: (0.15, 0.01, 300.0),
    4: (0.15, 0.05, 300.0),
    5: (0.15, 0.01, 60.0),
    6: (0.15, 0.05, 60.0),
}


def build_condition(condition_id: int, rng_seed: int = 0) -> Condition:
    try:
        scan_share, threshold, window_s = CONDITION_TABLE[condition_id]
    except (KeyError, TypeError):
        raise ConfigError(f"unknown condition {condition_id!r}; expected 1..6") from None
    spec = TrafficSpec(
        condition_id=condition_id,
        scan_share_within_attacker_traffic=scan_share,
        rng_seed=rng_seed,
    )
    return Condition(spec=spec, threshold=threshold, window_s=window_s)


@dataclass(frozen=True)
class IpPool:
    normal_ips: tuple[str, ...]
    attacker_ips: tuple[str, ...]

    def __post_init__(self) -> None:
        everything = self.normal_ips + self.attacker_ips
        if len(set(everything)) != len(everything):
            raise ConfigError("IP pool contains duplicates")

    @classmethod
    def generate(cls, spec: TrafficSpec, rng: np.random.Generator | None = None) -> "IpPool":
        rng = rng if rng is not None else rng_for(spec.rng_seed, "pool")
        need = spec.normal_ip_count + spec.attacker_ip_count
        seen: dict[str, None] = {}
        while len(seen) < need:
            first = int(rng.integers(1, 224))
            if first in (10, 127):
                continue
            rest = rng.integers(0, 256, size=2)
            last = int(rng.integers(1, 255))
            seen.setdefault(f"{first}.{rest[0]}.{rest[1]}.{last}", None)
        ips = list(seen)
        return cls(
            normal_ips=tuple(ips[: spec.normal_ip_count]),
            attacker_ips=tuple(ips[spec.normal_ip_count:]),
        )


@dataclass(frozen=True, slots=True)
class RequestEvent:
    t_arrival: float
    source_ip: str
    path: str
    ground_truth_attack: bool
    from_attacker_ip: bool = False


def per_second_counts(spec: TrafficSpec, rng: np.random.Generator) -> np.ndarray:
    """Arrival count for each second; only the final second may fall short."""
    if spec.total_requests == 0:
        return np.zeros(0, dtype=np.int64)
    n_seconds = math.ceil(spec.total_requests / spec.arrival_rate_min) + 1
    counts = rng.integers(spec.arrival_rate_min, spec.arrival_rate_max + 1, size=n_seconds)
    cum = np.cumsum(counts)
    last = int(np.searchsorted(cum, spec.total_requests))
    counts = counts[: last + 1].copy()
    counts[-1] -= int(cum[last]) - spec.total_requests
    return counts


def generate_stream(spec: TrafficSpec, pool: IpPool,
                    rng: np.random.Generator | None = None) -> list[RequestEvent]:
    if len(pool.normal_ips) != spec.normal_ip_count or len(pool.attacker_ips) != spec.attacker_ip_count:
        raise ConfigError("IP pool does not match the traffic spec")
    rng = rng if rng is not None else rng_for(spec.rng_seed, "traffic")
    counts = per_second_counts(spec, rng)
    n = int(counts.sum())
    seconds = np.repeat(np.arange(len(counts), dtype=np.float64), counts)
    times = np.sort(seconds + rng.random(n))

    share = spec.attacker_traffic_share if pool.attacker_ips else 0.0
    if not pool.normal_ips:
        share = 1.0
    from_attacker = rng.random(n) < share
    scanning = from_attacker & (rng.random(n) < spec.scan_share_within_attacker_traffic)
    attacker_pick = rng.integers(0, max(len(pool.attacker_ips), 1), size=n)
    normal_pick = rng.integers(0, max(len(pool.normal_ips), 1), size=n)
    path_pick = rng.integers(0, len(spec.scan_paths), size=n)

    events = []
    for i in range(n):
        if from_attacker[i]:
            ip = pool.attacker_ips[attacker_pick[i]]
            attack = bool(scanning[i])
            path = spec.scan_paths[path_pick[i]] if attack else HOMEPAGE
        else:
            ip = pool.normal_ips[normal_pick[i]]
            attack = False
            path = HOMEPAGE
        events.append(RequestEvent(float(times[i]), ip, path, attack, bool(from_attacker[i])))
    return events
