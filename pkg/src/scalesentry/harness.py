"""Experiment runner and CLI: simulate conditions, write per-run artifacts, aggregate."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from .autoscaler import Autoscaler, HpaSpec
from .cluster import TICK_S, LoadClient, PodTier, RoutingTable, Tier, route
from .forest import ForestParams, save_model
from .logpipe import LogBook
from .metrics import FIVE_XX_SERVICE, CounterStore, labels_for, status_class
from .seeding import derive_seed, rng_for
from .sentinel import SentinelDecision, SentinelPolicy, run_script
from .workload import (
    CONDITION_TABLE,
    HOMEPAGE,
    ConfigError,
    IpPool,
    TrafficSpec,
    build_condition,
    generate_stream,
)

log = logging.getLogger("scalesentry")

RESULT_COLUMNS = (
    "nginx_attacks_received",
    "five_xx_count",
    "honeypot_attacks_received",
    "total_request_time_s",
    "first_f1",
    "first_ip_future_rate",
)
TIMELINE_COLUMNS = (
    "t", "service_2xx", "service_4xx", "service_499", "service_5xx",
    "honeypot_2xx", "honeypot_4xx", "replicas_ready", "replicas_desired",
    "max_replicas", "queue_depth", "client_lag_s",
)
MAX_SIMULATED_S = 100_000


@dataclass
class TierParams:
    per_pod_capacity_rps: float = 150.0
    pod_startup_delay_s: float = 15.0
    queue_cap: int = 150
    client_timeout_s: float = 2.0
    propagation_delay_s: float = 5.0


@dataclass
class ExperimentConfig:
    condition_id: int
    repetitions: int = 3
    master_seed: int = 42
    tick_s: float = TICK_S
    output_dir: Path = Path("out")
    overrides: dict[str, Any] = field(default_factory=dict)
    keep_logs: bool = False
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.condition_id not in CONDITION_TABLE:
            raise ConfigError(f"unknown condition {self.condition_id!r}; expected 1..6")
        if self.tick_s != TICK_S:
            raise ConfigError("only 1-second ticks are supported")
        self.output_dir = Path(self.output_dir)


@dataclass
class RunResult:
    condition_id: int
    repetition: int
    nginx_attacks_received: int
    five_xx_count: int
    honeypot_attacks_received: int
    total_request_time_s: float
    first_f1: float
    first_ip_future_rate: float
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def run_id(self) -> str:
        return run_id(self.condition_id, self.repetition)

    def row(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in RESULT_COLUMNS}


def run_id(condition_id: int, repetition: int) -> str:
    return f"c{condition_id}-r{repetition}"


# ---------------------------------------------------------------- overrides

SECTIONS = {
    "traffic": TrafficSpec,
    "tier": TierParams,
    "hpa": HpaSpec,
    "sentinel": SentinelPolicy,
    "forest": ForestParams,
}


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _resolve(key: str) -> tuple[str, str]:
    section, dot, name = key.partition(".")
    if dot:
        cls = SECTIONS.get(section)
        if cls is None or name not in {f.name for f in dataclasses.fields(cls)}:
            raise ConfigError(f"unknown override {key!r}")
        return section, name
    for section, cls in SECTIONS.items():
        if key in {f.name for f in dataclasses.fields(cls)}:
            return section, key
    raise ConfigError(f"unknown override {key!r}")


def split_overrides(overrides: dict[str, Any]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
    for key, value in overrides.items():
        section, name = _resolve(key)
        if isinstance(value, list):
            value = tuple(value)
        out[section][name] = value
    return out


# --------------------------------------------------------------- simulation

@dataclass
class Setup:
    spec: TrafficSpec
    tier: TierParams
    hpa: HpaSpec
    policy: SentinelPolicy
    forest: ForestParams
    seed: int


def make_setup(condition_id: int, repetition: int, master_seed: int,
               overrides: dict[str, Any] | None = None) -> Setup:
    seed = derive_seed(master_seed, "condition", condition_id, "rep", repetition)
    cond = build_condition(condition_id, seed)
    parts = split_overrides(overrides or {})
    try:
        spec = dataclasses.replace(cond.spec, **parts["traffic"])
        policy = SentinelPolicy(window_s=cond.window_s, threshold=cond.threshold)
        policy = dataclasses.replace(policy, **parts["sentinel"])
        return Setup(
            spec=spec,
            tier=TierParams(**parts["tier"]),
            hpa=HpaSpec(**parts["hpa"]),
            policy=policy,
            forest=ForestParams(**parts["forest"]),
            seed=seed,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


class Simulation:
    """One repetition of one condition, advanced tick by tick."""

    def __init__(self, setup: Setup):
        self.setup = setup
        spec = setup.spec
        pool = IpPool.generate(spec, rng_for(setup.seed, "pool"))
        self.pool = pool
        self.events = generate_stream(spec, pool, rng_for(setup.seed, "traffic"))
        tp = setup.tier
        self.service = PodTier(
            Tier.SERVICE,
            replicas_ready=setup.hpa.min_replicas,
            replicas_desired=setup.hpa.min_replicas,
            per_pod_capacity_rps=tp.per_pod_capacity_rps,
            pod_startup_delay_s=tp.pod_startup_delay_s,
            queue_cap=tp.queue_cap,
            client_timeout_s=tp.client_timeout_s,
        )
        self.honeypot = PodTier(Tier.HONEYPOT)
        self.table = RoutingTable(tp.propagation_delay_s)
        self.hpa = Autoscaler(dataclasses.replace(setup.hpa))
        self.client = LoadClient(self.events, spec.concurrency)
        self.store = CounterStore()
        self.logs = LogBook(spec.malformed_log_rate, rng_for(setup.seed, "logs"))
        self.decisions: list[SentinelDecision] = []
        self.models = []
        self.timeline: list[tuple] = []
        self.outcome_count = {Tier.SERVICE: 0, Tier.HONEYPOT: 0}
        self.attacks = {Tier.SERVICE: 0, Tier.HONEYPOT: 0}
        self.five_xx = 0
        self.first_sent = None
        self.last_complete = 0.0
        self.late_attacker = [0, 0]  # attacker-IP requests after first script + delay: [total, honeypot]
        self.final_service_scans: list[float] = []
        self.now = 0.0

    def _router(self, event, t_sent):
        return route(event, self.table, t_sent)

    def _account(self, outcomes) -> dict[str, int]:
        counts = {"service_2xx": 0, "service_4xx": 0, "service_499": 0, "service_5xx": 0,
                  "honeypot_2xx": 0, "honeypot_4xx": 0}
        policy_t0 = self.setup.policy.run_times_s[0] if self.setup.policy.run_times_s else None
        cutoff = None if policy_t0 is None else policy_t0 + self.setup.tier.propagation_delay_s
        record = self.store.record
        write = self.logs.write
        for o in outcomes:
            tier = o.tier
            cls = status_class(o.status)
            record(o.t_complete, labels_for(tier.value, o.status))
            write(o)
            counts[f"{tier.value}_{cls}"] += 1
            self.outcome_count[tier] += 1
            scan = o.request.path != HOMEPAGE
            if scan:
                self.attacks[tier] += 1
                if tier is Tier.SERVICE:
                    self.final_service_scans.append(o.t_sent)
            if tier is Tier.SERVICE and cls == "5xx":
                self.five_xx += 1
            if cutoff is not None and o.request.from_attacker_ip and o.t_sent > cutoff:
                self.late_attacker[0] += 1
                self.late_attacker[1] += tier is Tier.HONEYPOT
            if self.first_sent is None or o.t_sent < self.first_sent:
                self.first_sent = o.t_sent
            if o.t_complete > self.last_complete:
                self.last_complete = o.t_complete
        return counts

    @property
    def finished(self) -> bool:
        return self.client.exhausted and not self.service.queue

    def run(self) -> None:
        hpa, service = self.hpa, self.service
        hpa.reconcile(0, 0.0)
        service.apply_scale(hpa.desired, 0.0)
        period = self.setup.hpa.reconcile_period_s
        run_times = list(self.setup.policy.run_times_s)
        while not self.finished:
            if self.now > MAX_SIMULATED_S:
                raise RuntimeError("simulation did not drain; check capacity parameters")
            t = self.now
            outcomes = self.client.step(t, self._router, service, self.honeypot)
            counts = self._account(outcomes)
            now = t + TICK_S
            if now % period == 0:
                metric = self.store.increase(FIVE_XX_SERVICE, self.setup.hpa.trigger_window_s, now)
                hpa.reconcile(metric, now)
                service.apply_scale(hpa.desired, now)
            while run_times and run_times[0] <= now:
                self._script(now)
                run_times.pop(0)
            self.timeline.append((
                t, counts["service_2xx"], counts["service_4xx"], counts["service_499"],
                counts["service_5xx"], counts["honeypot_2xx"], counts["honeypot_4xx"],
                service.replicas_ready, hpa.desired, hpa.spec.max_replicas,
                len(service.queue), round(self.client.lag, 6),
            ))
            self.now = now

    def _script(self, now: float) -> None:
        decision, model = run_script(now, self.setup.policy, self.logs.records(), self.setup.forest,
                                     self.table, self.hpa)
        self.service.apply_scale(self.hpa.desired, now)
        self.decisions.append(decision)
        self.models.append(model)
        log.debug("script at %s: rate=%.4f f1=%.3f max=%d redirected=%d", now,
                  decision.attack_rate, decision.f1, decision.max_replicas_set,
                  len(decision.redirected_ips))

    def result(self, condition_id: int, repetition: int) -> RunResult:
        first = self.decisions[0] if self.decisions else None
        end = self.last_complete
        final_minute = sum(1 for t in self.final_service_scans if t > end - 60.0)
        start = self.first_sent or 0.0
        extras = {
            "service_outcomes": self.outcome_count[Tier.SERVICE],
            "honeypot_outcomes": self.outcome_count[Tier.HONEYPOT],
            "total_requests": len(self.events),
            "max_replicas_trajectory": [self.setup.hpa.max_replicas]
                                       + [d.max_replicas_set for d in self.decisions],
            "attack_rates": [d.attack_rate for d in self.decisions],
            "f1_scores": [d.f1 for d in self.decisions],
            "late_attacker_requests": self.late_attacker[0],
            "late_attacker_to_honeypot": self.late_attacker[1],
            "final_minute_service_scans": final_minute,
            "attacker_ips": sorted(self.pool.attacker_ips),
            "first_top_k": [ip for ip, _ in first.ranking] if first else [],
            "first_redirected": first.redirected_ips if first else [],
            "ground_truth_attacks": sum(e.ground_truth_attack for e in self.events),
            "log_lines_corrupted": self.logs.corrupted,
        }
        return RunResult(
            condition_id=condition_id,
            repetition=repetition,
            nginx_attacks_received=self.attacks[Tier.SERVICE],
            five_xx_count=self.five_xx,
            honeypot_attacks_received=self.attacks[Tier.HONEYPOT],
            total_request_time_s=round(end - start, 3),
            first_f1=round(first.f1, 6) if first else 0.0,
            first_ip_future_rate=round(first.ranking[0][1], 6) if first and first.ranking else 0.0,
            extras=extras,
        )


def simulate(condition_id: int, repetition: int, master_seed: int = 42,
             overrides: dict[str, Any] | None = None) -> tuple[RunResult, Simulation]:
    sim = Simulation(make_setup(condition_id, repetition, master_seed, overrides))
    sim.run()
    return sim.result(condition_id, repetition), sim


# ------------------------------------------------------------------ outputs

def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_run(out: Path, result: RunResult, sim: Simulation, keep_logs: bool = False) -> Path:
    rid = result.run_id
    run_dir = out / "runs" / rid
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(run_dir / "timeline.csv", TIMELINE_COLUMNS, sim.timeline)
    sim.hpa.export_history(run_dir / "hpa_history.csv")
    sim.store.export_csv(run_dir / "metrics.csv")
    with open(run_dir / "sentinel.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for decision in sim.decisions:
            fh.write(decision.to_json() + "\n")
    for n, model in enumerate(sim.models, start=1):
        if model is not None:
            save_model(model, out / "model" / f"{rid}-{n}.json")
    if keep_logs:
        sim.logs.save(out / "logs" / rid)
    payload = {
        "condition_id": result.condition_id,
        "repetition": result.repetition,
        **result.row(),
        "extras": result.extras,
    }
    (run_dir / "result.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return run_dir


def ensure_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc


def _one(args: tuple) -> RunResult:
    condition_id, rep, seed, overrides, out, keep_logs = args
    result, sim = simulate(condition_id, rep, seed, overrides)
    write_run(Path(out), result, sim, keep_logs)
    return result


def run(config: ExperimentConfig) -> tuple[list[RunResult], dict[str, float]]:
    """Simulate every repetition of one condition; returns the runs and their mean row."""
    ensure_writable(config.output_dir)
    make_setup(config.condition_id, 1, config.master_seed, config.overrides)  # validate early
    jobs = [(config.condition_id, rep, config.master_seed, config.overrides,
             str(config.output_dir), config.keep_logs)
            for rep in range(1, config.repetitions + 1)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_one, jobs))
    else:
        results = [_one(job) for job in jobs]
    return results, average(results)


def average(results: Sequence[RunResult]) -> dict[str, float]:
    """Exact mean of each result column (computed with fractions, then converted)."""
    if not results:
        raise ValueError("no results to average")
    out = {}
    for name in RESULT_COLUMNS:
        total = sum((Fraction(str(getattr(r, name))) for r in results), Fraction(0))
        out[name] = float(total / len(results))
    return out


def _fmt(name: str, value: float) -> str:
    if name in ("nginx_attacks_received", "five_xx_count", "honeypot_attacks_received"):
        return str(int(value)) if float(value).is_integer() else f"{value:.3f}"
    if name == "total_request_time_s":
        return f"{value:.3f}"
    return f"{value:.4f}"


def load_results(out: Path) -> list[RunResult]:
    results = []
    for path in sorted((Path(out) / "runs").glob("*/result.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        results.append(RunResult(
            condition_id=data["condition_id"],
            repetition=data["repetition"],
            extras=data.get("extras", {}),
            **{name: data[name] for name in RESULT_COLUMNS},
        ))
    results.sort(key=lambda r: (r.condition_id, r.repetition))
    return results


class EmptyReport(RuntimeError):
    pass


def report(output_dir: str | Path) -> dict[int, dict[str, float]]:
    """Write ``results.csv`` and ``summary.csv``; returns per-condition averages."""
    out = Path(output_dir)
    results = load_results(out)
    if not results:
        raise EmptyReport(f"no completed runs under {out / 'runs'}")
    by_condition: dict[int, list[RunResult]] = {}
    for r in results:
        by_condition.setdefault(r.condition_id, []).append(r)
    rows, summary_rows, averages = [], [], {}
    for cid in sorted(by_condition):
        runs = by_condition[cid]
        for r in runs:
            rows.append([cid, r.repetition] + [_fmt(n, getattr(r, n)) for n in RESULT_COLUMNS])
        avg = average(runs)
        averages[cid] = avg
        rows.append([cid, "average"] + [_fmt(n, avg[n]) for n in RESULT_COLUMNS])
        summary_rows.append([cid, len(runs)] + [_fmt(n, avg[n]) for n in RESULT_COLUMNS])
    _write_csv(out / "results.csv", ("condition", "repetition") + RESULT_COLUMNS, rows)
    _write_csv(out / "summary.csv", ("condition", "repetitions") + RESULT_COLUMNS, summary_rows)
    return averages


# ---------------------------------------------------------------------- CLI

def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--reps", type=int, default=3, help="repetitions per condition")
    parser.add_argument("--seed", type=int, default=42, help="master seed")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. tier.queue_cap=100 (repeatable)")
    parser.add_argument("--keep-logs", action="store_true", help="write access/error/honeypot logs")
    parser.add_argument("--jobs", type=int, default=1, help="parallel repetitions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scalesentry", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="simulate one condition")
    p_run.add_argument("--condition", type=int, required=True)
    _common(p_run)
    p_all = sub.add_parser("all", help="simulate conditions 1-6")
    _common(p_all)
    p_report = sub.add_parser("report", help="aggregate completed runs")
    p_report.add_argument("--out", type=Path, required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            report(args.out)
            log.info("wrote %s and %s", args.out / "results.csv", args.out / "summary.csv")
            return 0
        overrides = dict(parse_override(o) for o in args.override)
        conditions = [args.condition] if args.command == "run" else sorted(CONDITION_TABLE)
        configs = [ExperimentConfig(condition_id=c, repetitions=args.reps, master_seed=args.seed,
                                    output_dir=args.out, overrides=overrides,
                                    keep_logs=args.keep_logs, jobs=args.jobs)
                   for c in conditions]
        for config in configs:
            results, avg = run(config)
            log.info("condition %d: 5xx avg %.1f, total time avg %.1f s, max trajectory %s",
                     config.condition_id, avg["five_xx_count"], avg["total_request_time_s"],
                     [r.extras["max_replicas_trajectory"] for r in results])
        report(args.out)
    except (ConfigError, EmptyReport, OSError) as exc:
        print(f"scalesentry: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
