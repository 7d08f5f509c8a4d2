"""Discrete-event harness measuring update-propagation staleness.

One logical clock drives every component. The pipeline per dump tick is:
master dump -> rebuild check -> bake (``build_time``) -> rolling replacement
(``startup_delay`` per launch round). Reads flow through the gateway for the
whole run; writes go to the master in eventual-consistency mode.

Builds and rollouts serialize. A dump that arrives while a cycle is running
waits; if several arrive, only the newest is baked and the others are counted
as skipped.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .bakery import EngineConfig, ImageManifest, ImageStore, bake, should_rebuild
from .clock import PRIORITY_DUMP, PRIORITY_PIPELINE, PRIORITY_READ, PRIORITY_WRITE, LogicalClock
from .dump import INT, REAL, TEXT, ColumnDef, DumpDocument, TableSchema
from .errors import ConfigInvalid, ImagebakeError, NoReplicasAvailable
from .gateway import Gateway, ReplicaPool, ScenarioPolicy, USER
from .master import DumpStore, Generation, Master, WriteStatement, parse_write
from .rollout import Rollout, Strategy, plan_rollout, rounds
from .runtime import ReadQuery, Runtime

SIM_TABLE = TableSchema("events", (
    ColumnDef("id", INT, True),
    ColumnDef("payload", TEXT),
    ColumnDef("t", REAL),
))


@dataclass
class SimConfig:
    dump_period: float
    build_time: float
    startup_delay: float
    replica_count: int
    horizon: float
    strategy: Strategy | None = None
    writes: list[tuple[float, WriteStatement]] | None = None
    write_count: int = 0
    read_rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy is None:
            self.strategy = Strategy(min_available=max(1, self.replica_count - 1), max_surge=1)

    def validate(self) -> None:
        for name in ("dump_period", "build_time", "startup_delay", "read_rate"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
                raise ConfigInvalid(f"{name} must be a finite non-negative number, got {value!r}")
        if not isinstance(self.replica_count, int) or self.replica_count < 1:
            raise ConfigInvalid(f"replica_count must be a positive integer, got {self.replica_count!r}")
        if not self.horizon > self.dump_period + self.build_time:
            raise ConfigInvalid(
                f"horizon {self.horizon} must exceed dump_period + build_time = {self.dump_period + self.build_time}"
            )
        s = self.strategy
        if s.min_available < 1 or s.min_available > self.replica_count or s.max_surge < 0:
            raise ConfigInvalid(f"strategy {s} is invalid for {self.replica_count} replicas")
        if s.min_available == self.replica_count and s.max_surge == 0:
            raise ConfigInvalid("min_available equals replica_count, so max_surge must be at least 1")
        if self.write_count < 0:
            raise ConfigInvalid("write_count must be non-negative")
        for t, _ in self.writes or ():
            if not 0 <= t <= self.horizon:
                raise ConfigInvalid(f"write time {t} outside [0, horizon]")

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        try:
            strategy = obj.get("strategy")
            writes = obj.get("writes")
            return cls(
                dump_period=obj["dump_period"],
                build_time=obj["build_time"],
                startup_delay=obj["startup_delay"],
                replica_count=obj["replica_count"],
                horizon=obj["horizon"],
                strategy=Strategy(strategy["min_available"], strategy.get("max_surge", 1)) if strategy else None,
                writes=[(w["t"], parse_write(w["sql"])) for w in writes] if writes is not None else None,
                write_count=obj.get("write_count", 0),
                read_rate=obj.get("read_rate", 1.0),
                seed=obj.get("seed", 0),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigInvalid(f"bad simulation config: {exc!r}") from exc

    def to_json(self) -> dict:
        obj = {
            "dump_period": self.dump_period,
            "build_time": self.build_time,
            "startup_delay": self.startup_delay,
            "replica_count": self.replica_count,
            "horizon": self.horizon,
            "strategy": asdict(self.strategy),
            "write_count": self.write_count,
            "read_rate": self.read_rate,
            "seed": self.seed,
        }
        if self.writes is not None:
            obj["writes"] = [{"t": t, "sql": w.to_sql()} for t, w in self.writes]
        return obj


def rollout_duration(cfg: SimConfig) -> float:
    return rounds(cfg.strategy, cfg.replica_count) * cfg.startup_delay


def staleness_bound(cfg: SimConfig) -> float:
    """Worst-case commit-to-visible-everywhere delay.

    A write can just miss a dump (up to P), then wait one build (B) and one
    full rollout (R). When a bake+rollout cycle C = B + R outlasts the dump
    period, the dump holding the write may also have to wait for a cycle
    already in flight, which adds up to another C.
    """
    cycle = cfg.build_time + rollout_duration(cfg)
    bound = cfg.dump_period + cycle
    if cycle > cfg.dump_period:
        bound += cycle
    return bound


@dataclass
class StalenessRecord:
    write_ts: float
    statement: str
    log_index: int
    included_generation: int | None = None
    dump_ts: float | None = None
    all_visible_ts: float | None = None

    @property
    def staleness(self) -> float | None:
        if self.all_visible_ts is None:
            return None
        return self.all_visible_ts - self.write_ts

    def to_json(self) -> dict:
        d = asdict(self)
        d["staleness"] = self.staleness
        return d


@dataclass
class SimReport:
    config: dict
    records: list[StalenessRecord]
    read_count: int = 0
    read_error_count: int = 0
    write_error_count: int = 0
    rollout_count: int = 0
    images_built: int = 0
    dumps: int = 0
    dumps_skipped: int = 0
    rebuilds_skipped: int = 0
    min_ready: int | None = None

    @property
    def visible(self) -> list[StalenessRecord]:
        return [r for r in self.records if r.all_visible_ts is not None]

    @property
    def max_staleness(self) -> float | None:
        vals = [r.staleness for r in self.visible]
        return max(vals) if vals else None

    @property
    def mean_staleness(self) -> float | None:
        vals = [r.staleness for r in self.visible]
        return sum(vals) / len(vals) if vals else None

    @property
    def availability(self) -> float:
        if self.read_count == 0:
            return 1.0
        return 1.0 - self.read_error_count / self.read_count

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "staleness_bound": staleness_bound(SimConfig.from_json(self.config)),
            "max_staleness": self.max_staleness,
            "mean_staleness": self.mean_staleness,
            "read_count": self.read_count,
            "read_error_count": self.read_error_count,
            "availability": self.availability,
            "write_count": len(self.records),
            "write_error_count": self.write_error_count,
            "rollout_count": self.rollout_count,
            "images_built": self.images_built,
            "dumps": self.dumps,
            "dumps_skipped": self.dumps_skipped,
            "rebuilds_skipped": self.rebuilds_skipped,
            "min_ready": self.min_ready,
            "records": [r.to_json() for r in self.records],
        }

    def dumps_json(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    def format_table(self) -> str:
        def fmt(v):
            return "-" if v is None else (f"{v:.4g}" if isinstance(v, float) else str(v))
        rows = [
            ("writes", len(self.records)),
            ("writes visible", len(self.visible)),
            ("max staleness", self.max_staleness),
            ("mean staleness", self.mean_staleness),
            ("staleness bound", staleness_bound(SimConfig.from_json(self.config))),
            ("reads", self.read_count),
            ("read errors", self.read_error_count),
            ("availability", self.availability),
            ("images built", self.images_built),
            ("rollouts", self.rollout_count),
            ("dumps skipped", self.dumps_skipped),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {fmt(v)}" for k, v in rows)


class Simulation:
    """One seeded run. Keeps its components so callers can inspect end state."""

    def __init__(self, cfg: SimConfig):
        cfg.validate()
        self.cfg = cfg
        self.clock = LogicalClock()
        self.master = Master(DumpStore(), self.clock)
        self.images = ImageStore()
        self.runtime = Runtime(self.images, self.clock, startup_delay=cfg.startup_delay)
        self.pool = ReplicaPool()
        self.gateway = Gateway(self.master, self.pool, ScenarioPolicy.EVENTUAL_CONSISTENCY, self.clock)
        self.engine = EngineConfig()
        self.report = SimReport(cfg.to_json(), [])
        self._rng = random.Random(cfg.seed)
        self._read_rng = random.Random(f"{cfg.seed}:reads")
        self._pending: tuple[DumpDocument, Generation] | None = None
        self._busy = False
        self._image: ImageManifest | None = None
        self._unseen: list[StalenessRecord] = []
        self._max_key = 1
        self._finished = False

    # --- setup ------------------------------------------------------------

    def _writes(self) -> list[tuple[float, WriteStatement]]:
        if self.cfg.writes is not None:
            return sorted(self.cfg.writes, key=lambda tw: tw[0])
        times = sorted(self._rng.uniform(0, self.cfg.horizon) for _ in range(self.cfg.write_count))
        return [
            (t, WriteStatement.insert(SIM_TABLE.name, (i, f"w{i}", float(t))))
            for i, t in enumerate(times, start=1)
        ]

    def _start(self) -> None:
        self.master.apply_write(WriteStatement.create(SIM_TABLE), 0)
        doc, gen = self.master.dump_now()
        self.report.dumps += 1
        self._image = bake(doc, gen, self.engine, self.images, built_at=0)
        self.report.images_built += 1
        for _ in range(self.cfg.replica_count):
            self.pool.add(self.runtime.launch(self._image, startup_delay=0))

        writes = self._writes()
        self._max_key = max(1, len(writes))
        for t, w in writes:
            self.clock.call_at(t, lambda w=w: self._on_write(w), PRIORITY_WRITE)
        if self.cfg.dump_period > 0:
            k = 1
            while k * self.cfg.dump_period <= self.cfg.horizon:
                self.clock.call_at(k * self.cfg.dump_period, self._on_dump, PRIORITY_DUMP)
                k += 1
        if self.cfg.read_rate > 0:
            self._schedule_read()

    # --- event handlers -----------------------------------------------------

    def _schedule_read(self) -> None:
        t = self.clock.now + self._read_rng.expovariate(self.cfg.read_rate)
        if t <= self.cfg.horizon:
            self.clock.call_at(t, self._on_read, PRIORITY_READ)

    def _on_read(self) -> None:
        key = self._read_rng.randint(1, self._max_key)
        self.report.read_count += 1
        try:
            self.gateway.route_read(ReadQuery(SIM_TABLE.name, predicate=("id", key)))
        except NoReplicasAvailable:
            self.report.read_error_count += 1
        self._schedule_read()

    def _on_write(self, w: WriteStatement) -> None:
        index = len(self.master.write_log)
        try:
            self.gateway.route_write(w, USER)
        except ImagebakeError:
            self.report.write_error_count += 1
            return
        record = StalenessRecord(self.clock.now, w.to_sql(), index)
        self.report.records.append(record)
        self._unseen.append(record)
        if self.cfg.dump_period == 0:
            self._on_dump()

    def _on_dump(self) -> None:
        doc, gen = self.master.dump_now()
        self.report.dumps += 1
        for r in self._unseen:
            if r.included_generation is None and r.log_index < gen.log_length:
                r.included_generation = gen.number
                r.dump_ts = self.clock.now
        if self._pending is not None:
            self.report.dumps_skipped += 1
        self._pending = (doc, gen)
        if not self._busy:
            self._start_cycle()

    def _start_cycle(self) -> None:
        doc, gen = self._pending
        self._pending = None
        if not should_rebuild(self._image, gen):
            # The serving image already holds this exact state.
            self.report.rebuilds_skipped += 1
            self._mark_visible(gen.number)
            return
        self._busy = True
        manifest = bake(doc, gen, self.engine, self.images, built_at=self.clock.now)
        self.clock.call_later(self.cfg.build_time, lambda: self._on_built(manifest), PRIORITY_PIPELINE)

    def _on_built(self, manifest: ImageManifest) -> None:
        self.report.images_built += 1
        self._image = manifest
        plan = plan_rollout(self.pool, manifest, self.cfg.strategy)
        rollout = Rollout(plan, self.runtime, self.pool)
        steps = rollout.run()

        def resume():
            try:
                due = next(steps)
            except StopIteration:
                self._on_rolled_out(rollout, manifest.generation)
                return
            self.clock.call_at(max(due, self.clock.now), resume, PRIORITY_PIPELINE)

        resume()

    def _on_rolled_out(self, rollout: Rollout, generation: int) -> None:
        self.report.rollout_count += 1
        lows = [e.ready_count_after for e in rollout.events]
        if lows:
            low = min(lows)
            self.report.min_ready = low if self.report.min_ready is None else min(self.report.min_ready, low)
        self._mark_visible(generation)
        self._busy = False
        if self._pending is not None:
            self._start_cycle()

    def _mark_visible(self, generation: int) -> None:
        still = []
        for r in self._unseen:
            if r.included_generation is not None and r.included_generation <= generation:
                r.all_visible_ts = self.clock.now
            else:
                still.append(r)
        self._unseen = still

    # --- driving ------------------------------------------------------------

    def run(self) -> SimReport:
        if self._finished:
            return self.report
        self._start()
        self.clock.advance_to(self.cfg.horizon)
        self._finished = True
        return self.report

    def settle(self) -> None:
        """Let in-flight builds and rollouts finish after the horizon."""
        self.clock.run_until_idle()


def run_sim(cfg: SimConfig) -> SimReport:
    return Simulation(cfg).run()


SWEEP_HEADER = ["P", "B", "D", "n", "max_staleness", "mean_staleness", "availability", "images_built"]


@dataclass
class SweepResult:
    rows: list[dict] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=SWEEP_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: "" if row[k] is None else row[k] for k in SWEEP_HEADER})
        return buf.getvalue()


def sweep(cfg_grid: Iterable[SimConfig]) -> SweepResult:
    grid: Sequence[SimConfig] = list(cfg_grid)
    if not grid:
        raise ConfigInvalid("sweep grid is empty")
    result = SweepResult()
    for i, cfg in enumerate(grid):
        try:
            rep = run_sim(cfg)
        except ConfigInvalid as exc:
            result.errors.append((i, str(exc)))
            continue
        result.rows.append({
            "P": cfg.dump_period,
            "B": cfg.build_time,
            "D": cfg.startup_delay,
            "n": cfg.replica_count,
            "max_staleness": rep.max_staleness,
            "mean_staleness": rep.mean_staleness,
            "availability": rep.availability,
            "images_built": rep.images_built,
        })
    return result


def grid(base: SimConfig, **axes: Sequence) -> list[SimConfig]:
    """Cartesian product of `axes` (SimConfig field name -> values) over `base`."""
    names = list(axes)
    configs = []
    for combo in itertools.product(*(axes[n] for n in names)):
        changes = dict(zip(names, combo))
        if "replica_count" in changes and "strategy" not in changes:
            n = changes["replica_count"]
            changes["strategy"] = Strategy(max(1, n - 1), 1)
        configs.append(dataclasses.replace(base, **changes))
    return configs
