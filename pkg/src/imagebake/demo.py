"""Scripted end-to-end runs of the three write-routing scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field

from .bakery import EngineConfig, ImageStore, bake
from .clock import LogicalClock
from .dump import INT, TEXT, ColumnDef, TableSchema
from .errors import WriteRejected
from .gateway import ADMIN, USER, Gateway, ReplicaPool, ScenarioPolicy
from .master import DumpStore, Master, WriteStatement
from .rollout import Strategy, execute_rollout, plan_rollout
from .runtime import ReadQuery, Runtime

SCENARIOS = {
    "read-only": ScenarioPolicy.READ_ONLY,
    "eventual": ScenarioPolicy.EVENTUAL_CONSISTENCY,
    "async": ScenarioPolicy.ASYNC_PROCESSING,
}

CATALOG = TableSchema("catalog", (
    ColumnDef("api_id", INT, True),
    ColumnDef("name", TEXT),
    ColumnDef("kind", TEXT),
))
LABELS = TableSchema("labels", (
    ColumnDef("label_id", INT, True),
    ColumnDef("map_tile", TEXT),
    ColumnDef("label", TEXT),
))
TASKS = TableSchema("tasks", (
    ColumnDef("task_id", INT, True),
    ColumnDef("owner", TEXT),
    ColumnDef("state", TEXT),
))


@dataclass
class DemoRun:
    scenario: str
    gateway: Gateway
    lines: list[str] = field(default_factory=list)

    def say(self, text: str) -> None:
        self.lines.append(text)

    @property
    def audit(self) -> list[dict]:
        return self.gateway.audit.records

    def output(self) -> str:
        return "\n".join(self.lines + ["-- audit log --"] + self.gateway.audit.lines()) + "\n"


class _Stack:
    """Master, image store, runtime and a two-replica pool on one clock."""

    def __init__(self, policy: ScenarioPolicy, schema: TableSchema, seed_rows, replicas: int = 2):
        self.clock = LogicalClock()
        self.master = Master(DumpStore(), self.clock)
        self.images = ImageStore()
        self.runtime = Runtime(self.images, self.clock, startup_delay=1)
        self.pool = ReplicaPool()
        self.schema = schema
        self.master.apply_write(WriteStatement.create(schema), 0)
        for row in seed_rows:
            self.master.apply_write(WriteStatement.insert(schema.name, row), 0)
        image = self.rebuild()
        for _ in range(replicas):
            self.pool.add(self.runtime.launch(image, startup_delay=0))
        self.gateway = Gateway(self.master, self.pool, policy, self.clock)

    def rebuild(self):
        doc, gen = self.master.dump_now()
        return bake(doc, gen, EngineConfig(), self.images, built_at=self.clock.now)

    def publish(self, run: DemoRun) -> None:
        self.clock.advance(1)
        image = self.rebuild()
        run.say(f"baked generation {image.generation} as image {image.image_id[:12]}")
        plan = plan_rollout(self.pool, image, Strategy(min_available=len(self.pool) - 1 or 1, max_surge=1))
        events = execute_rollout(plan, self.runtime, self.pool, self.clock)
        run.say(f"rollout finished at t={self.clock.now:g} after {len(events)} steps, "
                f"min ready {min(e.ready_count_after for e in events)}")

    def read(self, run: DemoRun, pk, label: str) -> list[tuple]:
        q = ReadQuery(self.schema.name, predicate=(self.schema.columns[0].name, pk))
        rows, served_by = self.gateway.route_read(q)
        run.say(f"{label}: {len(rows)} row(s) from {served_by}")
        return rows


def demo_read_only() -> DemoRun:
    stack = _Stack(ScenarioPolicy.READ_ONLY, CATALOG, [(1, "random-forest", "classifier"), (2, "unet", "segmentation")])
    run = DemoRun("read-only", stack.gateway)
    stack.read(run, 1, "user browses catalog entry 1")
    stack.clock.advance(1)
    try:
        stack.gateway.route_write(WriteStatement.insert("catalog", (3, "user-model", "custom")), USER)
    except WriteRejected as exc:
        run.say(f"user write rejected: {exc}")
    ack = stack.gateway.route_write(WriteStatement.insert("catalog", (3, "yolo", "detector")), ADMIN)
    run.say(f"admin write applied to master: affected {ack.affected}")
    stack.read(run, 3, "read before rollout")
    stack.publish(run)
    stack.read(run, 3, "read after rollout")
    return run


def demo_eventual() -> DemoRun:
    stack = _Stack(ScenarioPolicy.EVENTUAL_CONSISTENCY, LABELS, [(1, "tile-0001", "forest")])
    run = DemoRun("eventual", stack.gateway)
    stack.clock.advance(1)
    ack = stack.gateway.route_write(WriteStatement.insert("labels", (2, "tile-0002", "clearing")), USER)
    run.say(f"user label acknowledged immediately: affected {ack.affected}")
    stack.read(run, 2, "read before rollout")
    stack.publish(run)
    stack.read(run, 2, "read after rollout")
    return run


def demo_async() -> DemoRun:
    stack = _Stack(ScenarioPolicy.ASYNC_PROCESSING, TASKS, [])
    run = DemoRun("async", stack.gateway)
    tickets = []
    for i, owner in enumerate(["ana", "ben", "cai"], start=1):
        stack.clock.advance(1)
        t = stack.gateway.route_write(WriteStatement.insert("tasks", (i, owner, "done")), USER)
        tickets.append(t.ticket_id)
        run.say(f"ticket {t.ticket_id} {t.status}")
    for tid in tickets:
        run.say(f"poll {tid}: {stack.gateway.poll_ticket(tid).status}")
    stack.clock.advance(5)
    processed = stack.gateway.drain_queue()
    run.say(f"drained {processed} queued write(s)")
    for tid in tickets:
        t = stack.gateway.poll_ticket(tid)
        run.say(f"ticket {tid} Queued->{t.status} submitted_at={t.submitted_at:g} completed_at={t.completed_at:g}")
    for event in stack.gateway.notifications.events:
        run.say(f"notify {event['ticket_id']}: {event['status']}")
    stack.publish(run)
    stack.read(run, 1, "read after rollout")
    return run


def run_demo(scenario: str) -> DemoRun:
    return {"read-only": demo_read_only, "eventual": demo_eventual, "async": demo_async}[scenario]()
