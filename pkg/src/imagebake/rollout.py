"""Zero-downtime replacement of a replica pool with a new image.

Plans are surge-then-drain: launch up to ``max_surge`` new instances, wait
for them to become ready, then kill the same number of old ones. With
``max_surge == 0`` the plan instead spends the unavailability budget
(``pool size - min_available``) by killing first. Either way the ready count
never drops below ``min_available``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterator

from .bakery import ImageManifest
from .clock import LogicalClock
from .errors import ImagebakeError, InfeasibleStrategy, LaunchFailed, RolloutInProgress
from .gateway import ReplicaPool
from .runtime import TERMINATED, ContainerInstance, Runtime

LAUNCH = "launch"
AWAIT = "await"
KILL = "kill"


@dataclass(frozen=True)
class Strategy:
    min_available: int
    max_surge: int = 1


@dataclass(frozen=True)
class Step:
    kind: str
    ref: str  # old instance id for kills, placeholder ``new-<i>`` otherwise


@dataclass(frozen=True)
class RolloutPlan:
    target_image: str
    target: ImageManifest
    strategy: Strategy
    steps: tuple[Step, ...]
    pool_size: int

    def batch_size(self) -> int:
        return batch_size(self.strategy, self.pool_size)


@dataclass(frozen=True)
class RolloutEvent:
    ts: float
    action: str
    instance_id: str
    ready_count_after: int
    rollback: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def batch_size(strategy: Strategy, pool_size: int) -> int:
    if strategy.max_surge >= 1:
        return strategy.max_surge
    return pool_size - strategy.min_available


def rounds(strategy: Strategy, pool_size: int, replacing: int | None = None) -> int:
    """Number of launch/await rounds needed to replace `replacing` instances."""
    replacing = pool_size if replacing is None else replacing
    b = batch_size(strategy, pool_size)
    return -(-replacing // b) if replacing else 0


def plan_rollout(p: ReplicaPool, target: ImageManifest, strategy: Strategy) -> RolloutPlan:
    size = len(p)
    old = [c.instance_id for c in p.members if c.image_id != target.image_id]
    if strategy.min_available < 1:
        raise InfeasibleStrategy("min_available must be at least 1")
    if strategy.max_surge < 0:
        raise InfeasibleStrategy("max_surge must be non-negative")
    if not old:
        return RolloutPlan(target.image_id, target, strategy, (), size)
    if strategy.min_available > size:
        raise InfeasibleStrategy(f"min_available {strategy.min_available} exceeds pool size {size}")
    if strategy.min_available == size and strategy.max_surge == 0:
        raise InfeasibleStrategy("min_available equals pool size, so max_surge must be at least 1")

    b = batch_size(strategy, size)
    steps: list[Step] = []
    fresh = 0
    for start in range(0, len(old), b):
        batch = old[start:start + b]
        new_refs = [f"new-{fresh + i}" for i in range(len(batch))]
        fresh += len(batch)
        launches = [Step(LAUNCH, r) for r in new_refs]
        awaits = [Step(AWAIT, r) for r in new_refs]
        kills = [Step(KILL, r) for r in batch]
        if strategy.max_surge >= 1:
            steps += launches + awaits + kills
        else:
            steps += kills + launches + awaits
    plan = RolloutPlan(target.image_id, target, strategy, tuple(steps), size)
    lowest = static_min_ready(plan)
    assert lowest >= strategy.min_available, f"planner produced unsafe plan (min ready {lowest})"
    return plan


def static_min_ready(plan: RolloutPlan) -> int:
    """Lowest ready count reached by the plan, assuming all members start ready."""
    ready = lowest = plan.pool_size
    for step in plan.steps:
        if step.kind == AWAIT:
            ready += 1
        elif step.kind == KILL:
            ready -= 1
        lowest = min(lowest, ready)
    return lowest


class Rollout:
    """Stepwise execution of a plan.

    :meth:`run` is a generator that yields the logical time it needs to wait
    for (an instance becoming ready); the driver advances the clock and
    resumes it. This lets the same code run synchronously or inside the
    simulator's event loop.
    """

    def __init__(self, plan: RolloutPlan, runtime: Runtime, pool: ReplicaPool):
        self.plan = plan
        self.runtime = runtime
        self.pool = pool
        self.events: list[RolloutEvent] = []

    def _event(self, action: str, c: ContainerInstance, rollback: bool = False) -> None:
        self.events.append(RolloutEvent(self.runtime.clock.now, action, c.instance_id, self.pool.ready_count(), rollback))

    def _launch(self, m: ImageManifest) -> ContainerInstance:
        try:
            return self.runtime.launch(m)
        except ImagebakeError as exc:
            raise LaunchFailed(f"launch of {m.image_id[:12]} failed: {exc}") from exc

    def run(self) -> Iterator[float]:
        if not self.pool.rollout_lock.acquire(blocking=False):
            raise RolloutInProgress("another rollout holds this pool")
        try:
            yield from self._run()
        finally:
            self.pool.rollout_lock.release()

    def _run(self) -> Iterator[float]:
        old = {c.instance_id: c for c in self.pool.members}
        missing = [s.ref for s in self.plan.steps if s.kind == KILL and s.ref not in old]
        if missing:
            raise ValueError(f"plan does not match pool: unknown instances {missing}")
        fresh: dict[str, ContainerInstance] = {}
        killed: list[ContainerInstance] = []
        try:
            for step in self.plan.steps:
                if step.kind == LAUNCH:
                    c = self._launch(self.plan.target)
                    self.pool.add(c)
                    fresh[step.ref] = c
                    self._event(LAUNCH, c)
                elif step.kind == AWAIT:
                    c = fresh[step.ref]
                    while not c.is_ready:
                        yield c.ready_at
                    self._event(AWAIT, c)
                else:
                    c = old[step.ref]
                    self.pool.remove(c)
                    self.runtime.kill(c)
                    killed.append(c)
                    self._event(KILL, c)
        except LaunchFailed:
            yield from self._rollback(list(fresh.values()), killed)
            raise

    def _rollback(self, fresh: list[ContainerInstance], killed: list[ContainerInstance]) -> Iterator[float]:
        # Restore old-image capacity first so availability holds while new
        # instances are removed.
        replacements = []
        for dead in killed:
            c = self.runtime.launch(dead.manifest)
            self.pool.add(c)
            replacements.append(c)
            self._event(LAUNCH, c, rollback=True)
        for c in replacements:
            while not c.is_ready:
                yield c.ready_at
            self._event(AWAIT, c, rollback=True)
        for c in fresh:
            if c in self.pool.members:
                self.pool.remove(c)
            if c.state != TERMINATED:
                self.runtime.kill(c)
            self._event(KILL, c, rollback=True)


def execute_rollout(plan: RolloutPlan, runtime: Runtime, p: ReplicaPool,
                    clock: LogicalClock | None = None) -> list[RolloutEvent]:
    """Run `plan` to completion, advancing `clock` whenever a step must wait.

    On :class:`LaunchFailed` the pool is rolled back to its pre-rollout image
    membership and the exception is re-raised with ``.events`` attached.
    """
    clock = clock if clock is not None else runtime.clock
    rollout = Rollout(plan, runtime, p)
    try:
        for due in rollout.run():
            clock.advance_to(max(due, clock.now))
    except LaunchFailed as exc:
        exc.events = rollout.events
        raise
    return rollout.events


def events_to_jsonl(events: list[RolloutEvent]) -> str:
    return "".join(json.dumps(e.to_json()) + "\n" for e in events)
