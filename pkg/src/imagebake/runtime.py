"""Simulated container runtime for read-only replicas.

Instances are launched from verified images, hold the preloaded snapshot from
the data layer, and expose nothing that could attach storage. The only
writable state is ``scratch``, which stands in for a container's thin
writable layer and is wiped on kill.
"""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field

from .bakery import DATA, ImageManifest, ImageStore, verify_image
from .clock import PRIORITY_READY, LogicalClock, Timer
from .dump import Snapshot, Value
from .errors import AlreadyTerminated, ImageVerificationFailed, NotReady

STARTING = "starting"
READY = "ready"
TERMINATED = "terminated"


@dataclass(frozen=True)
class ReadQuery:
    """``SELECT <projection> FROM <table> [WHERE <column> = <value>]``.

    ``projection=None`` selects all columns.
    """

    table: str
    projection: tuple[str, ...] | None = None
    predicate: tuple[str, Value] | None = None

    def __post_init__(self):
        if self.projection is not None:
            object.__setattr__(self, "projection", tuple(self.projection))
        if self.predicate is not None:
            object.__setattr__(self, "predicate", tuple(self.predicate))


@dataclass(eq=False)
class ContainerInstance:
    instance_id: str
    image_id: str
    generation: int
    snapshot: Snapshot
    started_at: float
    ready_at: float
    state: str = STARTING
    scratch: dict[str, str] = field(default_factory=dict)
    manifest: ImageManifest | None = field(default=None, repr=False)
    _timer: Timer | None = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def is_ready(self) -> bool:
        return self.state == READY

    def write_scratch(self, key: str, value: str) -> None:
        if self.state == TERMINATED:
            raise NotReady(f"{self.instance_id} is terminated")
        self.scratch[key] = value


def exec_read(c: ContainerInstance, q: ReadQuery) -> list[tuple]:
    """Run `q` against the instance's preloaded snapshot.

    No locks are taken: the snapshot is immutable once loaded. Rows come back
    in ascending primary-key order.
    """
    if c.state != READY:
        raise NotReady(f"{c.instance_id} is {c.state}")
    table = c.snapshot.table(q.table)
    schema = table.schema
    idx = [schema.column_index(n) for n in q.projection] if q.projection is not None else None

    if q.predicate is None:
        rows = table.sorted_rows()
    else:
        col, value = q.predicate
        pi = schema.column_index(col)
        if pi == schema.pk_index:
            hit = table.get(value)
            rows = [hit] if hit is not None else []
        else:
            rows = [r for r in table.sorted_rows() if r[pi] == value]
    if idx is None:
        return list(rows)
    return [tuple(r[i] for i in idx) for r in rows]


def inspect(c: ContainerInstance) -> dict:
    return {
        "Id": c.instance_id,
        "Image": c.image_id,
        "Generation": c.generation,
        "State": {"Status": c.state, "StartedAt": c.started_at},
        "Mounts": [],
    }


def inspect_json(c: ContainerInstance) -> str:
    return json.dumps(inspect(c), indent=1)


class Runtime:
    """Launches and kills replica instances against one image store."""

    def __init__(self, store: ImageStore, clock: LogicalClock | None = None,
                 startup_delay: float = 0, name: str = "replica"):
        self.store = store
        self.clock = clock if clock is not None else LogicalClock()
        self.startup_delay = startup_delay
        self.name = name
        self.instances: dict[str, ContainerInstance] = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def launch(self, m: ImageManifest, startup_delay: float | None = None) -> ContainerInstance:
        report = verify_image(m, self.store)
        if not report.passed:
            failed = ", ".join(c.name for c in report.failures())
            raise ImageVerificationFailed(f"image {m.image_id[:12]} failed verification: {failed}")
        snapshot = self.store.load_snapshot(m.layer(DATA).digest)
        delay = self.startup_delay if startup_delay is None else startup_delay
        now = self.clock.now
        with self._lock:
            instance_id = f"{self.name}-{next(self._ids):04d}"
        c = ContainerInstance(
            instance_id=instance_id,
            image_id=m.image_id,
            generation=m.generation,
            snapshot=snapshot,
            started_at=now,
            ready_at=now + delay,
            manifest=m,
        )
        if delay <= 0:
            c.state = READY
        else:
            c._timer = self.clock.call_at(c.ready_at, lambda: self._mark_ready(c), PRIORITY_READY)
        self.instances[instance_id] = c
        return c

    def _mark_ready(self, c: ContainerInstance) -> None:
        with c._lock:
            if c.state == STARTING:
                c.state = READY

    def exec_read(self, c: ContainerInstance, q: ReadQuery) -> list[tuple]:
        return exec_read(c, q)

    def inspect(self, c: ContainerInstance) -> dict:
        return inspect(c)

    def kill(self, c: ContainerInstance) -> None:
        with c._lock:
            if c.state == TERMINATED:
                raise AlreadyTerminated(f"{c.instance_id} already terminated")
            c.state = TERMINATED
            c.scratch.clear()
            if c._timer is not None:
                c._timer.cancel()
        self.instances.pop(c.instance_id, None)

    def live(self) -> list[ContainerInstance]:
        return list(self.instances.values())

