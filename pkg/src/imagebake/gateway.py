"""Read/write splitting front door.

Reads go round-robin to ready replicas; writes go to the master, shaped by
the active scenario policy. Nothing here can send a write to a replica or a
read to the master.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
import json
import os
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .clock import LogicalClock
from .errors import ImagebakeError, NoReplicasAvailable, NotReady, UnknownTicket, WriteRejected, WrongMode
from .master import Master, WriteStatement
from .runtime import ContainerInstance, ReadQuery, exec_read

USER = "user"
ADMIN = "admin"


class ScenarioPolicy(enum.Enum):
    READ_ONLY = "ReadOnly"
    EVENTUAL_CONSISTENCY = "EventualConsistency"
    ASYNC_PROCESSING = "AsyncProcessing"


class ReplicaPool:
    """Ordered replica membership with a round-robin cursor."""

    # NotReady retries before giving up; only reachable if members keep
    # terminating between selection and execution.
    MAX_ATTEMPTS = 64

    def __init__(self, members=()):
        self.members: list[ContainerInstance] = list(members)
        self.cursor = 0
        self._lock = threading.Lock()
        self.rollout_lock = threading.Lock()

    def add(self, c: ContainerInstance) -> None:
        with self._lock:
            self.members.append(c)

    def remove(self, c: ContainerInstance) -> None:
        with self._lock:
            idx = self.members.index(c)
            del self.members[idx]
            if idx < self.cursor:
                self.cursor -= 1
            if self.cursor >= max(1, len(self.members)):
                self.cursor = 0

    def ready_members(self) -> list[ContainerInstance]:
        return [c for c in list(self.members) if c.is_ready]

    def ready_count(self) -> int:
        return sum(1 for c in list(self.members) if c.is_ready)

    def image_ids(self) -> list[str]:
        return sorted(c.image_id for c in list(self.members))

    def __len__(self) -> int:
        return len(self.members)

    def _select(self) -> ContainerInstance:
        with self._lock:
            n = len(self.members)
            for i in range(n):
                idx = (self.cursor + i) % n
                c = self.members[idx]
                if c.is_ready:
                    self.cursor = (idx + 1) % n
                    return c
        raise NoReplicasAvailable("no ready replica in pool")


def route_read(p: ReplicaPool, q: ReadQuery) -> tuple[list[tuple], str]:
    for _ in range(ReplicaPool.MAX_ATTEMPTS):
        c = p._select()
        try:
            return exec_read(c, q), c.instance_id
        except NotReady:
            continue  # terminated after selection; pick the next one
    raise NoReplicasAvailable("replicas kept terminating during selection")


@dataclass
class WriteTicket:
    ticket_id: str
    statement: WriteStatement
    submitted_at: float
    status: str = "Queued"  # Queued | Processing | Completed | Failed
    completed_at: float | None = None
    result: int | str | None = None


@dataclass(frozen=True)
class WriteAck:
    affected: int
    ts: float


class AuditLog:
    """Append-only record of every routed request, optionally mirrored to a JSON-lines file."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def append(self, ts: float, kind: str, mode: ScenarioPolicy, target: str, outcome: str) -> dict:
        record = {"ts": ts, "kind": kind, "mode": mode.value, "target": target, "outcome": outcome}
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record) + "\n")
        return record

    def lines(self) -> list[str]:
        return [json.dumps(r) for r in self.records]


class NotificationSink:
    def __init__(self):
        self.events: list[dict] = []
        self.subscribers: list[Callable[[dict], None]] = []

    def notify(self, event: dict) -> None:
        self.events.append(event)
        for fn in self.subscribers:
            fn(event)


class Gateway:
    def __init__(self, master: Master, pool: ReplicaPool, policy: ScenarioPolicy,
                 clock: LogicalClock | None = None, audit: AuditLog | None = None,
                 notifications: NotificationSink | None = None):
        self.master = master
        self.pool = pool
        self.policy = policy
        self.clock = clock if clock is not None else master.clock
        self.audit = audit if audit is not None else AuditLog()
        self.notifications = notifications if notifications is not None else NotificationSink()
        self._tickets: dict[str, WriteTicket] = {}
        self._queue: deque[WriteTicket] = deque()
        self._ticket_ids = itertools.count(1)
        self._write_lock = threading.Lock()

    def route_read(self, q: ReadQuery) -> tuple[list[tuple], str]:
        try:
            rows, instance_id = route_read(self.pool, q)
        except ImagebakeError as exc:
            self.audit.append(self.clock.now, "read", self.policy, "replica", type(exc).__name__)
            raise
        self.audit.append(self.clock.now, "read", self.policy, instance_id, "ok")
        return rows, instance_id

    def route_write(self, w: WriteStatement, caller: str = USER) -> WriteAck | WriteTicket:
        now = self.clock.now
        if caller not in (USER, ADMIN):
            raise ValueError(f"caller must be {USER!r} or {ADMIN!r}")
        if self.policy is ScenarioPolicy.READ_ONLY and caller == USER:
            self.audit.append(now, "write", self.policy, "master", "WriteRejected")
            raise WriteRejected("read-only scenario: only the administrator may write")
        if self.policy is ScenarioPolicy.ASYNC_PROCESSING:
            with self._write_lock:
                ticket = WriteTicket(f"T-{next(self._ticket_ids):04d}", w, now)
                self._tickets[ticket.ticket_id] = ticket
                self._queue.append(ticket)
            self.audit.append(now, "write", self.policy, "master", f"queued:{ticket.ticket_id}")
            return dataclasses.replace(ticket)
        with self._write_lock:
            try:
                affected = self.master.apply_write(w, now)
            except ImagebakeError as exc:
                self.audit.append(now, "write", self.policy, "master", type(exc).__name__)
                raise
        self.audit.append(now, "write", self.policy, "master", "ok")
        return WriteAck(affected, now)

    def poll_ticket(self, ticket_id: str) -> WriteTicket:
        try:
            return dataclasses.replace(self._tickets[ticket_id])
        except KeyError:
            raise UnknownTicket(f"no ticket {ticket_id!r}") from None

    def queued(self) -> int:
        return len(self._queue)

    def drain_queue(self) -> int:
        """Apply queued writes to the master in FIFO order."""
        if self.policy is not ScenarioPolicy.ASYNC_PROCESSING:
            raise WrongMode(f"drain_queue needs AsyncProcessing mode, gateway is {self.policy.value}")
        processed = 0
        while True:
            with self._write_lock:
                if not self._queue:
                    break
                ticket = self._queue.popleft()
                ticket.status = "Processing"
                now = self.clock.now
                try:
                    ticket.result = self.master.apply_write(ticket.statement, now)
                    ticket.status = "Completed"
                except ImagebakeError as exc:
                    ticket.result = f"{type(exc).__name__}: {exc}"
                    ticket.status = "Failed"
                ticket.completed_at = now
            processed += 1
            self.notifications.notify({
                "ticket_id": ticket.ticket_id, "status": ticket.status,
                "submitted_at": ticket.submitted_at, "completed_at": ticket.completed_at,
            })
        return processed
