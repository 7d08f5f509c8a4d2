"""The single stateful write path.

The master owns the only mutable copy of the data. It applies CREATE TABLE,
INSERT, UPDATE and DELETE statements in log order, and periodically (or on
demand) writes a full canonical dump to the dump store. Those dumps double as
backups and as the input for image baking.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .clock import PRIORITY_DUMP, LogicalClock, Timer
from .dump import (
    DumpDocument,
    Snapshot,
    Table,
    TableSchema,
    TokenStream,
    Value,
    check_row,
    coerce_value,
    emit_dump,
    format_create,
    format_insert,
    format_literal,
    parse_create_body,
    parse_dump,
)
from .errors import (
    AlreadyScheduled,
    DuplicateKey,
    DuplicateTable,
    InvalidWrite,
    OutOfOrderWrite,
    StorageError,
    UnknownTable,
)

CREATE = "CREATE"
INSERT = "INSERT"
UPDATE = "UPDATE"
DELETE = "DELETE"


@dataclass(frozen=True)
class WriteStatement:
    """One stateful operation.

    ``payload`` depends on ``kind``: a TableSchema for CREATE, a full row for
    INSERT, a primary-key value for DELETE, and ``(pk, ((column, value), ...))``
    for UPDATE. Use the classmethod constructors rather than building payloads
    by hand.
    """

    kind: str
    table: str
    payload: Any

    @classmethod
    def create(cls, schema: TableSchema) -> "WriteStatement":
        return cls(CREATE, schema.name, schema)

    @classmethod
    def insert(cls, table: str, row: Sequence[Value]) -> "WriteStatement":
        return cls(INSERT, table, tuple(row))

    @classmethod
    def update(cls, table: str, pk: Value, assignments) -> "WriteStatement":
        if isinstance(assignments, dict):
            assignments = assignments.items()
        return cls(UPDATE, table, (pk, tuple((c, v) for c, v in assignments)))

    @classmethod
    def delete(cls, table: str, pk: Value) -> "WriteStatement":
        return cls(DELETE, table, pk)

    def to_sql(self) -> str:
        if self.kind == CREATE:
            return format_create(self.payload)
        if self.kind == INSERT:
            return format_insert(self.table, self.payload)
        if self.kind == UPDATE:
            pk, assignments = self.payload
            sets = ", ".join(f"{c} = {format_literal(v)}" for c, v in assignments)
            return f"UPDATE {self.table} SET {sets} WHERE {format_literal(pk)};"
        return f"DELETE FROM {self.table} WHERE {format_literal(self.payload)};"


def parse_write(sql: str) -> WriteStatement:
    """Parse one write statement.

    Accepted forms (the WHERE clause always addresses the primary key)::

        CREATE TABLE t (id INT PRIMARY KEY, name TEXT);
        INSERT INTO t VALUES (1, 'a');
        UPDATE t SET name = 'b' WHERE 1;
        UPDATE t SET name = 'b' WHERE id = 1;
        DELETE FROM t WHERE 1;
    """
    ts = TokenStream(sql)
    start = ts.peek()
    if ts.accept_keyword("CREATE"):
        ts.keyword("TABLE")
        stmt = WriteStatement.create(parse_create_body(ts, start))
    elif ts.accept_keyword("INSERT"):
        ts.keyword("INTO")
        table = ts.ident()
        ts.keyword("VALUES")
        stmt = WriteStatement.insert(table, ts.literal_list())
    elif ts.accept_keyword("UPDATE"):
        table = ts.ident()
        ts.keyword("SET")
        assignments = []
        while True:
            col = ts.ident()
            ts.punct("=")
            assignments.append((col, ts.literal()))
            if not ts.accept_punct(","):
                break
        ts.keyword("WHERE")
        stmt = WriteStatement.update(table, _where_pk(ts), assignments)
    elif ts.accept_keyword("DELETE"):
        ts.keyword("FROM")
        table = ts.ident()
        ts.keyword("WHERE")
        stmt = WriteStatement.delete(table, _where_pk(ts))
    else:
        raise ts.fail("CREATE, INSERT, UPDATE or DELETE")
    ts.accept_punct(";")
    if not ts.at_end():
        raise ts.fail("end of statement")
    return stmt


def _where_pk(ts: TokenStream) -> Value:
    # `WHERE <pk literal>` or `WHERE <column> = <pk literal>`; the column name is
    # informational only since rows are addressed by primary key.
    if ts.peek().kind == "word":
        ts.ident()
        ts.punct("=")
    return ts.literal()


@dataclass(frozen=True)
class Generation:
    number: int
    digest: str
    created_at: float
    log_length: int = 0  # write_log entries covered by this dump

    def to_json(self) -> dict:
        ts = self.created_at
        if isinstance(ts, float) and ts.is_integer():
            ts = int(ts)
        return {"number": self.number, "digest": self.digest, "created_at": ts}


GENERATION_ZERO = Generation(0, emit_dump(Snapshot()).digest, 0, 0)


class DumpStore:
    """Retains every generation's dump; never prunes.

    On disk: ``gen-<number>.sql`` files plus ``generations.json``. With
    ``root=None`` the store lives in memory (used by the simulator).
    """

    INDEX = "generations.json"

    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else None
        self._mem: dict[int, bytes] = {}
        self._index: list[Generation] = []
        if self.root is not None:
            try:
                self.root.mkdir(parents=True, exist_ok=True)
                index_path = self.root / self.INDEX
                if index_path.exists():
                    self._index = [
                        Generation(e["number"], e["digest"], e["created_at"])
                        for e in json.loads(index_path.read_text())
                    ]
            except (OSError, ValueError, KeyError) as exc:
                raise StorageError(f"cannot open dump store {self.root}: {exc}") from exc

    def generations(self) -> list[Generation]:
        return list(self._index)

    def latest(self) -> Generation | None:
        return self._index[-1] if self._index else None

    def put(self, doc: DumpDocument, gen: Generation) -> None:
        if self.root is None:
            self._mem[gen.number] = doc.text
            self._index.append(gen)
            return
        try:
            _atomic_write(self.root / f"gen-{gen.number}.sql", doc.text)
            index = [g.to_json() for g in self._index] + [gen.to_json()]
            _atomic_write(self.root / self.INDEX, (json.dumps(index, indent=2) + "\n").encode())
        except OSError as exc:
            raise StorageError(f"cannot write dump generation {gen.number}: {exc}") from exc
        self._index.append(gen)

    def read(self, number: int) -> bytes:
        if self.root is None:
            try:
                return self._mem[number]
            except KeyError:
                raise StorageError(f"no dump for generation {number}") from None
        try:
            return (self.root / f"gen-{number}.sql").read_bytes()
        except OSError as exc:
            raise StorageError(f"cannot read generation {number}: {exc}") from exc

    def load(self, number: int) -> Snapshot:
        return parse_dump(self.read(number))


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class _MutableTables:
    """Mutable working copy used only inside the master."""

    def __init__(self, base: Snapshot):
        self.schemas: dict[str, TableSchema] = {}
        self.rows: dict[str, dict[Value, tuple]] = {}
        for name, table in base.tables.items():
            self.schemas[name] = table.schema
            self.rows[name] = dict(table.rows)

    def freeze(self) -> Snapshot:
        return Snapshot(Table._trusted(self.schemas[n], dict(self.rows[n])) for n in self.schemas)

    def schema(self, name: str) -> TableSchema:
        try:
            return self.schemas[name]
        except KeyError:
            raise UnknownTable(f"no such table {name!r}") from None

    def apply(self, w: WriteStatement) -> int:
        if w.kind == CREATE:
            if w.table in self.schemas:
                raise DuplicateTable(f"table {w.table} already exists")
            self.schemas[w.table] = w.payload
            self.rows[w.table] = {}
            return 0
        schema = self.schema(w.table)
        rows = self.rows[w.table]
        pk_col = schema.columns[schema.pk_index]
        if w.kind == INSERT:
            row = check_row(schema, w.payload)
            pk = row[schema.pk_index]
            if pk in rows:
                raise DuplicateKey(f"duplicate primary key {pk!r} in table {w.table}")
            rows[pk] = row
            return 1
        if w.kind == UPDATE:
            pk, assignments = w.payload
            pk = coerce_value(pk_col.ctype, pk, where=f"{w.table}.{pk_col.name}")
            updates = {}
            for col, value in assignments:
                idx = schema.column_index(col)
                if idx == schema.pk_index:
                    raise InvalidWrite(f"UPDATE may not assign the primary key column {col}")
                updates[idx] = coerce_value(schema.columns[idx].ctype, value, where=f"{w.table}.{col}")
            if not updates:
                raise InvalidWrite("UPDATE needs at least one assignment")
            old = rows.get(pk)
            if old is None:
                return 0
            rows[pk] = tuple(updates.get(i, v) for i, v in enumerate(old))
            return 1
        if w.kind == DELETE:
            pk = coerce_value(pk_col.ctype, w.payload, where=f"{w.table}.{pk_col.name}")
            return 1 if rows.pop(pk, None) is not None else 0
        raise InvalidWrite(f"unknown write kind {w.kind!r}")


class Master:
    """Serialized write path plus dump production.

    ``apply_write`` and ``dump_now`` mutually exclude each other; ``current``
    hands out an immutable Snapshot that readers may keep.
    """

    def __init__(self, store: DumpStore | None = None, clock: LogicalClock | None = None,
                 base: Snapshot | None = None, base_generation: Generation = GENERATION_ZERO):
        self.store = store if store is not None else DumpStore()
        self.clock = clock if clock is not None else LogicalClock()
        self.base = base if base is not None else Snapshot()
        self._tables = _MutableTables(self.base)
        self._frozen: Snapshot | None = self.base
        self.write_log: list[tuple[float, WriteStatement]] = []
        self.last_generation = base_generation
        self._lock = threading.Lock()
        self._schedule: DumpSchedule | None = None

    @classmethod
    def restore(cls, store: DumpStore, clock: LogicalClock | None = None) -> "Master":
        """Rebuild a master from the newest dump in `store`."""
        latest = store.latest()
        if latest is None:
            return cls(store, clock)
        snap = store.load(latest.number)
        return cls(store, clock, base=snap, base_generation=latest)

    @property
    def current(self) -> Snapshot:
        with self._lock:
            if self._frozen is None:
                self._frozen = self._tables.freeze()
            return self._frozen

    @property
    def last_write_ts(self) -> float | None:
        return self.write_log[-1][0] if self.write_log else None

    def apply_write(self, w: WriteStatement, t: float | None = None) -> int:
        """Apply `w` at logical time `t` (defaults to the clock) and log it.

        Failed writes leave the state untouched and are not logged.
        """
        if t is None:
            t = self.clock.now
        with self._lock:
            if self.write_log and t < self.write_log[-1][0]:
                raise OutOfOrderWrite(f"write at t={t} precedes logged write at t={self.write_log[-1][0]}")
            # every branch of apply() validates fully before mutating
            affected = self._tables.apply(w)
            self.write_log.append((t, w))
            self._frozen = None
            return affected

    def dump_now(self) -> tuple[DumpDocument, Generation]:
        with self._lock:
            snap = self._frozen if self._frozen is not None else self._tables.freeze()
            self._frozen = snap
            doc = emit_dump(snap)
            gen = Generation(
                self.last_generation.number + 1, doc.digest, self.clock.now, len(self.write_log)
            )
            self.store.put(doc, gen)
            self.last_generation = gen
            return doc, gen

    def schedule_dumps(self, period: float) -> "DumpSchedule":
        if period <= 0:
            raise ValueError("dump period must be positive")
        if self._schedule is not None and not self._schedule.cancelled:
            raise AlreadyScheduled("this master already has a dump schedule")
        self._schedule = DumpSchedule(self, period)
        return self._schedule


def replay(log: Sequence[tuple[float, WriteStatement]], base: Snapshot | None = None) -> Snapshot:
    """Re-apply logged writes on top of `base` (default: the empty snapshot)."""
    tables = _MutableTables(base if base is not None else Snapshot())
    for _, w in log:
        tables.apply(w)
    return tables.freeze()


class DumpSchedule:
    """Emits ``dump_now`` at every multiple of `period` on the master's clock."""

    def __init__(self, master: Master, period: float):
        self.master = master
        self.period = period
        self.cancelled = False
        self.emitted: list[Generation] = []
        self._next = (master.clock.now // period + 1) * period
        self._timer: Timer | None = None
        self._arm()

    def _arm(self) -> None:
        self._timer = self.master.clock.call_at(self._next, self._fire, PRIORITY_DUMP)

    def _fire(self) -> None:
        if self.cancelled:
            return
        _, gen = self.master.dump_now()
        self.emitted.append(gen)
        self._next += self.period
        self._arm()

    def cancel(self) -> None:
        self.cancelled = True
        if self._timer is not None:
            self._timer.cancel()
