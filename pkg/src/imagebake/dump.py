"""Parse, emit and fingerprint full database dumps.

A dump is a sequence of ``CREATE TABLE`` and ``INSERT`` statements in a small,
case-sensitive SQL subset::

    CREATE TABLE features (feature_id INT PRIMARY KEY, name TEXT, lat REAL);
    INSERT INTO features VALUES (1, 'Mount Rainier', 46.8528857);

Canonical output (``emit_dump``) is byte-deterministic: tables sorted by name,
rows sorted by primary key, ``\\n`` line endings, TEXT quoted with ``''``
escaping and REAL rendered as the shortest round-trip decimal.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping, NamedTuple, Sequence

from .errors import (
    DuplicateKey,
    DuplicateTable,
    DumpSyntaxError,
    SchemaError,
    TypeMismatch,
    UnknownColumn,
    UnknownTable,
)

INT = "INT"
REAL = "REAL"
TEXT = "TEXT"
COLUMN_TYPES = (INT, REAL, TEXT)

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

Value = Any  # int | float | str


@dataclass(frozen=True)
class ColumnDef:
    name: str
    ctype: str
    is_primary_key: bool = False

    def __post_init__(self):
        if not IDENT_RE.match(self.name):
            raise SchemaError(f"invalid column name {self.name!r}")
        if self.ctype not in COLUMN_TYPES:
            raise SchemaError(f"unknown column type {self.ctype!r}")


@dataclass(frozen=True)
class TableSchema:
    name: str
    columns: tuple[ColumnDef, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not IDENT_RE.match(self.name):
            raise SchemaError(f"invalid table name {self.name!r}")
        if not self.columns:
            raise SchemaError(f"table {self.name} has no columns")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column name in table {self.name}")
        pks = [c for c in self.columns if c.is_primary_key]
        if len(pks) != 1:
            raise SchemaError(f"table {self.name} needs exactly one PRIMARY KEY column, found {len(pks)}")

    @property
    def pk_index(self) -> int:
        for i, col in enumerate(self.columns):
            if col.is_primary_key:
                return i
        raise AssertionError("unreachable")  # guarded by __post_init__

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_index(self, name: str) -> int:
        for i, col in enumerate(self.columns):
            if col.name == name:
                return i
        raise UnknownColumn(f"table {self.name} has no column {name!r}")


def coerce_value(ctype: str, value: Value, *, where: str = "") -> Value:
    """Check `value` against a column type and return its normalized form.

    INT literals are accepted in REAL columns and widened. ``-0.0`` becomes
    ``0.0`` so that equal snapshots always have equal canonical text.
    """
    suffix = f" ({where})" if where else ""
    if isinstance(value, bool):
        raise TypeMismatch(f"boolean values are not supported{suffix}")
    if ctype == INT:
        if not isinstance(value, int):
            raise TypeMismatch(f"expected INT, got {type(value).__name__}{suffix}")
        if not INT_MIN <= value <= INT_MAX:
            raise TypeMismatch(f"INT out of 64-bit range{suffix}")
        return value
    if ctype == REAL:
        if isinstance(value, int):
            value = float(value)
        if not isinstance(value, float):
            raise TypeMismatch(f"expected REAL, got {type(value).__name__}{suffix}")
        if not math.isfinite(value):
            raise TypeMismatch(f"REAL must be finite{suffix}")
        return 0.0 if value == 0 else value
    if not isinstance(value, str):
        raise TypeMismatch(f"expected TEXT, got {type(value).__name__}{suffix}")
    return value


def check_row(schema: TableSchema, values: Sequence[Value]) -> tuple:
    if len(values) != len(schema.columns):
        raise TypeMismatch(
            f"table {schema.name} has {len(schema.columns)} columns, row has {len(values)} values"
        )
    return tuple(
        coerce_value(col.ctype, v, where=f"{schema.name}.{col.name}")
        for col, v in zip(schema.columns, values)
    )


class Table:
    """One table of a Snapshot: schema plus rows keyed by primary key."""

    __slots__ = ("schema", "_rows")

    def __init__(self, schema: TableSchema, rows: Iterable[Sequence[Value]] = ()):
        self.schema = schema
        pk = schema.pk_index
        keyed: dict[Value, tuple] = {}
        for raw in rows:
            row = check_row(schema, raw)
            if row[pk] in keyed:
                raise DuplicateKey(f"duplicate primary key {row[pk]!r} in table {schema.name}")
            keyed[row[pk]] = row
        self._rows = keyed

    @classmethod
    def _trusted(cls, schema: TableSchema, rows: dict[Value, tuple]) -> "Table":
        table = cls.__new__(cls)
        table.schema = schema
        table._rows = rows
        return table

    @property
    def rows(self) -> Mapping[Value, tuple]:
        return MappingProxyType(self._rows)

    def sorted_rows(self) -> list[tuple]:
        return [self._rows[k] for k in sorted(self._rows)]

    def get(self, pk: Value) -> tuple | None:
        return self._rows.get(pk)

    def __len__(self) -> int:
        return len(self._rows)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Table):
            return NotImplemented
        return self.schema == other.schema and self._rows == other._rows

    def __repr__(self) -> str:
        return f"Table({self.schema.name!r}, rows={len(self._rows)})"


class Snapshot:
    """Immutable relational state: table name -> Table.

    Equality is structural; row insertion order does not matter.
    """

    __slots__ = ("_tables",)

    def __init__(self, tables: Mapping[str, Table] | Iterable[Table] = ()):
        if isinstance(tables, Mapping):
            tables = tables.values()
        mapping: dict[str, Table] = {}
        for table in tables:
            if table.schema.name in mapping:
                raise DuplicateTable(f"table {table.schema.name} defined twice")
            mapping[table.schema.name] = table
        self._tables = mapping

    @property
    def tables(self) -> Mapping[str, Table]:
        return MappingProxyType(self._tables)

    def table(self, name: str) -> Table:
        try:
            return self._tables[name]
        except KeyError:
            raise UnknownTable(f"no such table {name!r}") from None

    def row_count(self) -> int:
        return sum(len(t) for t in self._tables.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Snapshot):
            return NotImplemented
        return self._tables == other._tables

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}:{len(t)}" for n, t in sorted(self._tables.items()))
        return f"Snapshot({inner})"


@dataclass(frozen=True)
class DumpDocument:
    text: bytes
    statement_count: int

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text).hexdigest()


# --- lexer --------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<string>'(?:[^']|'')*')
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(),;=])
  | (?P<bad>.)
    """,
    re.VERBOSE | re.DOTALL,
)


class Token(NamedTuple):
    kind: str  # word | number | string | punct | eof
    text: str
    line: int
    column: int

    def describe(self) -> str:
        return "end of input" if self.kind == "eof" else repr(self.text)


def tokenize(text: str) -> Iterator[Token]:
    line = 1
    line_start = 0
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        chunk = m.group()
        if kind == "bad":
            raise DumpSyntaxError(f"unexpected character {chunk!r}", line=line, column=m.start() - line_start + 1)
        if kind != "ws":
            yield Token(kind, chunk, line, m.start() - line_start + 1)
        if (kind == "ws" or kind == "string") and "\n" in chunk:
            line += chunk.count("\n")
            line_start = m.start() + chunk.rindex("\n") + 1
    yield Token("eof", "", line, len(text) - line_start + 1)


def literal_value(tok: Token) -> Value:
    if tok.kind == "string":
        return tok.text[1:-1].replace("''", "'")
    if tok.kind == "number":
        if any(c in tok.text for c in ".eE"):
            value = float(tok.text)
            if not math.isfinite(value):
                raise DumpSyntaxError("REAL literal out of range", line=tok.line, column=tok.column)
            return value
        return int(tok.text)
    raise DumpSyntaxError(
        f"expected literal, found {tok.describe()}",
        line=tok.line, column=tok.column, expected="literal",
    )


class TokenStream:
    """Cursor over tokens with expectation helpers used by both parsers."""

    def __init__(self, text: str):
        self._tokens = list(tokenize(text))
        self._i = 0

    def peek(self) -> Token:
        return self._tokens[self._i]

    def next(self) -> Token:
        tok = self._tokens[self._i]
        if tok.kind != "eof":
            self._i += 1
        return tok

    def at_end(self) -> bool:
        return self.peek().kind == "eof"

    def fail(self, expected: str) -> DumpSyntaxError:
        tok = self.peek()
        return DumpSyntaxError(
            f"expected {expected}, found {tok.describe()}",
            line=tok.line, column=tok.column, expected=expected,
        )

    def keyword(self, *words: str) -> Token:
        first = None
        for word in words:
            tok = self.peek()
            if tok.kind != "word" or tok.text != word:
                raise self.fail(word)
            first = first or tok
            self.next()
        return first

    def accept_keyword(self, word: str) -> bool:
        tok = self.peek()
        if tok.kind == "word" and tok.text == word:
            self.next()
            return True
        return False

    def punct(self, ch: str) -> Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.text != ch:
            raise self.fail(repr(ch))
        return self.next()

    def accept_punct(self, ch: str) -> bool:
        tok = self.peek()
        if tok.kind == "punct" and tok.text == ch:
            self.next()
            return True
        return False

    def ident(self) -> str:
        tok = self.peek()
        if tok.kind != "word":
            raise self.fail("identifier")
        return self.next().text

    def literal(self) -> Value:
        return literal_value(self.next())

    def literal_list(self) -> list[Value]:
        self.punct("(")
        values = [self.literal()]
        while self.accept_punct(","):
            values.append(self.literal())
        self.punct(")")
        return values


def parse_create_body(ts: TokenStream, start: Token) -> TableSchema:
    """Parse ``ident ( coldef, ... )`` after the ``CREATE TABLE`` keywords."""
    name = ts.ident()
    ts.punct("(")
    columns = []
    while True:
        col_name = ts.ident()
        tok = ts.peek()
        if tok.kind != "word" or tok.text not in COLUMN_TYPES:
            raise ts.fail("INT, REAL or TEXT")
        ts.next()
        is_pk = False
        if ts.accept_keyword("PRIMARY"):
            ts.keyword("KEY")
            is_pk = True
        columns.append(ColumnDef(col_name, tok.text, is_pk))
        if not ts.accept_punct(","):
            break
    ts.punct(")")
    try:
        return TableSchema(name, tuple(columns))
    except SchemaError as exc:
        raise SchemaError(str(exc), line=start.line, column=start.column) from None


def parse_dump(text: bytes | str) -> Snapshot:
    """Execute a dump's statements in order and return the resulting Snapshot."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DumpSyntaxError(f"dump is not valid UTF-8: {exc.reason}", line=1, column=exc.start + 1) from None
    ts = TokenStream(text)
    schemas: dict[str, TableSchema] = {}
    rows: dict[str, dict[Value, tuple]] = {}
    while not ts.at_end():
        start = ts.peek()
        if ts.accept_keyword("CREATE"):
            ts.keyword("TABLE")
            schema = parse_create_body(ts, start)
            ts.punct(";")
            if schema.name in schemas:
                raise DuplicateTable(f"table {schema.name} already exists", line=start.line, column=start.column)
            schemas[schema.name] = schema
            rows[schema.name] = {}
        elif ts.accept_keyword("INSERT"):
            ts.keyword("INTO")
            name = ts.ident()
            ts.keyword("VALUES")
            values = ts.literal_list()
            ts.punct(";")
            if name not in schemas:
                raise UnknownTable(f"INSERT into undefined table {name}", line=start.line, column=start.column)
            schema = schemas[name]
            try:
                row = check_row(schema, values)
            except TypeMismatch as exc:
                raise TypeMismatch(str(exc), line=start.line, column=start.column) from None
            pk = row[schema.pk_index]
            if pk in rows[name]:
                raise DuplicateKey(
                    f"duplicate primary key {pk!r} in table {name}", line=start.line, column=start.column
                )
            rows[name][pk] = row
        else:
            raise ts.fail("CREATE TABLE or INSERT INTO")
    return Snapshot(Table._trusted(schemas[n], rows[n]) for n in schemas)


# --- emitter ------------------------------------------------------------------

def format_literal(value: Value) -> str:
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_create(schema: TableSchema) -> str:
    cols = ", ".join(
        f"{c.name} {c.ctype}" + (" PRIMARY KEY" if c.is_primary_key else "") for c in schema.columns
    )
    return f"CREATE TABLE {schema.name} ({cols});"


def format_insert(table: str, row: Sequence[Value]) -> str:
    return f"INSERT INTO {table} VALUES ({', '.join(format_literal(v) for v in row)});"


def emit_dump(s: Snapshot) -> DumpDocument:
    lines = []
    for name in sorted(s.tables):
        table = s.tables[name]
        lines.append(format_create(table.schema))
        lines.extend(format_insert(name, row) for row in table.sorted_rows())
    text = "".join(line + "\n" for line in lines)
    return DumpDocument(text.encode("utf-8"), len(lines))


def snapshot_digest(s: Snapshot) -> str:
    return hashlib.sha256(emit_dump(s).text).hexdigest()
