"""Random data generators and independent oracles shared by the tests."""

import math
import random
import struct

from imagebake.dump import INT, INT_MAX, INT_MIN, REAL, TEXT, ColumnDef, Snapshot, Table, TableSchema
from imagebake.runtime import ReadQuery

TEXT_ALPHABET = "abcxyz ABC_0189'\";,()\n\t-éñ漢🙂\\"


def random_ident(rng, taken=()):
    while True:
        first = rng.choice("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
        rest = "".join(rng.choice("abcdefghijklmnopqrstuvwxyz0123456789_") for _ in range(rng.randint(0, 6)))
        name = first + rest
        if name not in taken:
            return name


def random_value(rng, ctype):
    if ctype == INT:
        return rng.choice([
            rng.randint(-5, 5),
            rng.randint(INT_MIN, INT_MAX),
            INT_MIN,
            INT_MAX,
        ])
    if ctype == REAL:
        pick = rng.randrange(5)
        if pick == 0:
            return float(rng.randint(-1000, 1000))
        if pick == 1:
            return rng.uniform(-1e6, 1e6)
        if pick == 2:
            return rng.choice([5e-324, 1e300, -2.5e-10, 0.1, 1e16])
        while True:  # arbitrary finite bit pattern
            v = struct.unpack("<d", rng.getrandbits(64).to_bytes(8, "little"))[0]
            if math.isfinite(v):
                return 0.0 if v == 0 else v
        # fallthrough unreachable
    return "".join(rng.choice(TEXT_ALPHABET) for _ in range(rng.randint(0, 12)))


def random_schema(rng, name):
    ncols = rng.randint(1, 5)
    names = []
    for _ in range(ncols):
        names.append(random_ident(rng, names))
    pk = rng.randrange(ncols)
    cols = tuple(ColumnDef(n, rng.choice((INT, REAL, TEXT)), i == pk) for i, n in enumerate(names))
    return TableSchema(name, cols)


def random_table(rng, name, max_rows=8):
    schema = random_schema(rng, name)
    rows = {}
    pk_type = schema.columns[schema.pk_index].ctype
    for _ in range(rng.randint(0, max_rows)):
        row = [random_value(rng, c.ctype) for c in schema.columns]
        row[schema.pk_index] = random_value(rng, pk_type)
        rows.setdefault(row[schema.pk_index], tuple(row))
    return Table(schema, rows.values())


def random_snapshot(rng, max_tables=3, max_rows=8, min_tables=0):
    names = []
    for _ in range(rng.randint(min_tables, max_tables)):
        names.append(random_ident(rng, names))
    return Snapshot(random_table(rng, n, max_rows) for n in names)


def mutate_one_cell(rng, snap):
    """Return a copy of `snap` with exactly one non-key cell (or key) changed."""
    candidates = [(n, t) for n, t in snap.tables.items() if len(t)]
    name, table = rng.choice(candidates)
    rows = dict(table.rows)
    pk = rng.choice(sorted(rows))
    row = list(rows[pk])
    col = rng.randrange(len(row))
    ctype = table.schema.columns[col].ctype
    while True:
        new = random_value(rng, ctype)
        if new != row[col] and not (col == table.schema.pk_index and new in rows):
            break
    row[col] = new
    del rows[pk]
    rows[row[table.schema.pk_index]] = tuple(row)
    tables = dict(snap.tables)
    tables[name] = Table(table.schema, rows.values())
    return Snapshot(tables)


def random_query(rng, snap):
    name = rng.choice(sorted(snap.tables))
    table = snap.tables[name]
    cols = list(table.schema.column_names)
    projection = None
    if rng.random() < 0.6:
        projection = tuple(rng.sample(cols, rng.randint(1, len(cols))))
    predicate = None
    if rng.random() < 0.7:
        col = rng.choice(cols)
        ci = cols.index(col)
        rows = list(table.rows.values())
        if rows and rng.random() < 0.8:
            value = rng.choice(rows)[ci]
        else:
            value = random_value(rng, table.schema.columns[ci].ctype)
        predicate = (col, value)
    return ReadQuery(name, projection, predicate)


def oracle_read(snap, q):
    """Brute force: scan every row, filter, sort by key, project."""
    table = snap.tables[q.table]
    cols = list(table.schema.column_names)
    pk = table.schema.pk_index
    out = []
    for row in table.rows.values():
        if q.predicate is None or row[cols.index(q.predicate[0])] == q.predicate[1]:
            out.append(row)
    out.sort(key=lambda r: r[pk])
    if q.projection is None:
        return out
    return [tuple(r[cols.index(c)] for c in q.projection) for r in out]
