"""Acceptance criteria, one marked test (or group) per criterion.

Each test runs at the criterion's tolerance; the terminal summary prints one
pass/fail line per criterion (see conftest.py).
"""

import json
import random
import threading
import time

import pytest

from imagebake.bakery import EngineConfig, ImageStore, bake, export_image, import_image, verify_image
from imagebake.clock import LogicalClock
from imagebake.demo import demo_async, demo_eventual, demo_read_only
from imagebake.dump import emit_dump, parse_dump
from imagebake.errors import DuplicateKey
from imagebake.gateway import ReplicaPool, route_read
from imagebake.master import Generation, Master, WriteStatement, parse_write, replay
from imagebake.rollout import Rollout, Strategy, plan_rollout
from imagebake.runtime import ReadQuery, Runtime, exec_read, inspect_json
from imagebake.simulator import SIM_TABLE, SimConfig, Simulation, staleness_bound

from conftest import volume_free_violations
from helpers import mutate_one_cell, oracle_read, random_query, random_schema, random_snapshot, random_value

criterion = pytest.mark.criterion


def bake_snapshot(snap, store, number=1):
    doc = emit_dump(snap)
    return bake(doc, Generation(number, doc.digest, 0), EngineConfig(), store)


def nonempty_snapshot(rng):
    while True:
        snap = random_snapshot(rng, min_tables=1)
        if any(len(t) for t in snap.tables.values()):
            return snap


def full_reads(c, snap):
    return {name: exec_read(c, ReadQuery(name)) for name in sorted(snap.tables)}


# --- 1 ------------------------------------------------------------------------

@criterion(1, 'volume-free: every manifest and inspect descriptor carries "Mounts": []')
def test_c1_volume_free(tmp_path):
    start = time.perf_counter()
    rng = random.Random(1)
    store = ImageStore(tmp_path)
    rt = Runtime(store)
    for i in range(20):
        m = bake_snapshot(random_snapshot(rng), store, i + 1)
        assert '"mounts": []' in (tmp_path / "manifests" / f"{m.image_id}.json").read_text()
        for _ in range(2):
            text = inspect_json(rt.launch(m))
            assert '"Mounts": []' in text
            assert json.loads(text)["Mounts"] == []
    # Everything baked or launched by the suite so far (the session hook
    # repeats this over the whole run).
    assert volume_free_violations() == []
    assert time.perf_counter() - start < 1.0


# --- 2 ------------------------------------------------------------------------

@criterion(2, "bake reproducibility: 100 snapshots bake to identical ids; one-cell mutation changes id")
def test_c2_bake_reproducibility(tmp_path):
    rng = random.Random(2)
    for i in range(100):
        snap = nonempty_snapshot(rng)
        a = bake_snapshot(snap, ImageStore(tmp_path / f"{i}-a"))
        b = bake_snapshot(snap, ImageStore(tmp_path / f"{i}-b"))
        assert a.image_id == b.image_id
        mutated = mutate_one_cell(rng, snap)
        assert mutated != snap
        assert bake_snapshot(mutated, ImageStore()).image_id != a.image_id


# --- 3 ------------------------------------------------------------------------

@criterion(3, "replica identity: 50 images x 20 queries x 3 instances agree with brute-force oracle")
def test_c3_replica_identity():
    rng = random.Random(3)
    for _ in range(50):
        snap = random_snapshot(rng, min_tables=1)
        store = ImageStore()
        m = bake_snapshot(snap, store)
        parsed = parse_dump(store.read_layer(m.layers[1].digest))
        rt = Runtime(store)
        instances = [rt.launch(m) for _ in range(3)]
        for _ in range(20):
            q = random_query(rng, snap)
            expected = oracle_read(parsed, q)
            results = [exec_read(c, q) for c in instances]
            assert results[0] == results[1] == results[2] == expected


# --- 4 ------------------------------------------------------------------------

@criterion(4, "ephemerality: scratch never survives kill+relaunch; reads unchanged over 100 cycles")
def test_c4_ephemerality():
    rng = random.Random(4)
    snap = nonempty_snapshot(rng)
    store = ImageStore()
    m = bake_snapshot(snap, store)
    rt = Runtime(store)
    c = rt.launch(m)
    baseline = full_reads(c, snap)
    for i in range(100):
        c.write_scratch(f"k{i}", "v" * (i + 1))
        assert c.scratch
        rt.kill(c)
        assert c.scratch == {}
        c = rt.launch(m)
        assert c.scratch == {}
        assert full_reads(c, snap) == baseline


# --- 5 ------------------------------------------------------------------------

@criterion(5, "portability: export, import into a fresh store elsewhere, verify passes, reads match")
def test_c5_portability(tmp_path):
    start = time.perf_counter()
    rng = random.Random(5)
    snap = nonempty_snapshot(rng)
    src = ImageStore(tmp_path / "machine-a" / "store")
    m = bake_snapshot(snap, src)
    archive = export_image(m, src, tmp_path / "machine-a" / "image.tar")
    moved = tmp_path / "machine-b" / "incoming.tar"
    moved.parent.mkdir()
    moved.write_bytes(archive.read_bytes())
    dst = ImageStore(tmp_path / "machine-b" / "store")
    m2 = import_image(moved, dst)
    assert m2.image_id == m.image_id
    assert verify_image(m2, dst).passed
    a, b = Runtime(src).launch(m), Runtime(dst).launch(m2)
    assert full_reads(a, snap) == full_reads(b, snap)
    for _ in range(50):
        q = random_query(rng, snap)
        assert exec_read(a, q) == exec_read(b, q)
    assert time.perf_counter() - start < 1.0


# --- 6 ------------------------------------------------------------------------

class PacedRuntime(Runtime):
    """Lets reader threads make progress after every launch and kill."""

    pace = staticmethod(lambda: None)

    def launch(self, m, startup_delay=None):
        c = super().launch(m, startup_delay)
        self.pace()
        return c

    def kill(self, c):
        super().kill(c)
        self.pace()


def rollout_under_load(seed, reads_total=10_000):
    rng = random.Random(seed)
    n = rng.choice([3, 5, 8])
    strategy = Strategy(rng.randint(1, n - 1), rng.randint(0, 2))
    clock = LogicalClock()
    store = ImageStore()
    new_snap = nonempty_snapshot(rng)
    old = bake_snapshot(mutate_one_cell(rng, new_snap), store, 1)
    new = bake_snapshot(new_snap, store, 2)
    rt = PacedRuntime(store, clock, startup_delay=rng.choice([0.5, 1, 2]))
    pool = ReplicaPool()
    for _ in range(n):
        pool.add(rt.launch(old, startup_delay=0))
    plan = plan_rollout(pool, new, strategy)

    issued = [0]
    errors = []
    lock = threading.Lock()
    stop = threading.Event()
    per_step = max(1, reads_total // (len(plan.steps) + 2))

    def reader():
        while True:
            with lock:
                if issued[0] >= reads_total:
                    return
                issued[0] += 1
            try:
                route_read(pool, ReadQuery(sorted(new_snap.tables)[0]))
            except Exception as exc:  # noqa: BLE001 - any failed read counts
                errors.append(exc)

    def pace():
        # Block the rollout until readers have issued another batch (or all).
        target = min(reads_total, issued[0] + per_step)
        while issued[0] < target and not stop.is_set() and any(t.is_alive() for t in threads):
            time.sleep(0)

    rt.pace = pace
    threads = [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    try:
        rollout = Rollout(plan, rt, pool)
        for due in rollout.run():
            pace()
            clock.advance_to(max(due, clock.now))
    finally:
        stop.set()
        for t in threads:
            t.join()
    return strategy, rollout.events, errors, issued[0], pool, new


@criterion(6, "zero-downtime rollout: 20 seeded rollouts keep min_available; 10^4 concurrent reads, zero errors")
def test_c6_zero_downtime_rollout():
    start = time.perf_counter()
    total_reads = 0
    for seed in range(20):
        strategy, events, errors, issued, pool, new = rollout_under_load(seed, 10_000)
        assert min(e.ready_count_after for e in events) >= strategy.min_available
        assert errors == []  # in particular no NoReplicasAvailable
        assert pool.image_ids() == [new.image_id] * len(pool)
        total_reads += issued
    assert total_reads == 20 * 10_000
    assert time.perf_counter() - start < 10.0


# --- 7 and 8 ------------------------------------------------------------------

def random_config(rng, seed):
    n = rng.randint(1, 6)
    # P = 0 rebakes after every write, so it is kept to a tenth of the runs.
    p = 0 if rng.random() < 0.1 else rng.choice([rng.uniform(0.5, 5), rng.uniform(5, 30)])
    b = 0 if rng.random() < 0.2 else rng.uniform(0, 10)
    d = 0 if rng.random() < 0.2 else rng.uniform(0, 3)
    min_available = rng.randint(1, n)
    surge = rng.randint(1, 3) if min_available == n else rng.randint(0, 3)
    horizon = p + b + rng.uniform(20, 300)
    return SimConfig(p, b, d, n, horizon, Strategy(min_available, surge),
                     write_count=100, read_rate=rng.choice([0, 0.5, 2.0]), seed=seed)


SIM_RUNS = {}


def simulations():
    if not SIM_RUNS:
        rng = random.Random(7)
        for seed in range(200):
            cfg = random_config(rng, seed)
            sim = Simulation(cfg)
            SIM_RUNS[seed] = (cfg, sim, sim.run())
    return SIM_RUNS


@criterion(7, "staleness bound soundness: 200 seeded simulations within bound; hand case gives 18")
def test_c7_staleness_bound():
    start = time.perf_counter()
    hand = SimConfig(10, 5, 1, 3, 100, Strategy(2, 1),
                     writes=[(0.0, WriteStatement.insert(SIM_TABLE.name, (1, "w1", 0.0)))])
    rep = Simulation(hand).run()
    assert [r.staleness for r in rep.records] == [18]
    assert staleness_bound(hand) == 18
    checked = 0
    for cfg, sim, rep in simulations().values():
        bound = staleness_bound(cfg)
        for r in rep.visible:
            assert 0 <= r.staleness <= bound, (cfg, r)
            assert r.write_ts <= r.dump_ts <= r.all_visible_ts
            checked += 1
        assert rep.read_error_count == 0
    assert checked > 10_000
    assert time.perf_counter() - start < 30.0


@criterion(8, "convergence: writes older than the bound are visible everywhere; every replica serves them")
def test_c8_convergence():
    for cfg, sim, rep in simulations().values():
        cutoff = cfg.horizon - staleness_bound(cfg)
        for r in rep.records:
            if r.write_ts <= cutoff:
                assert r.all_visible_ts is not None, (cfg, r)
        # Every replica serving at the horizon already holds every visible write.
        visible_keys = {written_key(r) for r in rep.visible}
        for c in sim.pool.members:
            if c.is_ready:
                assert visible_keys <= replica_keys(c)
        sim.settle()
        due = {written_key(r) for r in rep.records if r.write_ts <= cutoff}
        for c in sim.pool.members:
            assert c.is_ready
            assert due <= replica_keys(c)
        # In-flight work drains: anything already dumped ends up visible.
        assert all(r.all_visible_ts is not None for r in rep.records if r.included_generation is not None)


def written_key(record):
    return parse_write(record.statement).payload[0]


def replica_keys(c):
    return {row[0] for row in exec_read(c, ReadQuery(SIM_TABLE.name, ("id",)))}


# --- 9 ------------------------------------------------------------------------

@criterion(9, "scenario policies: read-only rejects users, eventual defers visibility, async keeps FIFO")
def test_c9_scenarios():
    start = time.perf_counter()

    run = demo_read_only()
    writes = [r for r in run.audit if r["kind"] == "write"]
    assert [r["outcome"] for r in writes] == ["WriteRejected", "ok"]
    assert all(r["mode"] == "ReadOnly" and r["target"] == "master" for r in writes)
    assert sum(r["outcome"] == "WriteRejected" for r in run.audit) == 1

    run = demo_eventual()
    (write,) = [r for r in run.audit if r["kind"] == "write"]
    assert write["outcome"] == "ok" and write["mode"] == "EventualConsistency"
    reads = [r for r in run.audit if r["kind"] == "read"]
    assert all(r["target"].startswith("replica-") and r["outcome"] == "ok" for r in reads)
    assert reads[0]["ts"] == write["ts"]  # acked and read at the same instant, before any rollout
    assert "read before rollout: 0 row(s)" in run.lines[1]
    assert any(line.startswith("read after rollout: 1 row(s)") for line in run.lines)

    run = demo_async()
    queued = [r["outcome"].split(":", 1)[1] for r in run.audit if r["kind"] == "write"]
    assert queued == ["T-0001", "T-0002", "T-0003"]
    completed = [e["ticket_id"] for e in run.gateway.notifications.events]
    assert completed == queued
    assert all(e["status"] == "Completed" for e in run.gateway.notifications.events)
    log_keys = [w.payload[0] for _, w in run.gateway.master.write_log if w.kind == "INSERT"]
    assert log_keys == [1, 2, 3]
    assert sum("Queued->Completed" in line for line in run.lines) == 3
    assert time.perf_counter() - start < 5.0


# --- 10 -----------------------------------------------------------------------

@criterion(10, "dump round-trip (1000 snapshots) and log replay from generation 0 (100 sequences)")
def test_c10_round_trip_and_replay():
    rng = random.Random(10)
    for _ in range(1000):
        snap = random_snapshot(rng)
        doc = emit_dump(snap)
        assert parse_dump(doc.text) == snap
        assert emit_dump(parse_dump(doc.text)).text == doc.text

    for seq in range(100):
        m = Master()
        schemas = [random_schema(rng, f"t{i}") for i in range(rng.randint(1, 3))]
        for s in schemas:
            m.apply_write(WriteStatement.create(s), 0)
        for t in range(1, rng.randint(20, 80)):
            s = rng.choice(schemas)
            pk_col = s.columns[s.pk_index]
            rows = m.current.table(s.name).rows
            pk = rng.choice(list(rows)) if rows and rng.random() < 0.5 else random_value(rng, pk_col.ctype)
            kind = rng.random()
            if kind < 0.5:
                row = [random_value(rng, c.ctype) for c in s.columns]
                row[s.pk_index] = pk
                w = WriteStatement.insert(s.name, tuple(row))
            elif kind < 0.8 and len(s.columns) > 1:
                col = rng.choice([c for c in s.columns if not c.is_primary_key])
                w = WriteStatement.update(s.name, pk, {col.name: random_value(rng, col.ctype)})
            else:
                w = WriteStatement.delete(s.name, pk)
            try:
                m.apply_write(w, t)
            except DuplicateKey:
                pass
        assert replay(m.write_log) == m.current
        # The text form of the log replays to the same state as well.
        assert replay([(ts, parse_write(w.to_sql())) for ts, w in m.write_log]) == m.current
        doc, _ = m.dump_now()
        assert parse_dump(doc.text) == m.current
