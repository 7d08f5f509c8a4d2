"""Operator command line.

Exit codes: 0 success, 1 usage error, 2 domain error. Data goes to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .bakery import EngineConfig, ImageStore, bake, export_image, import_image, verify_image
from .clock import LogicalClock
from .demo import SCENARIOS, run_demo
from .dump import DumpDocument, TokenStream
from .errors import DumpSyntaxError, ImagebakeError
from .gateway import ReplicaPool
from .master import DumpStore, Generation, Master, parse_write
from .rollout import Strategy, events_to_jsonl, execute_rollout, plan_rollout
from .runtime import ReadQuery, Runtime, exec_read, inspect
from .simulator import SimConfig, Simulation, grid, sweep


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def default_store() -> str:
    return os.environ.get("IMAGEBAKE_STORE", "./store")


def _csv_numbers(text: str, kind=float) -> list:
    try:
        return [kind(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_value(text: str):
    try:
        ts = TokenStream(text)
        value = ts.literal()
        if ts.at_end():
            return value
    except DumpSyntaxError:
        pass
    return text


# --- subcommands ------------------------------------------------------------

def cmd_bake(args) -> int:
    text = Path(args.dump).read_bytes()
    doc = DumpDocument(text, 0)
    gen = Generation(args.gen, doc.digest, 0)
    manifest = bake(doc, gen, EngineConfig(), ImageStore(args.store))
    print(manifest.image_id)
    return 0


def cmd_verify(args) -> int:
    store = ImageStore(args.store)
    report = verify_image(store.get_manifest(args.image), store)
    print(report.format())
    return 0 if report.passed else 2


def cmd_export(args) -> int:
    store = ImageStore(args.store)
    print(export_image(store.get_manifest(args.image), store, args.out))
    return 0


def cmd_import(args) -> int:
    print(import_image(args.archive, ImageStore(args.store)).image_id)
    return 0


def cmd_run(args) -> int:
    store = ImageStore(args.store)
    runtime = Runtime(store)
    manifest = store.get_manifest(args.image)
    instances = [runtime.launch(manifest) for _ in range(args.replicas)]
    print(json.dumps([inspect(c) for c in instances], indent=1))
    return 0


def cmd_inspect(args) -> int:
    store = ImageStore(args.store)
    c = Runtime(store).launch(store.get_manifest(args.image))
    print(json.dumps(inspect(c), indent=1))
    return 0


def cmd_read(args) -> int:
    store = ImageStore(args.store)
    c = Runtime(store).launch(store.get_manifest(args.image))
    projection = tuple(args.columns.split(",")) if args.columns else None
    predicate = None
    if args.where:
        col, sep, raw = args.where.partition("=")
        if not sep:
            raise UsageError("--where expects COLUMN=VALUE")
        predicate = (col.strip(), _parse_value(raw.strip()))
    for row in exec_read(c, ReadQuery(args.table, projection, predicate)):
        print(json.dumps(list(row)))
    return 0


def cmd_write(args) -> int:
    store = DumpStore(args.master)
    latest = store.latest()
    clock = LogicalClock(latest.created_at + 1 if latest else 0)
    master = Master.restore(store, clock)
    affected = master.apply_write(parse_write(args.sql), clock.now)
    _, gen = master.dump_now()
    print(json.dumps({"affected": affected, **gen.to_json()}))
    return 0


def cmd_rollout(args) -> int:
    store = ImageStore(args.store)
    clock = LogicalClock()
    runtime = Runtime(store, clock, startup_delay=args.startup_delay)
    pool = ReplicaPool()
    source = store.get_manifest(args.from_image)
    for _ in range(args.replicas):
        pool.add(runtime.launch(source, startup_delay=0))
    plan = plan_rollout(pool, store.get_manifest(args.to_image), Strategy(args.min_available, args.max_surge))
    events = execute_rollout(plan, runtime, pool, clock)
    text = events_to_jsonl(events)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def _sim_config(args) -> SimConfig:
    if args.config:
        obj = json.loads(Path(args.config).read_text())
    else:
        missing = [f for f in ("period", "build_time", "startup_delay", "replicas", "horizon") if getattr(args, f) is None]
        if missing:
            raise UsageError("without --config, these flags are required: " + ", ".join("--" + m.replace("_", "-") for m in missing))
        obj = {
            "dump_period": args.period, "build_time": args.build_time, "startup_delay": args.startup_delay,
            "replica_count": args.replicas, "horizon": args.horizon,
        }
        if args.write_at:
            obj["writes"] = [
                {"t": t, "sql": f"INSERT INTO events VALUES ({i}, 'w{i}', {float(t)!r});"}
                for i, t in enumerate(args.write_at, start=1)
            ]
    if getattr(args, "writes", None) is not None:
        obj["write_count"] = args.writes
    if getattr(args, "read_rate", None) is not None:
        obj["read_rate"] = args.read_rate
    if getattr(args, "seed", None) is not None:
        obj["seed"] = args.seed
    return SimConfig.from_json(obj)


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    sim = Simulation(cfg)
    report = sim.run()
    if args.out:
        Path(args.out).write_text(report.dumps_json())
    print(report.format_table())
    return 0


def cmd_sweep(args) -> int:
    base = _sim_config(args)
    axes = {}
    if args.P:
        axes["dump_period"] = _csv_numbers(args.P)
    if args.B:
        axes["build_time"] = _csv_numbers(args.B)
    if args.D:
        axes["startup_delay"] = _csv_numbers(args.D)
    if args.n:
        axes["replica_count"] = _csv_numbers(args.n, int)
    result = sweep(grid(base, **axes) if axes else [base])
    for index, message in result.errors:
        print(f"grid point {index}: {message}", file=sys.stderr)
    text = result.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 2 if result.errors else 0


def cmd_demo(args) -> int:
    sys.stdout.write(run_demo(args.scenario).output())
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="imagebake", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_store(sp):
        sp.add_argument("--store", default=default_store(), help="image store directory (env IMAGEBAKE_STORE)")
        return sp

    sp = with_store(sub.add_parser("bake", help="bake a dump file into an image"))
    sp.add_argument("--dump", required=True)
    sp.add_argument("--gen", type=int, default=1)
    sp.set_defaults(func=cmd_bake)

    sp = with_store(sub.add_parser("verify", help="recompute digests of a stored image"))
    sp.add_argument("--image", required=True)
    sp.set_defaults(func=cmd_verify)

    sp = with_store(sub.add_parser("export", help="write an image to a single-file archive"))
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export)

    sp = with_store(sub.add_parser("import", help="load an image archive into the store"))
    sp.add_argument("--archive", required=True)
    sp.set_defaults(func=cmd_import)

    sp = with_store(sub.add_parser("run", help="launch replicas and print their descriptors"))
    sp.add_argument("--image", required=True)
    sp.add_argument("--replicas", type=int, default=1)
    sp.set_defaults(func=cmd_run)

    sp = with_store(sub.add_parser("inspect", help="launch one replica and print its descriptor"))
    sp.add_argument("--image", required=True)
    sp.set_defaults(func=cmd_inspect)

    sp = with_store(sub.add_parser("read", help="query a replica launched from an image"))
    sp.add_argument("--image", required=True)
    sp.add_argument("--table", required=True)
    sp.add_argument("--columns", help="comma-separated projection (default: all)")
    sp.add_argument("--where", help="COLUMN=VALUE equality predicate")
    sp.set_defaults(func=cmd_read)

    sp = sub.add_parser("write", help="apply one write on the master and dump a new generation")
    sp.add_argument("--master", required=True, help="dump store directory of the master")
    sp.add_argument("--sql", required=True)
    sp.set_defaults(func=cmd_write)

    sp = with_store(sub.add_parser("rollout", help="roll a pool from one image to another"))
    sp.add_argument("--from-image", dest="from_image", required=True)
    sp.add_argument("--to-image", dest="to_image", required=True)
    sp.add_argument("--replicas", type=int, default=3)
    sp.add_argument("--min-available", type=int, default=2)
    sp.add_argument("--max-surge", type=int, default=1)
    sp.add_argument("--startup-delay", type=float, default=1)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_rollout)

    def sim_flags(sp):
        sp.add_argument("--config", help="JSON simulation config")
        sp.add_argument("--period", type=float)
        sp.add_argument("--build-time", type=float)
        sp.add_argument("--startup-delay", type=float)
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--horizon", type=float)
        sp.add_argument("--write-at", type=float, action="append", help="commit a write at this time (repeatable)")
        sp.add_argument("--writes", type=int, help="number of random writes")
        sp.add_argument("--read-rate", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    sp = sub.add_parser("simulate", help="run one staleness simulation")
    sim_flags(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="run simulations over a parameter grid and emit CSV")
    sim_flags(sp)
    sp.add_argument("--P", help="comma-separated dump periods")
    sp.add_argument("--B", help="comma-separated build times")
    sp.add_argument("--D", help="comma-separated startup delays")
    sp.add_argument("--n", help="comma-separated replica counts")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("demo", help="scripted scenario walkthrough")
    sp.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    sp.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"imagebake: error: {exc}", file=sys.stderr)
        return 1
    except ImagebakeError as exc:
        print(f"imagebake: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"imagebake: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
