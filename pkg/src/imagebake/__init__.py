"""Container-native data persistence: dumps baked into immutable images,
served by disposable read-only replicas, with writes routed to a master."""

from .bakery import EngineConfig, ImageManifest, ImageStore, bake, export_image, import_image, should_rebuild, verify_image
from .clock import LogicalClock
from .dump import ColumnDef, DumpDocument, Snapshot, Table, TableSchema, emit_dump, parse_dump, snapshot_digest
from .gateway import Gateway, ReplicaPool, ScenarioPolicy, route_read
from .master import DumpStore, Generation, Master, WriteStatement, parse_write, replay
from .rollout import Strategy, execute_rollout, plan_rollout
from .runtime import ReadQuery, Runtime, exec_read, inspect
from .simulator import SimConfig, run_sim, staleness_bound, sweep

__version__ = "0.1.0"
