"""Bake dumps into immutable, content-addressed images.

An image is exactly two layers: an engine layer (the canonical serialization
of the engine config) and a data layer (the canonical dump bytes). The image
id hashes the ordered layer digests together with the entrypoint, so the
same dump and config always produce the same id no matter when or where the
build ran.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tarfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .dump import DumpDocument, Snapshot, emit_dump, parse_dump
from .errors import (
    DigestMismatch,
    ImagebakeError,
    InvalidConfig,
    InvalidDump,
    MissingLayer,
    StorageError,
)
from .master import Generation

ENGINE = "engine"
DATA = "data"

ENTRYPOINT = {"service": "read-only-query", "autostart": True, "preloaded": True}


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


@dataclass(frozen=True)
class EngineConfig:
    read_protocol_version: int = 1
    tuning: dict = field(default_factory=lambda: {"locking": False})

    def __post_init__(self):
        tuning = dict(self.tuning)
        tuning.setdefault("locking", False)
        object.__setattr__(self, "tuning", tuning)

    def to_bytes(self) -> bytes:
        return canonical_json({"read_protocol_version": self.read_protocol_version, "tuning": self.tuning})

    @classmethod
    def from_bytes(cls, data: bytes) -> "EngineConfig":
        obj = json.loads(data)
        return cls(obj["read_protocol_version"], obj["tuning"])


@dataclass(frozen=True)
class Layer:
    role: str
    digest: str
    size_bytes: int

    def to_json(self) -> dict:
        return {"role": self.role, "digest": self.digest, "size_bytes": self.size_bytes}


@dataclass(frozen=True)
class BuildMeta:
    source_digest: str
    built_at: float


@dataclass(frozen=True)
class ImageManifest:
    image_id: str
    layers: tuple[Layer, ...]
    generation: int
    mounts: tuple = ()
    entrypoint: dict = field(default_factory=lambda: dict(ENTRYPOINT))
    build_meta: BuildMeta | None = None

    def layer(self, role: str) -> Layer:
        for layer in self.layers:
            if layer.role == role:
                return layer
        raise MissingLayer(f"image {self.image_id[:12]} has no {role} layer")

    def to_json(self) -> dict:
        meta = None
        if self.build_meta is not None:
            meta = {"source_digest": self.build_meta.source_digest, "built_at": _jsonable_ts(self.build_meta.built_at)}
        return {
            "image_id": self.image_id,
            "layers": [layer.to_json() for layer in self.layers],
            "generation": self.generation,
            "mounts": list(self.mounts),
            "entrypoint": self.entrypoint,
            "build_meta": meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "ImageManifest":
        meta = obj.get("build_meta")
        return cls(
            image_id=obj["image_id"],
            layers=tuple(Layer(e["role"], e["digest"], e["size_bytes"]) for e in obj["layers"]),
            generation=obj["generation"],
            mounts=tuple(obj["mounts"]),
            entrypoint=obj["entrypoint"],
            build_meta=BuildMeta(meta["source_digest"], meta["built_at"]) if meta else None,
        )


def _jsonable_ts(ts: float):
    return int(ts) if isinstance(ts, float) and ts.is_integer() else ts


def compute_image_id(layers, entrypoint: dict) -> str:
    return sha256_hex(canonical_json({"entrypoint": entrypoint, "layers": [layer.digest for layer in layers]}))


class ImageStore:
    """Layer blobs and manifests, on disk (``root`` given) or in memory.

    Layout: ``layers/<digest>.blob`` and ``manifests/<image_id>.json``. Layer
    writes are first-writer-wins; existing blobs are never rewritten.
    """

    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else None
        self._layers: dict[str, bytes] = {}
        self._manifests: dict[str, str] = {}
        # Decoded data layers. Valid forever because blobs are content-addressed.
        self._decoded: dict[str, Snapshot] = {}
        self._lock = threading.Lock()
        if self.root is not None:
            try:
                (self.root / "layers").mkdir(parents=True, exist_ok=True)
                (self.root / "manifests").mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise StorageError(f"cannot create image store at {self.root}: {exc}") from exc

    def _layer_path(self, digest: str) -> Path:
        return self.root / "layers" / f"{digest}.blob"

    def has_layer(self, digest: str) -> bool:
        if self.root is None:
            return digest in self._layers
        return self._layer_path(digest).is_file()

    def put_layer(self, data: bytes, expected_digest: str | None = None) -> tuple[str, bool]:
        """Store `data`; returns ``(digest, created)``."""
        digest = sha256_hex(data)
        if expected_digest is not None and expected_digest != digest:
            raise DigestMismatch(f"layer digest {digest} does not match expected {expected_digest}")
        with self._lock:
            if self.has_layer(digest):
                return digest, False
            if self.root is None:
                self._layers[digest] = bytes(data)
            else:
                path = self._layer_path(digest)
                tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
                try:
                    tmp.write_bytes(data)
                    os.replace(tmp, path)
                except OSError as exc:
                    raise StorageError(f"cannot write layer {digest}: {exc}") from exc
        return digest, True

    def read_layer(self, digest: str) -> bytes:
        if self.root is None:
            try:
                return self._layers[digest]
            except KeyError:
                raise MissingLayer(f"layer {digest} not in store") from None
        try:
            return self._layer_path(digest).read_bytes()
        except FileNotFoundError:
            raise MissingLayer(f"layer {digest} not in store") from None
        except OSError as exc:
            raise StorageError(f"cannot read layer {digest}: {exc}") from exc

    def load_snapshot(self, digest: str) -> Snapshot:
        """Parse the data layer `digest`, memoized by digest."""
        snap = self._decoded.get(digest)
        if snap is None:
            snap = parse_dump(self.read_layer(digest))
            self._decoded[digest] = snap
        return snap

    def put_manifest(self, manifest: ImageManifest) -> None:
        text = manifest.dumps()
        with self._lock:
            if self.root is None:
                self._manifests[manifest.image_id] = text
                return
            path = self.root / "manifests" / f"{manifest.image_id}.json"
            tmp = path.with_name(path.name + ".tmp")
            try:
                tmp.write_text(text)
                os.replace(tmp, path)
            except OSError as exc:
                raise StorageError(f"cannot write manifest {manifest.image_id}: {exc}") from exc

    def get_manifest(self, image_id: str) -> ImageManifest:
        if self.root is None:
            try:
                text = self._manifests[image_id]
            except KeyError:
                raise ImagebakeError(f"unknown image {image_id}") from None
        else:
            path = self.root / "manifests" / f"{image_id}.json"
            if not path.is_file():
                raise ImagebakeError(f"unknown image {image_id}")
            text = path.read_text()
        return ImageManifest.from_json(json.loads(text))

    def manifest_texts(self) -> Iterator[str]:
        if self.root is None:
            yield from list(self._manifests.values())
            return
        for path in sorted((self.root / "manifests").glob("*.json")):
            yield path.read_text()

    def manifests(self) -> Iterator[ImageManifest]:
        for text in self.manifest_texts():
            yield ImageManifest.from_json(json.loads(text))


def bake(d: DumpDocument, g: Generation, cfg: EngineConfig, store: ImageStore,
         built_at: float = 0) -> ImageManifest:
    """Inject dump `d` into a new image and persist it in `store`.

    The dump is re-emitted in canonical form for the data layer, so any two
    dumps describing the same state bake to the same data layer.
    """
    if g.digest != d.digest:
        raise DigestMismatch(f"generation {g.number} digest {g.digest[:12]} does not match dump {d.digest[:12]}")
    try:
        snapshot = parse_dump(d.text)
    except ImagebakeError as exc:
        raise InvalidDump(f"cannot bake generation {g.number}: {exc}") from exc
    if cfg.tuning.get("locking") is not False:
        raise InvalidConfig("read-only images must be baked with tuning.locking = false")

    engine_bytes = cfg.to_bytes()
    data_bytes = emit_dump(snapshot).text
    engine_digest, _ = store.put_layer(engine_bytes)
    data_digest, _ = store.put_layer(data_bytes)
    store._decoded.setdefault(data_digest, snapshot)
    layers = (
        Layer(ENGINE, engine_digest, len(engine_bytes)),
        Layer(DATA, data_digest, len(data_bytes)),
    )
    entrypoint = dict(ENTRYPOINT)
    manifest = ImageManifest(
        image_id=compute_image_id(layers, entrypoint),
        layers=layers,
        generation=g.number,
        mounts=(),
        entrypoint=entrypoint,
        build_meta=BuildMeta(g.digest, built_at),
    )
    store.put_manifest(manifest)
    return manifest


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    image_id: str
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def format(self) -> str:
        lines = [f"image {self.image_id}"]
        for c in self.checks:
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}" + (f": {c.detail}" if c.detail else ""))
        return "\n".join(lines)


def verify_image(m: ImageManifest, store: ImageStore) -> VerificationReport:
    checks = []
    roles = [layer.role for layer in m.layers]
    checks.append(Check("layer order", roles == [ENGINE, DATA], f"roles {roles}"))
    for layer in m.layers:
        data = store.read_layer(layer.digest)
        actual = sha256_hex(data)
        checks.append(Check(
            f"layer {layer.role} digest",
            actual == layer.digest and len(data) == layer.size_bytes,
            "" if actual == layer.digest else f"stored bytes hash to {actual}",
        ))
    expected_id = compute_image_id(m.layers, m.entrypoint)
    checks.append(Check("image id", expected_id == m.image_id, "" if expected_id == m.image_id else f"recomputed {expected_id}"))
    checks.append(Check("mounts empty", list(m.mounts) == [], f"mounts {list(m.mounts)}" if m.mounts else ""))
    if ENGINE in roles:
        try:
            cfg = EngineConfig.from_bytes(store.read_layer(m.layer(ENGINE).digest))
            locking = cfg.tuning.get("locking")
        except (ValueError, KeyError, TypeError):
            locking = "unreadable"
        checks.append(Check("locking disabled", locking is False, "" if locking is False else f"locking={locking}"))
    return VerificationReport(m.image_id, checks)


def should_rebuild(prev: ImageManifest | None, g: Generation) -> bool:
    return prev is None or prev.build_meta is None or prev.build_meta.source_digest != g.digest


# --- portability ------------------------------------------------------------

def export_image(m: ImageManifest, store: ImageStore, path: str | os.PathLike) -> Path:
    """Write manifest and layers to one deterministic tar archive."""
    path = Path(path)
    entries = [("manifest.json", m.dumps().encode("utf-8"))]
    for layer in m.layers:
        entries.append((f"layers/{layer.digest}.blob", store.read_layer(layer.digest)))
    try:
        with tarfile.open(path, "w", format=tarfile.PAX_FORMAT) as tar:
            for name, data in entries:
                info = tarfile.TarInfo(name)
                info.size = len(data)
                info.mode = 0o644
                info.mtime = 0
                tar.addfile(info, io.BytesIO(data))
    except OSError as exc:
        raise StorageError(f"cannot write archive {path}: {exc}") from exc
    return path


def import_image(path: str | os.PathLike, store: ImageStore) -> ImageManifest:
    """Load an archive made by :func:`export_image` into `store`."""
    try:
        with tarfile.open(path, "r") as tar:
            blobs = {}
            manifest_obj = None
            for member in tar.getmembers():
                if not member.isfile():
                    continue
                data = tar.extractfile(member).read()
                if member.name == "manifest.json":
                    manifest_obj = json.loads(data)
                elif member.name.startswith("layers/") and member.name.endswith(".blob"):
                    blobs[member.name[len("layers/"):-len(".blob")]] = data
    except (OSError, tarfile.TarError, ValueError) as exc:
        raise StorageError(f"cannot read archive {path}: {exc}") from exc
    if manifest_obj is None:
        raise StorageError(f"archive {path} has no manifest.json")
    manifest = ImageManifest.from_json(manifest_obj)
    for layer in manifest.layers:
        if layer.digest not in blobs:
            raise MissingLayer(f"archive {path} lacks layer {layer.digest}")
        store.put_layer(blobs[layer.digest], expected_digest=layer.digest)
    store.put_manifest(manifest)
    return manifest
