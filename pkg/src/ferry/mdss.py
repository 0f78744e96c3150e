"""URI-addressed versioned blob stores with explicit last-write-wins sync.

Two stores exist per deployment: one local, one embedded in the remote agent.
Each holds blobs under ``mdss://<dataset>/<name>`` URIs, one file per object
plus a sidecar metadata file carrying the version stamp and content hash.
Synchronization is explicitly triggered and converges both sides on the
greatest version stamp; ``decide_transfer`` answers whether an offload can
skip shipping data because the remote copy is already current.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from . import wire
from .errors import (
    ChecksumMismatch,
    ConnectFailed,
    DataUnavailable,
    MalformedUri,
    RemoteUnreachable,
    StorageFull,
)

URI_PREFIX = "mdss://"
_SEGMENT_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")

WRITER_LOCAL = "local"
WRITER_REMOTE = "remote"

# decide_transfer answers
SKIP_DATA = "SkipData"
SYNC_FIRST = "SyncFirst"

# SyncOutcome actions
PUSHED_TO_REMOTE = "PushedToRemote"
PULLED_TO_LOCAL = "PulledToLocal"
ALREADY_IN_SYNC = "AlreadyInSync"


def parse_uri(uri: str) -> tuple[str, ...]:
    """Split a well-formed mdss URI into its path segments."""
    if not uri.startswith(URI_PREFIX):
        raise MalformedUri(f"URI must start with {URI_PREFIX!r}: {uri!r}")
    segments = uri[len(URI_PREFIX) :].split("/")
    if len(segments) < 2:
        raise MalformedUri(f"URI needs a dataset and a name: {uri!r}")
    for seg in segments:
        if not seg or seg in (".", "..") or set(seg) - _SEGMENT_OK:
            raise MalformedUri(f"bad URI segment {seg!r} in {uri!r}")
    return tuple(segments)


def checksum_of(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def format_written_at(seconds: float) -> str:
    # Fixed six-decimal form keeps serialized stamps byte-stable in length.
    return f"{seconds:.6f}"


@dataclass(frozen=True, order=False)
class VersionStamp:
    """Per-URI write version: monotone counter, then timestamp, then writer id."""

    counter: int
    written_at: float
    writer: str

    def key(self) -> tuple[int, float, str]:
        return (self.counter, self.written_at, self.writer)

    def __lt__(self, other: "VersionStamp") -> bool:
        return self.key() < other.key()

    def __le__(self, other: "VersionStamp") -> bool:
        return self.key() <= other.key()

    def __gt__(self, other: "VersionStamp") -> bool:
        return self.key() > other.key()

    def __ge__(self, other: "VersionStamp") -> bool:
        return self.key() >= other.key()

    def to_json(self) -> dict:
        return {
            "counter": self.counter,
            "written_at": format_written_at(self.written_at),
            "writer": self.writer,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VersionStamp":
        return cls(
            counter=int(obj["counter"]),
            written_at=float(obj["written_at"]),
            writer=str(obj["writer"]),
        )


@dataclass(frozen=True)
class DataObject:
    uri: str
    payload: bytes
    version: VersionStamp
    checksum: bytes


@dataclass(frozen=True)
class SyncOutcome:
    uri: str
    action: str  # PushedToRemote | PulledToLocal | AlreadyInSync
    bytes_moved: int


class BlobStore:
    """One side's object store: a directory of blobs plus sidecar metadata.

    Writes to the same URI are serialized; distinct URIs may be written
    concurrently. ``subscribe`` registers a hook fired after every local
    write, left as the attachment point for a future background sync
    scheduler.
    """

    def __init__(
        self,
        root: Path | str,
        writer: str = WRITER_LOCAL,
        *,
        capacity_bytes: int | None = None,
        time_source: Callable[[], float] = time.time,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.writer = writer
        self.capacity_bytes = capacity_bytes
        self.time_source = time_source
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._subscribers: list[Callable[[str, VersionStamp], None]] = []

    def subscribe(self, hook: Callable[[str, VersionStamp], None]) -> None:
        self._subscribers.append(hook)

    def _lock_for(self, uri: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(uri, threading.Lock())

    def _paths(self, uri: str) -> tuple[Path, Path]:
        segments = parse_uri(uri)
        base = self.root.joinpath(*segments)
        return base.with_name(base.name + ".blob"), base.with_name(base.name + ".meta.json")

    def _used_bytes(self) -> int:
        return sum(p.stat().st_size for p in self.root.rglob("*.blob"))

    def _write(self, uri: str, payload: bytes, stamp: VersionStamp) -> None:
        blob_path, meta_path = self._paths(uri)
        if self.capacity_bytes is not None:
            existing = blob_path.stat().st_size if blob_path.exists() else 0
            if self._used_bytes() - existing + len(payload) > self.capacity_bytes:
                raise StorageFull(f"writing {len(payload)} bytes to {uri} exceeds capacity")
        blob_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = blob_path.with_suffix(".blob.tmp")
        tmp.write_bytes(payload)
        tmp.replace(blob_path)
        meta = {"uri": uri, "checksum": checksum_of(payload).hex(), **stamp.to_json()}
        meta_path.write_text(json.dumps(meta, sort_keys=True, indent=1), encoding="utf-8")

    def put(self, uri: str, payload: bytes) -> VersionStamp:
        """Store a new version; the stamp is strictly greater than any prior one."""
        with self._lock_for(uri):
            prev = self.stamp(uri)
            # Pin written_at to its serialized precision so a stamp compares
            # equal before and after a trip through the sidecar or the wire.
            written_at = float(format_written_at(self.time_source()))
            stamp = VersionStamp(
                counter=(prev.counter + 1) if prev else 1,
                written_at=written_at,
                writer=self.writer,
            )
            self._write(uri, payload, stamp)
        for hook in self._subscribers:
            hook(uri, stamp)
        return stamp

    def install(self, uri: str, payload: bytes, stamp: VersionStamp) -> None:
        """Adopt a payload with its stamp verbatim (the receiving end of a sync)."""
        with self._lock_for(uri):
            self._write(uri, payload, stamp)

    def stamp(self, uri: str) -> VersionStamp | None:
        _, meta_path = self._paths(uri)
        if not meta_path.exists():
            return None
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        return VersionStamp.from_json(meta)

    def holds(self, uri: str) -> bool:
        return self.stamp(uri) is not None

    def get(self, uri: str) -> DataObject:
        blob_path, meta_path = self._paths(uri)
        if not blob_path.exists() or not meta_path.exists():
            raise DataUnavailable(f"{uri} is not in the store at {self.root}")
        payload = blob_path.read_bytes()
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        digest = checksum_of(payload)
        if digest.hex() != meta["checksum"]:
            raise ChecksumMismatch(f"stored payload for {uri} does not match its recorded checksum")
        return DataObject(uri=uri, payload=payload, version=VersionStamp.from_json(meta), checksum=digest)

    def uris(self) -> list[str]:
        found: list[str] = []
        for meta_path in sorted(self.root.rglob("*.meta.json")):
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            found.append(meta["uri"])
        return found

    def fingerprint(self) -> str:
        """Content hash over every object and stamp; used to prove non-mutation."""
        acc = hashlib.sha256()
        for uri in self.uris():
            obj = self.get(uri)
            acc.update(uri.encode())
            acc.update(obj.checksum)
            acc.update(wire.canonical_json(obj.version.to_json()))
        return acc.hexdigest()


class DataSync:
    """Client half of the sync protocol: compares stamps, pushes or pulls blobs.

    ``total_bytes`` accumulates wire bytes across every exchange so callers
    can attribute transfer cost to the operation that caused it.
    """

    def __init__(self, local: BlobStore, transport):
        self.local = local
        self.transport = transport
        self.total_bytes = 0

    def _exchange(self, frame_type: int, payload: bytes):
        try:
            result = self.transport.exchange(frame_type, payload)
        except (ConnectFailed, OSError, EOFError) as exc:
            raise RemoteUnreachable(f"remote store unreachable: {exc}") from None
        self.total_bytes += result.sent_bytes + result.received_bytes
        return result

    def _expect(self, result, frame_type: int):
        if result.rtype == wire.FrameType.ERR:
            err = wire.parse_json(result.payload)
            code, message = err.get("code"), err.get("message", "")
            if code == wire.ERR_DATA_MISSING:
                raise DataUnavailable(message)
            raise RemoteUnreachable(f"remote store error {code}: {message}")
        if result.rtype != frame_type:
            raise RemoteUnreachable(f"unexpected reply frame type {result.rtype:#x}")
        return result

    def remote_stamp(self, uri: str) -> tuple[VersionStamp | None, int]:
        """Query the remote stamp for a URI; returns (stamp, exchange wire bytes)."""
        parse_uri(uri)
        res = self._expect(
            self._exchange(wire.FrameType.SYNC_QUERY, wire.canonical_json({"uri": uri})),
            wire.FrameType.SYNC_QUERY_RES,
        )
        body = wire.parse_json(res.payload)
        stamp = VersionStamp.from_json(body["stamp"]) if body.get("stamp") else None
        return stamp, res.sent_bytes + res.received_bytes

    def decide_transfer(self, uri: str) -> str:
        """SkipData when the remote copy is current (stamp >= local), else SyncFirst.

        Never mutates either store.
        """
        remote, _ = self.remote_stamp(uri)
        local = self.local.stamp(uri)
        if local is None:
            return SKIP_DATA
        if remote is None:
            return SYNC_FIRST
        return SKIP_DATA if remote >= local else SYNC_FIRST

    def synchronize(self, uri: str) -> SyncOutcome:
        """Converge both stores on the last-written version of one URI."""
        remote, meta_bytes = self.remote_stamp(uri)
        local = self.local.stamp(uri)
        if local is None and remote is None:
            raise DataUnavailable(f"{uri} exists in neither store")
        if remote is None or (local is not None and local > remote):
            moved = self._push(uri)
            return SyncOutcome(uri=uri, action=PUSHED_TO_REMOTE, bytes_moved=meta_bytes + moved)
        if local is None or remote > local:
            moved = self._pull(uri)
            return SyncOutcome(uri=uri, action=PULLED_TO_LOCAL, bytes_moved=meta_bytes + moved)
        return SyncOutcome(uri=uri, action=ALREADY_IN_SYNC, bytes_moved=meta_bytes)

    def _push(self, uri: str) -> int:
        obj = self.local.get(uri)
        header = {"uri": uri, "stamp": obj.version.to_json(), "checksum": obj.checksum.hex()}
        payload = wire.encode_blob_payload(header, obj.payload)
        total = 0
        for attempt in (1, 2):
            res = self._exchange(wire.FrameType.SYNC_PUSH, payload)
            total += res.sent_bytes + res.received_bytes
            if res.rtype == wire.FrameType.SYNC_QUERY_RES:
                return total
            err = wire.parse_json(res.payload) if res.rtype == wire.FrameType.ERR else {}
            if err.get("code") != wire.ERR_BAD_FRAME or attempt == 2:
                if err.get("code") == wire.ERR_BAD_FRAME:
                    raise ChecksumMismatch(f"push of {uri} failed verification twice")
                raise RemoteUnreachable(f"push of {uri} rejected: {err}")
        raise ChecksumMismatch(f"push of {uri} failed verification twice")

    def _pull(self, uri: str) -> int:
        total = 0
        for attempt in (1, 2):
            res = self._expect(
                self._exchange(wire.FrameType.SYNC_PULL, wire.canonical_json({"uri": uri})),
                wire.FrameType.SYNC_DATA,
            )
            total += res.sent_bytes + res.received_bytes
            header, blob = wire.decode_blob_payload(res.payload)
            if checksum_of(blob).hex() == header["checksum"]:
                self.local.install(uri, blob, VersionStamp.from_json(header["stamp"]))
                return total
        raise ChecksumMismatch(f"pull of {uri} failed verification twice")


def sync_all(sync: DataSync, uris: Iterable[str]) -> list[SyncOutcome]:
    return [sync.synchronize(uri) for uri in dict.fromkeys(uris)]


__all__ = [
    "ALREADY_IN_SYNC",
    "BlobStore",
    "DataObject",
    "DataSync",
    "PULLED_TO_LOCAL",
    "PUSHED_TO_REMOTE",
    "SKIP_DATA",
    "SYNC_FIRST",
    "SyncOutcome",
    "VersionStamp",
    "WRITER_LOCAL",
    "WRITER_REMOTE",
    "checksum_of",
    "format_written_at",
    "parse_uri",
    "sync_all",
]
