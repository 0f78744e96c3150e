"""The remote agent: executes packaged steps and hosts the remote blob store.

``AgentCore`` is transport-free request handling, shared by the in-process
simulated transport and the TCP server. The TCP server handles each
connection on its own thread with one request/response in flight at a time;
per-frame failures become ERR replies, never crashes.
"""

from __future__ import annotations

import logging
import signal
import socketserver
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import wire
from .errors import BadFrame, DataUnavailable, FerryError, UnknownTask
from .mdss import WRITER_REMOTE, BlobStore, VersionStamp, checksum_of
from .messages import PackagedStep, RemoteResult
from .tasks import DEFAULT_REGISTRY, TaskIO, TaskRegistry

log = logging.getLogger("ferry.agent")


@dataclass
class AgentConfig:
    """How the agent runs: where it listens, how fast it computes, where data lives."""

    store_root: Path
    listen: str | None = None  # "host:port", None for in-process use
    speed_factor: float = 1.0
    sim_latency_ms: float = 0.0
    sim_bandwidth_bps: float | None = None  # None = infinite
    time_source: object = field(default=time.time, repr=False)

    def __post_init__(self):
        if self.speed_factor <= 0:
            raise ValueError(f"speed_factor must be positive, got {self.speed_factor}")

    def split_listen(self) -> tuple[str, int]:
        host, _, port = (self.listen or "").rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"listen address must be host:port, got {self.listen!r}")
        return host, int(port)


class AgentCore:
    """Stateless request handler; the remote blob store is its only state."""

    def __init__(self, config: AgentConfig, registry: TaskRegistry = DEFAULT_REGISTRY):
        self.config = config
        self.registry = registry
        self.store = BlobStore(
            config.store_root, writer=WRITER_REMOTE, time_source=config.time_source
        )

    def handle(self, frame_type: int, payload: bytes) -> tuple[int, bytes, float]:
        """Dispatch one request; returns (reply type, reply payload, service ms).

        Service time models task compute; the TCP server sleeps it, the
        simulated transport adds it to the virtual clock.
        """
        try:
            if frame_type == wire.FrameType.OFFLOAD_REQ:
                return self._offload(payload)
            if frame_type == wire.FrameType.SYNC_QUERY:
                return self._sync_query(payload)
            if frame_type == wire.FrameType.SYNC_PUSH:
                return self._sync_push(payload)
            if frame_type == wire.FrameType.SYNC_PULL:
                return self._sync_pull(payload)
            return (
                wire.FrameType.ERR,
                wire.err_payload(wire.ERR_UNKNOWN_TYPE, f"frame type {frame_type:#x} not understood"),
                0.0,
            )
        except BadFrame as exc:
            return wire.FrameType.ERR, wire.err_payload(wire.ERR_BAD_FRAME, str(exc)), 0.0

    def _offload(self, payload: bytes) -> tuple[int, bytes, float]:
        step = PackagedStep.from_payload(payload)
        try:
            fn = self.registry.get(step.task_ref)
        except UnknownTask as exc:
            return wire.FrameType.ERR, wire.err_payload(wire.ERR_UNKNOWN_TASK, str(exc)), 0.0

        for ref in step.data_refs:
            if not self.store.holds(ref.uri):
                return (
                    wire.FrameType.ERR,
                    wire.err_payload(wire.ERR_DATA_MISSING, f"{ref.uri} is not in the remote store"),
                    0.0,
                )

        io = TaskIO(
            data_uris=[ref.uri for ref in step.data_refs],
            input_names=step.inputs,
            output_names=step.outputs,
            read_blob=lambda uri: self.store.get(uri).payload,
            write_blob=self.store.put,
        )
        try:
            values = [step.input_bindings[name] for name in step.inputs]
            outputs = list(fn(values, io))
            if len(outputs) != len(step.outputs):
                raise ValueError(
                    f"task '{step.task_ref}' returned {len(outputs)} values for "
                    f"{len(step.outputs)} outputs"
                )
        except Exception as exc:  # noqa: BLE001 - carried back verbatim
            return wire.FrameType.ERR, wire.err_payload(wire.ERR_TASK_FAILED, str(exc)), 0.0

        service_ms = step.nominal_cost / self.config.speed_factor
        result = RemoteResult(
            step_id=step.step_id,
            output_bindings=dict(zip(step.outputs, outputs)),
            produced_data=tuple(io.produced),
            remote_elapsed_ms=service_ms,
        )
        return wire.FrameType.OFFLOAD_RES, result.to_payload(), service_ms

    def _sync_query(self, payload: bytes) -> tuple[int, bytes, float]:
        uri = str(wire.parse_json(payload)["uri"])
        stamp = self.store.stamp(uri)
        body = {"uri": uri, "stamp": stamp.to_json() if stamp else None}
        return wire.FrameType.SYNC_QUERY_RES, wire.canonical_json(body), 0.0

    def _sync_push(self, payload: bytes) -> tuple[int, bytes, float]:
        header, blob = wire.decode_blob_payload(payload)
        uri = str(header["uri"])
        if checksum_of(blob).hex() != header["checksum"]:
            return (
                wire.FrameType.ERR,
                wire.err_payload(wire.ERR_BAD_FRAME, f"push of {uri} failed its checksum"),
                0.0,
            )
        stamp = VersionStamp.from_json(header["stamp"])
        self.store.install(uri, blob, stamp)
        body = {"uri": uri, "stamp": stamp.to_json()}
        return wire.FrameType.SYNC_QUERY_RES, wire.canonical_json(body), 0.0

    def _sync_pull(self, payload: bytes) -> tuple[int, bytes, float]:
        uri = str(wire.parse_json(payload)["uri"])
        try:
            obj = self.store.get(uri)
        except DataUnavailable as exc:
            return wire.FrameType.ERR, wire.err_payload(wire.ERR_DATA_MISSING, str(exc)), 0.0
        header = {"uri": uri, "stamp": obj.version.to_json(), "checksum": obj.checksum.hex()}
        return wire.FrameType.SYNC_DATA, wire.encode_blob_payload(header, obj.payload), 0.0


class _AgentHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        core: AgentCore = self.server.core  # type: ignore[attr-defined]
        sock = self.request
        try:
            while True:
                try:
                    frame_type, payload = wire.read_frame(lambda n: _recv_exact(sock, n))
                except EOFError:
                    return
                except BadFrame as exc:
                    sock.sendall(
                        wire.encode_frame(
                            wire.FrameType.ERR, wire.err_payload(wire.ERR_BAD_FRAME, str(exc))
                        )
                    )
                    return
                try:
                    rtype, rpayload, service_ms = core.handle(frame_type, payload)
                except Exception as exc:  # noqa: BLE001 - a request must never kill the agent
                    log.exception("request handling failed")
                    rtype = wire.FrameType.ERR
                    rpayload = wire.err_payload(wire.ERR_BAD_FRAME, f"internal error: {exc}")
                    service_ms = 0.0
                if service_ms > 0:
                    time.sleep(service_ms / 1000.0)
                sock.sendall(wire.encode_frame(rtype, rpayload))
        except OSError as exc:
            log.debug("connection dropped: %s", exc)


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(remaining)
        if not chunk:
            raise EOFError(f"connection closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class AgentServer(socketserver.ThreadingTCPServer):
    """TCP front end around an AgentCore; one thread per connection."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, core: AgentCore, host: str, port: int):
        super().__init__((host, port), _AgentHandler)
        self.core = core

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]


def serve(config: AgentConfig, registry: TaskRegistry = DEFAULT_REGISTRY) -> None:
    """Run the agent until interrupted; used by the ``agent`` CLI subcommand."""
    if config.listen is None:
        raise FerryError("agent needs a listen address")
    host, port = config.split_listen()
    core = AgentCore(config, registry)
    server = AgentServer(core, host, port)

    def _stop(signum, frame):
        log.info("shutting down on signal %s", signum)
        server.shutdown()

    signal.signal(signal.SIGINT, _stop)
    signal.signal(signal.SIGTERM, _stop)
    log.info("agent listening on %s:%d, store at %s", host, port, config.store_root)
    try:
        server.serve_forever(poll_interval=0.2)
    finally:
        server.server_close()


__all__ = ["AgentConfig", "AgentCore", "AgentServer", "serve"]
