"""Client transports: a real TCP connection and an in-process simulated one.

Both expose ``exchange(frame_type, payload) -> ExchangeResult``. The
simulated transport calls an agent handler directly and models elapsed time
as ``latency + wire_bytes / bandwidth`` per exchange (latency charged once,
on the request leg; transfer time counts both directions), advancing the
clock it was constructed with. Each in-flight offload owns its transport.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass
from typing import Callable

from . import wire
from .clock import Clock
from .errors import BadFrame, ConnectFailed

AgentHandler = Callable[[int, bytes], tuple[int, bytes, float]]


@dataclass(frozen=True)
class SimParams:
    """Modeled link and remote-speed parameters for the simulated transport."""

    speed: float = 1.0
    latency_ms: float = 0.0
    bandwidth_bps: float | None = None  # bytes per second; None = infinite

    @classmethod
    def parse(cls, text: str) -> "SimParams":
        """Parse ``speed=S,latency=L,bandwidth=B`` (latency in ms, bandwidth in bytes/s)."""
        values = {"speed": 1.0, "latency": 0.0, "bandwidth": None}
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            key, _, raw = part.partition("=")
            key = key.strip()
            if key not in values:
                raise ValueError(f"unknown sim parameter {key!r}")
            raw = raw.strip()
            values[key] = None if raw in ("inf", "none", "") else float(raw)
        if values["speed"] is None or values["speed"] <= 0:
            raise ValueError("sim speed must be a positive number")
        if values["latency"] is None:
            values["latency"] = 0.0
        return cls(speed=values["speed"], latency_ms=values["latency"], bandwidth_bps=values["bandwidth"])


@dataclass(frozen=True)
class ExchangeResult:
    """One request/response: reply frame, byte counts, and the modeled timeline."""

    rtype: int
    payload: bytes
    sent_bytes: int
    received_bytes: int
    started_ms: float
    remote_start_ms: float
    remote_end_ms: float
    finished_ms: float


def _transfer_ms(nbytes: int, bandwidth_bps: float | None) -> float:
    if bandwidth_bps is None:
        return 0.0
    return nbytes / bandwidth_bps * 1000.0


class SimTransport:
    """Drives an agent handler in-process under modeled time."""

    def __init__(self, handler: AgentHandler, params: SimParams, clock: Clock):
        self.handler = handler
        self.params = params
        self.clock = clock

    def exchange(self, frame_type: int, payload: bytes) -> ExchangeResult:
        sent = wire.frame_wire_size(len(payload))
        if 1 + len(payload) > wire.MAX_FRAME_BYTES:
            raise BadFrame(f"frame of {1 + len(payload)} bytes exceeds the cap")
        started = self.clock.now_ms
        rtype, rpayload, service_ms = self.handler(frame_type, payload)
        received = wire.frame_wire_size(len(rpayload))

        self.clock.advance(self.params.latency_ms + _transfer_ms(sent, self.params.bandwidth_bps))
        remote_start = self.clock.now_ms
        self.clock.advance(service_ms)
        remote_end = self.clock.now_ms
        self.clock.advance(_transfer_ms(received, self.params.bandwidth_bps))

        return ExchangeResult(
            rtype=rtype,
            payload=rpayload,
            sent_bytes=sent,
            received_bytes=received,
            started_ms=started,
            remote_start_ms=remote_start,
            remote_end_ms=remote_end,
            finished_ms=self.clock.now_ms,
        )

    def close(self) -> None:
        pass


class TcpTransport:
    """One socket to a running agent; blocking request/response."""

    def __init__(self, address: tuple[str, int], clock: Clock, timeout_s: float = 30.0):
        self.clock = clock
        try:
            self.sock = socket.create_connection(address, timeout=timeout_s)
        except OSError as exc:
            raise ConnectFailed(f"cannot connect to agent at {address[0]}:{address[1]}: {exc}") from None

    def exchange(self, frame_type: int, payload: bytes) -> ExchangeResult:
        frame = wire.encode_frame(frame_type, payload)
        started = self.clock.now_ms
        self.sock.sendall(frame)
        remote_start = self.clock.now_ms
        rtype, rpayload = wire.read_frame(self._recv_exact)
        finished = self.clock.now_ms
        return ExchangeResult(
            rtype=rtype,
            payload=rpayload,
            sent_bytes=len(frame),
            received_bytes=wire.frame_wire_size(len(rpayload)),
            started_ms=started,
            remote_start_ms=remote_start,
            remote_end_ms=finished,
            finished_ms=finished,
        )

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            chunk = self.sock.recv(remaining)
            if not chunk:
                raise EOFError(f"agent closed the connection with {remaining} bytes outstanding")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"agent address must be host:port, got {text!r}")
    return host, int(port)


def connect(
    *,
    address: str | tuple[str, int] | None = None,
    sim: SimParams | None = None,
    handler: AgentHandler | None = None,
    clock: Clock,
):
    """Open a transport: a TCP connection to ``address``, or a simulated link
    onto an in-process agent ``handler`` with ``sim`` parameters."""
    if address is not None:
        addr = parse_address(address) if isinstance(address, str) else address
        return TcpTransport(addr, clock)
    if handler is None:
        raise ConnectFailed("simulated transport needs an in-process agent handler")
    return SimTransport(handler, sim or SimParams(), clock)


__all__ = [
    "AgentHandler",
    "ExchangeResult",
    "SimParams",
    "SimTransport",
    "TcpTransport",
    "connect",
    "parse_address",
]
