"""Execution trace: ordered event log plus the lifecycle checker.

Events carry ``ts`` (ms), ``kind``, ``step``, optional ``bytes`` and a
``chain`` label identifying the sequential chain the event belongs to (each
parallel branch is its own chain), which is what lets the checker verify
suspend/resume alternation even when branches offload concurrently.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import MalformedTrace

STEP_START = "StepStart"
STEP_END = "StepEnd"
SUSPEND = "Suspend"
OFFLOAD_SENT = "OffloadSent"
REMOTE_START = "RemoteStart"
REMOTE_END = "RemoteEnd"
REINTEGRATE = "Reintegrate"
RESUME = "Resume"
FALLBACK_LOCAL = "FallbackLocal"

EVENT_KINDS = frozenset(
    {
        STEP_START,
        STEP_END,
        SUSPEND,
        OFFLOAD_SENT,
        REMOTE_START,
        REMOTE_END,
        REINTEGRATE,
        RESUME,
        FALLBACK_LOCAL,
    }
)

MAIN_CHAIN = "main"

# The two legal interiors of a Suspend..Resume cycle.
_CYCLE_REMOTE = (OFFLOAD_SENT, REMOTE_START, REMOTE_END, REINTEGRATE)
_CYCLE_FALLBACK = (FALLBACK_LOCAL, STEP_START, STEP_END)


@dataclass(frozen=True)
class TraceEvent:
    ts: float
    kind: str
    step: str
    bytes: int | None = None
    chain: str = MAIN_CHAIN

    def to_json(self) -> dict:
        return {"ts": round(self.ts, 6), "kind": self.kind, "step": self.step, "bytes": self.bytes, "chain": self.chain}


class TraceRecorder:
    """Serialized event sink; finish() yields the timestamp-ordered trace."""

    def __init__(self):
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()

    def record(self, ts: float, kind: str, step: str, *, bytes: int | None = None, chain: str = MAIN_CHAIN) -> None:
        with self._lock:
            self._events.append(TraceEvent(ts=ts, kind=kind, step=step, bytes=bytes, chain=chain))

    def finish(self) -> "ExecutionTrace":
        with self._lock:
            ordered = sorted(self._events, key=lambda e: e.ts)
        return ExecutionTrace(events=tuple(ordered))


@dataclass(frozen=True)
class ExecutionTrace:
    events: tuple[TraceEvent, ...]

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in self.events)

    @classmethod
    def from_jsonl(cls, text: str) -> "ExecutionTrace":
        events: list[TraceEvent] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedTrace(f"line {lineno}: not valid JSON ({exc})") from None
            if not isinstance(obj, dict):
                raise MalformedTrace(f"line {lineno}: event must be a JSON object")
            try:
                ts = float(obj["ts"])
                kind = str(obj["kind"])
                step = str(obj["step"])
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedTrace(f"line {lineno}: missing or bad field ({exc})") from None
            if kind not in EVENT_KINDS:
                raise MalformedTrace(f"line {lineno}: unknown event kind {kind!r}")
            raw_bytes = obj.get("bytes")
            events.append(
                TraceEvent(
                    ts=ts,
                    kind=kind,
                    step=step,
                    bytes=None if raw_bytes is None else int(raw_bytes),
                    chain=str(obj.get("chain", MAIN_CHAIN)),
                )
            )
        return cls(events=tuple(events))


def check_trace(events: Iterable[TraceEvent]) -> list[str]:
    """Verify lifecycle invariants; returns human-readable problems (empty = ok).

    Per chain, Suspend and Resume must strictly alternate and pair on the same
    step, each cycle interior must be exactly the offload sequence or the
    local-fallback sequence, and no other work may appear while the chain is
    suspended. Timestamps must be non-decreasing overall.
    """
    events = list(events)
    problems: list[str] = []

    last_ts = None
    for ev in events:
        if last_ts is not None and ev.ts < last_ts:
            problems.append(f"events out of order: ts {ev.ts} after {last_ts}")
        last_ts = ev.ts

    chains: dict[str, list[TraceEvent]] = {}
    for ev in events:
        chains.setdefault(ev.chain, []).append(ev)

    for chain, chain_events in sorted(chains.items()):
        open_suspend: TraceEvent | None = None
        cycle_kinds: list[str] = []
        open_step: str | None = None
        for ev in chain_events:
            if ev.kind == SUSPEND:
                if open_suspend is not None:
                    problems.append(
                        f"chain {chain}: nested Suspend of '{ev.step}' while '{open_suspend.step}' is suspended"
                    )
                open_suspend = ev
                cycle_kinds = []
            elif ev.kind == RESUME:
                if open_suspend is None:
                    problems.append(f"chain {chain}: Resume of '{ev.step}' without a Suspend")
                    continue
                if ev.step != open_suspend.step:
                    problems.append(
                        f"chain {chain}: Resume of '{ev.step}' does not match Suspend of '{open_suspend.step}'"
                    )
                if tuple(cycle_kinds) not in (_CYCLE_REMOTE, _CYCLE_FALLBACK):
                    problems.append(
                        f"chain {chain}: cycle for '{open_suspend.step}' has interior {cycle_kinds}"
                    )
                open_suspend = None
            elif open_suspend is not None:
                if ev.step != open_suspend.step:
                    problems.append(
                        f"chain {chain}: event for '{ev.step}' while '{open_suspend.step}' is suspended"
                    )
                cycle_kinds.append(ev.kind)
            elif ev.kind == STEP_START:
                if open_step is not None:
                    problems.append(f"chain {chain}: StepStart of '{ev.step}' while '{open_step}' is running")
                open_step = ev.step
            elif ev.kind == STEP_END:
                if open_step != ev.step:
                    problems.append(f"chain {chain}: StepEnd of '{ev.step}' does not match '{open_step}'")
                open_step = None
            elif ev.kind in (OFFLOAD_SENT, REMOTE_START, REMOTE_END, REINTEGRATE, FALLBACK_LOCAL):
                problems.append(f"chain {chain}: {ev.kind} for '{ev.step}' outside a Suspend..Resume cycle")
        if open_suspend is not None:
            problems.append(f"chain {chain}: Suspend of '{open_suspend.step}' never resumed")
        if open_step is not None:
            problems.append(f"chain {chain}: StepStart of '{open_step}' never ended")

    return problems


__all__ = [
    "EVENT_KINDS",
    "ExecutionTrace",
    "FALLBACK_LOCAL",
    "MAIN_CHAIN",
    "OFFLOAD_SENT",
    "REINTEGRATE",
    "REMOTE_END",
    "REMOTE_START",
    "RESUME",
    "STEP_END",
    "STEP_START",
    "SUSPEND",
    "TraceEvent",
    "TraceRecorder",
    "check_trace",
]
