"""Render a trace file as a timeline with totals; doubles as the lifecycle checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .trace import (
    ExecutionTrace,
    OFFLOAD_SENT,
    REINTEGRATE,
    REMOTE_END,
    REMOTE_START,
    RESUME,
    STEP_END,
    STEP_START,
    SUSPEND,
    check_trace,
)


@dataclass
class OffloadCycle:
    step: str
    chain: str
    started_ms: float
    finished_ms: float = 0.0
    bytes_out: int = 0
    bytes_back: int = 0

    @property
    def duration_ms(self) -> float:
        return self.finished_ms - self.started_ms

    @property
    def total_bytes(self) -> int:
        return self.bytes_out + self.bytes_back


@dataclass
class TraceSummary:
    makespan_ms: float
    local_ms_by_step: dict[str, float]
    remote_ms_by_step: dict[str, float]
    cycles: list[OffloadCycle]
    total_bytes: int
    problems: list[str] = field(default_factory=list)


def load_trace(path: Path | str) -> ExecutionTrace:
    return ExecutionTrace.from_jsonl(Path(path).read_text(encoding="utf-8"))


def summarize(trace: ExecutionTrace) -> TraceSummary:
    local_ms: dict[str, float] = {}
    remote_ms: dict[str, float] = {}
    open_start: dict[tuple[str, str], float] = {}
    open_remote: dict[tuple[str, str], float] = {}
    cycles: list[OffloadCycle] = []
    open_cycles: dict[tuple[str, str], OffloadCycle] = {}

    for ev in trace:
        key = (ev.chain, ev.step)
        if ev.kind == STEP_START:
            open_start[key] = ev.ts
        elif ev.kind == STEP_END and key in open_start:
            local_ms[ev.step] = local_ms.get(ev.step, 0.0) + ev.ts - open_start.pop(key)
        elif ev.kind == SUSPEND:
            open_cycles[key] = OffloadCycle(step=ev.step, chain=ev.chain, started_ms=ev.ts)
        elif ev.kind == OFFLOAD_SENT and key in open_cycles:
            open_cycles[key].bytes_out += ev.bytes or 0
        elif ev.kind == REMOTE_START:
            open_remote[key] = ev.ts
        elif ev.kind == REMOTE_END and key in open_remote:
            remote_ms[ev.step] = remote_ms.get(ev.step, 0.0) + ev.ts - open_remote.pop(key)
        elif ev.kind == REINTEGRATE and key in open_cycles:
            open_cycles[key].bytes_back += ev.bytes or 0
        elif ev.kind == RESUME and key in open_cycles:
            cycle = open_cycles.pop(key)
            cycle.finished_ms = ev.ts
            cycles.append(cycle)

    events = list(trace)
    makespan = events[-1].ts - events[0].ts if events else 0.0
    total_bytes = sum(ev.bytes or 0 for ev in events)
    return TraceSummary(
        makespan_ms=makespan,
        local_ms_by_step=local_ms,
        remote_ms_by_step=remote_ms,
        cycles=cycles,
        total_bytes=total_bytes,
        problems=check_trace(events),
    )


def render_report(trace: ExecutionTrace) -> tuple[str, TraceSummary]:
    """Human-readable timeline plus totals; the summary carries any checker problems."""
    summary = summarize(trace)
    lines = ["timeline:"]
    if not len(trace):
        lines.append("  (empty trace)")
    for ev in trace:
        byte_part = f"  {ev.bytes} B" if ev.bytes is not None else ""
        lines.append(f"  {ev.ts:12.3f} ms  {ev.kind:<13} {ev.step:<24} [{ev.chain}]{byte_part}")

    lines.append("")
    lines.append("steps:")
    all_steps = sorted(set(summary.local_ms_by_step) | set(summary.remote_ms_by_step))
    if not all_steps:
        lines.append("  (none)")
    for step in all_steps:
        parts = []
        if step in summary.local_ms_by_step:
            parts.append(f"local {summary.local_ms_by_step[step]:.3f} ms")
        if step in summary.remote_ms_by_step:
            parts.append(f"remote {summary.remote_ms_by_step[step]:.3f} ms")
        lines.append(f"  {step:<24} {', '.join(parts)}")

    lines.append("")
    lines.append(f"offload cycles: {len(summary.cycles)}")
    for cycle in summary.cycles:
        lines.append(
            f"  {cycle.step:<24} {cycle.duration_ms:.3f} ms, "
            f"{cycle.bytes_out} B out, {cycle.bytes_back} B back [{cycle.chain}]"
        )
    lines.append(f"total bytes on the wire: {summary.total_bytes}")
    lines.append(f"makespan: {summary.makespan_ms:.3f} ms")

    if summary.problems:
        lines.append("")
        lines.append("lifecycle check FAILED:")
        lines.extend(f"  {p}" for p in summary.problems)
    else:
        lines.append("lifecycle check: ok")
    return "\n".join(lines) + "\n", summary


__all__ = ["OffloadCycle", "TraceSummary", "load_trace", "render_report", "summarize"]
