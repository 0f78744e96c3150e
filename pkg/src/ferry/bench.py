"""Two-mode benchmark: run a workflow with offloading off and on, report the
execution-time reduction plus per-step and per-offload breakdowns.

Simulation only: the remote side is an in-process agent behind the simulated
transport. Under the virtual clock the numbers are deterministic and
repetitions collapse to one; under the wall clock modeled delays really sleep
and the median over repetitions is reported.
"""

from __future__ import annotations

import hashlib
import statistics
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .agent import AgentConfig, AgentCore
from .clock import VirtualClock, WallClock
from .errors import FerryError
from .mdss import BlobStore, DataSync
from .model import WorkflowDoc
from .partition import PartitionedWorkflow, partition, recover_migration_points
from .report import summarize
from .runtime import ExecutionContext, MigrationManager, execute
from .tasks import DEFAULT_REGISTRY, TaskRegistry
from .transport import SimParams, SimTransport
from .wire import canonical_json

DEFAULT_BLOB_BYTES = 1024 * 1024


@dataclass
class BenchReport:
    workflow_id: str
    clock_mode: str
    repetitions: int
    sim: SimParams
    presync: bool
    t_local_ms: float | None
    t_offload_ms: float | None
    reduction_pct: float | None
    steps: list[dict[str, Any]]
    offloads: list[dict[str, Any]]
    bindings_match: bool | None
    incomplete: dict[str, str] | None
    # Raw traces of the measured runs; kept out of the JSON form.
    traces: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "workflow_id": self.workflow_id,
            "clock": self.clock_mode,
            "repetitions": self.repetitions,
            "sim": {
                "speed": self.sim.speed,
                "latency_ms": self.sim.latency_ms,
                "bandwidth_bps": self.sim.bandwidth_bps,
            },
            "presync": self.presync,
            "t_local_ms": self.t_local_ms,
            "t_offload_ms": self.t_offload_ms,
            "reduction_pct": self.reduction_pct,
            "steps": self.steps,
            "offloads": self.offloads,
            "bindings_match": self.bindings_match,
            "incomplete": self.incomplete,
        }

    def to_json_bytes(self) -> bytes:
        return canonical_json(self.to_json_obj()) + b"\n"

    def render_table(self) -> str:
        def fmt(value: float | None) -> str:
            return "-" if value is None else f"{value:.3f}"

        lines = [
            f"workflow: {self.workflow_id}   clock: {self.clock_mode}   repetitions: {self.repetitions}",
            f"sim: speed={self.sim.speed} latency={self.sim.latency_ms}ms "
            f"bandwidth={'inf' if self.sim.bandwidth_bps is None else self.sim.bandwidth_bps}B/s "
            f"presync={'on' if self.presync else 'off'}",
            "",
            f"{'mode':<12}{'duration (ms)':>16}",
            f"{'local':<12}{fmt(self.t_local_ms):>16}",
            f"{'offloaded':<12}{fmt(self.t_offload_ms):>16}",
            "",
            f"reduction: {fmt(self.reduction_pct)} %",
            "",
            f"{'step':<24}{'mode':<12}{'local (ms)':>12}{'offload (ms)':>14}",
        ]
        for row in self.steps:
            lines.append(
                f"{row['id']:<24}{row['mode']:<12}{fmt(row['t_local_ms']):>12}{fmt(row['t_offload_ms']):>14}"
            )
        if self.offloads:
            lines.append("")
            lines.append(f"{'offloaded step':<24}{'bytes out':>12}{'bytes back':>12}{'cycle (ms)':>12}")
            for row in self.offloads:
                lines.append(
                    f"{row['step']:<24}{row['bytes_out']:>12}{row['bytes_back']:>12}"
                    f"{fmt(row['cycle_ms']):>12}"
                )
        if self.incomplete:
            lines.append("")
            lines.append(f"INCOMPLETE: {self.incomplete['mode']} run failed: {self.incomplete['error']}")
        if self.bindings_match is False:
            lines.append("WARNING: final bindings differ between modes")
        return "\n".join(lines) + "\n"


def payload_for(uri: str, size: int) -> bytes:
    """Deterministic filler blob derived from the URI."""
    block = hashlib.sha256(uri.encode("utf-8")).digest()
    reps = size // len(block) + 1
    return (block * reps)[:size]


def _as_partitioned(workflow: WorkflowDoc | PartitionedWorkflow) -> PartitionedWorkflow:
    if isinstance(workflow, PartitionedWorkflow):
        return workflow
    points = recover_migration_points(workflow)
    if points:
        return PartitionedWorkflow(doc=workflow, migration_points=points)
    return partition(workflow)


def _new_clock(clock_mode: str):
    if clock_mode == "virtual":
        return VirtualClock()
    if clock_mode == "wall":
        return WallClock()
    raise ValueError(f"clock must be 'virtual' or 'wall', got {clock_mode!r}")


def run_bench(
    workflow: WorkflowDoc | PartitionedWorkflow,
    sim: SimParams,
    repetitions: int = 1,
    *,
    clock_mode: str = "virtual",
    presync: bool = True,
    blob_bytes: int = DEFAULT_BLOB_BYTES,
    params: dict[str, Any] | None = None,
    registry: TaskRegistry = DEFAULT_REGISTRY,
) -> BenchReport:
    pw = _as_partitioned(workflow)
    uris = sorted({uri for step in pw.doc.steps() for uri in step.data_uris})
    if clock_mode == "virtual":
        repetitions = 1  # deterministic; repeats cannot differ
    repetitions = max(1, repetitions)

    local_times: list[float] = []
    offload_times: list[float] = []
    local_bindings = offload_bindings = None
    offload_trace = local_trace = None
    incomplete: dict[str, str] | None = None

    for _ in range(repetitions):
        try:
            duration, local_bindings, local_trace = _run_mode(
                pw, sim, clock_mode, offload=False, presync=presync,
                blob_bytes=blob_bytes, uris=uris, params=params, registry=registry,
            )
            local_times.append(duration)
        except FerryError as exc:
            incomplete = {"mode": "local", "error": str(exc)}
            break
        try:
            duration, offload_bindings, offload_trace = _run_mode(
                pw, sim, clock_mode, offload=True, presync=presync,
                blob_bytes=blob_bytes, uris=uris, params=params, registry=registry,
            )
            offload_times.append(duration)
        except FerryError as exc:
            incomplete = {"mode": "offloaded", "error": str(exc)}
            break

    t_local = statistics.median(local_times) if local_times else None
    t_offload = statistics.median(offload_times) if offload_times else None
    reduction = None
    if t_local and t_offload is not None:
        reduction = 100.0 * (1.0 - t_offload / t_local)

    offloaded_ids = {target for _, target in pw.migration_points}
    local_summary = summarize(local_trace) if local_trace is not None else None
    offload_summary = summarize(offload_trace) if offload_trace is not None else None

    steps: list[dict[str, Any]] = []
    for step in pw.doc.steps():
        if step.is_container or step.kind == "temporary":
            continue
        row: dict[str, Any] = {
            "id": step.id,
            "mode": "offloaded" if step.id in offloaded_ids else "local",
            "t_local_ms": None,
            "t_offload_ms": None,
        }
        if local_summary is not None:
            row["t_local_ms"] = local_summary.local_ms_by_step.get(step.id)
        if offload_summary is not None:
            row["t_offload_ms"] = offload_summary.remote_ms_by_step.get(
                step.id, offload_summary.local_ms_by_step.get(step.id)
            )
        steps.append(row)

    offloads: list[dict[str, Any]] = []
    if offload_summary is not None:
        for cycle in offload_summary.cycles:
            offloads.append(
                {
                    "step": cycle.step,
                    "bytes_out": cycle.bytes_out,
                    "bytes_back": cycle.bytes_back,
                    "cycle_ms": cycle.duration_ms,
                }
            )
        offloads.sort(key=lambda row: row["step"])

    bindings_match = None
    if local_bindings is not None and offload_bindings is not None:
        bindings_match = canonical_json(local_bindings) == canonical_json(offload_bindings)

    traces = {}
    if local_trace is not None:
        traces["local"] = local_trace
    if offload_trace is not None:
        traces["offloaded"] = offload_trace

    return BenchReport(
        workflow_id=pw.doc.doc_id,
        clock_mode=clock_mode,
        repetitions=repetitions,
        sim=sim,
        presync=presync,
        t_local_ms=t_local,
        t_offload_ms=t_offload,
        reduction_pct=reduction,
        steps=steps,
        offloads=offloads,
        bindings_match=bindings_match,
        incomplete=incomplete,
        traces=traces,
    )


def _run_mode(
    pw: PartitionedWorkflow,
    sim: SimParams,
    clock_mode: str,
    *,
    offload: bool,
    presync: bool,
    blob_bytes: int,
    uris: list[str],
    params: dict[str, Any] | None,
    registry: TaskRegistry,
):
    clock = _new_clock(clock_mode)
    time_source = (lambda: clock.now_ms / 1000.0) if clock.virtual else None

    with tempfile.TemporaryDirectory(prefix="ferry-bench-") as tmp:
        tmp_path = Path(tmp)
        local_store = BlobStore(
            tmp_path / "local",
            **({"time_source": time_source} if time_source else {}),
        )
        for uri in uris:
            local_store.put(uri, payload_for(uri, blob_bytes))

        manager = MigrationManager(None)
        if offload:
            core = AgentCore(
                AgentConfig(
                    store_root=tmp_path / "remote",
                    speed_factor=sim.speed,
                    **({"time_source": time_source} if time_source else {}),
                ),
                registry=registry,
            )
            if presync and uris:
                setup = DataSync(local_store, SimTransport(core.handle, sim, VirtualClock()))
                for uri in uris:
                    setup.synchronize(uri)
            manager = MigrationManager(lambda c: SimTransport(core.handle, sim, c))

        ctx = ExecutionContext(
            clock=clock,
            offload_enabled=offload,
            params=dict(params or {}),
            local_store=local_store,
            registry=registry,
        )
        start = clock.now_ms
        bindings, trace = execute(pw, ctx, manager)
        return clock.now_ms - start, bindings, trace


__all__ = ["BenchReport", "DEFAULT_BLOB_BYTES", "payload_for", "run_bench"]
