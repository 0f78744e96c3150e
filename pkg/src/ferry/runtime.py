"""Workflow execution: local steps, migration points, concurrent offloads.

Sequential containers run children in order. Parallel containers run children
concurrently: under the virtual clock each branch executes on a forked clock
and the container joins at the latest branch time; under the wall clock each
branch runs on its own thread. Branch writes land in a private overlay and
merge at the join, so sibling branches never observe each other's writes and
write-write conflicts surface as DataRace instead of silent ordering.

At a migration point (with offloading enabled) the executing chain suspends,
the migration manager packages the target step, settles data transfer with
the store, ships the package, and reintegrates the returned bindings before
the chain resumes. With offloading disabled migration points are no-ops.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from . import trace as tr
from .clock import Clock
from .errors import (
    ConnectFailed,
    DataRace,
    DataUnavailable,
    FerryError,
    MalformedDocument,
    NotOffloadable,
    RemoteTaskFailure,
    RemoteUnreachable,
    TaskFailure,
    UndeclaredVariable,
    UnknownTask,
)
from .mdss import SKIP_DATA, BlobStore, DataSync
from .messages import DataRef, PackagedStep, RemoteResult
from .model import Step, WorkflowDoc
from .partition import PartitionedWorkflow
from .tasks import DEFAULT_REGISTRY, TaskIO, TaskRegistry
from .trace import TraceRecorder
from .wire import FrameType, parse_json

OFFLOADABLE_KINDS = ("task", "assign")

TransportFactory = Callable[[Clock], Any]


@dataclass
class ExecutionContext:
    """Everything one run needs: time source, offload switch, stores, trace.

    ``remote_fresh`` tracks URIs whose newest version is known to live on the
    remote store (learned from reintegrated results); a later local read of
    such a URI pulls it down first so both execution modes see the same data.
    """

    clock: Clock
    offload_enabled: bool = False
    params: dict[str, Any] = field(default_factory=dict)
    local_store: BlobStore | None = None
    registry: TaskRegistry = DEFAULT_REGISTRY
    trace: TraceRecorder = field(default_factory=TraceRecorder)
    console: list[str] = field(default_factory=list)
    remote_fresh: dict[str, Any] = field(default_factory=dict)


class MigrationManager:
    """Packages remotable steps, ships them over a fresh transport, and maps
    remote errors back; one retry then local fallback by default."""

    def __init__(
        self,
        transport_factory: TransportFactory | None = None,
        *,
        retry: int = 1,
        fallback_local: bool = True,
    ):
        self.transport_factory = transport_factory
        self.retry = retry
        self.fallback_local = fallback_local

    def offload(self, env: "_Env", step: Step) -> RemoteResult | None:
        """Run one remotable step remotely; None means "run it locally instead"."""
        if step.kind not in OFFLOADABLE_KINDS:
            raise NotOffloadable(step.id, step.kind)
        if self.transport_factory is None:
            raise RemoteUnreachable("offloading is enabled but no transport is configured")
        packaged = self._package(env, step)
        last_error: Exception | None = None
        for _ in range(self.retry + 1):
            transport = None
            try:
                transport = self.transport_factory(env.clock)
                return self._attempt(env, step, packaged, transport)
            except (ConnectFailed, RemoteUnreachable, OSError, EOFError) as exc:
                last_error = exc
            finally:
                if transport is not None:
                    transport.close()
        if self.fallback_local:
            return None
        raise RemoteUnreachable(f"offload of '{step.id}' failed after retries: {last_error}")

    def _package(self, env: "_Env", step: Step) -> PackagedStep:
        bindings = {name: env.read(name, step) for name in step.inputs}
        store = env.ctx.local_store
        refs = tuple(DataRef(uri, store.stamp(uri) if store else None) for uri in step.data_uris)
        return PackagedStep(
            step_id=step.id,
            task_ref=step.task_ref or "",
            inputs=step.inputs,
            outputs=step.outputs,
            input_bindings=bindings,
            data_refs=refs,
            nominal_cost=step.nominal_cost,
        )

    def _settle_data(self, env: "_Env", packaged: PackagedStep, transport) -> int:
        """Sync any stale URI to the remote store; returns wire bytes spent."""
        if not packaged.data_refs:
            return 0
        store = env.ctx.local_store
        if store is None:
            raise DataUnavailable(
                f"step '{packaged.step_id}' references data but no local store is configured"
            )
        sync = DataSync(store, transport)
        before = sync.total_bytes
        for ref in packaged.data_refs:
            if sync.decide_transfer(ref.uri) != SKIP_DATA:
                sync.synchronize(ref.uri)
        return sync.total_bytes - before

    def _attempt(self, env: "_Env", step: Step, packaged: PackagedStep, transport) -> RemoteResult:
        sync_bytes = self._settle_data(env, packaged, transport)
        res = transport.exchange(FrameType.OFFLOAD_REQ, packaged.to_payload())
        if res.rtype == FrameType.ERR:
            err = parse_json(res.payload)
            code, message = err.get("code"), err.get("message", "")
            if code == "UnknownTask":
                raise UnknownTask(step.task_ref or "")
            if code == "DataMissing":
                raise DataUnavailable(message)
            if code == "TaskFailed":
                raise RemoteTaskFailure(step.id, message)
            raise RemoteUnreachable(f"agent rejected the offload: {code}: {message}")
        if res.rtype != FrameType.OFFLOAD_RES:
            raise RemoteUnreachable(f"unexpected reply frame type {res.rtype:#x}")
        result = RemoteResult.from_payload(res.payload)
        if result.step_id != step.id:
            raise RemoteUnreachable(
                f"agent answered for step '{result.step_id}', expected '{step.id}'"
            )
        env.record(res.started_ms, tr.OFFLOAD_SENT, step.id, bytes=sync_bytes + res.sent_bytes)
        env.record(res.remote_start_ms, tr.REMOTE_START, step.id)
        env.record(res.remote_end_ms, tr.REMOTE_END, step.id)
        env.record(res.finished_ms, tr.REINTEGRATE, step.id, bytes=res.received_bytes)
        return result


class _Cancelled(Exception):
    """Internal: a sibling branch failed; unwind quietly."""


class _Frame:
    __slots__ = ("owner", "values")

    def __init__(self, owner: str, names):
        self.owner = owner
        self.values: dict[str, Any] = {name: None for name in names}


class _Bindings:
    """Scope-chain segment: owned frames plus an overlay for ancestor frames.

    The overlay is only populated on branch segments (parent is not None);
    the join applies it to the parent after write-write conflict checks.
    """

    def __init__(self, parent: "_Bindings | None" = None):
        self.parent = parent
        self.frames: list[_Frame] = []
        self.overlay: dict[tuple[int, str], tuple[_Frame, Any]] = {}

    def push(self, owner: str, names) -> None:
        self.frames.append(_Frame(owner, names))

    def pop(self) -> _Frame:
        return self.frames.pop()

    def _locate(self, name: str) -> tuple[_Frame, bool] | None:
        """Find the innermost declaring frame; bool says whether it is owned
        by this segment (True) or an ancestor segment (False)."""
        for frame in reversed(self.frames):
            if name in frame.values:
                return frame, True
        seg = self.parent
        while seg is not None:
            for frame in reversed(seg.frames):
                if name in frame.values:
                    return frame, False
            seg = seg.parent
        return None

    def read(self, name: str) -> Any:
        located = self._locate(name)
        if located is None:
            raise KeyError(name)
        frame, owned = located
        if not owned:
            key = (id(frame), name)
            seg: _Bindings | None = self
            while seg is not None:
                if key in seg.overlay:
                    return seg.overlay[key][1]
                seg = seg.parent
        return frame.values[name]

    def write(self, name: str, value: Any) -> None:
        located = self._locate(name)
        if located is None:
            raise KeyError(name)
        frame, owned = located
        if owned or self.parent is None:
            frame.values[name] = value
        else:
            self.overlay[(id(frame), name)] = (frame, value)

    def apply_overlay_entry(self, key: tuple[int, str], frame: _Frame, value: Any) -> None:
        name = key[1]
        if any(f is frame for f in self.frames) or self.parent is None:
            frame.values[name] = value
        else:
            self.overlay[key] = (frame, value)


class _Env:
    """Per-chain execution state: clock, bindings segment, chain label."""

    __slots__ = ("ctx", "manager", "clock", "bindings", "chain", "cancel")

    def __init__(self, ctx, manager, clock, bindings, chain, cancel):
        self.ctx = ctx
        self.manager = manager
        self.clock = clock
        self.bindings = bindings
        self.chain = chain
        self.cancel = cancel

    def fork(self, chain: str) -> "_Env":
        return _Env(
            ctx=self.ctx,
            manager=self.manager,
            clock=self.clock.fork(),
            bindings=_Bindings(parent=self.bindings),
            chain=chain,
            cancel=self.cancel,
        )

    def read(self, name: str, step: Step) -> Any:
        try:
            return self.bindings.read(name)
        except KeyError:
            raise UndeclaredVariable(step.id, name) from None

    def write(self, name: str, value: Any, step: Step) -> None:
        try:
            self.bindings.write(name, value)
        except KeyError:
            raise UndeclaredVariable(step.id, name) from None

    def record(self, ts: float, kind: str, step: str, *, bytes: int | None = None) -> None:
        self.ctx.trace.record(ts, kind, step, bytes=bytes, chain=self.chain)

    def check_cancelled(self) -> None:
        if self.cancel.is_set():
            raise _Cancelled()


class _Executor:
    def __init__(self, doc: WorkflowDoc, ctx: ExecutionContext, manager: MigrationManager):
        self.doc = doc
        self.ctx = ctx
        self.manager = manager

    def run(self) -> dict[str, Any]:
        env = _Env(
            ctx=self.ctx,
            manager=self.manager,
            clock=self.ctx.clock,
            bindings=_Bindings(),
            chain=tr.MAIN_CHAIN,
            cancel=threading.Event(),
        )
        root = self.doc.root
        env.bindings.push(root.id, [v.name for v in root.variables])
        try:
            self._run_children(root, env)
            return dict(env.bindings.frames[0].values)
        finally:
            env.bindings.pop()

    # --- step dispatch -------------------------------------------------------

    def _run_step(self, step: Step, env: _Env) -> None:
        env.check_cancelled()
        if step.is_container:
            env.bindings.push(step.id, [v.name for v in step.variables])
            try:
                self._run_children(step, env)
            finally:
                env.bindings.pop()
        else:
            self._run_leaf(step, env)

    def _run_children(self, step: Step, env: _Env) -> None:
        if step.kind == "parallel":
            self._run_parallel(step, env)
        else:
            for temp, child in _grouped(step.children):
                self._run_unit(temp, child, env)

    def _run_unit(self, temp: Step | None, step: Step, env: _Env) -> None:
        env.check_cancelled()
        if temp is not None and self.ctx.offload_enabled:
            self._offload_cycle(step, env)
        else:
            # Migration points are inert when offloading is off.
            self._run_step(step, env)

    # --- leaves ----------------------------------------------------------------

    def _pull(self, env: _Env, store: BlobStore, uri: str) -> None:
        transport = self.manager.transport_factory(env.clock)
        try:
            DataSync(store, transport).synchronize(uri)
        finally:
            transport.close()

    def _local_reader(self, env: _Env):
        def read_blob(uri: str) -> bytes:
            store = env.ctx.local_store
            if store is None:
                raise DataUnavailable(f"no local store configured; cannot read {uri}")
            can_pull = self.manager.transport_factory is not None
            fresh = env.ctx.remote_fresh.get(uri)
            if fresh is not None and can_pull:
                local_stamp = store.stamp(uri)
                if local_stamp is None or local_stamp < fresh:
                    self._pull(env, store, uri)
                env.ctx.remote_fresh.pop(uri, None)
            try:
                return store.get(uri).payload
            except DataUnavailable:
                if not can_pull:
                    raise
                # The blob may live remotely (e.g. produced by an earlier
                # offload); pull it down before giving up.
                self._pull(env, store, uri)
                return store.get(uri).payload

        return read_blob

    def _run_leaf(self, step: Step, env: _Env) -> None:
        env.check_cancelled()
        if step.kind == "temporary":
            return
        if step.variables:
            env.bindings.push(step.id, [v.name for v in step.variables])
        try:
            task_ref = step.task_ref or ("write_line" if step.kind == "write" else None)
            if task_ref is None:
                raise TaskFailure(step.id, "no task reference")
            fn = self.ctx.registry.get(task_ref)
            env.record(env.clock.now_ms, tr.STEP_START, step.id)
            values = [env.read(name, step) for name in step.inputs]
            store = env.ctx.local_store
            io = TaskIO(
                data_uris=step.data_uris,
                input_names=step.inputs,
                output_names=step.outputs,
                params=self.ctx.params,
                read_blob=self._local_reader(env),
                write_blob=(store.put if store is not None else None),
                emit=self.ctx.console.append,
            )
            try:
                outputs = list(fn(values, io))
            except FerryError:
                raise
            except Exception as exc:  # noqa: BLE001 - task errors abort the workflow
                raise TaskFailure(step.id, str(exc)) from exc
            if len(outputs) != len(step.outputs):
                raise TaskFailure(
                    step.id,
                    f"task '{task_ref}' returned {len(outputs)} values for {len(step.outputs)} outputs",
                )
            env.clock.advance(step.nominal_cost)
            for name, value in zip(step.outputs, outputs):
                env.write(name, value, step)
            env.record(env.clock.now_ms, tr.STEP_END, step.id)
        finally:
            if step.variables:
                env.bindings.pop()

    # --- offload cycle -------------------------------------------------------------

    def _offload_cycle(self, target: Step, env: _Env) -> None:
        env.check_cancelled()
        env.record(env.clock.now_ms, tr.SUSPEND, target.id)
        result = self.manager.offload(env, target)
        if result is None:
            env.record(env.clock.now_ms, tr.FALLBACK_LOCAL, target.id)
            self._run_leaf(target, env)
        else:
            for name, value in result.output_bindings.items():
                env.write(name, value, target)
            for uri, stamp in result.produced_data:
                known = env.ctx.remote_fresh.get(uri)
                if known is None or known < stamp:
                    env.ctx.remote_fresh[uri] = stamp
        env.record(env.clock.now_ms, tr.RESUME, target.id)

    # --- parallel containers ----------------------------------------------------------

    def _run_parallel(self, step: Step, env: _Env) -> None:
        groups = _grouped(step.children)
        branches = [
            (env.fork(chain=f"{env.chain}/{step.id}[{i}]"), temp, child)
            for i, (temp, child) in enumerate(groups)
        ]
        errors: list[tuple[int, Exception]] = []

        def run_branch(index: int) -> None:
            benv, temp, child = branches[index]
            try:
                self._run_unit(temp, child, benv)
            except _Cancelled:
                pass
            except Exception as exc:  # noqa: BLE001 - surfaced after the join
                errors.append((index, exc))
                env.cancel.set()

        if env.clock.virtual:
            for i in range(len(branches)):
                if env.cancel.is_set():
                    break
                run_branch(i)
        else:
            threads = [
                threading.Thread(target=run_branch, args=(i,), daemon=True)
                for i in range(len(branches))
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

        if errors:
            errors.sort(key=lambda pair: pair[0])
            raise errors[0][1]

        env.clock.advance_to(max((b.clock.now_ms for b, _, _ in branches), default=env.clock.now_ms))
        self._merge_overlays(env, [b for b, _, _ in branches])

    def _merge_overlays(self, env: _Env, branch_envs: list[_Env]) -> None:
        writers: dict[tuple[int, str], str] = {}
        for benv in branch_envs:
            for key in benv.bindings.overlay:
                if key in writers:
                    raise DataRace(key[1], [writers[key], benv.chain])
                writers[key] = benv.chain
        for benv in branch_envs:
            for key, (frame, value) in benv.bindings.overlay.items():
                env.bindings.apply_overlay_entry(key, frame, value)


def _grouped(children: tuple[Step, ...]) -> list[tuple[Step | None, Step]]:
    """Pair each migration point with its target; lone steps pair with None."""
    out: list[tuple[Step | None, Step]] = []
    i = 0
    while i < len(children):
        child = children[i]
        if child.kind == "temporary":
            if (
                i + 1 >= len(children)
                or children[i + 1].id != child.target_id
                or children[i + 1].kind == "temporary"
            ):
                raise MalformedDocument(
                    f"temporary step '{child.id}' does not immediately precede its target "
                    f"'{child.target_id}'"
                )
            out.append((child, children[i + 1]))
            i += 2
        else:
            out.append((None, child))
            i += 1
    return out


def execute(
    workflow: PartitionedWorkflow | WorkflowDoc,
    ctx: ExecutionContext,
    mm: MigrationManager | None = None,
):
    """Run a (partitioned) workflow to completion.

    Returns (final bindings of the root scope, the finished ExecutionTrace).
    """
    doc = workflow.doc if isinstance(workflow, PartitionedWorkflow) else workflow
    manager = mm if mm is not None else MigrationManager(None)
    if ctx.offload_enabled and manager.transport_factory is None:
        raise RemoteUnreachable("offloading is enabled but no transport factory is configured")
    bindings = _Executor(doc, ctx, manager).run()
    return bindings, ctx.trace.finish()


__all__ = [
    "ExecutionContext",
    "MigrationManager",
    "OFFLOADABLE_KINDS",
    "execute",
]
