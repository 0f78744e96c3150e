"""Command-line entry point.

Subcommands: parse, validate, partition, run, bench, report, mdss, agent.
Exit codes: 0 success, 1 usage error, 2 validation failure, 3 runtime failure.
A ``key=value`` config file (``--config``) supplies defaults; flags win.
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

import click

from .agent import AgentConfig, AgentCore, serve
from .bench import DEFAULT_BLOB_BYTES, run_bench
from .clock import VirtualClock, WallClock
from .errors import (
    DocumentError,
    FerryError,
    IllegalWorkflow,
    MalformedTrace,
    MalformedUri,
    PreviouslyPartitioned,
)
from .mdss import BlobStore, DataSync
from .model import parse_workflow, serialize_workflow
from .partition import partition, recover_migration_points, validate
from .report import render_report
from .runtime import ExecutionContext, MigrationManager, execute
from .trace import ExecutionTrace
from .transport import SimParams, SimTransport, TcpTransport, parse_address

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class _Exit(Exception):
    def __init__(self, code: int):
        self.code = code


def _load_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise click.UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        values[key.strip()] = value.strip()
    return values


def _cfg(ctx: click.Context, key: str, flag_value, default=None):
    if flag_value is not None:
        return flag_value
    return ctx.obj.get(key, default)


def _read_doc(path: str):
    return parse_workflow(Path(path).read_bytes())


def _parse_params(pairs: tuple[str, ...]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise click.UsageError(f"--param expects key=value, got {pair!r}")
        out[key] = value
    return out


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="key=value file supplying defaults for common flags.")
@click.pass_context
def cli(ctx: click.Context, config_path: str | None) -> None:
    ctx.obj = _load_config(config_path)


@cli.command("parse")
@click.argument("workflow", type=click.Path(exists=True, dir_okay=False))
@click.option("--emit", is_flag=True, help="print the canonical serialized document")
def cmd_parse(workflow: str, emit: bool) -> None:
    """Parse a workflow document and summarize (or re-emit) it."""
    doc = _read_doc(workflow)
    if emit:
        click.echo(serialize_workflow(doc), nl=False)
        return
    steps = list(doc.steps())
    leaves = [s for s in steps if not s.is_container]
    remotable = [s for s in steps if s.remotable]
    click.echo(f"workflow: {doc.doc_id}")
    click.echo(f"steps: {len(steps)} ({len(leaves)} leaves), remotable: {len(remotable)}")
    for step in steps:
        depth = len(doc.ancestry(step.id)) - 1
        flags = "".join(
            part
            for part, on in (
                (" [remotable]", step.remotable),
                (f" [hardware={step.hardware}]", step.hardware is not None),
                (f" -> {step.target_id}", step.kind == "temporary"),
            )
            if on
        )
        click.echo(f"  {'  ' * depth}{step.kind} {step.id}{flags}")


@cli.command("validate")
@click.argument("workflow", type=click.Path(exists=True, dir_okay=False))
def cmd_validate(workflow: str) -> None:
    """Check the partitioning legality properties; nonzero exit when violated."""
    doc = _read_doc(workflow)
    violations = validate(doc)
    for violation in violations:
        click.echo(violation.render())
    if violations:
        raise _Exit(EXIT_VALIDATION)
    click.echo("ok")


@cli.command("partition")
@click.argument("workflow", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None,
              help="write the partitioned document here (default: stdout)")
def cmd_partition(workflow: str, output: str | None) -> None:
    """Insert a migration point before every remotable step."""
    doc = _read_doc(workflow)
    pw = partition(doc)
    text = serialize_workflow(pw.doc)
    if output:
        Path(output).write_text(text, encoding="utf-8")
        for temp_id, target_id in pw.migration_points:
            click.echo(f"{temp_id} -> {target_id}")
    else:
        click.echo(text, nl=False)


def _make_clock(name: str):
    if name == "virtual":
        return VirtualClock()
    if name == "wall":
        return WallClock()
    raise click.UsageError(f"--clock must be virtual or wall, got {name!r}")


@cli.command("run")
@click.argument("workflow", type=click.Path(exists=True, dir_okay=False))
@click.option("--offload", type=click.Choice(["on", "off"]), default="off", show_default=True)
@click.option("--agent", "agent_addr", default=None, help="remote agent address host:port")
@click.option("--sim", "sim_spec", default=None, help="simulated agent: speed=S,latency=L,bandwidth=B")
@click.option("--clock", "clock_name", type=click.Choice(["virtual", "wall"]), default=None)
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), default=None,
              help="write the execution trace as JSONL")
@click.option("--param", "params", multiple=True, help="run input key=value (repeatable)")
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default=None,
              help="local data store directory")
@click.option("--remote-store", "remote_dir", type=click.Path(file_okay=False), default=None,
              help="store directory for the in-process simulated agent")
@click.pass_context
def cmd_run(ctx, workflow, offload, agent_addr, sim_spec, clock_name, trace_path, params,
            store_dir, remote_dir) -> None:
    """Execute a workflow, offloading at migration points when enabled."""
    doc = _read_doc(workflow)
    if not recover_migration_points(doc) and any(s.remotable for s in doc.steps()):
        pw = partition(doc)
    else:
        pw = doc

    agent_addr = _cfg(ctx, "agent", agent_addr)
    sim_spec = _cfg(ctx, "sim", sim_spec)
    store_dir = _cfg(ctx, "store", store_dir)
    remote_dir = _cfg(ctx, "remote_store", remote_dir)
    clock_name = _cfg(ctx, "clock", clock_name, "virtual")
    if offload == "on":
        if agent_addr and sim_spec:
            raise click.UsageError("--agent and --sim are mutually exclusive")
        if agent_addr and clock_name == "virtual":
            raise click.UsageError("a real agent needs --clock wall")

    clock = _make_clock(clock_name)
    local_store = BlobStore(store_dir) if store_dir else None

    manager = MigrationManager(None)
    tmp_holder = None
    if offload == "on":
        if agent_addr:
            address = parse_address(agent_addr)
            manager = MigrationManager(lambda c: TcpTransport(address, c))
        else:
            sim = SimParams.parse(sim_spec) if sim_spec else SimParams()
            if remote_dir is None:
                tmp_holder = tempfile.TemporaryDirectory(prefix="ferry-agent-")
                remote_dir = tmp_holder.name
            core = AgentCore(AgentConfig(store_root=Path(remote_dir), speed_factor=sim.speed))
            manager = MigrationManager(lambda c: SimTransport(core.handle, sim, c))

    ctx_exec = ExecutionContext(
        clock=clock,
        offload_enabled=offload == "on",
        params=_parse_params(params),
        local_store=local_store,
    )
    try:
        bindings, trace_out = execute(pw, ctx_exec, manager)
    finally:
        if tmp_holder is not None:
            tmp_holder.cleanup()

    if trace_path:
        Path(trace_path).write_text(trace_out.to_jsonl(), encoding="utf-8")
    for line in ctx_exec.console:
        click.echo(line)
    for name in sorted(bindings):
        click.echo(f"{name} = {bindings[name]!r}")
    click.echo(f"elapsed: {clock.now_ms:.3f} ms ({clock_name} clock)")


@cli.command("bench")
@click.argument("workflow", type=click.Path(exists=True, dir_okay=False))
@click.option("--sim", "sim_spec", default=None, help="speed=S,latency=L,bandwidth=B")
@click.option("--clock", "clock_name", type=click.Choice(["virtual", "wall"]), default=None)
@click.option("--repetitions", type=int, default=1, show_default=True)
@click.option("--presync/--no-presync", default=True, show_default=True,
              help="synchronize data to the remote store before the timed run")
@click.option("--blob-bytes", type=int, default=DEFAULT_BLOB_BYTES, show_default=True,
              help="size of the seeded payload behind each data URI")
@click.option("--json", "json_path", type=click.Path(dir_okay=False), default=None,
              help="also write the report as canonical JSON")
@click.option("--param", "params", multiple=True)
@click.pass_context
def cmd_bench(ctx, workflow, sim_spec, clock_name, repetitions, presync, blob_bytes,
              json_path, params) -> None:
    """Measure execution time with offloading off vs. on."""
    doc = _read_doc(workflow)
    sim_spec = _cfg(ctx, "sim", sim_spec, "speed=1,latency=0,bandwidth=inf")
    clock_name = _cfg(ctx, "clock", clock_name, "virtual")
    report = run_bench(
        doc,
        SimParams.parse(sim_spec),
        repetitions,
        clock_mode=clock_name,
        presync=presync,
        blob_bytes=blob_bytes,
        params=_parse_params(params),
    )
    click.echo(report.render_table(), nl=False)
    if json_path:
        Path(json_path).write_bytes(report.to_json_bytes())
    if report.incomplete:
        raise _Exit(EXIT_RUNTIME)


@cli.command("report")
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
def cmd_report(trace_file: str) -> None:
    """Render a trace timeline; nonzero exit when the lifecycle check fails."""
    trace = ExecutionTrace.from_jsonl(Path(trace_file).read_text(encoding="utf-8"))
    text, summary = render_report(trace)
    click.echo(text, nl=False)
    if summary.problems:
        raise _Exit(EXIT_VALIDATION)


@cli.group("mdss")
def mdss_group() -> None:
    """Inspect and synchronize the URI-addressed data store."""


def _store_from(ctx, store_dir: str | None) -> BlobStore:
    store_dir = _cfg(ctx, "store", store_dir)
    if not store_dir:
        raise click.UsageError("a store directory is required (--store or config 'store')")
    return BlobStore(store_dir)


def _sync_for(ctx, store: BlobStore, agent_addr: str | None, sim_remote: str | None) -> DataSync:
    agent_addr = _cfg(ctx, "agent", agent_addr)
    if agent_addr and sim_remote:
        raise click.UsageError("--agent and --sim-remote are mutually exclusive")
    if agent_addr:
        transport = TcpTransport(parse_address(agent_addr), WallClock())
    elif sim_remote:
        core = AgentCore(AgentConfig(store_root=Path(sim_remote)))
        transport = SimTransport(core.handle, SimParams(), VirtualClock())
    else:
        raise click.UsageError("need --agent host:port or --sim-remote DIR")
    return DataSync(store, transport)


@mdss_group.command("put")
@click.argument("uri")
@click.option("--file", "file_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--data", "text_data", default=None, help="literal payload text")
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default=None)
@click.pass_context
def mdss_put(ctx, uri, file_path, text_data, store_dir) -> None:
    """Write a payload to the local store under URI."""
    if (file_path is None) == (text_data is None):
        raise click.UsageError("exactly one of --file or --data is required")
    payload = Path(file_path).read_bytes() if file_path else text_data.encode("utf-8")
    stamp = _store_from(ctx, store_dir).put(uri, payload)
    click.echo(f"{uri} counter={stamp.counter} writer={stamp.writer} bytes={len(payload)}")


@mdss_group.command("get")
@click.argument("uri")
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default=None)
@click.pass_context
def mdss_get(ctx, uri, output, store_dir) -> None:
    """Read a payload from the local store."""
    obj = _store_from(ctx, store_dir).get(uri)
    if output:
        Path(output).write_bytes(obj.payload)
        click.echo(f"{uri} -> {output} ({len(obj.payload)} bytes)")
    else:
        sys.stdout.buffer.write(obj.payload)


@mdss_group.command("status")
@click.argument("uri", required=False)
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default=None)
@click.option("--agent", "agent_addr", default=None)
@click.option("--sim-remote", "sim_remote", type=click.Path(file_okay=False), default=None)
@click.pass_context
def mdss_status(ctx, uri, store_dir, agent_addr, sim_remote) -> None:
    """Show local (and, with an agent, remote) stamps."""
    store = _store_from(ctx, store_dir)
    uris = [uri] if uri else store.uris()
    sync = None
    if agent_addr or sim_remote:
        sync = _sync_for(ctx, store, agent_addr, sim_remote)
    for u in uris:
        local = store.stamp(u)
        line = f"{u} local={_stamp_text(local)}"
        if sync is not None:
            remote, _ = sync.remote_stamp(u)
            line += f" remote={_stamp_text(remote)}"
            if local is not None or remote is not None:
                line += f" transfer={sync.decide_transfer(u)}"
        click.echo(line)


def _stamp_text(stamp) -> str:
    if stamp is None:
        return "absent"
    return f"{stamp.counter}@{stamp.written_at:.6f}/{stamp.writer}"


@mdss_group.command("sync")
@click.argument("uri")
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default=None)
@click.option("--agent", "agent_addr", default=None)
@click.option("--sim-remote", "sim_remote", type=click.Path(file_okay=False), default=None)
@click.pass_context
def mdss_sync(ctx, uri, store_dir, agent_addr, sim_remote) -> None:
    """Converge local and remote copies of URI on the last-written version."""
    store = _store_from(ctx, store_dir)
    sync = _sync_for(ctx, store, agent_addr, sim_remote)
    outcome = sync.synchronize(uri)
    click.echo(f"{outcome.uri} {outcome.action} bytes_moved={outcome.bytes_moved}")


@cli.command("agent")
@click.option("--listen", default=None, help="bind address host:port", show_default=True)
@click.option("--speed", type=float, default=None, help="remote compute speed factor")
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default=None)
@click.pass_context
def cmd_agent(ctx, listen, speed, store_dir) -> None:
    """Run the remote agent until interrupted."""
    listen = _cfg(ctx, "listen", listen, "0.0.0.0:7421")
    speed = float(_cfg(ctx, "speed", speed, 1.0))
    store_dir = _cfg(ctx, "store", store_dir)
    if not store_dir:
        raise click.UsageError("the agent needs a store directory (--store)")
    serve(AgentConfig(store_root=Path(store_dir), listen=listen, speed_factor=speed))


def main(argv: list[str] | None = None) -> int:
    """Dispatch and map errors onto the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="ferry", standalone_mode=False)
    except _Exit as exc:
        return exc.code
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except (DocumentError, IllegalWorkflow, PreviouslyPartitioned, MalformedTrace, MalformedUri) as exc:
        click.echo(f"error: {exc}", err=True)
        if isinstance(exc, IllegalWorkflow):
            for violation in exc.violations:
                click.echo(violation.render(), err=True)
        return EXIT_VALIDATION
    except FerryError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
