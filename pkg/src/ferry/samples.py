"""Ready-made workflow documents used by the CLI examples and the test suite."""

from __future__ import annotations

from pathlib import Path

from .model import Step, Variable, WorkflowDoc, serialize_workflow


def greeting_doc() -> WorkflowDoc:
    """Three steps: read a name, build the greeting, print it.

    Run with ``--param name=Ada`` to seed the prompt.
    """
    root_id = "main"
    return WorkflowDoc(
        doc_id="greeting",
        root=Step(
            id=root_id,
            kind="sequence",
            display_name="greeting flow",
            variables=(
                Variable("name", root_id),
                Variable("greeting", root_id),
            ),
            children=(
                Step(id="input-name", kind="task", display_name="input name",
                     task_ref="prompt", outputs=("name",)),
                Step(id="concatenate", kind="assign", display_name="concatenate",
                     task_ref="greet", inputs=("name",), outputs=("greeting",)),
                Step(id="show", kind="write", display_name="Greeting", inputs=("greeting",)),
            ),
        ),
    )


def pipeline_doc(
    cost_ms: float = 400.0,
    *,
    steps: int = 4,
    remotable_from: int = 2,
    data_uri: str | None = "mdss://bench/input",
) -> WorkflowDoc:
    """A linear pipeline of equal-cost synthetic steps sharing one input blob.

    Steps ``remotable_from``..``steps`` carry the migration attribute; the
    last step digests the shared blob so both modes can be compared end to end.
    """
    uris = (data_uri,) if data_uri else ()
    children = []
    for i in range(1, steps + 1):
        last = i == steps
        children.append(
            Step(
                id=f"stage-{i}",
                kind="task",
                display_name=f"stage {i}",
                task_ref="digest" if last else "burn",
                outputs=("summary",) if last else (),
                data_uris=uris,
                nominal_cost=cost_ms,
                remotable=i >= remotable_from,
            )
        )
    return WorkflowDoc(
        doc_id="pipeline",
        root=Step(
            id="main",
            kind="sequence",
            display_name="synthetic pipeline",
            variables=(Variable("summary", "main"),),
            children=tuple(children),
        ),
    )


def parallel_doc(cost_ms: float = 200.0, *, branches: int = 2) -> WorkflowDoc:
    """Remotable equal-cost siblings under one parallel container."""
    children = tuple(
        Step(
            id=f"branch-{i}",
            kind="task",
            display_name=f"branch {i}",
            task_ref="burn",
            nominal_cost=cost_ms,
            remotable=True,
        )
        for i in range(1, branches + 1)
    )
    return WorkflowDoc(
        doc_id="fanout",
        root=Step(
            id="main",
            kind="sequence",
            children=(
                Step(id="fan", kind="parallel", display_name="fan out", children=children),
            ),
        ),
    )


def sequential_twin_doc(cost_ms: float = 200.0, *, steps: int = 2) -> WorkflowDoc:
    """The parallel_doc workload arranged sequentially, for overlap comparisons."""
    children = tuple(
        Step(
            id=f"branch-{i}",
            kind="task",
            display_name=f"branch {i}",
            task_ref="burn",
            nominal_cost=cost_ms,
            remotable=True,
        )
        for i in range(1, steps + 1)
    )
    return WorkflowDoc(
        doc_id="fanout-sequential",
        root=Step(id="main", kind="sequence", children=children),
    )


def write_sample_files(directory: Path | str) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, doc in (
        ("greeting.xml", greeting_doc()),
        ("pipeline.xml", pipeline_doc()),
        ("fanout.xml", parallel_doc()),
    ):
        path = directory / name
        path.write_text(serialize_workflow(doc), encoding="utf-8")
        written.append(path)
    return written


__all__ = [
    "greeting_doc",
    "parallel_doc",
    "pipeline_doc",
    "sequential_twin_doc",
    "write_sample_files",
]
