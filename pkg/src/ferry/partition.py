"""Legality validation and insertion of migration points before remotable steps."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import IllegalWorkflow, PreviouslyPartitioned
from .model import NOT_VISIBLE, Step, WorkflowDoc, resolve_scope

P1_HARDWARE = "P1_Hardware"
P2_VARIABLE_LEVEL = "P2_VariableLevel"
P3_NESTED = "P3_Nested"

_PROPERTY_SHORT = {P1_HARDWARE: "P1", P2_VARIABLE_LEVEL: "P2", P3_NESTED: "P3"}


@dataclass(frozen=True)
class Violation:
    """One broken legality rule, attributed to the offending step."""

    property: str
    step_id: str
    detail: str

    @property
    def short_code(self) -> str:
        return _PROPERTY_SHORT[self.property]

    def render(self) -> str:
        return f"{self.short_code} {self.step_id}: {self.detail}"


@dataclass(frozen=True)
class PartitionedWorkflow:
    """A workflow with one temporary step inserted before every remotable step."""

    doc: WorkflowDoc
    migration_points: tuple[tuple[str, str], ...]  # (temporary_step_id, target_step_id)


def validate(doc: WorkflowDoc) -> list[Violation]:
    """Check the three legality properties; returns every violation in document order.

    P1: a remotable step must not be pinned to local hardware.
    P2: every variable a remotable step touches must be declared at the step's
        own level, i.e. scoped to its parent container.
    P3: a remotable step must not sit inside another remotable step.
    """
    violations: list[Violation] = []
    remotable_ancestors: list[Step] = []

    def visit(step: Step, ancestors: list[Step]) -> None:
        if step.remotable:
            if step.hardware is not None:
                violations.append(
                    Violation(
                        P1_HARDWARE,
                        step.id,
                        f"remotable step requires local hardware '{step.hardware}' and must remain local",
                    )
                )
            parent = ancestors[-1] if ancestors else None
            if parent is not None:
                for name in dict.fromkeys(step.inputs + step.outputs):
                    var = resolve_scope(doc, step.id, name)
                    if var is NOT_VISIBLE:
                        violations.append(
                            Violation(
                                P2_VARIABLE_LEVEL,
                                step.id,
                                f"variable '{name}' is not defined in any enclosing scope",
                            )
                        )
                    elif var.scope_step != parent.id:
                        violations.append(
                            Violation(
                                P2_VARIABLE_LEVEL,
                                step.id,
                                f"variable '{name}' is scoped to step '{var.scope_step}', "
                                f"not to the step's own level '{parent.id}'",
                            )
                        )
            nested_in = next((a for a in ancestors if a.remotable), None)
            if nested_in is not None:
                violations.append(
                    Violation(
                        P3_NESTED,
                        step.id,
                        f"remotable step is nested inside remotable step '{nested_in.id}'",
                    )
                )
        for child in step.children:
            visit(child, ancestors + [step])

    visit(doc.root, remotable_ancestors)
    return violations


def _fresh_id(target_id: str, taken: set[str]) -> str:
    candidate = f"mp-{target_id}"
    suffix = 2
    while candidate in taken:
        candidate = f"mp-{target_id}-{suffix}"
        suffix += 1
    taken.add(candidate)
    return candidate


def partition(doc: WorkflowDoc) -> PartitionedWorkflow:
    """Insert a temporary migration-point step immediately before every remotable step.

    The output tree is otherwise identical to the input. Raises IllegalWorkflow
    when validate() reports violations and PreviouslyPartitioned when the input
    already holds temporary steps.
    """
    already = [s.id for s in doc.steps() if s.kind == "temporary"]
    if already:
        raise PreviouslyPartitioned(already)
    violations = validate(doc)
    if violations:
        raise IllegalWorkflow(violations)

    taken = {s.id for s in doc.steps()}
    points: list[tuple[str, str]] = []

    def rebuild(step: Step) -> Step:
        if not step.children:
            return step
        new_children: list[Step] = []
        for child in step.children:
            if child.remotable:
                temp_id = _fresh_id(child.id, taken)
                points.append((temp_id, child.id))
                new_children.append(
                    Step(
                        id=temp_id,
                        kind="temporary",
                        display_name=f"migration point for {child.id}",
                        target_id=child.id,
                    )
                )
            new_children.append(rebuild(child))
        return replace(step, children=tuple(new_children))

    new_root = rebuild(doc.root)
    return PartitionedWorkflow(
        doc=WorkflowDoc(doc_id=doc.doc_id, root=new_root),
        migration_points=tuple(points),
    )


def strip_migration_points(doc: WorkflowDoc) -> WorkflowDoc:
    """Drop every temporary step, recovering the pre-partition tree."""

    def rebuild(step: Step) -> Step:
        if not step.children:
            return step
        kept = tuple(rebuild(c) for c in step.children if c.kind != "temporary")
        return replace(step, children=kept)

    return WorkflowDoc(doc_id=doc.doc_id, root=rebuild(doc.root))


def recover_migration_points(doc: WorkflowDoc) -> tuple[tuple[str, str], ...]:
    """Read (temporary, target) pairs back out of an already-partitioned document."""
    return tuple((s.id, s.target_id) for s in doc.steps() if s.kind == "temporary" and s.target_id)


__all__ = [
    "P1_HARDWARE",
    "P2_VARIABLE_LEVEL",
    "P3_NESTED",
    "PartitionedWorkflow",
    "Violation",
    "partition",
    "recover_migration_points",
    "strip_migration_points",
    "validate",
]
