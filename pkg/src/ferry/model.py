"""Workflow document dialect: in-memory tree, parser, serializer, variable scoping.

A workflow document is UTF-8 XML-style markup. The root element is
``<workflow id=...>`` and wraps exactly one container step. Step elements are
``<sequence>``, ``<parallel>``, ``<task>``, ``<assign>``, ``<write>`` and
``<temporary>`` (the last only ever produced by the partitioner). Any step may
declare scope-local variables with ``<variable name=... kind=...>`` children;
a variable is visible to its declaring step and all descendants, never to
ancestors or siblings. The full attribute grammar is documented in README.md.
"""

from __future__ import annotations

import xml.parsers.expat
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator
from xml.sax.saxutils import quoteattr

from .errors import (
    DuplicateStepId,
    MalformedDocument,
    MultipleRoots,
    UnknownStep,
    UnknownStepKind,
)

CONTAINER_KINDS = ("sequence", "parallel")
LEAF_KINDS = ("task", "assign", "write", "temporary")
STEP_KINDS = CONTAINER_KINDS + LEAF_KINDS

VALUE_KINDS = ("text", "number", "blob_uri")

# Canonical attribute order used by the serializer.
_ATTR_ORDER = ("id", "name", "migration", "hardware", "task", "in", "out", "data", "cost", "target")


class _NotVisibleType:
    """Sentinel returned by resolve_scope for out-of-scope variables."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "NotVisible"

    def __bool__(self) -> bool:
        return False


NOT_VISIBLE = _NotVisibleType()


@dataclass(frozen=True)
class Variable:
    """A named value slot owned by the step identified by ``scope_step``."""

    name: str
    scope_step: str
    value_kind: str = "text"


@dataclass(frozen=True)
class Step:
    """One node of the workflow tree.

    ``remotable`` mirrors the document's ``migration`` attribute. ``extra``
    preserves unrecognized attributes as (key, value) pairs in document order
    so they round-trip through the serializer.
    """

    id: str
    kind: str
    display_name: str = ""
    children: tuple[Step, ...] = ()
    variables: tuple[Variable, ...] = ()
    remotable: bool = False
    hardware: str | None = None
    task_ref: str | None = None
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    data_uris: tuple[str, ...] = ()
    nominal_cost: float = 0.0
    target_id: str | None = None
    extra: tuple[tuple[str, str], ...] = ()

    @property
    def is_container(self) -> bool:
        return self.kind in CONTAINER_KINDS

    def walk(self) -> Iterator[Step]:
        """Yield this step and all descendants in document (pre)order."""
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(frozen=True)
class WorkflowDoc:
    """A parsed workflow: one container root plus derived lookup tables."""

    doc_id: str
    root: Step

    @property
    def variables(self) -> tuple[Variable, ...]:
        """Variables declared at root scope."""
        return self.root.variables

    def steps(self) -> Iterator[Step]:
        return self.root.walk()

    @cached_property
    def steps_by_id(self) -> dict[str, Step]:
        return {s.id: s for s in self.steps()}

    @cached_property
    def _parents(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for step in self.steps():
            for child in step.children:
                out[child.id] = step.id
        return out

    def step(self, step_id: str) -> Step:
        try:
            return self.steps_by_id[step_id]
        except KeyError:
            raise UnknownStep(step_id) from None

    def parent_of(self, step_id: str) -> Step | None:
        """The parent container of a step, or None for the root."""
        if step_id not in self.steps_by_id:
            raise UnknownStep(step_id)
        parent_id = self._parents.get(step_id)
        return None if parent_id is None else self.steps_by_id[parent_id]

    def ancestry(self, step_id: str) -> list[Step]:
        """The chain [step, parent, ..., root]."""
        chain = [self.step(step_id)]
        while (parent := self.parent_of(chain[-1].id)) is not None:
            chain.append(parent)
        return chain


def resolve_scope(doc: WorkflowDoc, step_id: str, var_name: str):
    """Find ``var_name`` as seen from ``step_id``.

    Returns the Variable if its declaring step is ``step_id`` or one of its
    ancestors (innermost declaration wins), NOT_VISIBLE otherwise. Raises
    UnknownStep for an id that is not in the document.
    """
    for step in doc.ancestry(step_id):
        for var in step.variables:
            if var.name == var_name:
                return var
    return NOT_VISIBLE


# --- parsing -------------------------------------------------------------------


@dataclass
class _RawNode:
    tag: str
    attrs: list[tuple[str, str]]
    children: list[_RawNode] = field(default_factory=list)
    line: int = 0
    column: int = 0


def _read_tree(text: str) -> _RawNode:
    """Parse markup into a raw element tree, keeping attribute order and positions."""
    parser = xml.parsers.expat.ParserCreate()
    parser.ordered_attributes = True
    root: list[_RawNode] = []
    stack: list[_RawNode] = []

    def start(tag: str, attr_list: list[str]) -> None:
        pairs = list(zip(attr_list[0::2], attr_list[1::2]))
        node = _RawNode(tag, pairs, line=parser.CurrentLineNumber, column=parser.CurrentColumnNumber + 1)
        if stack:
            stack[-1].children.append(node)
        else:
            root.append(node)
        stack.append(node)

    def end(tag: str) -> None:
        stack.pop()

    def chars(data: str) -> None:
        if data.strip():
            raise MalformedDocument(
                f"unexpected text content {data.strip()!r}",
                line=parser.CurrentLineNumber,
                column=parser.CurrentColumnNumber + 1,
            )

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(text, True)
    except xml.parsers.expat.ExpatError as exc:
        junk_code = xml.parsers.expat.errors.codes[xml.parsers.expat.errors.XML_ERROR_JUNK_AFTER_DOC_ELEMENT]
        if exc.code == junk_code and _char_at(text, exc.lineno, exc.offset) == "<":
            raise MultipleRoots(
                "more than one top-level element", line=exc.lineno, column=exc.offset + 1
            ) from None
        raise MalformedDocument(
            xml.parsers.expat.errors.messages[exc.code], line=exc.lineno, column=exc.offset + 1
        ) from None
    return root[0]


def _char_at(text: str, lineno: int, offset: int) -> str:
    lines = text.split("\n")
    if 1 <= lineno <= len(lines) and offset < len(lines[lineno - 1]):
        return lines[lineno - 1][offset]
    return ""


def _attr_map(node: _RawNode) -> dict[str, str]:
    seen: dict[str, str] = {}
    for key, value in node.attrs:
        if key in seen:
            raise MalformedDocument(f"duplicate attribute '{key}'", line=node.line, column=node.column)
        seen[key] = value
    return seen


def _parse_bool(value: str, attr: str, node: _RawNode) -> bool:
    if value == "true":
        return True
    if value == "false":
        return False
    raise MalformedDocument(
        f"attribute '{attr}' must be 'true' or 'false', got {value!r}",
        line=node.line,
        column=node.column,
    )


def _parse_names(value: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _parse_variable(node: _RawNode, scope_step: str) -> Variable:
    attrs = _attr_map(node)
    name = attrs.pop("name", None)
    if not name:
        raise MalformedDocument("variable requires a name", line=node.line, column=node.column)
    kind = attrs.pop("kind", "text")
    if kind not in VALUE_KINDS:
        raise MalformedDocument(
            f"variable '{name}' has unknown kind {kind!r}", line=node.line, column=node.column
        )
    if attrs:
        raise MalformedDocument(
            f"variable '{name}' has unsupported attributes: {', '.join(attrs)}",
            line=node.line,
            column=node.column,
        )
    if node.children:
        raise MalformedDocument(f"variable '{name}' cannot have children", line=node.line, column=node.column)
    return Variable(name=name, scope_step=scope_step, value_kind=kind)


def _parse_step(node: _RawNode, seen_ids: dict[str, _RawNode], *, is_root: bool) -> Step:
    if node.tag == "variable":
        raise MalformedDocument("variable declared outside a step", line=node.line, column=node.column)
    if node.tag not in STEP_KINDS:
        raise UnknownStepKind(node.tag, line=node.line, column=node.column)

    attrs = _attr_map(node)
    step_id = attrs.pop("id", None)
    if not step_id:
        raise MalformedDocument(f"<{node.tag}> is missing an id", line=node.line, column=node.column)
    if step_id in seen_ids:
        raise DuplicateStepId(step_id, line=node.line, column=node.column)
    seen_ids[step_id] = node

    display_name = attrs.pop("name", "")
    remotable = _parse_bool(attrs.pop("migration", "false"), "migration", node)
    hardware = attrs.pop("hardware", None)
    task_ref = attrs.pop("task", None)
    inputs = _parse_names(attrs.pop("in", ""))
    outputs = _parse_names(attrs.pop("out", ""))
    data_uris = _parse_names(attrs.pop("data", ""))
    cost_text = attrs.pop("cost", "0")
    try:
        cost = float(cost_text)
    except ValueError:
        cost = -1.0
    if cost < 0:
        raise MalformedDocument(
            f"step '{step_id}' has invalid cost {cost_text!r}", line=node.line, column=node.column
        )

    target_id = attrs.pop("target", None)
    if node.tag == "temporary":
        if not target_id:
            raise MalformedDocument(
                f"temporary step '{step_id}' requires a target", line=node.line, column=node.column
            )
    elif target_id is not None:
        raise MalformedDocument(
            f"step '{step_id}' of kind '{node.tag}' cannot carry a target", line=node.line, column=node.column
        )

    if is_root and remotable:
        raise MalformedDocument(
            f"root step '{step_id}' cannot be remotable", line=node.line, column=node.column
        )
    if node.tag in ("task", "assign") and not task_ref:
        raise MalformedDocument(
            f"step '{step_id}' of kind '{node.tag}' requires a task reference",
            line=node.line,
            column=node.column,
        )

    extra = tuple((k, v) for k, v in node.attrs if k not in _ATTR_ORDER)

    variables: list[Variable] = []
    children: list[Step] = []
    for child in node.children:
        if child.tag == "variable":
            variables.append(_parse_variable(child, step_id))
        else:
            if node.tag not in CONTAINER_KINDS:
                raise MalformedDocument(
                    f"step '{step_id}' of kind '{node.tag}' cannot contain child steps",
                    line=child.line,
                    column=child.column,
                )
            children.append(_parse_step(child, seen_ids, is_root=False))

    return Step(
        id=step_id,
        kind=node.tag,
        display_name=display_name,
        children=tuple(children),
        variables=tuple(variables),
        remotable=remotable,
        hardware=hardware,
        task_ref=task_ref,
        inputs=inputs,
        outputs=outputs,
        data_uris=data_uris,
        nominal_cost=cost,
        target_id=target_id,
        extra=extra,
    )


def parse_workflow(doc_bytes: bytes | str) -> WorkflowDoc:
    """Parse a workflow document into its tree form.

    Raises MalformedDocument, MultipleRoots, DuplicateStepId or UnknownStepKind,
    each reporting the offending location.
    """
    if isinstance(doc_bytes, bytes):
        try:
            text = doc_bytes.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"document is not valid UTF-8: {exc}") from None
    else:
        text = doc_bytes

    envelope = _read_tree(text)
    if envelope.tag != "workflow":
        raise MalformedDocument(
            f"expected <workflow> as the document element, got <{envelope.tag}>",
            line=envelope.line,
            column=envelope.column,
        )
    attrs = _attr_map(envelope)
    doc_id = attrs.pop("id", None)
    if not doc_id:
        raise MalformedDocument("<workflow> requires an id", line=envelope.line, column=envelope.column)
    if attrs:
        raise MalformedDocument(
            "<workflow> has unsupported attributes: " + ", ".join(attrs),
            line=envelope.line,
            column=envelope.column,
        )

    step_nodes = [c for c in envelope.children if c.tag != "variable"]
    if any(c.tag == "variable" for c in envelope.children):
        bad = next(c for c in envelope.children if c.tag == "variable")
        raise MalformedDocument(
            "variables must be declared inside a step, not under <workflow>",
            line=bad.line,
            column=bad.column,
        )
    if not step_nodes:
        raise MalformedDocument("workflow has no root step", line=envelope.line, column=envelope.column)
    if len(step_nodes) > 1:
        raise MultipleRoots(
            f"workflow declares {len(step_nodes)} root steps",
            line=step_nodes[1].line,
            column=step_nodes[1].column,
        )

    root_node = step_nodes[0]
    if root_node.tag not in CONTAINER_KINDS:
        if root_node.tag in STEP_KINDS:
            raise MalformedDocument(
                f"root step must be a container, got <{root_node.tag}>",
                line=root_node.line,
                column=root_node.column,
            )
        raise UnknownStepKind(root_node.tag, line=root_node.line, column=root_node.column)

    root = _parse_step(root_node, {}, is_root=True)
    return WorkflowDoc(doc_id=doc_id, root=root)


# --- serialization ---------------------------------------------------------------


def _format_cost(cost: float) -> str:
    return str(int(cost)) if float(cost).is_integer() else repr(cost)


def _step_attrs(step: Step) -> list[tuple[str, str]]:
    attrs: list[tuple[str, str]] = [("id", step.id)]
    if step.display_name:
        attrs.append(("name", step.display_name))
    if step.remotable:
        attrs.append(("migration", "true"))
    if step.hardware is not None:
        attrs.append(("hardware", step.hardware))
    if step.task_ref is not None:
        attrs.append(("task", step.task_ref))
    if step.inputs:
        attrs.append(("in", ",".join(step.inputs)))
    if step.outputs:
        attrs.append(("out", ",".join(step.outputs)))
    if step.data_uris:
        attrs.append(("data", ",".join(step.data_uris)))
    if step.nominal_cost:
        attrs.append(("cost", _format_cost(step.nominal_cost)))
    if step.target_id is not None:
        attrs.append(("target", step.target_id))
    attrs.extend(step.extra)
    return attrs


def _write_step(step: Step, lines: list[str], indent: int) -> None:
    pad = "  " * indent
    attr_text = "".join(f" {k}={quoteattr(v)}" for k, v in _step_attrs(step))
    if not step.variables and not step.children:
        lines.append(f"{pad}<{step.kind}{attr_text}/>")
        return
    lines.append(f"{pad}<{step.kind}{attr_text}>")
    for var in step.variables:
        kind_attr = f" kind={quoteattr(var.value_kind)}"
        lines.append(f"{pad}  <variable name={quoteattr(var.name)}{kind_attr}/>")
    for child in step.children:
        _write_step(child, lines, indent + 1)
    lines.append(f"{pad}</{step.kind}>")


def serialize_workflow(doc: WorkflowDoc) -> str:
    """Render a document that parses back to a structurally equal WorkflowDoc."""
    lines = [f"<workflow id={quoteattr(doc.doc_id)}>"]
    _write_step(doc.root, lines, 1)
    lines.append("</workflow>")
    return "\n".join(lines) + "\n"


__all__ = [
    "CONTAINER_KINDS",
    "LEAF_KINDS",
    "NOT_VISIBLE",
    "STEP_KINDS",
    "Step",
    "Variable",
    "WorkflowDoc",
    "parse_workflow",
    "resolve_scope",
    "serialize_workflow",
]
