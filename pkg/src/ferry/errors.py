"""Exception hierarchy shared by all ferry components."""

from __future__ import annotations


class FerryError(Exception):
    """Base class for every error raised by this package."""


# --- workflow document errors ------------------------------------------------

class DocumentError(FerryError):
    """A problem with a workflow document, pointing at the offending location."""

    def __init__(self, message: str, *, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message)


class MalformedDocument(DocumentError):
    """The document is not well-formed or breaks a dialect rule."""


class MultipleRoots(DocumentError):
    """More than one root step was declared."""


class DuplicateStepId(DocumentError):
    """Two steps share the same id."""

    def __init__(self, step_id: str, *, line: int | None = None, column: int | None = None):
        self.step_id = step_id
        super().__init__(f"duplicate step id '{step_id}'", line=line, column=column)


class UnknownStepKind(DocumentError):
    """An element does not name a known step kind."""

    def __init__(self, tag: str, *, line: int | None = None, column: int | None = None):
        self.tag = tag
        super().__init__(f"unknown step kind '{tag}'", line=line, column=column)


class UnknownStep(FerryError):
    """A step id was referenced that does not exist in the document."""

    def __init__(self, step_id: str):
        self.step_id = step_id
        super().__init__(f"unknown step '{step_id}'")


# --- partitioning errors ------------------------------------------------------

class IllegalWorkflow(FerryError):
    """The workflow breaks one of the partitioning legality properties."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{v.property} {v.step_id}: {v.detail}" for v in self.violations)
        super().__init__(f"workflow cannot be partitioned: {lines}")


class PreviouslyPartitioned(FerryError):
    """The input already contains migration points and must not be partitioned again."""

    def __init__(self, step_ids):
        self.step_ids = list(step_ids)
        super().__init__(
            "workflow already contains migration points: " + ", ".join(self.step_ids)
        )


# --- data store errors ---------------------------------------------------------

class MalformedUri(FerryError):
    """URI does not match the mdss://<dataset>/<name> scheme."""


class StorageFull(FerryError):
    """The store's configured capacity would be exceeded."""


class ChecksumMismatch(FerryError):
    """A transferred payload failed its content-hash check after a retry."""


class DataUnavailable(FerryError):
    """A data URI could not be resolved on either side."""


# --- transport / remote errors --------------------------------------------------

class ConnectFailed(FerryError):
    """The remote agent could not be reached."""


class BadFrame(FerryError):
    """A wire frame violates the framing rules (size cap, truncation, bad payload)."""


class RemoteUnreachable(FerryError):
    """The remote side went away mid-conversation; no state was changed remotely."""


class UnknownTask(FerryError):
    """A task reference does not exist in the task registry."""

    def __init__(self, task_ref: str):
        self.task_ref = task_ref
        super().__init__(f"unknown task '{task_ref}'")


# --- runtime errors ---------------------------------------------------------------

class TaskFailure(FerryError):
    """A task raised while executing; the workflow aborts."""

    def __init__(self, step_id: str, message: str):
        self.step_id = step_id
        super().__init__(f"step '{step_id}' failed: {message}")


class RemoteTaskFailure(TaskFailure):
    """A task failed on the remote agent; the remote error is carried back verbatim."""


class DataRace(FerryError):
    """Two parallel branches wrote the same variable."""

    def __init__(self, name: str, writers):
        self.name = name
        self.writers = list(writers)
        super().__init__(
            f"variable '{name}' written by sibling parallel branches: " + ", ".join(self.writers)
        )


class UndeclaredVariable(FerryError):
    """A step read or wrote a variable that is not visible in its scope."""

    def __init__(self, step_id: str, name: str):
        self.step_id = step_id
        self.name = name
        super().__init__(f"step '{step_id}' uses undeclared variable '{name}'")


class NotOffloadable(FerryError):
    """A migration point targets a step kind that cannot be shipped to the agent."""

    def __init__(self, step_id: str, kind: str):
        self.step_id = step_id
        self.kind = kind
        super().__init__(f"step '{step_id}' of kind '{kind}' cannot be offloaded")


# --- trace errors ---------------------------------------------------------------

class MalformedTrace(FerryError):
    """A trace file line is not a valid event record."""
