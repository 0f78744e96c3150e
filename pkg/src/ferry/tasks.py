"""Task registry shared by the local runtime and the remote agent.

A task is a named pure function over the step's input values (in declared
order) returning one value per declared output. Task code never ships over
the wire: both sides compile in the same registry and a packaged step carries
only the task name, so repeat offloads stay small.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Mapping, Sequence

from .errors import DataUnavailable, UnknownTask

TaskFn = Callable[[Sequence, "TaskIO"], Sequence]


class TaskIO:
    """What a task may touch besides its input values.

    ``read``/``write`` operate on the step's declared data URIs against
    whichever store is executing the task. ``params`` are externally supplied
    run inputs (local side only; parameterized tasks should not be remotable).
    """

    def __init__(
        self,
        *,
        data_uris: Sequence[str] = (),
        input_names: Sequence[str] = (),
        output_names: Sequence[str] = (),
        params: Mapping | None = None,
        read_blob: Callable[[str], bytes] | None = None,
        write_blob: Callable[[str, bytes], object] | None = None,
        emit: Callable[[str], None] | None = None,
    ):
        self.data_uris = tuple(data_uris)
        self.input_names = tuple(input_names)
        self.output_names = tuple(output_names)
        self.params = dict(params or {})
        self._read_blob = read_blob
        self._write_blob = write_blob
        self._emit = emit
        self.produced: list = []

    def read(self, uri: str) -> bytes:
        if uri not in self.data_uris:
            raise DataUnavailable(f"{uri} is not declared by this step")
        if self._read_blob is None:
            raise DataUnavailable(f"no data store attached; cannot read {uri}")
        return self._read_blob(uri)

    def write(self, uri: str, payload: bytes):
        if uri not in self.data_uris:
            raise DataUnavailable(f"{uri} is not declared by this step")
        if self._write_blob is None:
            raise DataUnavailable(f"no data store attached; cannot write {uri}")
        stamp = self._write_blob(uri, payload)
        self.produced.append((uri, stamp))
        return stamp

    def emit(self, text: str) -> None:
        if self._emit is not None:
            self._emit(text)


class TaskRegistry:
    def __init__(self):
        self._tasks: dict[str, TaskFn] = {}

    def register(self, name: str, fn: TaskFn | None = None):
        if fn is not None:
            self._tasks[name] = fn
            return fn

        def decorate(f: TaskFn) -> TaskFn:
            self._tasks[name] = f
            return f

        return decorate

    def get(self, name: str) -> TaskFn:
        try:
            return self._tasks[name]
        except KeyError:
            raise UnknownTask(name) from None

    def names(self) -> list[str]:
        return sorted(self._tasks)

    def __contains__(self, name: str) -> bool:
        return name in self._tasks


def _num(value):
    return value if isinstance(value, (int, float)) else float(value)


def builtin_registry() -> TaskRegistry:
    reg = TaskRegistry()

    @reg.register("prompt")
    def prompt(values, io):
        # External inputs: one value per output, looked up by variable name.
        return [io.params.get(name, "World") for name in io.output_names]

    @reg.register("greet")
    def greet(values, io):
        return ["Hello " + str(values[0])]

    @reg.register("concat")
    def concat(values, io):
        return ["".join(str(v) for v in values)]

    @reg.register("add")
    def add(values, io):
        return [sum(_num(v) for v in values)]

    @reg.register("mul")
    def mul(values, io):
        out = 1
        for v in values:
            out *= _num(v)
        return [out]

    @reg.register("sub")
    def sub(values, io):
        return [_num(values[0]) - _num(values[1])]

    @reg.register("upper")
    def upper(values, io):
        return [str(values[0]).upper()]

    @reg.register("reverse")
    def reverse(values, io):
        return [str(values[0])[::-1]]

    @reg.register("length")
    def length(values, io):
        return [len(str(values[0]))]

    @reg.register("copy")
    def copy(values, io):
        return list(values)

    @reg.register("burn")
    def burn(values, io):
        # Pure synthetic compute: cost is modeled by the executor.
        return []

    @reg.register("digest")
    def digest(values, io):
        acc = hashlib.sha256()
        for uri in io.data_uris:
            acc.update(io.read(uri))
        return [acc.hexdigest()]

    @reg.register("note")
    def note(values, io):
        # Writes its first input into every declared data URI.
        payload = str(values[0]).encode("utf-8")
        for uri in io.data_uris:
            io.write(uri, payload)
        return []

    @reg.register("write_line")
    def write_line(values, io):
        for v in values:
            io.emit(str(v))
        return []

    @reg.register("fail")
    def fail(values, io):
        raise RuntimeError("task 'fail' always fails")

    return reg


DEFAULT_REGISTRY = builtin_registry()

__all__ = ["DEFAULT_REGISTRY", "TaskFn", "TaskIO", "TaskRegistry", "builtin_registry"]
