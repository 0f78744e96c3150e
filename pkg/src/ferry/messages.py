"""Wire message bodies for offload requests and results."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .errors import BadFrame
from .mdss import VersionStamp
from .wire import canonical_json, parse_json


@dataclass(frozen=True)
class DataRef:
    """A data URI plus the sender's current stamp for it (None if absent)."""

    uri: str
    stamp: VersionStamp | None

    def to_json(self) -> dict:
        return {"uri": self.uri, "stamp": self.stamp.to_json() if self.stamp else None}

    @classmethod
    def from_json(cls, obj: dict) -> "DataRef":
        stamp = obj.get("stamp")
        return cls(uri=obj["uri"], stamp=VersionStamp.from_json(stamp) if stamp else None)


@dataclass(frozen=True)
class PackagedStep:
    """The shipped form of a remotable step: task name, bindings and data refs.

    ``inputs``/``outputs`` keep the declared variable order so the agent can
    apply the task positionally and name its results for reintegration.
    """

    step_id: str
    task_ref: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    input_bindings: dict[str, Any]
    data_refs: tuple[DataRef, ...]
    nominal_cost: float

    def to_payload(self) -> bytes:
        return canonical_json(
            {
                "step_id": self.step_id,
                "task_ref": self.task_ref,
                "inputs": list(self.inputs),
                "outputs": list(self.outputs),
                "input_bindings": self.input_bindings,
                "data_uris": [ref.to_json() for ref in self.data_refs],
                "nominal_cost": self.nominal_cost,
            }
        )

    @classmethod
    def from_payload(cls, payload: bytes) -> "PackagedStep":
        obj = parse_json(payload)
        try:
            return cls(
                step_id=str(obj["step_id"]),
                task_ref=str(obj["task_ref"]),
                inputs=tuple(obj["inputs"]),
                outputs=tuple(obj["outputs"]),
                input_bindings=dict(obj["input_bindings"]),
                data_refs=tuple(DataRef.from_json(d) for d in obj["data_uris"]),
                nominal_cost=float(obj["nominal_cost"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BadFrame(f"bad packaged step: {exc}") from None


@dataclass(frozen=True)
class RemoteResult:
    """What comes back: named outputs, stamps of remotely produced data, timing."""

    step_id: str
    output_bindings: dict[str, Any]
    produced_data: tuple[tuple[str, VersionStamp], ...]
    remote_elapsed_ms: float

    def to_payload(self) -> bytes:
        return canonical_json(
            {
                "step_id": self.step_id,
                "output_bindings": self.output_bindings,
                "produced_data": [[uri, stamp.to_json()] for uri, stamp in self.produced_data],
                "remote_elapsed_ms": self.remote_elapsed_ms,
            }
        )

    @classmethod
    def from_payload(cls, payload: bytes) -> "RemoteResult":
        obj = parse_json(payload)
        try:
            return cls(
                step_id=str(obj["step_id"]),
                output_bindings=dict(obj["output_bindings"]),
                produced_data=tuple(
                    (uri, VersionStamp.from_json(stamp)) for uri, stamp in obj["produced_data"]
                ),
                remote_elapsed_ms=float(obj["remote_elapsed_ms"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BadFrame(f"bad remote result: {exc}") from None

    def comparable(self) -> bytes:
        """Canonical form with timing fields neutralized, for cross-transport diffs."""
        stripped = {
            "step_id": self.step_id,
            "output_bindings": self.output_bindings,
            "produced_data": [
                [uri, {"counter": stamp.counter, "writer": stamp.writer}]
                for uri, stamp in self.produced_data
            ],
        }
        return canonical_json(stripped)


__all__ = ["DataRef", "PackagedStep", "RemoteResult"]
