from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ferry.agent import AgentConfig, AgentCore
from ferry.clock import VirtualClock
from ferry.mdss import BlobStore
from ferry.runtime import ExecutionContext, MigrationManager
from ferry.transport import SimParams, SimTransport


class SimRig:
    """A local store plus an in-process agent reachable over simulated transport."""

    def __init__(self, root: Path, sim: SimParams = SimParams()):
        self.sim = sim
        self.local_store = BlobStore(root / "local")
        self.core = AgentCore(AgentConfig(store_root=root / "remote", speed_factor=sim.speed))
        self.remote_store = self.core.store

    def transport(self, clock=None) -> SimTransport:
        return SimTransport(self.core.handle, self.sim, clock or VirtualClock())

    def manager(self, **kwargs) -> MigrationManager:
        return MigrationManager(lambda c: SimTransport(self.core.handle, self.sim, c), **kwargs)

    def context(self, *, offload: bool = True, params: dict | None = None) -> ExecutionContext:
        return ExecutionContext(
            clock=VirtualClock(),
            offload_enabled=offload,
            params=params or {},
            local_store=self.local_store,
        )


@pytest.fixture
def rig(tmp_path) -> SimRig:
    return SimRig(tmp_path)


@pytest.fixture
def make_rig(tmp_path):
    counter = [0]

    def build(sim: SimParams = SimParams()) -> SimRig:
        counter[0] += 1
        return SimRig(tmp_path / f"rig{counter[0]}", sim)

    return build
