from __future__ import annotations

import socket
import threading

import pytest

from ferry.agent import AgentConfig, AgentCore, AgentServer
from ferry.clock import VirtualClock, WallClock
from ferry.errors import ConnectFailed
from ferry.mdss import VersionStamp, checksum_of
from ferry.messages import DataRef, PackagedStep, RemoteResult
from ferry.transport import SimParams, SimTransport, TcpTransport, connect
from ferry.wire import (
    FrameType,
    canonical_json,
    encode_blob_payload,
    parse_json,
)


def make_core(tmp_path, speed=1.0) -> AgentCore:
    return AgentCore(AgentConfig(store_root=tmp_path / "remote", speed_factor=speed))


def offload_payload(task="add", bindings=None, outputs=("s",), cost=0.0, data=()):
    return PackagedStep(
        step_id="step-1",
        task_ref=task,
        inputs=tuple(sorted((bindings or {"a": 2, "b": 3}))),
        outputs=outputs,
        input_bindings=bindings or {"a": 2, "b": 3},
        data_refs=tuple(DataRef(uri, None) for uri in data),
        nominal_cost=cost,
    ).to_payload()


class TestAgentCore:
    def test_offload_sum(self, tmp_path):
        core = make_core(tmp_path)
        rtype, payload, service = core.handle(FrameType.OFFLOAD_REQ, offload_payload())
        assert rtype == FrameType.OFFLOAD_RES
        result = RemoteResult.from_payload(payload)
        assert result.output_bindings == {"s": 5}
        assert service == 0.0

    def test_unknown_task(self, tmp_path):
        core = make_core(tmp_path)
        rtype, payload, _ = core.handle(FrameType.OFFLOAD_REQ, offload_payload(task="warp"))
        assert rtype == FrameType.ERR
        assert parse_json(payload)["code"] == "UnknownTask"

    def test_missing_data(self, tmp_path):
        core = make_core(tmp_path)
        rtype, payload, _ = core.handle(
            FrameType.OFFLOAD_REQ, offload_payload(data=("mdss://d/absent",))
        )
        assert rtype == FrameType.ERR
        assert parse_json(payload)["code"] == "DataMissing"

    def test_task_failure_carried_verbatim(self, tmp_path):
        core = make_core(tmp_path)
        rtype, payload, _ = core.handle(
            FrameType.OFFLOAD_REQ, offload_payload(task="fail", outputs=())
        )
        assert rtype == FrameType.ERR
        err = parse_json(payload)
        assert err["code"] == "TaskFailed"
        assert "always fails" in err["message"]

    def test_sync_query_absent(self, tmp_path):
        core = make_core(tmp_path)
        rtype, payload, _ = core.handle(
            FrameType.SYNC_QUERY, canonical_json({"uri": "mdss://d/nope"})
        )
        assert rtype == FrameType.SYNC_QUERY_RES
        assert parse_json(payload) == {"stamp": None, "uri": "mdss://d/nope"}

    def test_unknown_frame_type(self, tmp_path):
        core = make_core(tmp_path)
        rtype, payload, _ = core.handle(0x55, b"{}")
        assert rtype == FrameType.ERR
        assert parse_json(payload)["code"] == "UnknownType"

    def test_bad_payload(self, tmp_path):
        core = make_core(tmp_path)
        rtype, payload, _ = core.handle(FrameType.OFFLOAD_REQ, b"this is not json")
        assert rtype == FrameType.ERR
        assert parse_json(payload)["code"] == "BadFrame"

    def test_speed_factor_sets_service_time(self, tmp_path):
        core = make_core(tmp_path, speed=4.0)
        _, _, service = core.handle(
            FrameType.OFFLOAD_REQ, offload_payload(task="burn", outputs=(), cost=400.0)
        )
        assert service == 100.0

    def test_stateless_identical_replies(self, tmp_path):
        core = make_core(tmp_path)
        first = core.handle(FrameType.OFFLOAD_REQ, offload_payload())
        second = core.handle(FrameType.OFFLOAD_REQ, offload_payload())
        assert first == second  # byte-identical for a pure task

    def test_produced_data_lands_in_remote_store(self, tmp_path):
        core = make_core(tmp_path)
        payload = PackagedStep(
            step_id="s",
            task_ref="note",
            inputs=("msg",),
            outputs=(),
            input_bindings={"msg": "hello"},
            data_refs=(DataRef("mdss://out/box", None),),
            nominal_cost=0.0,
        ).to_payload()
        core.store.put("mdss://out/box", b"seed")
        rtype, body, _ = core.handle(FrameType.OFFLOAD_REQ, payload)
        assert rtype == FrameType.OFFLOAD_RES
        result = RemoteResult.from_payload(body)
        assert [uri for uri, _ in result.produced_data] == ["mdss://out/box"]
        assert result.produced_data[0][1].counter == 2
        assert core.store.get("mdss://out/box").payload == b"hello"


class TestSimTiming:
    def test_one_mib_push_takes_about_1010_ms(self, tmp_path):
        core = make_core(tmp_path)
        clock = VirtualClock()
        sim = SimParams(latency_ms=10.0, bandwidth_bps=1024 * 1024)
        transport = SimTransport(core.handle, sim, clock)

        blob = b"\xab" * (1024 * 1024)
        header = {
            "uri": "mdss://d/big",
            "stamp": VersionStamp(1, 0.0, "local").to_json(),
            "checksum": checksum_of(blob).hex(),
        }
        result = transport.exchange(FrameType.SYNC_PUSH, encode_blob_payload(header, blob))
        assert result.rtype == FrameType.SYNC_QUERY_RES

        elapsed = clock.now_ms
        modeled = sim.latency_ms + (result.sent_bytes + result.received_bytes) / sim.bandwidth_bps * 1000.0
        assert elapsed == pytest.approx(modeled, abs=1e-9)
        assert abs(elapsed - 1010.0) <= 1.0  # latency + blob/bandwidth dominate

    def test_zero_latency_infinite_bandwidth_is_free(self, tmp_path):
        core = make_core(tmp_path)
        clock = VirtualClock()
        transport = SimTransport(core.handle, SimParams(), clock)
        transport.exchange(FrameType.SYNC_QUERY, canonical_json({"uri": "mdss://d/x"}))
        assert clock.now_ms == 0.0

    def test_service_time_lands_between_remote_start_and_end(self, tmp_path):
        core = make_core(tmp_path, speed=2.0)
        clock = VirtualClock()
        transport = SimTransport(core.handle, SimParams(speed=2.0, latency_ms=5.0), clock)
        result = transport.exchange(
            FrameType.OFFLOAD_REQ, offload_payload(task="burn", outputs=(), cost=100.0)
        )
        assert result.remote_start_ms == 5.0
        assert result.remote_end_ms == 55.0
        assert result.finished_ms == clock.now_ms == 55.0

    def test_sim_params_parse(self):
        params = SimParams.parse("speed=4, latency=10, bandwidth=1048576")
        assert params == SimParams(speed=4.0, latency_ms=10.0, bandwidth_bps=1048576.0)
        assert SimParams.parse("bandwidth=inf").bandwidth_bps is None
        assert SimParams.parse("") == SimParams()
        with pytest.raises(ValueError):
            SimParams.parse("warp=9")
        with pytest.raises(ValueError):
            SimParams.parse("speed=0")


@pytest.fixture
def tcp_agent(tmp_path):
    core = make_core(tmp_path)
    server = AgentServer(core, "127.0.0.1", 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield core, server.address
    server.shutdown()
    server.server_close()


class TestTcpTransport:
    def test_connect_refused(self):
        sink = socket.socket()
        sink.bind(("127.0.0.1", 0))
        port = sink.getsockname()[1]
        sink.close()  # nothing listening now
        with pytest.raises(ConnectFailed):
            TcpTransport(("127.0.0.1", port), WallClock(), timeout_s=1.0)

    def test_offload_round_trip(self, tcp_agent):
        _, address = tcp_agent
        transport = TcpTransport(address, WallClock())
        result = transport.exchange(FrameType.OFFLOAD_REQ, offload_payload())
        assert result.rtype == FrameType.OFFLOAD_RES
        assert RemoteResult.from_payload(result.payload).output_bindings == {"s": 5}
        transport.close()

    def test_multiple_requests_per_connection(self, tcp_agent):
        _, address = tcp_agent
        transport = TcpTransport(address, WallClock())
        for _ in range(3):
            result = transport.exchange(FrameType.SYNC_QUERY, canonical_json({"uri": "mdss://d/x"}))
            assert result.rtype == FrameType.SYNC_QUERY_RES
        transport.close()

    def test_agent_survives_garbage_and_next_connection_works(self, tcp_agent):
        _, address = tcp_agent
        raw = socket.create_connection(address, timeout=2.0)
        raw.sendall((70 * 1024 * 1024).to_bytes(4, "big") + b"\x01")  # over the cap
        reply = raw.recv(65536)
        assert reply[4] == FrameType.ERR
        raw.close()

        transport = TcpTransport(address, WallClock())
        result = transport.exchange(FrameType.SYNC_QUERY, canonical_json({"uri": "mdss://d/x"}))
        assert result.rtype == FrameType.SYNC_QUERY_RES
        transport.close()

    def test_connect_helper(self, tcp_agent, tmp_path):
        core, address = tcp_agent
        tcp = connect(address=f"{address[0]}:{address[1]}", clock=WallClock())
        assert isinstance(tcp, TcpTransport)
        tcp.close()
        sim = connect(handler=core.handle, sim=SimParams(), clock=VirtualClock())
        assert isinstance(sim, SimTransport)


def test_sim_and_tcp_agree_on_results(tmp_path, tcp_agent):
    """Same request sequence through both transports: identical results, timing aside."""
    tcp_core, address = tcp_agent
    sim_core = AgentCore(AgentConfig(store_root=tmp_path / "sim-remote"))
    requests = [
        offload_payload(task="add", bindings={"a": 7, "b": 3}),
        offload_payload(task="concat", bindings={"a": "x", "b": "y"}, outputs=("joined",)),
        offload_payload(task="mul", bindings={"a": 6, "b": 6}),
    ]
    sim = SimTransport(sim_core.handle, SimParams(latency_ms=3.0), VirtualClock())
    tcp = TcpTransport(address, WallClock())
    for payload in requests:
        sim_result = sim.exchange(FrameType.OFFLOAD_REQ, payload)
        tcp_result = tcp.exchange(FrameType.OFFLOAD_REQ, payload)
        assert sim_result.rtype == tcp_result.rtype == FrameType.OFFLOAD_RES
        left = RemoteResult.from_payload(sim_result.payload)
        right = RemoteResult.from_payload(tcp_result.payload)
        assert left.comparable() == right.comparable()
    tcp.close()
