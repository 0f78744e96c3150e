from __future__ import annotations

import itertools

import pytest

from ferry.errors import (
    ChecksumMismatch,
    ConnectFailed,
    DataUnavailable,
    MalformedUri,
    RemoteUnreachable,
    StorageFull,
)
from ferry.mdss import (
    ALREADY_IN_SYNC,
    PULLED_TO_LOCAL,
    PUSHED_TO_REMOTE,
    SKIP_DATA,
    SYNC_FIRST,
    BlobStore,
    DataSync,
    VersionStamp,
    checksum_of,
    parse_uri,
)
from ferry.wire import FrameType

URI = "mdss://demo/object"


class TestUri:
    def test_parse_ok(self):
        assert parse_uri("mdss://data/mesh-1.bin") == ("data", "mesh-1.bin")
        assert parse_uri("mdss://a/b/c") == ("a", "b", "c")

    @pytest.mark.parametrize(
        "bad",
        [
            "http://x/y",
            "mdss://",
            "mdss://only-dataset",
            "mdss://a//b",
            "mdss://a/../b",
            "mdss://a/b c",
        ],
    )
    def test_parse_bad(self, bad):
        with pytest.raises(MalformedUri):
            parse_uri(bad)


class TestStore:
    def test_counter_monotone(self, tmp_path):
        store = BlobStore(tmp_path)
        first = store.put(URI, b"one")
        second = store.put(URI, b"two")
        assert first.counter == 1
        assert second.counter == 2
        assert second > first
        assert store.get(URI).payload == b"two"

    def test_empty_payload(self, tmp_path):
        store = BlobStore(tmp_path)
        stamp = store.put(URI, b"")
        assert stamp.counter == 1
        obj = store.get(URI)
        assert obj.payload == b"" and obj.checksum == checksum_of(b"")

    def test_get_missing(self, tmp_path):
        with pytest.raises(DataUnavailable):
            BlobStore(tmp_path).get(URI)

    def test_capacity(self, tmp_path):
        store = BlobStore(tmp_path, capacity_bytes=10)
        store.put(URI, b"12345")
        with pytest.raises(StorageFull):
            store.put("mdss://demo/other", b"123456789")
        # replacing an existing blob frees its old bytes first
        store.put(URI, b"1234567890")

    def test_install_keeps_stamp_verbatim(self, tmp_path):
        store = BlobStore(tmp_path)
        stamp = VersionStamp(counter=7, written_at=123.5, writer="remote")
        store.install(URI, b"payload", stamp)
        assert store.stamp(URI) == stamp

    def test_uris_listing(self, tmp_path):
        store = BlobStore(tmp_path)
        store.put("mdss://d/b", b"x")
        store.put("mdss://d/a", b"y")
        assert store.uris() == ["mdss://d/a", "mdss://d/b"]

    def test_put_after_install_bumps_from_installed_counter(self, tmp_path):
        store = BlobStore(tmp_path)
        store.install(URI, b"p", VersionStamp(counter=5, written_at=1.0, writer="remote"))
        assert store.put(URI, b"q").counter == 6


class TestStampOrder:
    def test_counter_dominates(self):
        assert VersionStamp(2, 1.0, "local") > VersionStamp(1, 9.0, "remote")

    def test_time_breaks_counter_tie(self):
        assert VersionStamp(1, 2.0, "local") > VersionStamp(1, 1.0, "remote")

    def test_writer_breaks_full_tie(self):
        a = VersionStamp(1, 1.0, "local")
        b = VersionStamp(1, 1.0, "remote")
        assert a < b and not (b < a)

    def test_json_round_trip(self):
        stamp = VersionStamp(3, 1723110123.456789, "remote")
        assert VersionStamp.from_json(stamp.to_json()) == stamp


def make_pair(tmp_path, name="pair"):
    """A local store plus a remote agent reachable over simulated transport."""
    from conftest import SimRig

    rig = SimRig(tmp_path / name)
    sync = DataSync(rig.local_store, rig.transport())
    return rig.local_store, rig.remote_store, sync


class TestSynchronize:
    def test_push_when_local_newer(self, tmp_path):
        local, remote, sync = make_pair(tmp_path)
        for payload in (b"a", b"b", b"c"):
            local.put(URI, payload)
        remote.put(URI, b"stale")
        outcome = sync.synchronize(URI)
        assert outcome.action == PUSHED_TO_REMOTE
        assert remote.get(URI).payload == b"c"
        assert remote.stamp(URI) == local.stamp(URI)
        assert local.stamp(URI).counter == 3

    def test_pull_when_remote_newer(self, tmp_path):
        local, remote, sync = make_pair(tmp_path)
        local.put(URI, b"one")
        local.put(URI, b"two")
        for payload in (b"r1", b"r2", b"r3", b"r4", b"r5"):
            remote.put(URI, payload)
        outcome = sync.synchronize(URI)
        assert outcome.action == PULLED_TO_LOCAL
        assert local.get(URI).payload == b"r5"
        assert local.stamp(URI) == remote.stamp(URI)
        assert local.stamp(URI).counter == 5

    def test_equal_stamps_moves_metadata_only(self, tmp_path):
        local, remote, sync = make_pair(tmp_path)
        local.put(URI, b"x" * 4096)
        sync.synchronize(URI)
        outcome = sync.synchronize(URI)
        assert outcome.action == ALREADY_IN_SYNC
        assert outcome.bytes_moved < 256  # stamp query only, no payload

    def test_missing_everywhere(self, tmp_path):
        _, _, sync = make_pair(tmp_path)
        with pytest.raises(DataUnavailable):
            sync.synchronize(URI)

    def test_idempotent(self, tmp_path):
        local, remote, sync = make_pair(tmp_path)
        local.put(URI, b"payload" * 1000)
        first = sync.synchronize(URI)
        second = sync.synchronize(URI)
        assert first.action == PUSHED_TO_REMOTE
        assert second.action == ALREADY_IN_SYNC
        assert second.bytes_moved < first.bytes_moved // 10


class TestDecideTransfer:
    def test_equal_stamp_skips(self, tmp_path):
        local, remote, sync = make_pair(tmp_path)
        local.put(URI, b"data")
        sync.synchronize(URI)
        assert sync.decide_transfer(URI) == SKIP_DATA

    def test_remote_missing_syncs_first(self, tmp_path):
        local, remote, sync = make_pair(tmp_path)
        local.put(URI, b"data")
        assert sync.decide_transfer(URI) == SYNC_FIRST

    def test_remote_newer_skips(self, tmp_path):
        local, remote, sync = make_pair(tmp_path)
        local.put(URI, b"old")
        sync.synchronize(URI)
        remote.put(URI, b"remote-made-this")
        assert sync.decide_transfer(URI) == SKIP_DATA

    def test_never_mutates_either_store(self, tmp_path):
        local, remote, sync = make_pair(tmp_path)
        local.put(URI, b"data")
        remote.put(URI, b"other")
        before = (local.fingerprint(), remote.fingerprint())
        for _ in range(5):
            sync.decide_transfer(URI)
        assert (local.fingerprint(), remote.fingerprint()) == before


def _enumerate_histories(max_writes=4, max_syncs=3):
    """Every interleaving of local/remote writes and syncs within the caps."""
    for n_writes in range(1, max_writes + 1):
        for n_syncs in range(0, max_syncs + 1):
            slots = n_writes + n_syncs
            for sync_positions in itertools.combinations(range(slots), n_syncs):
                for writers in itertools.product("LR", repeat=n_writes):
                    history = []
                    w = iter(writers)
                    for i in range(slots):
                        history.append("S" if i in sync_positions else next(w))
                    yield tuple(history)


def test_convergence_over_all_interleavings(tmp_path):
    """After the final synchronize, both stores hold the greatest-stamp payload."""
    histories = list(_enumerate_histories())
    assert len(histories) == 1276
    for idx, history in enumerate(histories):
        tick = itertools.count(1)
        time_source = lambda: float(next(tick))
        root = tmp_path / f"case{idx}"
        from conftest import SimRig

        rig = SimRig(root)
        rig.local_store.time_source = time_source
        rig.remote_store.time_source = time_source
        sync = DataSync(rig.local_store, rig.transport())

        writes: list[tuple[VersionStamp, bytes]] = []
        for pos, action in enumerate(history):
            payload = f"payload-{pos}".encode()
            if action == "L":
                writes.append((rig.local_store.put(URI, payload), payload))
            elif action == "R":
                writes.append((rig.remote_store.put(URI, payload), payload))
            else:
                if writes:
                    sync.synchronize(URI)
        sync.synchronize(URI)

        winner_stamp, winner_payload = max(writes, key=lambda pair: pair[0].key())
        assert rig.local_store.get(URI).payload == winner_payload, history
        assert rig.remote_store.get(URI).payload == winner_payload, history
        assert rig.local_store.stamp(URI) == rig.remote_store.stamp(URI) == winner_stamp, history


class _CorruptingTransport:
    """Flips a byte in the blob segment of selected exchanges."""

    def __init__(self, inner, corrupt_first_n: int):
        self.inner = inner
        self.remaining = corrupt_first_n

    def exchange(self, frame_type, payload):
        if frame_type == FrameType.SYNC_PUSH and self.remaining > 0:
            self.remaining -= 1
            payload = payload[:-1] + bytes([payload[-1] ^ 0xFF])
        result = self.inner.exchange(frame_type, payload)
        if result.rtype == FrameType.SYNC_DATA and self.remaining > 0:
            self.remaining -= 1
            body = result.payload[:-1] + bytes([result.payload[-1] ^ 0xFF])
            result = type(result)(**{**result.__dict__, "payload": body})
        return result

    def close(self):
        self.inner.close()


class _DeadTransport:
    def exchange(self, frame_type, payload):
        raise ConnectFailed("nobody home")

    def close(self):
        pass


class TestTransferFaults:
    def test_push_retries_once_then_succeeds(self, tmp_path):
        from conftest import SimRig

        rig = SimRig(tmp_path / "pair")
        sync = DataSync(rig.local_store, _CorruptingTransport(rig.transport(), 1))
        rig.local_store.put(URI, b"precious")
        outcome = sync.synchronize(URI)
        assert outcome.action == PUSHED_TO_REMOTE
        assert rig.remote_store.get(URI).payload == b"precious"

    def test_push_fails_after_two_corruptions(self, tmp_path):
        from conftest import SimRig

        rig = SimRig(tmp_path / "pair")
        sync = DataSync(rig.local_store, _CorruptingTransport(rig.transport(), 2))
        rig.local_store.put(URI, b"precious")
        with pytest.raises(ChecksumMismatch):
            sync.synchronize(URI)

    def test_pull_retries_once_then_succeeds(self, tmp_path):
        from conftest import SimRig

        rig = SimRig(tmp_path / "pair")
        rig.remote_store.put(URI, b"from-above")
        sync = DataSync(rig.local_store, _CorruptingTransport(rig.transport(), 1))
        outcome = sync.synchronize(URI)
        assert outcome.action == PULLED_TO_LOCAL
        assert rig.local_store.get(URI).payload == b"from-above"

    def test_pull_fails_after_two_corruptions(self, tmp_path):
        from conftest import SimRig

        rig = SimRig(tmp_path / "pair")
        rig.remote_store.put(URI, b"from-above")
        sync = DataSync(rig.local_store, _CorruptingTransport(rig.transport(), 2))
        with pytest.raises(ChecksumMismatch):
            sync.synchronize(URI)
        assert not rig.local_store.holds(URI)

    def test_unreachable_leaves_stores_unchanged(self, tmp_path):
        store = BlobStore(tmp_path / "solo")
        store.put(URI, b"data")
        before = store.fingerprint()
        sync = DataSync(store, _DeadTransport())
        with pytest.raises(RemoteUnreachable):
            sync.synchronize(URI)
        with pytest.raises(RemoteUnreachable):
            sync.decide_transfer(URI)
        assert store.fingerprint() == before


class TestConcurrency:
    def test_parallel_puts_to_distinct_uris(self, tmp_path):
        import threading

        store = BlobStore(tmp_path)
        errors = []

        def writer(n):
            try:
                for i in range(20):
                    store.put(f"mdss://c/u{n}", f"{n}:{i}".encode())
            except Exception as exc:  # noqa: BLE001
                errors.append(exc)

        threads = [threading.Thread(target=writer, args=(n,)) for n in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        for n in range(8):
            obj = store.get(f"mdss://c/u{n}")
            assert obj.version.counter == 20
            assert obj.payload == f"{n}:19".encode()

    def test_hammering_one_uri_keeps_counter_dense(self, tmp_path):
        import threading

        store = BlobStore(tmp_path)
        done = []

        def writer():
            for _ in range(25):
                done.append(store.put(URI, b"x"))

        threads = [threading.Thread(target=writer) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        counters = sorted(stamp.counter for stamp in done)
        assert counters == list(range(1, 101))

    def test_concurrent_syncs_from_parallel_offloads(self, tmp_path):
        """Two wall-clock branches offload steps sharing one data URI."""
        from ferry.clock import WallClock
        from ferry.model import parse_workflow
        from ferry.partition import partition
        from ferry.runtime import ExecutionContext, execute
        from ferry.trace import check_trace
        from conftest import SimRig

        uri = "mdss://c/shared"
        rig = SimRig(tmp_path / "rig")
        rig.local_store.put(uri, b"shared-mesh")
        doc = parse_workflow(
            f'<workflow id="w"><sequence id="r"><parallel id="p">'
            f'<task id="a" task="burn" cost="15" data="{uri}" migration="true"/>'
            f'<task id="b" task="burn" cost="15" data="{uri}" migration="true"/>'
            "</parallel></sequence></workflow>"
        )
        ctx = ExecutionContext(
            clock=WallClock(), offload_enabled=True, local_store=rig.local_store
        )
        _, trace = execute(partition(doc), ctx, rig.manager())
        assert check_trace(trace.events) == []
        assert rig.remote_store.get(uri).payload == b"shared-mesh"
