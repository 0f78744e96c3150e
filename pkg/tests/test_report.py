from __future__ import annotations

import pytest

from ferry.clock import VirtualClock
from ferry.errors import MalformedTrace
from ferry.partition import partition
from ferry.report import render_report, summarize
from ferry.runtime import ExecutionContext, execute
from ferry.samples import greeting_doc, parallel_doc
from ferry.trace import ExecutionTrace, check_trace


def greeting_trace() -> ExecutionTrace:
    ctx = ExecutionContext(clock=VirtualClock(), params={"name": "Ada"})
    _, trace = execute(greeting_doc(), ctx)
    return trace


def offload_trace(rig) -> ExecutionTrace:
    pw = partition(parallel_doc(50.0))
    ctx = rig.context()
    _, trace = execute(pw, ctx, rig.manager())
    return trace


class TestSummarize:
    def test_greeting_counts(self):
        trace = greeting_trace()
        summary = summarize(trace)
        assert len(summary.local_ms_by_step) == 3
        assert summary.cycles == []
        assert summary.problems == []

    def test_offload_cycles_counted(self, rig):
        summary = summarize(offload_trace(rig))
        assert len(summary.cycles) == 2
        assert {c.step for c in summary.cycles} == {"branch-1", "branch-2"}
        assert all(c.bytes_out > 0 for c in summary.cycles)
        assert summary.makespan_ms == 50.0

    def test_empty_trace(self):
        summary = summarize(ExecutionTrace(events=()))
        assert summary.makespan_ms == 0.0
        assert summary.problems == []


class TestJsonl:
    def test_round_trip(self, rig):
        trace = offload_trace(rig)
        text = trace.to_jsonl()
        assert ExecutionTrace.from_jsonl(text) == trace

    def test_bad_json_line(self):
        with pytest.raises(MalformedTrace):
            ExecutionTrace.from_jsonl('{"ts": 0, "kind": "StepStart", "step": "a"}\nnot json\n')

    def test_missing_field(self):
        with pytest.raises(MalformedTrace):
            ExecutionTrace.from_jsonl('{"ts": 0, "kind": "StepStart"}\n')

    def test_unknown_kind(self):
        with pytest.raises(MalformedTrace):
            ExecutionTrace.from_jsonl('{"ts": 0, "kind": "Explode", "step": "a"}\n')

    def test_blank_lines_skipped(self):
        trace = ExecutionTrace.from_jsonl('\n{"ts": 1, "kind": "Suspend", "step": "a"}\n\n')
        assert len(trace) == 1


class TestChecker:
    def test_clean_traces_pass(self, rig):
        assert check_trace(greeting_trace().events) == []
        assert check_trace(offload_trace(rig).events) == []

    def test_suspend_without_resume(self, rig):
        events = [e for e in offload_trace(rig) if not (e.kind == "Resume" and e.step == "branch-1")]
        problems = check_trace(events)
        assert any("never resumed" in p for p in problems)

    def test_resume_without_suspend(self):
        trace = ExecutionTrace.from_jsonl('{"ts": 0, "kind": "Resume", "step": "a"}\n')
        assert any("without a Suspend" in p for p in check_trace(trace.events))

    def test_nested_suspend_same_chain(self):
        text = (
            '{"ts": 0, "kind": "Suspend", "step": "a"}\n'
            '{"ts": 1, "kind": "Suspend", "step": "b"}\n'
        )
        problems = check_trace(ExecutionTrace.from_jsonl(text).events)
        assert any("nested Suspend" in p for p in problems)

    def test_parallel_chains_may_interleave(self):
        text = (
            '{"ts": 0, "kind": "Suspend", "step": "a", "chain": "main/p[0]"}\n'
            '{"ts": 0, "kind": "Suspend", "step": "b", "chain": "main/p[1]"}\n'
            '{"ts": 0, "kind": "OffloadSent", "step": "a", "chain": "main/p[0]"}\n'
            '{"ts": 0, "kind": "OffloadSent", "step": "b", "chain": "main/p[1]"}\n'
            '{"ts": 1, "kind": "RemoteStart", "step": "a", "chain": "main/p[0]"}\n'
            '{"ts": 1, "kind": "RemoteStart", "step": "b", "chain": "main/p[1]"}\n'
            '{"ts": 2, "kind": "RemoteEnd", "step": "a", "chain": "main/p[0]"}\n'
            '{"ts": 2, "kind": "RemoteEnd", "step": "b", "chain": "main/p[1]"}\n'
            '{"ts": 3, "kind": "Reintegrate", "step": "a", "chain": "main/p[0]"}\n'
            '{"ts": 3, "kind": "Reintegrate", "step": "b", "chain": "main/p[1]"}\n'
            '{"ts": 3, "kind": "Resume", "step": "a", "chain": "main/p[0]"}\n'
            '{"ts": 3, "kind": "Resume", "step": "b", "chain": "main/p[1]"}\n'
        )
        assert check_trace(ExecutionTrace.from_jsonl(text).events) == []

    def test_out_of_order_timestamps(self):
        text = (
            '{"ts": 5, "kind": "StepStart", "step": "a"}\n'
            '{"ts": 1, "kind": "StepEnd", "step": "a"}\n'
        )
        problems = check_trace(ExecutionTrace.from_jsonl(text).events)
        assert any("out of order" in p for p in problems)

    def test_work_during_suspension_flagged(self):
        text = (
            '{"ts": 0, "kind": "Suspend", "step": "a"}\n'
            '{"ts": 1, "kind": "StepStart", "step": "b"}\n'
            '{"ts": 2, "kind": "StepEnd", "step": "b"}\n'
            '{"ts": 3, "kind": "Resume", "step": "a"}\n'
        )
        problems = check_trace(ExecutionTrace.from_jsonl(text).events)
        assert any("while 'a' is suspended" in p for p in problems)


class TestRender:
    def test_greeting_report(self):
        text, summary = render_report(greeting_trace())
        assert "offload cycles: 0" in text
        assert "lifecycle check: ok" in text
        assert summary.problems == []

    def test_empty_report(self):
        text, summary = render_report(ExecutionTrace(events=()))
        assert "(empty trace)" in text
        assert summary.problems == []

    def test_failing_report(self):
        trace = ExecutionTrace.from_jsonl('{"ts": 0, "kind": "Suspend", "step": "a"}\n')
        text, summary = render_report(trace)
        assert "lifecycle check FAILED" in text
        assert summary.problems
