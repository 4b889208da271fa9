"""Tests for synthesized telemetry and trace analysis."""
from __future__ import annotations

import pytest

from ckptstack.exceptions import IncompleteTrace, IoFailure, TelemetryError, TooFewSamples
from ckptstack.jobrt import MemModel
from ckptstack.supervisor import RunLedger
from ckptstack.telemetry import (
    MetricPoint,
    OverheadReport,
    TelemetryConfig,
    detect_checkpoint_spikes,
    detect_idle_gaps,
    export_csv,
    format_report,
    import_csv,
    overhead_report,
    sample,
)

from .conftest import MOCK_JOB_ID, make_job_spec, make_trace


def _ledger(*allocations: tuple[int, int | None]) -> RunLedger:
    ledger = RunLedger(MOCK_JOB_ID, 120)
    for start, end in allocations:
        ledger.open(start)
        if end is not None:
            ledger.close(end)
    return ledger


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


def test_sample_at_checkpoint_minute():
    """Memory rises by the spike fraction and CPU dips."""
    spec = make_job_spec(mem_model=MemModel(1000, 0, 0.008))
    ledger = _ledger((0, None))
    ledger.checkpoint_minutes.append(10)
    point = sample(spec, ledger, 10)
    assert point.mem_mb == pytest.approx(1008.0)
    assert point.cpu_pct == 20.0
    assert sample(spec, ledger, 10, TelemetryConfig(ckpt_cpu=35)).cpu_pct == 35.0


def test_sample_between_allocations():
    """Nothing runs between preemption and restart."""
    spec = make_job_spec()
    ledger = _ledger((0, 29), (45, None))
    point = sample(spec, ledger, 30)
    assert (point.cpu_pct, point.mem_mb) == (0.0, 0.0)
    assert sample(spec, ledger, 45).cpu_pct == 100.0


def test_sample_decays_while_running():
    """Steady running follows base minus decay since the allocation start."""
    spec = make_job_spec(mem_model=MemModel(1000, 0.5, 0.008))
    ledger = _ledger((0, 29), (45, None))
    assert sample(spec, ledger, 4).mem_mb == pytest.approx(998.0)
    assert sample(spec, ledger, 49).mem_mb == pytest.approx(998.0)


def test_sample_memory_floor():
    """A long allocation never drops below the running floor."""
    spec = make_job_spec(mem_model=MemModel(10, 1.0, 0.008))
    ledger = _ledger((0, None))
    assert sample(spec, ledger, 500).mem_mb == 1.0


def test_sample_carries_event_tag():
    """Tagged minutes keep their tag."""
    spec = make_job_spec()
    ledger = _ledger((0, None))
    ledger.tag(7, "preempt")
    assert sample(spec, ledger, 7).event == "preempt"
    assert sample(spec, ledger, 8).event is None


@pytest.mark.parametrize(
    ("cpu", "mem", "event"),
    [(101.0, 10.0, None), (-1.0, 10.0, None), (50.0, 0.0, None), (0.0, -1.0, None), (100.0, 5.0, "boom")],
)
def test_invalid_points(cpu, mem, event):
    """Out-of-range samples are rejected."""
    with pytest.raises(TelemetryError):
        MetricPoint(0, cpu, mem, event)


def test_trace_timestamps_increase():
    """Samples must move forward in time."""
    trace = make_trace([1000.0, 1000.0])
    with pytest.raises(TelemetryError):
        trace.append(MetricPoint(1, 100.0, 1000.0))


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------


def test_detect_injected_spikes():
    """Spikes injected at 10, 20 and 30 are found."""
    mem = [1008.0 if t in (10, 20, 30) else 1000.0 for t in range(40)]
    assert detect_checkpoint_spikes(make_trace(mem)) == [10, 20, 30]


def test_detect_spikes_on_decaying_memory():
    """A gradual decrease is no spike."""
    mem = [1000.0 - 0.5 * t for t in range(40)]
    mem[15] *= 1.008
    assert detect_checkpoint_spikes(make_trace(mem)) == [15]


def test_flat_trace_has_no_spikes():
    """Nothing stands out of a flat trace."""
    assert detect_checkpoint_spikes(make_trace([1000.0] * 20)) == []


def test_spikes_need_three_samples():
    """Two samples have no median to compare against."""
    with pytest.raises(TooFewSamples):
        detect_checkpoint_spikes(make_trace([1000.0, 1000.0]))


def test_idle_gap():
    """A preemption at 29 and a restart at 45 leave one gap."""
    mem = [1000.0] * 29 + [0.0] * 16 + [1000.0] * 10
    assert detect_idle_gaps(make_trace(mem)) == [(29, 45)]


def test_uninterrupted_run_has_no_gap():
    """Continuous running has no gap."""
    assert detect_idle_gaps(make_trace([1000.0] * 10)) == []


def test_two_gaps_in_order():
    """Two preemptions give two disjoint gaps."""
    mem = [1000.0] * 5 + [0.0] * 3 + [1000.0] * 4 + [0.0] * 2 + [1000.0]
    assert detect_idle_gaps(make_trace(mem)) == [(5, 8), (12, 14)]


def test_trailing_gap_and_too_few_samples():
    """A trace ending idle closes its gap one period after the last sample."""
    assert detect_idle_gaps(make_trace([1000.0, 0.0, 0.0])) == [(1, 3)]
    with pytest.raises(TooFewSamples):
        detect_idle_gaps(make_trace([1000.0]))


# ---------------------------------------------------------------------------
# Overhead
# ---------------------------------------------------------------------------


def _complete(mem: list[float]):
    return make_trace(mem, events={len(mem) - 1: "complete"})


def test_overhead_report():
    """Three one-minute checkpoints add three minutes and the spike height."""
    baseline = _complete([1000.0] * 10)
    mem = [1000.0] * 13
    for t in (3, 7, 11):
        mem[t] = 1008.0
    report = overhead_report(baseline, _complete(mem))
    assert report.mem_delta_pct == pytest.approx(0.8)
    assert report.duration_delta == 3
    assert report.checkpoints_counted == 3
    assert report.completed_at == 13
    assert report.baseline_completed_at == 10


def test_identical_traces():
    """A trace against itself has no overhead."""
    trace = _complete([1000.0] * 10)
    report = overhead_report(trace, trace)
    assert (report.mem_delta_pct, report.duration_delta, report.checkpoints_counted) == (0, 0, 0)


def test_overhead_needs_complete_traces():
    """An unfinished trace cannot be compared."""
    with pytest.raises(IncompleteTrace):
        overhead_report(_complete([1000.0] * 3), make_trace([1000.0] * 3))
    with pytest.raises(IncompleteTrace):
        make_trace([1000.0]).completed_at


def test_format_report():
    """Text first, then key=value lines."""
    text = format_report([OverheadReport(0.8, 3, 3, job_id=1, baseline_completed_at=37, completed_at=40)])
    lines = text.splitlines()
    assert lines[0].startswith("job 1: peak memory +0.800% vs baseline")
    assert "job.1.duration_delta=3" in lines
    assert "job.1.checkpoints_counted=3" in lines
    assert "job.1.mem_delta_pct=0.800000" in lines


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def test_export_csv(tmp_path):
    """Header plus one row per sample, empty event when untagged."""
    trace = make_trace([1000.0, 1008.0, 999.98], cpu=[100.0, 20.0, 100.0], events={1: "ckpt"})
    path = export_csv(trace, tmp_path / "trace.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == "t_min,cpu_pct,mem_mb,event"
    assert lines[1].endswith(",")
    assert lines[2].endswith(",ckpt")


def test_csv_round_trip(tmp_path):
    """Import of an export is the same trace."""
    mem = [1000.0 - 0.02 * t for t in range(30)] + [0.0] * 5
    trace = make_trace(mem, events={10: "ckpt", 29: "preempt"})
    path = export_csv(trace, tmp_path / "trace.csv")
    assert import_csv(path, job_id=MOCK_JOB_ID) == trace


def test_csv_io_failures(tmp_path):
    """Unwritable and unreadable paths fail cleanly."""
    with pytest.raises(IoFailure):
        export_csv(make_trace([1.0]), tmp_path / "missing" / "trace.csv")
    with pytest.raises(IoFailure):
        import_csv(tmp_path / "absent.csv")
