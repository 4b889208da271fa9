"""Synthesized job telemetry and trace analysis."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import pandas as pd

from .const import (
    DEFAULT_CKPT_CPU,
    DEFAULT_MEDIAN_WINDOW,
    DEFAULT_SAMPLE_PERIOD,
    DEFAULT_SPIKE_FACTOR,
    MIN_RUNNING_MEM_MB,
)
from .exceptions import IncompleteTrace, IoFailure, TelemetryError, TooFewSamples

if TYPE_CHECKING:
    from .jobrt import JobSpec
    from .supervisor import RunLedger

_LOGGER = logging.getLogger(__name__)

TAG_CKPT = "ckpt"
TAG_PREEMPT = "preempt"
TAG_RESTART = "restart"
TAG_COMPLETE = "complete"
EVENT_TAGS = frozenset({TAG_CKPT, TAG_PREEMPT, TAG_RESTART, TAG_COMPLETE})

CSV_COLUMNS = ["t_min", "cpu_pct", "mem_mb", "event"]


@dataclass(frozen=True)
class MetricPoint:
    """One telemetry sample."""

    t: int
    cpu_pct: float
    mem_mb: float
    event: str | None = None

    def __post_init__(self) -> None:
        """Validate."""
        if not 0 <= self.cpu_pct <= 100:
            raise TelemetryError(f"cpu_pct out of range at t={self.t}: {self.cpu_pct}")
        if self.mem_mb < 0 or (self.cpu_pct > 0 and self.mem_mb <= 0):
            raise TelemetryError(f"mem_mb must be positive while running at t={self.t}")
        if self.event is not None and self.event not in EVENT_TAGS:
            raise TelemetryError(f"unknown event tag {self.event!r}")


@dataclass
class MetricTrace:
    """Time-ordered samples of one job."""

    job_id: int
    samples: list[MetricPoint] = field(default_factory=list)
    sample_period: int = DEFAULT_SAMPLE_PERIOD

    def append(self, point: MetricPoint) -> None:
        """Add a sample; timestamps must strictly increase."""
        if self.samples and point.t <= self.samples[-1].t:
            raise TelemetryError(
                f"sample at t={point.t} does not follow t={self.samples[-1].t}"
            )
        self.samples.append(point)

    @property
    def completed(self) -> bool:
        """Return True when the trace reaches job completion."""
        return bool(self.samples) and self.samples[-1].event == TAG_COMPLETE

    @property
    def completed_at(self) -> int:
        """Return the completion time of the job."""
        if not self.completed:
            raise IncompleteTrace(f"trace of job {self.job_id} does not reach completion")
        return self.samples[-1].t + self.sample_period

    def to_frame(self) -> pd.DataFrame:
        """Return the samples as a DataFrame with the CSV columns."""
        return pd.DataFrame(
            {
                "t_min": [p.t for p in self.samples],
                "cpu_pct": [float(p.cpu_pct) for p in self.samples],
                "mem_mb": [float(p.mem_mb) for p in self.samples],
                "event": [p.event for p in self.samples],
            },
            columns=CSV_COLUMNS,
        )


@dataclass(frozen=True)
class TelemetryConfig:
    """Sampling and analysis parameters."""

    sample_period: int = DEFAULT_SAMPLE_PERIOD
    ckpt_cpu: float = DEFAULT_CKPT_CPU
    spike_factor: float = DEFAULT_SPIKE_FACTOR
    median_window: int = DEFAULT_MEDIAN_WINDOW


@dataclass(frozen=True)
class OverheadReport:
    """Checkpointing overhead of one job against its uninterrupted baseline."""

    mem_delta_pct: float
    duration_delta: int
    checkpoints_counted: int
    job_id: int = 0
    baseline_completed_at: int = 0
    completed_at: int = 0


def sample(
    job: JobSpec, ledger: RunLedger, t: int, config: TelemetryConfig | None = None
) -> MetricPoint:
    """Synthesize the sample of ``job`` at virtual minute ``t``."""
    config = config or TelemetryConfig()
    tag = ledger.event_tags.get(t)
    start = ledger.allocation_start_at(t)
    if start is None:
        return MetricPoint(t, 0.0, 0.0, tag)
    model = job.mem_model
    mem = max(model.base_mb - model.decay_mb_per_min * (t - start), MIN_RUNNING_MEM_MB)
    if t in ledger.checkpoint_minutes:
        return MetricPoint(t, float(config.ckpt_cpu), mem * (1 + model.ckpt_spike_fraction), tag)
    return MetricPoint(t, 100.0, mem, tag)


def detect_checkpoint_spikes(
    trace: MetricTrace,
    factor: float = DEFAULT_SPIKE_FACTOR,
    window: int = DEFAULT_MEDIAN_WINDOW,
) -> list[int]:
    """Return the times where memory jumps above its centered rolling median.

    Idle samples do not take part in the median. Consecutive spiking samples
    count once, at the first of them.
    """
    if len(trace.samples) < 3:
        raise TooFewSamples(f"spike detection needs 3 samples, got {len(trace.samples)}")
    df = trace.to_frame()
    running = df["cpu_pct"] > 0
    mem = df["mem_mb"].where(running)
    median = mem.rolling(window, center=True, min_periods=1).median()
    above = running & (mem > median * factor)
    first = above & ~above.shift(1, fill_value=False)
    return [int(t) for t in df.loc[first, "t_min"]]


def detect_idle_gaps(trace: MetricTrace) -> list[tuple[int, int]]:
    """Return the maximal (start, end) intervals with zero CPU."""
    if len(trace.samples) < 2:
        raise TooFewSamples(f"gap detection needs 2 samples, got {len(trace.samples)}")
    gaps = []
    start = None
    for point in trace.samples:
        if point.cpu_pct == 0:
            if start is None:
                start = point.t
        elif start is not None:
            gaps.append((start, point.t))
            start = None
    if start is not None:
        gaps.append((start, trace.samples[-1].t + trace.sample_period))
    return gaps


def overhead_report(
    baseline: MetricTrace,
    ckpt: MetricTrace,
    factor: float = DEFAULT_SPIKE_FACTOR,
    window: int = DEFAULT_MEDIAN_WINDOW,
) -> OverheadReport:
    """Compare a checkpointed trace with its baseline."""
    for trace in (baseline, ckpt):
        if not trace.completed:
            raise IncompleteTrace(f"trace of job {trace.job_id} does not reach completion")
    base_peak = max(p.mem_mb for p in baseline.samples)
    ckpt_peak = max(p.mem_mb for p in ckpt.samples)
    if len(ckpt.samples) >= 3:
        counted = len(detect_checkpoint_spikes(ckpt, factor, window))
    else:
        counted = 0
    return OverheadReport(
        mem_delta_pct=(ckpt_peak - base_peak) / base_peak * 100,
        duration_delta=ckpt.completed_at - baseline.completed_at,
        checkpoints_counted=counted,
        job_id=ckpt.job_id,
        baseline_completed_at=baseline.completed_at,
        completed_at=ckpt.completed_at,
    )


def export_csv(trace: MetricTrace, path: str | Path) -> Path:
    """Write a trace as ``t_min,cpu_pct,mem_mb,event`` CSV."""
    path = Path(path)
    try:
        trace.to_frame().to_csv(path, index=False)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def import_csv(
    path: str | Path, job_id: int = 0, sample_period: int = DEFAULT_SAMPLE_PERIOD
) -> MetricTrace:
    """Read a trace written by ``export_csv``."""
    try:
        df = pd.read_csv(
            path,
            float_precision="round_trip",
            dtype={"t_min": "int64", "cpu_pct": "float64", "mem_mb": "float64", "event": "object"},
            keep_default_na=False,
        )
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    trace = MetricTrace(job_id, sample_period=sample_period)
    for row in df.itertuples(index=False):
        trace.append(MetricPoint(int(row.t_min), float(row.cpu_pct), float(row.mem_mb), row.event or None))
    return trace


def format_report(reports: list[OverheadReport]) -> str:
    """Render overhead reports as text followed by key=value lines."""
    lines = []
    for report in reports:
        lines.append(
            f"job {report.job_id}: peak memory {report.mem_delta_pct:+.3f}% vs baseline, "
            f"completed at {report.completed_at} min "
            f"({report.duration_delta:+d} min), {report.checkpoints_counted} checkpoint spikes"
        )
    for report in reports:
        prefix = f"job.{report.job_id}"
        lines.append(f"{prefix}.mem_delta_pct={report.mem_delta_pct:.6f}")
        lines.append(f"{prefix}.duration_delta={report.duration_delta}")
        lines.append(f"{prefix}.checkpoints_counted={report.checkpoints_counted}")
        lines.append(f"{prefix}.completed_at={report.completed_at}")
        lines.append(f"{prefix}.baseline_completed_at={report.baseline_completed_at}")
    return "\n".join(lines) + "\n"
