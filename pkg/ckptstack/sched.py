"""Discrete-event batch-scheduler simulator.

Nodes, a FIFO queue with conservative backfill, walltime-limited allocations,
preemption notices ``signal_lead`` ticks before the limit, and requeue with
remaining-walltime accounting. One tick is one virtual minute by default.

Events at one instant are processed in this order: completions, window
expiries, the requeues or failures those expiries cause, preemption notices,
the scheduling pass (starts), then notices of allocations that started inside
their own notice lead. Within one kind, events are ordered by job id.

A self-timed job holds its allocation for its time limit and leaves early when
its remaining walltime runs out; a supervised job's allocation is also capped
at its remaining walltime. Reservations use ``min(time_limit, remaining)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from .const import DEFAULT_REQUEUE_DELAY, DEFAULT_SIGNAL_LEAD, DEFAULT_TICK_SECONDS
from .duration import format_comment
from .exceptions import DuplicateJobId, ExhaustedWalltime, NotRunning, UnknownJob

_LOGGER = logging.getLogger(__name__)


class EventKind(Enum):
    """Kinds of scheduler events."""

    JOB_STARTED = "JobStarted"
    PREEMPT_NOTICE = "PreemptNotice"
    WINDOW_EXPIRED = "WindowExpired"
    JOB_COMPLETED = "JobCompleted"
    JOB_REQUEUED = "JobRequeued"
    JOB_FAILED = "JobFailed"


class JobPhase(Enum):
    """Scheduler-side status of a job."""

    QUEUED = "Queued"
    RUNNING = "Running"
    COMPLETED = "Completed"
    FAILED = "Failed"
    STARVED = "Starved"


@dataclass(frozen=True)
class ClusterEvent:
    """One scheduler event."""

    at: int
    kind: EventKind
    job_id: int
    node_ids: tuple[int, ...] = ()

    def log_line(self) -> str:
        """Render the event-log line."""
        nodes = ",".join(str(n) for n in self.node_ids)
        return f"t={self.at} kind={self.kind.value} job={self.job_id} nodes={nodes}"


@dataclass
class QueuedJob:
    """A job known to the scheduler."""

    job_id: int
    nodes_needed: int
    requested_walltime: int
    remaining_walltime: int | None = None
    window: int | None = None
    comment: str = ""
    priority_rank: int = -1
    supervised: bool = False
    time_limit: int = 0
    eligible_at: int = 0
    consumed_total: int = 0
    phase: JobPhase = JobPhase.QUEUED

    def __post_init__(self) -> None:
        """Fill defaults and validate."""
        if self.remaining_walltime is None:
            self.remaining_walltime = self.requested_walltime
        if self.window is None:
            self.window = self.requested_walltime
        if not self.time_limit:
            self.time_limit = self.window
        if self.nodes_needed < 1:
            raise ValueError(f"job {self.job_id}: nodes_needed must be positive")
        if not 0 < self.remaining_walltime <= self.requested_walltime:
            raise ValueError(f"job {self.job_id}: need 0 < remaining <= requested walltime")
        if self.window < 1:
            raise ValueError(f"job {self.job_id}: window must be positive")

    @property
    def planned_duration(self) -> int:
        """Planned run time of the next allocation; never more than the remaining walltime."""
        return max(1, min(self.time_limit, self.remaining_walltime))


@dataclass
class Allocation:
    """An active allocation of nodes to a job."""

    job_id: int
    node_ids: tuple[int, ...]
    start: int
    limit: int
    signal_lead: int
    planned_end: int
    completion_at: int | None = None
    notice_sent: bool = False

    @property
    def notice_at(self) -> int:
        """Tick at which the preemption notice fires."""
        return max(self.start, self.start + self.limit - self.signal_lead)

    @property
    def end(self) -> int:
        """Tick at which the window expires."""
        return self.start + self.limit


@dataclass
class Node:
    """A compute node."""

    node_id: int
    job_id: int | None = None
    busy_until: int | None = None
    hold_until: int | None = None


@dataclass
class ClusterState:
    """Simulated cluster: nodes, queue, clock and active allocations."""

    node_count: int
    signal_lead: int = DEFAULT_SIGNAL_LEAD
    requeue_delay: int = DEFAULT_REQUEUE_DELAY
    tick_seconds: int = DEFAULT_TICK_SECONDS
    clock: int = 0
    nodes: list[Node] = field(default_factory=list)
    jobs: dict[int, QueuedJob] = field(default_factory=dict)
    allocations: dict[int, Allocation] = field(default_factory=dict)
    history: list[ClusterEvent] = field(default_factory=list)
    allocation_log: list[tuple[int, tuple[int, ...], int, int]] = field(default_factory=list)
    _pending: list[ClusterEvent] = field(default_factory=list, repr=False)
    _dirty: bool = field(default=False, repr=False)
    _next_rank: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        """Create the nodes."""
        if self.node_count < 1:
            raise ValueError("a cluster needs at least one node")
        if self.signal_lead < 0 or self.requeue_delay < 0:
            raise ValueError("signal_lead and requeue_delay must be non-negative")
        if not self.nodes:
            self.nodes = [Node(i) for i in range(self.node_count)]

    @property
    def queue(self) -> list[QueuedJob]:
        """Queued jobs in priority order."""
        waiting = [j for j in self.jobs.values() if j.phase is JobPhase.QUEUED]
        return sorted(waiting, key=lambda j: j.priority_rank)

    def job(self, job_id: int) -> QueuedJob:
        """Return a submitted job."""
        try:
            return self.jobs[job_id]
        except KeyError as exc:
            raise UnknownJob(f"job {job_id} was never submitted") from exc


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def submit(c: ClusterState, j: QueuedJob) -> int:
    """Append a job to the queue."""
    if j.job_id in c.jobs:
        raise DuplicateJobId(f"job {j.job_id} already submitted")
    j.priority_rank = c._next_rank
    c._next_rank += 1
    j.phase = JobPhase.QUEUED
    j.eligible_at = max(j.eligible_at, c.clock)
    j.comment = format_comment(0)
    c.jobs[j.job_id] = j
    c._dirty = True
    if j.nodes_needed > c.node_count:
        _LOGGER.warning(
            "Job %d needs %d nodes but the cluster has %d; it will starve",
            j.job_id,
            j.nodes_needed,
            c.node_count,
        )
    _LOGGER.debug("Submitted job %d (rank %d)", j.job_id, j.priority_rank)
    return j.job_id


def hold_node(c: ClusterState, node_id: int, until: int) -> None:
    """Keep a node busy without a job until ``until``."""
    node = c.nodes[node_id]
    node.hold_until = until
    node.busy_until = max(node.busy_until or 0, until)
    c._dirty = True


def status(c: ClusterState, job_id: int) -> JobPhase:
    """Return the scheduler status of a job."""
    job = c.job(job_id)
    if job.phase is JobPhase.QUEUED and job.nodes_needed > c.node_count:
        return JobPhase.STARVED
    return job.phase


def _busy_intervals(c: ClusterState) -> dict[int, list[tuple[int, int]]]:
    profile: dict[int, list[tuple[int, int]]] = {n.node_id: [] for n in c.nodes}
    for node in c.nodes:
        if node.hold_until is not None and node.hold_until > c.clock:
            profile[node.node_id].append((c.clock, node.hold_until))
    for alloc in c.allocations.values():
        end = alloc.completion_at if alloc.completion_at is not None else alloc.planned_end
        end = max(end, c.clock + 1)
        for node_id in alloc.node_ids:
            profile[node_id].append((c.clock, end))
    return profile


def _earliest_slot(
    profile: dict[int, list[tuple[int, int]]], earliest: int, duration: int, need: int
) -> tuple[int, tuple[int, ...]]:
    candidates = {earliest}
    for intervals in profile.values():
        candidates.update(end for _, end in intervals if end > earliest)
    for start in sorted(candidates):
        stop = start + duration
        free = [
            node_id
            for node_id in sorted(profile)
            if all(e <= start or s >= stop for s, e in profile[node_id])
        ]
        if len(free) >= need:
            return start, tuple(free[:need])
    raise AssertionError("no slot found after every interval ended")


def plan_backfill(c: ClusterState) -> list[tuple[int, tuple[int, ...], int]]:
    """Give every queued job, in rank order, its earliest non-disturbing reservation."""
    profile = _busy_intervals(c)
    plan = []
    for job in c.queue:
        if job.nodes_needed > c.node_count:
            continue
        duration = job.planned_duration
        start, node_ids = _earliest_slot(
            profile, max(c.clock, job.eligible_at), duration, job.nodes_needed
        )
        for node_id in node_ids:
            profile[node_id].append((start, start + duration))
        plan.append((job.job_id, node_ids, start))
    return plan


def _emit(c: ClusterState, events: list[ClusterEvent], event: ClusterEvent) -> None:
    events.append(event)
    c.history.append(event)
    _LOGGER.debug("%s", event.log_line())


def _release(c: ClusterState, alloc: Allocation, end: int) -> None:
    del c.allocations[alloc.job_id]
    for node_id in alloc.node_ids:
        node = c.nodes[node_id]
        node.job_id = None
        node.busy_until = node.hold_until if node.hold_until and node.hold_until > end else None
    c.allocation_log.append((alloc.job_id, alloc.node_ids, alloc.start, end))
    c._dirty = True


def _charge(c: ClusterState, job: QueuedJob, consumed: int) -> None:
    job.remaining_walltime -= consumed
    job.consumed_total += consumed
    job.comment = format_comment(job.consumed_total * c.tick_seconds)


def _start(c: ClusterState, job: QueuedJob, node_ids: tuple[int, ...], events) -> None:
    limit = job.planned_duration if job.supervised else job.time_limit
    planned_end = c.clock + job.planned_duration
    alloc = Allocation(
        job_id=job.job_id,
        node_ids=node_ids,
        start=c.clock,
        limit=limit,
        signal_lead=c.signal_lead,
        planned_end=planned_end,
    )
    if not job.supervised and job.remaining_walltime <= limit:
        alloc.completion_at = c.clock + job.remaining_walltime
    c.allocations[job.job_id] = alloc
    job.phase = JobPhase.RUNNING
    for node_id in node_ids:
        c.nodes[node_id].job_id = job.job_id
        c.nodes[node_id].busy_until = planned_end
    _emit(c, events, ClusterEvent(c.clock, EventKind.JOB_STARTED, job.job_id, node_ids))


def _notices(c: ClusterState, events: list[ClusterEvent]) -> None:
    for job_id in sorted(c.allocations):
        alloc = c.allocations[job_id]
        if not alloc.notice_sent and alloc.notice_at == c.clock:
            alloc.notice_sent = True
            _emit(c, events, ClusterEvent(c.clock, EventKind.PREEMPT_NOTICE, job_id, alloc.node_ids))


def _process_instant(c: ClusterState) -> list[ClusterEvent]:
    t = c.clock
    events: list[ClusterEvent] = []

    for job_id in sorted(c.allocations):
        alloc = c.allocations[job_id]
        if alloc.completion_at == t:
            job = c.jobs[job_id]
            _release(c, alloc, t)
            _charge(c, job, t - alloc.start)
            job.phase = JobPhase.COMPLETED
            _emit(c, events, ClusterEvent(t, EventKind.JOB_COMPLETED, job_id, alloc.node_ids))

    expired = [c.allocations[j] for j in sorted(c.allocations) if c.allocations[j].end == t]
    for alloc in expired:
        _release(c, alloc, t)
        _emit(c, events, ClusterEvent(t, EventKind.WINDOW_EXPIRED, alloc.job_id, alloc.node_ids))
    for alloc in expired:
        job_id = alloc.job_id
        job = c.jobs[job_id]
        if job.remaining_walltime - alloc.limit <= 0:
            _charge(c, job, job.remaining_walltime)
            job.phase = JobPhase.FAILED
            _LOGGER.warning("Job %d exhausted its walltime", job_id)
            _emit(c, events, ClusterEvent(t, EventKind.JOB_FAILED, job_id, alloc.node_ids))
        else:
            _charge(c, job, alloc.limit)
            job.phase = JobPhase.QUEUED
            job.eligible_at = t + c.requeue_delay
            _emit(c, events, ClusterEvent(t, EventKind.JOB_REQUEUED, job_id, alloc.node_ids))

    _notices(c, events)

    if c.queue:
        for job_id, node_ids, start in plan_backfill(c):
            if start == t:
                _start(c, c.jobs[job_id], node_ids, events)
        _notices(c, events)

    c._dirty = False
    return events


def _next_event_time(c: ClusterState) -> int | None:
    if c._dirty:
        return c.clock
    times = []
    for alloc in c.allocations.values():
        if alloc.completion_at is not None:
            times.append(alloc.completion_at)
        times.append(alloc.end)
        if not alloc.notice_sent:
            times.append(alloc.notice_at)
    for job in c.queue:
        if job.eligible_at > c.clock and job.nodes_needed <= c.node_count:
            times.append(job.eligible_at)
    for node in c.nodes:
        if node.hold_until is not None and node.hold_until > c.clock:
            times.append(node.hold_until)
    future = [t for t in times if t >= c.clock]
    return min(future) if future else None


def advance(c: ClusterState, until: int) -> list[ClusterEvent]:
    """Process every event up to and including ``until``, in time order."""
    if until < c.clock:
        raise ValueError(f"cannot advance backwards from {c.clock} to {until}")
    events = list(c._pending)
    c._pending.clear()
    while True:
        t = _next_event_time(c)
        if t is None or t > until:
            break
        c.clock = t
        events.extend(_process_instant(c))
        if not c._dirty and _next_event_time(c) == t:
            # only possible if something at ``t`` was left unprocessed
            raise AssertionError(f"scheduler made no progress at t={t}")
    c.clock = until
    return events


def requeue(
    c: ClusterState, job_id: int, consumed: int, time_limit: int | None = None
) -> None:
    """Release a job's allocation and put it back in the queue at its rank."""
    job = c.job(job_id)
    alloc = c.allocations.get(job_id)
    if alloc is None:
        raise NotRunning(f"job {job_id} holds no allocation")
    if consumed < 0:
        raise ValueError(f"consumed must be non-negative, got {consumed}")
    if consumed >= job.remaining_walltime:
        raise ExhaustedWalltime(
            f"job {job_id}: consumed {consumed} leaves no remaining walltime "
            f"({job.remaining_walltime})"
        )
    _release(c, alloc, c.clock)
    _charge(c, job, consumed)
    job.phase = JobPhase.QUEUED
    job.eligible_at = c.clock + c.requeue_delay
    if time_limit is not None:
        job.time_limit = max(1, time_limit)
    event = ClusterEvent(c.clock, EventKind.JOB_REQUEUED, job_id, alloc.node_ids)
    c._pending.append(event)
    c.history.append(event)
    _LOGGER.info(
        "Requeued job %d at t=%d: consumed %d, remaining %d, eligible at %d",
        job_id,
        c.clock,
        consumed,
        job.remaining_walltime,
        job.eligible_at,
    )


def finish(c: ClusterState, job_id: int, at: int) -> None:
    """Report that a supervised job completes at ``at``."""
    alloc = c.allocations.get(job_id)
    if alloc is None:
        raise NotRunning(f"job {job_id} holds no allocation")
    if not c.clock <= at <= alloc.end:
        raise ValueError(f"completion at {at} outside [{c.clock}, {alloc.end}]")
    alloc.completion_at = at
    c._dirty = True


def event_log_lines(events: list[ClusterEvent]) -> list[str]:
    """Render events in the event-log format."""
    return [event.log_line() for event in events]
