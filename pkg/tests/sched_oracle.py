"""Brute-force reference scheduler for small instances.

Walks the clock one tick at a time and searches every node combination for
every reservation, so it shares no planning code with ``ckptstack.sched``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, count


@dataclass
class OracleJob:
    """A self-timed job as the oracle tracks it."""

    job_id: int
    nodes_needed: int
    requested: int
    window: int
    remaining: int = 0
    eligible: int = 0
    state: str = "queued"
    start: int = 0
    nodes: tuple[int, ...] = ()
    noticed: bool = False

    def __post_init__(self) -> None:
        self.remaining = self.requested

    @property
    def run_for(self) -> int:
        return min(self.window, self.remaining)


def run_oracle(
    node_count: int,
    jobs: list[tuple[int, int, int, int]],
    horizon: int,
    signal_lead: int,
    requeue_delay: int = 0,
) -> list[tuple[int, str, int, tuple[int, ...]]]:
    """Return the event stream of (job_id, nodes, requested, window) jobs, all submitted at 0."""
    table = [OracleJob(*spec) for spec in jobs]
    events: list[tuple[int, str, int, tuple[int, ...]]] = []

    def running() -> list[OracleJob]:
        return sorted((j for j in table if j.state == "running"), key=lambda j: j.job_id)

    def notices(t: int) -> None:
        for job in running():
            notice_at = max(job.start, job.start + job.window - signal_lead)
            if not job.noticed and notice_at == t:
                job.noticed = True
                events.append((t, "PreemptNotice", job.job_id, job.nodes))

    def reservations(t: int) -> list[tuple[OracleJob, int, tuple[int, ...]]]:
        busy = {node: set() for node in range(node_count)}
        for job in running():
            for node in job.nodes:
                busy[node].update(range(t, job.start + job.run_for))
        plan = []
        for job in table:
            if job.state != "queued" or job.nodes_needed > node_count:
                continue
            ticks = range(0, job.run_for)
            for start in count(max(t, job.eligible)):
                chosen = next(
                    (
                        combo
                        for combo in combinations(range(node_count), job.nodes_needed)
                        if all(start + k not in busy[n] for n in combo for k in ticks)
                    ),
                    None,
                )
                if chosen is not None:
                    break
            for node in chosen:
                busy[node].update(start + k for k in ticks)
            plan.append((job, start, chosen))
        return plan

    for t in range(horizon + 1):
        for job in running():
            if job.remaining <= job.window and job.start + job.remaining == t:
                job.remaining = 0
                job.state = "completed"
                events.append((t, "JobCompleted", job.job_id, job.nodes))

        expired = [j for j in running() if j.start + j.window == t]
        for job in expired:
            events.append((t, "WindowExpired", job.job_id, job.nodes))
        for job in expired:
            job.remaining -= job.window
            job.state = "queued"
            job.eligible = t + requeue_delay
            events.append((t, "JobRequeued", job.job_id, job.nodes))

        notices(t)
        for job, start, nodes in reservations(t):
            if start == t:
                job.state = "running"
                job.start = t
                job.nodes = nodes
                job.noticed = False
                events.append((t, "JobStarted", job.job_id, nodes))
        notices(t)
    return events
