"""Fixtures for ckptstack tests."""
from __future__ import annotations

from pathlib import Path

import pytest

from ckptstack.agent import CheckpointAgent
from ckptstack.coordinator import CheckpointCoordinator
from ckptstack.imgstore import ImageStore
from ckptstack.jobrt import JobSpec, JobState, MemModel, WorkloadKind, make_workload
from ckptstack.scenario import ClusterConfig, JobEntry, Scenario
from ckptstack.sched import ClusterState, QueuedJob
from ckptstack.telemetry import MetricPoint, MetricTrace, TelemetryConfig
from ckptstack.transport import InprocNetwork

MOCK_JOB_ID = 1
MOCK_SEED = 7


# ---------------------------------------------------------------------------
# Reusable test data builders
# ---------------------------------------------------------------------------


def make_job_spec(
    job_id: int = MOCK_JOB_ID,
    kind: WorkloadKind | str = WorkloadKind.PRNG_DIGEST,
    total_steps: int = 60,
    seed: int = MOCK_SEED,
    step_cost: int = 1,
    mem_model: MemModel | None = None,
) -> JobSpec:
    """Build a job spec."""
    if isinstance(kind, str):
        kind = WorkloadKind.from_label(kind)
    return JobSpec(
        job_id=job_id,
        workload_kind=kind,
        total_steps=total_steps,
        seed=seed,
        step_cost=step_cost,
        mem_model=mem_model or MemModel(),
    )


def make_job(spec: JobSpec | None = None) -> JobState:
    """Build a fresh job state for a spec."""
    spec = spec or make_job_spec()
    return make_workload(
        spec.workload_kind,
        spec.total_steps,
        spec.seed,
        spec.step_cost,
        job_id=spec.job_id,
        mem_model=spec.mem_model,
    )


def make_queued_job(
    job_id: int = MOCK_JOB_ID,
    nodes_needed: int = 1,
    requested_walltime: int = 10,
    window: int | None = None,
    supervised: bool = False,
) -> QueuedJob:
    """Build a queued job."""
    return QueuedJob(
        job_id=job_id,
        nodes_needed=nodes_needed,
        requested_walltime=requested_walltime,
        window=window,
        supervised=supervised,
    )


def make_cluster(nodes: int = 1, signal_lead: int = 2, requeue_delay: int = 0) -> ClusterState:
    """Build an empty cluster."""
    return ClusterState(nodes, signal_lead=signal_lead, requeue_delay=requeue_delay)


def make_trace(
    mem: list[float],
    cpu: list[float] | None = None,
    events: dict[int, str] | None = None,
    job_id: int = MOCK_JOB_ID,
    start: int = 0,
) -> MetricTrace:
    """Build a trace with one sample per minute from ``start``."""
    cpu = cpu if cpu is not None else [100.0 if m > 0 else 0.0 for m in mem]
    events = events or {}
    trace = MetricTrace(job_id)
    for offset, (m, c) in enumerate(zip(mem, cpu)):
        t = start + offset
        trace.append(MetricPoint(t, c, m, events.get(t)))
    return trace


def make_scenario(
    *,
    mode: str = "auto",
    total_steps: int = 60,
    requested_walltime: int = 60,
    window: int = 30,
    signal_lead: int = 5,
    requeue_delay: int = 0,
    checkpoint_interval: int = 10,
    checkpoint_cost: int = 0,
    extend_limit_on_requeue: bool = True,
    fail_checkpoints_at: frozenset[int] = frozenset(),
    manual_checkpoints: tuple[int, ...] = (),
    horizon: int = 500,
) -> Scenario:
    """Build a single-job scenario; defaults give the two-allocation preemption run."""
    spec = make_job_spec(total_steps=total_steps)
    return Scenario(
        name="test",
        mode=mode,
        horizon=horizon,
        cluster=ClusterConfig(nodes=1, signal_lead=signal_lead, requeue_delay=requeue_delay),
        jobs=(JobEntry(spec, 1, requested_walltime, window),),
        checkpoint_interval=checkpoint_interval,
        checkpoint_cost=checkpoint_cost,
        extend_limit_on_requeue=extend_limit_on_requeue,
        manual_checkpoints=manual_checkpoints,
        telemetry=TelemetryConfig(),
        fail_checkpoints_at=fail_checkpoints_at,
    )


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


@pytest.fixture
def store(tmp_path: Path) -> ImageStore:
    """Return an image store with two copies and two kept generations."""
    return ImageStore(tmp_path / "images", redundancy=2, keep=2)


@pytest.fixture
def network() -> InprocNetwork:
    """Return an in-memory network."""
    return InprocNetwork()


@pytest.fixture
async def coordinator(network: InprocNetwork, store: ImageStore, tmp_path: Path):
    """Return a started coordinator on an in-memory endpoint."""
    coordinator = CheckpointCoordinator(
        network,
        network.endpoint_for(),
        store=store,
        state_path=tmp_path / "coordinator.json",
        round_timeout=2.0,
    )
    await coordinator.async_start()
    yield coordinator
    await coordinator.async_shutdown()


async def connect_agents(
    coordinator: CheckpointCoordinator,
    network: InprocNetwork,
    store: ImageStore,
    count: int,
) -> list[CheckpointAgent]:
    """Connect ``count`` agents, one job each (job ids 1..count)."""
    agents = []
    for agent_id in range(count):
        job = make_job(make_job_spec(job_id=agent_id + 1, total_steps=20))
        agent = CheckpointAgent(agent_id, job, store)
        await agent.async_connect(network, coordinator.endpoint)
        agents.append(agent)
    return agents
