"""Job supervisor: coordinator lifecycle, checkpoints, preemption and requeue.

``JobSupervisor`` drives one job through its allocations. ``async_simulate``
runs a whole scenario on the scheduler simulator, one virtual minute per tick.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import TYPE_CHECKING

from .agent import CheckpointAgent
from .const import (
    COMMAND_FILE_PREFIX,
    DEFAULT_CHECKPOINT_COST,
    DEFAULT_CHECKPOINT_INTERVAL,
    DEFAULT_SIGNAL_LEAD,
    DEFAULT_TICK_SECONDS,
    ENV_COORD_HOST,
    ENV_COORD_PORT,
    IMAGES_DIRNAME,
    INPROC_HOST,
    MODE_AUTO,
    MODE_CHECKPOINT_ONLY,
    MODE_MANUAL,
    MODES,
    TEMP_SUFFIX,
)
from .coordinator import CheckpointCoordinator
from .duration import format_comment
from .exceptions import (
    CheckpointFailure,
    CoordinatorUnreachable,
    ExhaustedWalltime,
    NoImage,
    NoSuchJob,
    Overconsumed,
    SupervisorError,
)
from .imgstore import ImageStore
from .jobrt import JobSpec, JobState, digest, make_workload, restore
from .sched import (
    ClusterEvent,
    ClusterState,
    EventKind,
    QueuedJob,
    advance,
    finish,
    requeue,
    submit,
)
from .telemetry import (
    TAG_CKPT,
    TAG_COMPLETE,
    TAG_PREEMPT,
    TAG_RESTART,
    MetricTrace,
    TelemetryConfig,
    sample,
)
from .transport import InprocNetwork, format_endpoint, parse_endpoint

if TYPE_CHECKING:
    from .scenario import Scenario

_LOGGER = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Accounting
# ---------------------------------------------------------------------------


def compute_remaining(requested: int, consumed: int) -> int:
    """Return the walltime left after ``consumed`` of ``requested``."""
    if consumed > requested:
        raise Overconsumed(f"consumed {consumed} exceeds requested walltime {requested}")
    return requested - consumed


@dataclass
class RunLedger:
    """Walltime and checkpoint bookkeeping of one job across allocations."""

    job_id: int
    requested_walltime: int
    tick_seconds: int = DEFAULT_TICK_SECONDS
    consumed: int = 0
    allocations: list[tuple[int, int, tuple[int, ...]]] = field(default_factory=list)
    checkpoints_taken: int = 0
    restarts: int = 0
    comment_text: str = field(default_factory=lambda: format_comment(0))
    checkpoint_minutes: list[int] = field(default_factory=list)
    event_tags: dict[int, str] = field(default_factory=dict)
    last_checkpoint_at: int | None = None
    preemptions: int = 0
    reexecuted_steps: int = 0
    open_allocation: tuple[int, tuple[int, ...]] | None = None
    completed_at: int | None = None
    failed: bool = False
    final_digest: str | None = None

    @property
    def remaining(self) -> int:
        """Return the remaining walltime."""
        return compute_remaining(self.requested_walltime, self.consumed)

    @property
    def first_start(self) -> int | None:
        """Return the start of the first allocation."""
        if self.allocations:
            return self.allocations[0][0]
        if self.open_allocation is not None:
            return self.open_allocation[0]
        return None

    def open(self, start: int, node_ids: tuple[int, ...] = ()) -> None:
        """Record the start of an allocation."""
        if self.open_allocation is not None:
            raise SupervisorError(f"job {self.job_id} already holds an allocation")
        self.open_allocation = (start, tuple(node_ids))

    def close(self, end: int) -> int:
        """Record the end of the open allocation and return its length."""
        if self.open_allocation is None:
            raise SupervisorError(f"job {self.job_id} holds no allocation")
        start, node_ids = self.open_allocation
        self.open_allocation = None
        self.allocations.append((start, end, node_ids))
        self.consumed += end - start
        update_comment(self)
        return end - start

    def allocation_start_at(self, t: int) -> int | None:
        """Return the start of the allocation running at ``t``."""
        if self.open_allocation is not None and self.open_allocation[0] <= t:
            return self.open_allocation[0]
        for start, end, _ in self.allocations:
            if start <= t < end:
                return start
        return None

    def tag(self, t: int, tag: str, *, override: bool = False) -> None:
        """Tag minute ``t`` unless it already carries a tag."""
        if override or t not in self.event_tags:
            self.event_tags[t] = tag

    def summary_lines(self) -> list[str]:
        """Render the ledger as key=value lines."""
        allocations = ";".join(
            f"{start}-{end}@{','.join(str(n) for n in nodes)}" for start, end, nodes in self.allocations
        )
        return [
            f"job={self.job_id}",
            f"requested_walltime={self.requested_walltime}",
            f"consumed={self.consumed}",
            f"remaining={self.remaining}",
            f"allocations={allocations}",
            f"checkpoints_taken={self.checkpoints_taken}",
            f"checkpoint_minutes={','.join(str(m) for m in self.checkpoint_minutes)}",
            f"restarts={self.restarts}",
            f"preemptions={self.preemptions}",
            f"reexecuted_steps={self.reexecuted_steps}",
            f"completed_at={'' if self.completed_at is None else self.completed_at}",
            f"failed={str(self.failed).lower()}",
            f"comment={self.comment_text}",
            f"final_digest={self.final_digest or ''}",
        ]


def update_comment(ledger: RunLedger) -> str:
    """Refresh and return the job comment for the consumed walltime."""
    ledger.comment_text = format_comment(ledger.consumed * ledger.tick_seconds)
    return ledger.comment_text


class JobLog:
    """Append-only lifecycle log of one job.

    Lines carry the virtual minute when one is given, wall-clock ISO time
    otherwise.
    """

    def __init__(self, path: str | os.PathLike[str]) -> None:
        """Initialize."""
        self.path = Path(path)

    def truncate(self) -> None:
        """Start an empty log."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def write(self, message: str, t: int | None = None) -> None:
        """Append one line."""
        stamp = f"t={t:05d}" if t is not None else datetime.now().isoformat(timespec="seconds")
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(f"{stamp} {message}\n")

    def lines(self) -> list[str]:
        """Return the lines written so far."""
        if not self.path.exists():
            return []
        return self.path.read_text(encoding="utf-8").splitlines()


# ---------------------------------------------------------------------------
# Coordinator lifecycle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SupervisorConfig:
    """Per-job supervision settings."""

    job_id: int
    requested_walltime: int
    checkpoint_interval: int = DEFAULT_CHECKPOINT_INTERVAL
    signal_lead: int = DEFAULT_SIGNAL_LEAD
    endpoint: str = ""
    log_path: Path | None = None
    workdir: Path = Path(".")
    mode: str = MODE_AUTO
    checkpoint_cost: int = DEFAULT_CHECKPOINT_COST
    extend_limit_on_requeue: bool = False
    manual_checkpoints: tuple[int, ...] = ()
    fail_checkpoints_at: frozenset[int] = frozenset()
    tick_seconds: int = DEFAULT_TICK_SECONDS
    round_timeout: float | None = None

    def __post_init__(self) -> None:
        """Validate and fill derived defaults."""
        if not 0 < self.checkpoint_interval < self.requested_walltime:
            raise SupervisorError(
                f"job {self.job_id}: need 0 < checkpoint_interval ({self.checkpoint_interval}) "
                f"< requested_walltime ({self.requested_walltime})"
            )
        if self.mode not in MODES:
            raise SupervisorError(f"unknown supervisor mode {self.mode!r}")
        if self.checkpoint_cost < 0:
            raise SupervisorError("checkpoint_cost must be non-negative")
        object.__setattr__(self, "workdir", Path(self.workdir))
        if not self.endpoint:
            object.__setattr__(self, "endpoint", format_endpoint(INPROC_HOST, self.job_id))
        if self.log_path is None:
            object.__setattr__(self, "log_path", self.workdir / f"job.{self.job_id}.log")

    @property
    def command_path(self) -> Path:
        """Return the command file advertising the coordinator endpoint."""
        return command_file_path(self.workdir, self.job_id)

    @property
    def state_path(self) -> Path:
        """Return the persisted coordinator state."""
        return self.workdir / f"coordinator.{self.job_id}.json"


def command_file_path(workdir: str | os.PathLike[str], job_id: int) -> Path:
    """Return the path of ``ckpt_command.<jobid>``."""
    return Path(workdir) / f"{COMMAND_FILE_PREFIX}{job_id}"


def write_command_file(path: Path, endpoint: str) -> None:
    """Atomically replace the command file with ``host:port``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}{TEMP_SUFFIX}")
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(f"{endpoint}\n")
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)


def read_command_file(path: Path) -> str:
    """Return the endpoint advertised in a command file."""
    try:
        endpoint = path.read_text(encoding="utf-8").strip()
    except FileNotFoundError as exc:
        raise NoSuchJob(f"no command file {path}") from exc
    parse_endpoint(endpoint)
    return endpoint


@dataclass
class CoordinatorHandle:
    """A started coordinator with its command file and job environment."""

    coordinator: CheckpointCoordinator
    command_path: Path
    env: dict[str, str]

    @property
    def endpoint(self) -> str:
        """Return the advertised endpoint."""
        return self.coordinator.endpoint

    async def async_stop(self) -> None:
        """Shut the coordinator down; the command file stays for the next start."""
        await self.coordinator.async_shutdown()


async def async_start_coordinator(
    config: SupervisorConfig, network, store: ImageStore | None = None
) -> CoordinatorHandle:
    """Start the job's coordinator and advertise it in ``ckpt_command.<jobid>``."""
    coordinator = CheckpointCoordinator(
        network,
        config.endpoint,
        store=store,
        state_path=config.state_path,
        round_timeout=config.round_timeout,
    )
    config.workdir.mkdir(parents=True, exist_ok=True)
    endpoint = await coordinator.async_start()
    write_command_file(config.command_path, endpoint)
    host, port = parse_endpoint(endpoint)
    env = {ENV_COORD_HOST: host, ENV_COORD_PORT: str(port)}
    _LOGGER.debug("Coordinator for job %d advertised at %s", config.job_id, endpoint)
    return CoordinatorHandle(coordinator, config.command_path, env)


# ---------------------------------------------------------------------------
# Supervisor
# ---------------------------------------------------------------------------


class JobSupervisor:
    """Supervises one job on the simulated cluster."""

    def __init__(
        self,
        config: SupervisorConfig,
        spec: JobSpec,
        cluster: ClusterState,
        store: ImageStore,
        network,
        *,
        log: JobLog | None = None,
    ) -> None:
        """Initialize."""
        self.config = config
        self.spec = spec
        self.cluster = cluster
        self.store = store
        self.network = network
        self.log = log or JobLog(config.log_path)
        self.ledger = RunLedger(spec.job_id, config.requested_walltime, config.tick_seconds)
        self.handle: CoordinatorHandle | None = None
        self.agent: CheckpointAgent | None = None
        self.checkpoint_failures = 0
        self.finish_at: int | None = None
        self._now = 0
        self._preempt_pending = False
        self._requeue_at: int | None = None
        self._busy_until = 0
        self._last_ckpt_at = 0
        self._step_progress = 0
        self._high_water = 0
        self._manual_done: set[int] = set()

    @property
    def job_id(self) -> int:
        """Return the supervised job id."""
        return self.spec.job_id

    @property
    def running(self) -> bool:
        """Return True while the job runs inside an allocation."""
        return self.agent is not None

    @property
    def done(self) -> bool:
        """Return True once the job completed or failed."""
        return self.ledger.completed_at is not None or self.ledger.failed

    @property
    def job(self) -> JobState | None:
        """Return the live job state."""
        return self.agent.job if self.agent is not None else None

    def _restores(self) -> bool:
        return self.config.mode in (MODE_AUTO, MODE_MANUAL)

    def _at_boundary(self) -> bool:
        return self._step_progress == 0

    def _remaining_ticks(self) -> int:
        job = self.agent.job
        return (job.spec.total_steps - job.steps_done) * job.spec.step_cost - self._step_progress

    async def async_start(self) -> CoordinatorHandle:
        """Start the coordinator of the job."""
        self.handle = await async_start_coordinator(self.config, self.network, self.store)
        self.log.write(f"coordinator started at {self.handle.endpoint}", self._now)
        return self.handle

    async def async_stop(self) -> None:
        """Stop the job and its coordinator."""
        await self._async_kill()
        if self.handle is not None:
            await self.handle.async_stop()
            self.handle = None

    async def _async_kill(self) -> None:
        if self.agent is not None:
            await self.agent.async_close()
            self.agent = None

    # -- operations -------------------------------------------------------------

    async def async_launch_or_restart(self, t: int, node_ids: tuple[int, ...] = ()) -> JobState:
        """Start the job inside a new allocation, from its latest image if any."""
        if self.handle is None or not self.handle.coordinator.running:
            raise CoordinatorUnreachable(f"coordinator of job {self.job_id} is not running")
        self._now = t
        job = None
        generation = None
        if self._restores():
            try:
                image = self.store.read_latest(self.job_id)
            except NoImage:
                image = None
            if image is not None:
                job = restore(image.payload, step_cost=self.spec.step_cost, mem_model=self.spec.mem_model)
                generation = image.generation
        if job is None:
            spec = self.spec
            job = make_workload(
                spec.workload_kind,
                spec.total_steps,
                spec.seed,
                spec.step_cost,
                job_id=spec.job_id,
                mem_model=spec.mem_model,
            )

        lost = self._high_water - job.steps_done
        if lost > 0:
            self.ledger.reexecuted_steps += lost
        agent = CheckpointAgent(0, job, self.store, clock=lambda: self._now)
        await agent.async_connect(self.network, self.handle.endpoint)
        self.agent = agent
        self.ledger.open(t, node_ids)
        self._last_ckpt_at = t
        self._step_progress = 0
        self._busy_until = t
        self._preempt_pending = False
        self._requeue_at = None

        if generation is not None:
            self.ledger.restarts += 1
            self.ledger.tag(t, TAG_RESTART)
            self.log.write(
                f"restarted from generation {generation} at step {job.steps_done} "
                f"on nodes {list(node_ids)}",
                t,
            )
        else:
            if self.ledger.allocations:
                self.ledger.tag(t, TAG_RESTART)
            self.log.write(f"launched fresh on nodes {list(node_ids)}", t)
        _LOGGER.info("Job %d running at t=%d from step %d", self.job_id, t, job.steps_done)
        return job

    async def _async_checkpoint(self, t: int, tag: str) -> bool:
        agent = self.agent
        if t in self.config.fail_checkpoints_at:
            agent.fail_next_writes = 1
        try:
            generation = await self.handle.coordinator.async_run_round()
        except CheckpointFailure as exc:
            agent.fail_next_writes = 0
            self.checkpoint_failures += 1
            self.log.write(f"checkpoint round aborted: {exc}", t)
            _LOGGER.warning("Job %d checkpoint at t=%d aborted: %s", self.job_id, t, exc)
            return False
        cost = self.config.checkpoint_cost
        self.ledger.checkpoints_taken += 1
        self.ledger.last_checkpoint_at = t
        self.ledger.checkpoint_minutes.extend(range(t, t + max(cost, 1)))
        self.ledger.tag(t, tag, override=True)
        self._last_ckpt_at = t
        self._busy_until = t + cost
        self.store.prune(self.job_id)
        self.log.write(f"checkpoint generation {generation} committed at step {agent.job.steps_done}", t)
        return True

    async def async_on_preempt_notice(self, t: int) -> None:
        """Checkpoint the job and requeue it with the walltime it consumed."""
        self._preempt_pending = False
        if not self.running or self.agent.job.completed:
            self.log.write("preemption notice after completion ignored", t)
            return
        self.ledger.preemptions += 1
        self.log.write("preemption notice trapped", t)
        committed = await self._async_checkpoint(t, TAG_PREEMPT)
        if not committed:
            self.log.write("retrying preemption checkpoint", t)
            committed = await self._async_checkpoint(t, TAG_PREEMPT)
        if committed:
            self._requeue_at = t + self.config.checkpoint_cost
        else:
            self.log.write("requeueing without a new checkpoint", t)
            self._requeue_at = t
        if self._requeue_at == t:
            await self._async_requeue(t)

    async def async_interval_checkpoint_tick(self, t: int) -> bool:
        """Run a checkpoint when one is due; return True when it committed."""
        if not self.running:
            return False
        mode = self.config.mode
        if mode in (MODE_AUTO, MODE_CHECKPOINT_ONLY):
            due = t - self._last_ckpt_at >= self.config.checkpoint_interval
        elif mode == MODE_MANUAL:
            due = any(m <= t and m not in self._manual_done for m in self.config.manual_checkpoints)
        else:
            due = False
        if not due or not self._at_boundary():
            return False
        committed = await self._async_checkpoint(t, TAG_CKPT)
        if committed and mode == MODE_MANUAL:
            self._manual_done.update(m for m in self.config.manual_checkpoints if m <= t)
        return committed

    async def _async_requeue(self, t: int) -> None:
        self._requeue_at = None
        start, _ = self.ledger.open_allocation
        consumed = t - start
        remaining_after = self.ledger.remaining - consumed
        time_limit = remaining_after if self.config.extend_limit_on_requeue else None
        try:
            requeue(self.cluster, self.job_id, consumed, time_limit)
        except ExhaustedWalltime as exc:
            self.log.write(f"cannot requeue: {exc}", t)
            _LOGGER.error("Job %d cannot be requeued: %s", self.job_id, exc)
            await self._async_kill()
            return
        self.ledger.close(t)
        self.ledger.tag(t, TAG_PREEMPT)
        await self._async_kill()
        self.log.write(
            f"requeued after {consumed} min, remaining {self.ledger.remaining} min ({self.ledger.comment_text})",
            t,
        )

    def _on_notice(self, t: int) -> None:
        mode = self.config.mode
        if mode != MODE_AUTO:
            self.log.write(f"preemption notice ignored in {mode} mode", t)
            return
        if self.agent.job.completed:
            return
        alloc = self.cluster.allocations.get(self.job_id)
        if alloc is not None and t + self._remaining_ticks() <= alloc.end:
            self.log.write("preemption notice ignored, remaining work fits the allocation", t)
            return
        self._preempt_pending = True

    def _work(self, t: int) -> None:
        self._step_progress += 1
        if self._step_progress < self.spec.step_cost:
            return
        self._step_progress = 0
        job = self.agent.advance()
        self._high_water = max(self._high_water, job.steps_done)
        if job.completed:
            self.ledger.tag(t, TAG_COMPLETE, override=True)
            self.ledger.final_digest = digest(job)
            self.finish_at = t + 1
            self.log.write(f"job completed after {job.steps_done} steps", t)

    async def async_tick(self, t: int) -> None:
        """Run one virtual minute of the job."""
        self._now = t
        if not self.running or self.agent.job.completed:
            return
        if t < self._busy_until:
            return
        if self._requeue_at is not None and self._requeue_at <= t:
            await self._async_requeue(t)
            return
        if self._preempt_pending and self._at_boundary():
            await self.async_on_preempt_notice(t)
            return
        await self.async_interval_checkpoint_tick(t)
        if t < self._busy_until:
            return
        self._work(t)

    async def async_handle_event(self, event: ClusterEvent) -> None:
        """React to a scheduler event about this job."""
        t = event.at
        self._now = t
        kind = event.kind
        if kind is EventKind.JOB_STARTED:
            await self.async_launch_or_restart(t, event.node_ids)
        elif kind is EventKind.PREEMPT_NOTICE:
            if self.running:
                self._on_notice(t)
        elif kind is EventKind.WINDOW_EXPIRED:
            if self.ledger.open_allocation is not None:
                self.ledger.close(t)
            await self._async_kill()
            self._preempt_pending = False
            self._requeue_at = None
            self.log.write(f"window expired, job killed ({self.ledger.comment_text})", t)
        elif kind is EventKind.JOB_REQUEUED:
            _LOGGER.debug("Job %d back in the queue at t=%d", self.job_id, t)
        elif kind is EventKind.JOB_COMPLETED:
            if self.ledger.open_allocation is not None:
                self.ledger.close(t)
            self.ledger.completed_at = t
            self.finish_at = None
            await self._async_kill()
            self.log.write(f"allocation released ({self.ledger.comment_text})", t)
        elif kind is EventKind.JOB_FAILED:
            self.ledger.failed = True
            self.log.write("walltime exhausted, job failed", t)
            _LOGGER.error("Job %d failed: walltime exhausted", self.job_id)


# ---------------------------------------------------------------------------
# Simulated scenario
# ---------------------------------------------------------------------------


@dataclass
class SimulationResult:
    """Everything a simulated scenario produced."""

    events: list[ClusterEvent]
    ledgers: dict[int, RunLedger]
    traces: dict[int, MetricTrace]
    cluster: ClusterState
    checkpoint_failures: dict[int, int] = field(default_factory=dict)

    @property
    def failed_jobs(self) -> list[int]:
        """Return the jobs that failed or never completed."""
        return sorted(j for j, ledger in self.ledgers.items() if ledger.completed_at is None)


async def async_simulate(
    scenario: Scenario,
    workdir: str | os.PathLike[str],
    *,
    network: InprocNetwork | None = None,
) -> SimulationResult:
    """Run a scenario to completion or to its horizon."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    network = network or InprocNetwork()
    store = ImageStore(workdir / IMAGES_DIRNAME, scenario.redundancy, scenario.keep)
    cluster = ClusterState(
        scenario.cluster.nodes,
        signal_lead=scenario.cluster.signal_lead,
        requeue_delay=scenario.cluster.requeue_delay,
        tick_seconds=scenario.cluster.tick_seconds,
    )
    telemetry: TelemetryConfig = scenario.telemetry
    supervisors: dict[int, JobSupervisor] = {}
    traces: dict[int, MetricTrace] = {}
    events: list[ClusterEvent] = []

    async def _dispatch(batch: list[ClusterEvent]) -> None:
        for event in batch:
            events.append(event)
            supervisor = supervisors.get(event.job_id)
            if supervisor is not None:
                await supervisor.async_handle_event(event)

    try:
        for entry in scenario.jobs:
            config = scenario.supervisor_config(entry, workdir)
            log = JobLog(config.log_path)
            log.truncate()
            supervisor = JobSupervisor(config, entry.spec, cluster, store, network, log=log)
            await supervisor.async_start()
            supervisors[entry.spec.job_id] = supervisor
            traces[entry.spec.job_id] = MetricTrace(
                entry.spec.job_id, sample_period=telemetry.sample_period
            )
            submit(
                cluster,
                QueuedJob(
                    job_id=entry.spec.job_id,
                    nodes_needed=entry.nodes,
                    requested_walltime=entry.requested_walltime,
                    window=entry.window,
                    supervised=True,
                ),
            )

        for t in range(scenario.horizon + 1):
            for job_id, supervisor in sorted(supervisors.items()):
                if supervisor.finish_at == t:
                    finish(cluster, job_id, t)
            await _dispatch(advance(cluster, t))

            ticked: set[tuple[int, int]] = set()
            while True:
                for job_id, supervisor in sorted(supervisors.items()):
                    if not supervisor.running:
                        continue
                    key = (job_id, supervisor.ledger.open_allocation[0])
                    if key not in ticked:
                        ticked.add(key)
                        await supervisor.async_tick(t)
                batch = advance(cluster, t)
                if not batch:
                    break
                await _dispatch(batch)

            for job_id, supervisor in sorted(supervisors.items()):
                ledger = supervisor.ledger
                first = ledger.first_start
                if first is None or (ledger.completed_at is not None and t >= ledger.completed_at):
                    continue
                if ledger.failed and ledger.open_allocation is None:
                    continue
                if (t - first) % telemetry.sample_period == 0:
                    traces[job_id].append(sample(supervisor.spec, ledger, t, telemetry))

            if all(s.done for s in supervisors.values()):
                break
    finally:
        for supervisor in supervisors.values():
            await supervisor.async_stop()

    for job_id, supervisor in supervisors.items():
        if supervisor.ledger.completed_at is None and not supervisor.ledger.failed:
            supervisor.log.write("horizon reached before completion", scenario.horizon)
    return SimulationResult(
        events=events,
        ledgers={j: s.ledger for j, s in supervisors.items()},
        traces=traces,
        cluster=cluster,
        checkpoint_failures={j: s.checkpoint_failures for j, s in supervisors.items()},
    )
