"""Wall-clock daemon sessions and the operator control client.

A ``DaemonSession`` runs one job under its coordinator on loopback TCP, one
step per ``step_seconds``. Operators reach the coordinator through the
command file with ``async_request_checkpoint`` and ``async_order_restart``.
"""
from __future__ import annotations

import asyncio
import json
import logging
import os
import signal
from pathlib import Path

from .agent import CheckpointAgent
from .const import (
    DEFAULT_HOST,
    DEFAULT_STEP_SECONDS,
    MODE_AUTO,
    MODE_CHECKPOINT_ONLY,
    MODE_MANUAL,
    TEMP_SUFFIX,
)
from .exceptions import (
    CheckpointFailure,
    CoordinatorUnreachable,
    NoImage,
    NoSuchJob,
    RoundAborted,
)
from .imgstore import ImageStore
from .jobrt import JobSpec, JobState, VirtualIdTable, make_workload, restore
from .proto import CkptFrame, MsgType, restart_frame
from .supervisor import CoordinatorHandle, JobLog, RunLedger, SupervisorConfig, async_start_coordinator
from .transport import InprocNetwork, TcpNetwork, parse_endpoint

_LOGGER = logging.getLogger(__name__)

SESSION_FILE_PREFIX = "session."

STATUS_STARTING = "starting"
STATUS_RUNNING = "running"
STATUS_COMPLETED = "completed"
STATUS_REQUEUED = "requeued"
STATUS_STOPPED = "stopped"


def session_file_path(workdir: str | os.PathLike[str], job_id: int) -> Path:
    """Return the status file of a daemon session."""
    return Path(workdir) / f"{SESSION_FILE_PREFIX}{job_id}.json"


def read_session(workdir: str | os.PathLike[str], job_id: int) -> dict:
    """Return the last status a session wrote."""
    path = session_file_path(workdir, job_id)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise NoSuchJob(f"job {job_id} has no session in {Path(workdir)}") from exc


def list_sessions(workdir: str | os.PathLike[str]) -> list[dict]:
    """Return the status of every session in a working directory, by job id."""
    sessions = []
    for path in Path(workdir).glob(f"{SESSION_FILE_PREFIX}*.json"):
        try:
            sessions.append(json.loads(path.read_text(encoding="utf-8")))
        except (OSError, ValueError):
            _LOGGER.warning("Skipping unreadable session file %s", path)
    return sorted(sessions, key=lambda s: s.get("job_id", 0))


class DaemonSession:
    """Runs one job in wall-clock time under a loopback coordinator."""

    def __init__(
        self,
        config: SupervisorConfig,
        spec: JobSpec,
        store: ImageStore,
        *,
        network: TcpNetwork | InprocNetwork | None = None,
        step_seconds: float = DEFAULT_STEP_SECONDS,
    ) -> None:
        """Initialize."""
        self.config = config
        self.spec = spec
        self.store = store
        self.network = network or TcpNetwork()
        self.step_seconds = step_seconds
        self.ledger = RunLedger(spec.job_id, config.requested_walltime, tick_seconds=1)
        self.log = JobLog(config.log_path)
        self.ids = VirtualIdTable()
        self.handle: CoordinatorHandle | None = None
        self.agent: CheckpointAgent | None = None
        self.status = STATUS_STARTING
        self._wakeup = asyncio.Event()
        self._notice = False
        self._stop = False
        self._started = 0.0
        self._steps_since_checkpoint = 0

    @property
    def status_path(self) -> Path:
        """Return the session status file."""
        return session_file_path(self.config.workdir, self.spec.job_id)

    @property
    def job(self) -> JobState | None:
        """Return the live job state."""
        return self.agent.job if self.agent is not None else None

    def _elapsed(self) -> int:
        return int(asyncio.get_running_loop().time() - self._started)

    # -- signal shim ------------------------------------------------------------

    def request_notice(self) -> None:
        """Record a preemption notice; the run loop acts on it."""
        self._notice = True
        self._wakeup.set()

    def request_stop(self) -> None:
        """Record a stop request; the job ends without a checkpoint."""
        self._stop = True
        self._wakeup.set()

    def _install_signal_handlers(self, loop: asyncio.AbstractEventLoop) -> None:
        # Slurm sends USR1 ahead of the limit, and TERM when it preempts
        loop.add_signal_handler(signal.SIGUSR1, self.request_notice)
        loop.add_signal_handler(signal.SIGTERM, self.request_notice)
        loop.add_signal_handler(signal.SIGINT, self.request_stop)

    @staticmethod
    def _remove_signal_handlers(loop: asyncio.AbstractEventLoop) -> None:
        for signum in (signal.SIGUSR1, signal.SIGTERM, signal.SIGINT):
            loop.remove_signal_handler(signum)

    # -- lifecycle --------------------------------------------------------------

    def _initial_job(self, generation: int | None) -> tuple[JobState, int | None]:
        spec = self.spec
        if self.config.mode in (MODE_AUTO, MODE_MANUAL) or generation is not None:
            try:
                if generation:
                    image = self.store.read_generation(spec.job_id, generation)
                else:
                    image = self.store.read_latest(spec.job_id)
            except NoImage:
                if generation:
                    raise
            else:
                job = restore(image.payload, step_cost=spec.step_cost, mem_model=spec.mem_model)
                return job, image.generation
        job = make_workload(
            spec.workload_kind,
            spec.total_steps,
            spec.seed,
            spec.step_cost,
            job_id=spec.job_id,
            mem_model=spec.mem_model,
        )
        return job, None

    async def async_run(
        self, *, restart_generation: int | None = None, install_signals: bool = True
    ) -> str:
        """Run the job until it completes, is preempted or is stopped.

        Returns the final session status.
        """
        loop = asyncio.get_running_loop()
        self._started = loop.time()
        self.handle = await async_start_coordinator(self.config, self.network, self.store)
        self.log.write(f"coordinator started at {self.handle.endpoint}")
        if install_signals:
            self._install_signal_handlers(loop)
        try:
            job, generation = self._initial_job(restart_generation)
            self.agent = CheckpointAgent(os.getpid(), job, self.store, clock=self._elapsed)
            self.agent.on_restored = self._on_restored
            await self.agent.async_connect(self.network, self.handle.endpoint)
            self.ids.register(self.spec.job_id, os.getpid())
            self.ledger.open(0)
            if generation is not None:
                self.ledger.restarts += 1
                self.log.write(f"restarted from generation {generation} at step {job.steps_done}")
            else:
                self.log.write("launched fresh")
            self._set_status(STATUS_RUNNING)
            self._set_status(await self._async_loop())
        finally:
            if install_signals:
                self._remove_signal_handlers(loop)
            if self.ledger.open_allocation is not None:
                self.ledger.close(self._elapsed())
            if self.agent is not None:
                await self.agent.async_close()
            await self.handle.async_stop()
            if self.status in (STATUS_STARTING, STATUS_RUNNING):
                self.status = STATUS_STOPPED
            self._write_status()
            self.log.write(f"session {self.status} ({self.ledger.comment_text})")
        return self.status

    async def _async_loop(self) -> str:
        interval_mode = self.config.mode in (MODE_AUTO, MODE_CHECKPOINT_ONLY)
        while True:
            if self.agent.job.completed:
                self.log.write(f"job completed after {self.agent.job.steps_done} steps")
                return STATUS_COMPLETED
            if self._stop:
                self.log.write("stop requested")
                return STATUS_STOPPED
            if self._notice:
                self.log.write("preemption notice trapped")
                if not await self.async_checkpoint():
                    self.log.write("retrying preemption checkpoint")
                    await self.async_checkpoint()
                return STATUS_REQUEUED
            if interval_mode and self._steps_since_checkpoint >= self.config.checkpoint_interval:
                await self.async_checkpoint()
            self._wakeup.clear()
            try:
                await asyncio.wait_for(self._wakeup.wait(), self.step_seconds)
                continue
            except asyncio.TimeoutError:
                pass
            self.agent.advance()
            self._steps_since_checkpoint += 1
            self._write_status()

    async def async_checkpoint(self) -> bool:
        """Run one round; return True when it committed."""
        try:
            generation = await self.handle.coordinator.async_run_round()
        except CheckpointFailure as exc:
            self.log.write(f"checkpoint round aborted: {exc}")
            _LOGGER.warning("Job %d checkpoint aborted: %s", self.spec.job_id, exc)
            return False
        self.ledger.checkpoints_taken += 1
        self.ledger.last_checkpoint_at = self._elapsed()
        self._steps_since_checkpoint = 0
        self.store.prune(self.spec.job_id)
        self.log.write(f"checkpoint generation {generation} committed at step {self.agent.job.steps_done}")
        self._write_status()
        return True

    def _on_restored(self, job: JobState, generation: int) -> None:
        self.ledger.restarts += 1
        self._steps_since_checkpoint = 0
        self.ids.reregister({self.spec.job_id: os.getpid()})
        self.log.write(f"restored generation {generation} at step {job.steps_done}")
        self._write_status()

    # -- status file ------------------------------------------------------------

    def _set_status(self, status: str) -> None:
        self.status = status
        self._write_status()

    def _write_status(self) -> None:
        job = self.job
        consumed = self.ledger.consumed
        if self.ledger.open_allocation is not None and self._started:
            consumed += self._elapsed()
        data = {
            "job_id": self.spec.job_id,
            "status": self.status,
            "pid": os.getpid(),
            "endpoint": self.handle.endpoint if self.handle is not None else "",
            "mode": self.config.mode,
            "kind": self.spec.workload_kind.label,
            "total_steps": self.spec.total_steps,
            "seed": self.spec.seed,
            "step_cost": self.spec.step_cost,
            "steps_done": job.steps_done if job is not None else 0,
            "committed_generation": (
                self.handle.coordinator.committed_generation if self.handle is not None else 0
            ),
            "checkpoints_taken": self.ledger.checkpoints_taken,
            "restarts": self.ledger.restarts,
            "consumed_seconds": consumed,
            "comment": self.ledger.comment_text,
            "virtual_ids": {str(k): v for k, v in self.ids.entries.items()},
        }
        path = self.status_path
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}{TEMP_SUFFIX}")
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
        os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Control client
# ---------------------------------------------------------------------------


def _network_for(endpoint: str) -> TcpNetwork:
    host, _ = parse_endpoint(endpoint)
    return TcpNetwork(host or DEFAULT_HOST)


async def _async_control(endpoint: str, frame: CkptFrame, network=None) -> CkptFrame:
    network = network or _network_for(endpoint)
    stream = await network.async_connect(endpoint)
    try:
        await stream.async_send(frame)
        reply = await stream.async_recv()
    finally:
        await stream.async_close()
    if reply is None:
        raise CoordinatorUnreachable(f"{endpoint} closed the control connection")
    return reply


async def async_request_checkpoint(endpoint: str, network=None) -> int:
    """Ask a coordinator for a round now; return the committed generation."""
    reply = await _async_control(endpoint, CkptFrame(MsgType.CKPT_REQUEST, 0), network)
    if reply.msg_type is MsgType.NACK:
        raise RoundAborted(reply.payload.decode(errors="replace"), reply.generation)
    return reply.generation


async def async_order_restart(endpoint: str, generation: int = 0, network=None) -> int:
    """Order every agent of a coordinator to reload ``generation`` (0 means latest)."""
    reply = await _async_control(endpoint, restart_frame(generation), network)
    return reply.generation
