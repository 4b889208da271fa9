"""Checkpoint coordinator service for one scheduler job."""
from __future__ import annotations

import asyncio
import json
import logging
import os
from dataclasses import replace
from pathlib import Path

from .const import DEFAULT_ROUND_TIMEOUT, TEMP_SUFFIX
from .exceptions import (
    CheckpointFailure,
    CkptStackError,
    ProtocolError,
    RoundAborted,
    RoundTimeout,
    StorageFailure,
)
from .imgstore import ImageStore
from .proto import (
    AbortRound,
    Ack,
    AgentConnected,
    AgentDisconnected,
    BroadcastCkptRequest,
    CheckpointRequested,
    CkptFrame,
    CommitGeneration,
    CoordAction,
    CoordEvent,
    CoordinatorPhase,
    CoordinatorState,
    MsgType,
    Nack,
    RoundTimedOut,
    SendToAgent,
    coordinator_step,
    hello_job_id,
    is_restart_order,
    restart_frame,
)
from .transport import FrameStream, Listener

_LOGGER = logging.getLogger(__name__)

STATE_KEY_COMMITTED = "committed_generation"


def load_committed_generation(path: Path | None) -> int:
    """Return the committed generation persisted at ``path``, 0 when absent."""
    if path is None or not path.exists():
        return 0
    try:
        data = json.loads(path.read_text())
        return int(data[STATE_KEY_COMMITTED])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CkptStackError(f"unreadable coordinator state {path}: {exc}") from exc


def save_committed_generation(path: Path, generation: int) -> None:
    """Persist the committed generation via temp file and rename."""
    tmp = path.with_name(f".{path.name}{TEMP_SUFFIX}")
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump({STATE_KEY_COMMITTED: generation}, handle)
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)


class CheckpointCoordinator:
    """Runs checkpoint rounds over the agents connected to one endpoint.

    Agents identify themselves with HELLO. Any connection that starts with
    another frame is a control connection: ``CKPT_REQUEST`` runs a round and is
    answered with ``COMMIT`` or ``NACK``, a restart order is forwarded to every
    agent.
    """

    def __init__(
        self,
        network,
        endpoint: str,
        *,
        store: ImageStore | None = None,
        state_path: str | os.PathLike[str] | None = None,
        round_timeout: float | None = DEFAULT_ROUND_TIMEOUT,
    ) -> None:
        """Initialize."""
        self.network = network
        self.endpoint = endpoint
        self.store = store
        self.state_path = Path(state_path) if state_path is not None else None
        self.round_timeout = round_timeout
        self.state = CoordinatorState()
        self._listener: Listener | None = None
        self._agents: dict[int, FrameStream] = {}
        self._agent_jobs: dict[int, int] = {}
        self._round: asyncio.Future[int] | None = None
        self._outstanding: dict[int, int] = {}
        self._connections: set[FrameStream] = set()

    @property
    def committed_generation(self) -> int:
        """Return the last committed generation."""
        return self.state.committed_generation

    @property
    def connected_agents(self) -> frozenset[int]:
        """Return the ids of the connected agents."""
        return self.state.connected_agents

    @property
    def running(self) -> bool:
        """Return True while the coordinator accepts connections."""
        return self._listener is not None

    async def async_start(self) -> str:
        """Recover persisted state and start listening; return the bound endpoint."""
        committed = load_committed_generation(self.state_path)
        self.state = CoordinatorState(committed_generation=committed, round_generation=committed)
        self._listener = await self.network.async_listen(self.endpoint, self._async_handle_connection)
        self.endpoint = self._listener.endpoint
        _LOGGER.info("Coordinator listening on %s (committed generation %d)", self.endpoint, committed)
        return self.endpoint

    async def async_shutdown(self) -> None:
        """Stop listening and drop every connection."""
        if self._listener is not None:
            await self._listener.async_close()
            self._listener = None
        if self._round is not None and not self._round.done():
            self._round.set_exception(RoundAborted("coordinator shut down", self.state.round_generation))
            self._round.exception()
        for stream in list(self._connections):
            await stream.async_close()
        self._connections.clear()
        self._agents.clear()
        self._agent_jobs.clear()
        self._outstanding.clear()
        _LOGGER.debug("Coordinator on %s shut down", self.endpoint)

    # -- connections ----------------------------------------------------------

    async def _async_handle_connection(self, stream: FrameStream) -> None:
        self._connections.add(stream)
        try:
            first = await stream.async_recv()
            if first is None:
                return
            if first.msg_type is MsgType.HELLO:
                await self._async_serve_agent(stream, first)
            else:
                await self._async_serve_control(stream, first)
        except (ConnectionError, asyncio.IncompleteReadError):
            _LOGGER.debug("Connection %s dropped", stream.peer)
        except CkptStackError as exc:
            _LOGGER.warning("Closing connection %s: %s", stream.peer, exc)
        except Exception:  # pylint: disable=broad-except
            _LOGGER.exception("Unexpected error on connection %s", stream.peer)
        finally:
            self._connections.discard(stream)
            await stream.async_close()

    async def _async_serve_agent(self, stream: FrameStream, hello: CkptFrame) -> None:
        agent_id = hello.agent_id
        if agent_id in self._agents:
            _LOGGER.warning("Agent %d reconnected, dropping its old connection", agent_id)
            old = self._agents.pop(agent_id)
            await self._async_apply(AgentDisconnected(agent_id))
            await old.async_close()
        self._agents[agent_id] = stream
        self._agent_jobs[agent_id] = hello_job_id(hello)
        self._outstanding[agent_id] = 0
        _LOGGER.debug("Agent %d (job %d) connected", agent_id, self._agent_jobs[agent_id])
        try:
            self._reconcile(self._agent_jobs[agent_id])
            await self._async_apply(AgentConnected(agent_id))
            while (frame := await stream.async_recv()) is not None:
                if frame.msg_type is MsgType.ACK:
                    event: CoordEvent = Ack(agent_id, frame.generation)
                elif frame.msg_type is MsgType.NACK:
                    event = Nack(agent_id, frame.generation, frame.payload.decode(errors="replace"))
                else:
                    _LOGGER.warning("Agent %d sent unexpected %s", agent_id, frame.msg_type.name)
                    continue
                outstanding = self._outstanding.get(agent_id, 0)
                self._outstanding[agent_id] = max(0, outstanding - 1)
                if outstanding > 1:
                    # answers come back in request order, one per request
                    _LOGGER.debug("Dropping answer of agent %d to an earlier request", agent_id)
                    continue
                try:
                    await self._async_apply(event)
                except ProtocolError as exc:
                    # answers to an aborted round arrive late
                    _LOGGER.debug("Ignoring stale answer from agent %d: %s", agent_id, exc)
        finally:
            if self._agents.get(agent_id) is stream:
                del self._agents[agent_id]
                await self._async_apply(AgentDisconnected(agent_id))

    def _reconcile(self, job_id: int) -> None:
        """Catch up with a generation the store published but the state file missed."""
        if self.store is None or self.state.phase is not CoordinatorPhase.IDLE:
            return
        latest = self.store.latest(job_id)
        if latest <= self.state.committed_generation:
            return
        _LOGGER.warning(
            "Job %d holds generation %d beyond the recorded %d, adopting it",
            job_id,
            latest,
            self.state.committed_generation,
        )
        self.state = replace(self.state, committed_generation=latest, round_generation=latest)
        if self.state_path is not None:
            save_committed_generation(self.state_path, latest)

    async def _async_serve_control(self, stream: FrameStream, frame: CkptFrame | None) -> None:
        while frame is not None:
            if frame.msg_type is MsgType.CKPT_REQUEST:
                try:
                    generation = await self.async_run_round()
                except RoundAborted as exc:
                    await stream.async_send(
                        CkptFrame(MsgType.NACK, exc.generation or 0, 0, exc.reason.encode())
                    )
                else:
                    await stream.async_send(CkptFrame(MsgType.COMMIT, generation))
            elif frame.msg_type is MsgType.RESTART_INFO and is_restart_order(frame):
                await self.async_order_restart(frame.generation)
                await stream.async_send(restart_frame(frame.generation))
            else:
                _LOGGER.warning("Control connection sent unexpected %s", frame.msg_type.name)
            frame = await stream.async_recv()

    # -- state machine driver -------------------------------------------------

    async def _async_apply(self, event: CoordEvent) -> None:
        self.state, actions = coordinator_step(self.state, event)
        _LOGGER.debug("%s -> %s", event, self.state.phase.value)
        await self._async_perform(actions)

    async def _async_send(self, agent_id: int, frame: CkptFrame) -> None:
        stream = self._agents.get(agent_id)
        if stream is None:
            return
        try:
            await stream.async_send(frame)
        except (ConnectionError, OSError) as exc:
            _LOGGER.debug("Cannot reach agent %d: %s", agent_id, exc)

    async def _async_perform(self, actions: list[CoordAction]) -> None:
        for action in actions:
            if isinstance(action, SendToAgent):
                await self._async_send(action.agent_id, action.frame)
            elif isinstance(action, BroadcastCkptRequest):
                for agent_id in sorted(action.agents):
                    self._outstanding[agent_id] = self._outstanding.get(agent_id, 0) + 1
                    await self._async_send(
                        agent_id, CkptFrame(MsgType.CKPT_REQUEST, action.generation, agent_id)
                    )
            elif isinstance(action, CommitGeneration):
                await self._async_commit(action)
            elif isinstance(action, AbortRound):
                self._abort(action)

    def _jobs_of(self, agents: frozenset[int]) -> list[int]:
        return sorted({self._agent_jobs[a] for a in agents if a in self._agent_jobs})

    async def _async_commit(self, action: CommitGeneration) -> None:
        generation = action.generation
        jobs = self._jobs_of(action.agents)
        published: list[int] = []
        try:
            if self.store is not None:
                for job_id in jobs:
                    self.store.commit_staged(job_id, generation)
                    published.append(job_id)
            if self.state_path is not None:
                save_committed_generation(self.state_path, generation)
        except (CheckpointFailure, OSError) as exc:
            previous = generation - 1
            self.state = replace(self.state, committed_generation=previous, round_generation=previous)
            if self.store is not None:
                # all jobs or none
                for job_id in published:
                    self.store.withdraw(job_id, generation)
                for job_id in jobs:
                    self.store.discard_staged(job_id, generation)
            _LOGGER.error("Commit of generation %d failed: %s", generation, exc)
            self._resolve_round(exception=StorageFailure(f"commit of generation {generation} failed: {exc}"))
            return
        _LOGGER.info("Committed generation %d (%d agents)", generation, len(action.agents))
        for agent_id in sorted(action.agents):
            await self._async_send(agent_id, CkptFrame(MsgType.COMMIT, generation, agent_id))
        self._resolve_round(result=generation)

    def _abort(self, action: AbortRound) -> None:
        if self.store is not None:
            for job_id in self._jobs_of(action.agents):
                self.store.discard_staged(job_id, action.generation)
        _LOGGER.warning("Round %d aborted: %s", action.generation, action.reason)
        error_cls = RoundTimeout if action.reason == "timeout" else RoundAborted
        self._resolve_round(exception=error_cls(action.reason, action.generation))

    def _resolve_round(self, *, result: int | None = None, exception: Exception | None = None) -> None:
        future = self._round
        if future is None or future.done():
            return
        if exception is not None:
            future.set_exception(exception)
        else:
            future.set_result(result)

    # -- operations -----------------------------------------------------------

    async def async_run_round(self) -> int:
        """Run one checkpoint round and return the committed generation."""
        if self.state.phase is CoordinatorPhase.COLLECTING and self._round is not None:
            return await asyncio.shield(self._round)
        future: asyncio.Future[int] = asyncio.get_running_loop().create_future()
        self._round = future
        await self._async_apply(CheckpointRequested())
        if future.done():
            return future.result()
        generation = self.state.round_generation
        try:
            return await asyncio.wait_for(asyncio.shield(future), self.round_timeout)
        except asyncio.TimeoutError:
            await self._async_apply(RoundTimedOut(generation))
            if not future.done():
                future.set_exception(RoundTimeout("timeout", generation))
            return future.result()

    async def async_order_restart(self, generation: int) -> None:
        """Tell every agent to reload ``generation`` (0 means latest)."""
        _LOGGER.info("Ordering restart from generation %s", generation or "latest")
        for agent_id in sorted(self._agents):
            await self._async_send(agent_id, restart_frame(generation, agent_id))
