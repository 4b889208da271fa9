"""Per-job checkpoint agent."""
from __future__ import annotations

import asyncio
import logging
from collections import deque
from collections.abc import Callable
from dataclasses import replace

from .exceptions import CkptStackError, CoordinatorUnreachable, StorageFailure, StoreError
from .imgstore import ImageStore
from .jobrt import JobState, quiesce, restore, snapshot, step
from .proto import (
    AgentAction,
    AgentEvent,
    AgentPhase,
    AgentState,
    CkptFrame,
    CkptRequest,
    ImageLoaded,
    ImageWriteFailed,
    ImageWritten,
    LoadImage,
    MsgType,
    RestartRequested,
    Resume,
    SendAck,
    SendNack,
    SnapshotTaken,
    StepBoundaryReached,
    TakeSnapshot,
    WriteImage,
    agent_step,
    hello_frame,
    is_restart_order,
)
from .transport import FrameStream

_LOGGER = logging.getLogger(__name__)


class CheckpointAgent:
    """Quiesces a job at a step boundary, stages its image and answers the round.

    The job is cooperative: frames are only handled between two steps, so a
    checkpoint request always finds the job at a step boundary.
    """

    def __init__(
        self,
        agent_id: int,
        job: JobState,
        store: ImageStore,
        *,
        clock: Callable[[], int] | None = None,
    ) -> None:
        """Initialize."""
        self.state = AgentState(agent_id)
        self.job = job
        self.store = store
        self.clock = clock or (lambda: 0)
        self.known_generation = 0
        self.fail_next_writes = 0
        self.ack_delay = 0.0
        self.on_restored: Callable[[JobState, int], None] | None = None
        self._stream: FrameStream | None = None
        self._serve_task: asyncio.Task | None = None
        self._payload = b""

    @property
    def agent_id(self) -> int:
        """Return the agent id."""
        return self.state.agent_id

    @property
    def job_id(self) -> int:
        """Return the id of the supervised job."""
        return self.job.spec.job_id

    @property
    def connected(self) -> bool:
        """Return True while the agent holds a coordinator connection."""
        return self._stream is not None and not self._stream.closed

    async def async_connect(self, network, endpoint: str) -> int:
        """Say HELLO and return the generation the coordinator has committed."""
        stream = await network.async_connect(endpoint)
        await stream.async_send(hello_frame(self.agent_id, self.job_id))
        info = await stream.async_recv()
        if info is None or info.msg_type is not MsgType.RESTART_INFO:
            await stream.async_close()
            raise CoordinatorUnreachable(f"no RESTART_INFO from {endpoint}")
        self._stream = stream
        self.known_generation = info.generation
        self._serve_task = asyncio.create_task(self.async_serve())
        _LOGGER.debug(
            "Agent %d joined %s, committed generation %d", self.agent_id, endpoint, info.generation
        )
        return info.generation

    async def async_close(self) -> None:
        """Leave the coordinator."""
        if self._stream is not None:
            await self._stream.async_close()
        if self._serve_task is not None:
            if asyncio.current_task() is not self._serve_task:
                self._serve_task.cancel()
                try:
                    await self._serve_task
                except asyncio.CancelledError:
                    pass
            self._serve_task = None

    async def async_serve(self) -> None:
        """Handle coordinator frames until the connection closes."""
        stream = self._stream
        try:
            while (frame := await stream.async_recv()) is not None:
                await self._async_handle(frame)
        except (ConnectionError, asyncio.IncompleteReadError):
            _LOGGER.debug("Agent %d lost its coordinator", self.agent_id)
        finally:
            await stream.async_close()

    async def _async_handle(self, frame: CkptFrame) -> None:
        if frame.msg_type is MsgType.CKPT_REQUEST:
            await self.async_checkpoint(frame.generation)
        elif frame.msg_type is MsgType.COMMIT:
            self.known_generation = max(self.known_generation, frame.generation)
        elif is_restart_order(frame):
            try:
                await self.async_restart(frame.generation)
            except CkptStackError as exc:
                _LOGGER.error("Agent %d cannot restart: %s", self.agent_id, exc)
                await self._async_send(
                    CkptFrame(MsgType.NACK, frame.generation, self.agent_id, str(exc).encode())
                )
        elif frame.msg_type is MsgType.RESTART_INFO:
            self.known_generation = frame.generation
        else:
            _LOGGER.warning("Agent %d ignoring %s", self.agent_id, frame.msg_type.name)

    # -- state machine driver -------------------------------------------------

    def _step(self, event: AgentEvent) -> list[AgentAction]:
        self.state, actions = agent_step(self.state, event)
        return actions

    async def _async_run(self, actions: list[AgentAction]) -> None:
        queue = deque(actions)
        while queue:
            queue.extend(await self._async_do(queue.popleft()))

    async def _async_do(self, action: AgentAction) -> list[AgentAction]:
        if isinstance(action, TakeSnapshot):
            self._payload = snapshot(quiesce(self.job))
            return self._step(SnapshotTaken(action.generation))

        if isinstance(action, WriteImage):
            try:
                if self.fail_next_writes > 0:
                    self.fail_next_writes -= 1
                    raise StorageFailure("injected write failure")
                self.store.stage_image(self.job_id, action.generation, self.clock(), self._payload)
            except (StoreError, OSError) as exc:
                _LOGGER.warning("Agent %d image write failed: %s", self.agent_id, exc)
                return self._step(ImageWriteFailed(action.generation, str(exc)))
            return self._step(ImageWritten(action.generation))

        if isinstance(action, SendAck):
            if self.ack_delay:
                await asyncio.sleep(self.ack_delay)
            await self._async_send(CkptFrame(MsgType.ACK, action.generation, self.agent_id))
        elif isinstance(action, SendNack):
            await self._async_send(
                CkptFrame(MsgType.NACK, action.generation, self.agent_id, action.reason.encode())
            )
        elif isinstance(action, LoadImage):
            return self._load(action.generation)
        elif isinstance(action, Resume):
            _LOGGER.info(
                "Agent %d resumed job %d at step %d", self.agent_id, self.job_id, self.job.steps_done
            )
            if self.on_restored is not None:
                self.on_restored(self.job, action.generation)
        return []

    def _load(self, generation: int) -> list[AgentAction]:
        try:
            if generation:
                image = self.store.read_generation(self.job_id, generation)
            else:
                image = self.store.read_latest(self.job_id)
            spec = self.job.spec
            job = restore(image.payload, step_cost=spec.step_cost, mem_model=spec.mem_model)
        except Exception:
            self.state = replace(self.state, phase=AgentPhase.RUNNING)
            raise
        self.job = job
        return self._step(ImageLoaded(image.generation))

    async def _async_send(self, frame: CkptFrame) -> None:
        if not self.connected:
            _LOGGER.debug("Agent %d not connected, dropping %s", self.agent_id, frame.msg_type.name)
            return
        await self._stream.async_send(frame)

    # -- operations -----------------------------------------------------------

    async def async_checkpoint(self, generation: int) -> None:
        """Answer a checkpoint request for ``generation``."""
        actions = self._step(CkptRequest(generation))
        actions += self._step(StepBoundaryReached())
        await self._async_run(actions)

    async def async_restart(self, generation: int) -> None:
        """Replace the job state with a stored generation (0 means latest)."""
        await self._async_run(self._step(RestartRequested(generation)))

    def advance(self) -> JobState:
        """Run one step of the job."""
        self.job = step(self.job)
        return self.job
