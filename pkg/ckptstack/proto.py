"""Checkpoint protocol: wire codec and the coordinator/agent state machines.

The state machines are pure: ``coordinator_step`` and ``agent_step`` take a
state and an event and return the next state plus the actions the caller has
to perform. All I/O lives in ``coordinator.py`` and ``agent.py``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum, IntEnum, auto
from struct import Struct
from typing import Union

from .const import FRAME_HEADER_SIZE, FRAME_MAGIC, FRAME_VERSION, MAX_PAYLOAD_SIZE
from .exceptions import (
    BadMagic,
    BadVersion,
    IllegalTransition,
    OversizePayload,
    ProtocolViolation,
    UnknownType,
)

_LOGGER = logging.getLogger(__name__)

# magic[1B] | version[1B] | msg_type[1B] | generation[4B] | agent_id[4B] | payload_len[4B]
HEADER = Struct("!BBBIII")
_JOB_ID = Struct("!Q")
RESTART_ORDER = b"\x01"

assert HEADER.size == FRAME_HEADER_SIZE


class MsgType(IntEnum):
    """Frame message types."""

    HELLO = 0x00
    CKPT_REQUEST = 0x01
    ACK = 0x02
    NACK = 0x03
    COMMIT = 0x04
    RESTART_INFO = 0x05


@dataclass(frozen=True)
class CkptFrame:
    """One wire message of the checkpoint protocol."""

    msg_type: MsgType
    generation: int = 0
    agent_id: int = 0
    payload: bytes = b""
    magic: int = FRAME_MAGIC
    version: int = FRAME_VERSION


class _Incomplete(Enum):
    NEED_MORE_BYTES = auto()


NEED_MORE_BYTES = _Incomplete.NEED_MORE_BYTES
DecodeResult = Union[tuple[CkptFrame, int], _Incomplete]


def encode_frame(frame: CkptFrame) -> bytes:
    """Encode a frame into its big-endian wire layout."""
    if len(frame.payload) > MAX_PAYLOAD_SIZE:
        raise OversizePayload(f"payload of {len(frame.payload)} bytes exceeds 2^32 - 1")
    header = HEADER.pack(
        frame.magic,
        frame.version,
        int(frame.msg_type),
        frame.generation,
        frame.agent_id,
        len(frame.payload),
    )
    return header + bytes(frame.payload)


def decode_frame(buf: bytes | bytearray | memoryview) -> DecodeResult:
    """Decode exactly one frame from the front of ``buf``.

    Returns ``(frame, consumed)`` or ``NEED_MORE_BYTES`` when ``buf`` holds a
    prefix of a valid frame. Never reads past the first frame.
    """
    view = memoryview(buf)
    if len(view) >= 1 and view[0] != FRAME_MAGIC:
        raise BadMagic(f"bad magic byte 0x{view[0]:02x}")
    if len(view) >= 2 and view[1] != FRAME_VERSION:
        raise BadVersion(f"unsupported protocol version {view[1]}")
    if len(view) >= 3 and view[2] not in MsgType._value2member_map_:
        raise UnknownType(f"unknown message type 0x{view[2]:02x}")
    if len(view) < FRAME_HEADER_SIZE:
        return NEED_MORE_BYTES

    magic, version, msg_type, generation, agent_id, length = HEADER.unpack_from(view)
    end = FRAME_HEADER_SIZE + length
    if len(view) < end:
        return NEED_MORE_BYTES
    frame = CkptFrame(
        msg_type=MsgType(msg_type),
        generation=generation,
        agent_id=agent_id,
        payload=bytes(view[FRAME_HEADER_SIZE:end]),
        magic=magic,
        version=version,
    )
    return frame, end


def hello_frame(agent_id: int, job_id: int) -> CkptFrame:
    """Build the HELLO an agent sends when it (re)connects."""
    return CkptFrame(MsgType.HELLO, 0, agent_id, _JOB_ID.pack(job_id))


def hello_job_id(frame: CkptFrame) -> int:
    """Return the job id carried by a HELLO frame."""
    if len(frame.payload) != _JOB_ID.size:
        raise ProtocolViolation(f"HELLO payload must be {_JOB_ID.size} bytes")
    return _JOB_ID.unpack(frame.payload)[0]


def restart_frame(generation: int, agent_id: int = 0) -> CkptFrame:
    """Build an operator restart order (generation 0 means latest)."""
    return CkptFrame(MsgType.RESTART_INFO, generation, agent_id, RESTART_ORDER)


def is_restart_order(frame: CkptFrame) -> bool:
    """Tell a restart order from the informational RESTART_INFO sent on connect."""
    return frame.msg_type is MsgType.RESTART_INFO and frame.payload == RESTART_ORDER


# ---------------------------------------------------------------------------
# Coordinator state machine
# ---------------------------------------------------------------------------


class CoordinatorPhase(Enum):
    """Coordinator round phase."""

    IDLE = "Idle"
    COLLECTING = "Collecting"


@dataclass(frozen=True)
class CoordinatorState:
    """Coordinator bookkeeping for one scheduler job."""

    phase: CoordinatorPhase = CoordinatorPhase.IDLE
    connected_agents: frozenset[int] = frozenset()
    pending_acks: frozenset[int] = frozenset()
    committed_generation: int = 0
    round_generation: int = 0
    round_agents: frozenset[int] = frozenset()


@dataclass(frozen=True)
class AgentConnected:
    agent_id: int


@dataclass(frozen=True)
class AgentDisconnected:
    agent_id: int


@dataclass(frozen=True)
class CheckpointRequested:
    pass


@dataclass(frozen=True)
class Ack:
    agent_id: int
    generation: int


@dataclass(frozen=True)
class Nack:
    agent_id: int
    generation: int
    reason: str = ""


@dataclass(frozen=True)
class RoundTimedOut:
    generation: int


CoordEvent = Union[
    AgentConnected, AgentDisconnected, CheckpointRequested, Ack, Nack, RoundTimedOut
]


@dataclass(frozen=True)
class SendToAgent:
    agent_id: int
    frame: CkptFrame


@dataclass(frozen=True)
class BroadcastCkptRequest:
    generation: int
    agents: frozenset[int] = frozenset()


@dataclass(frozen=True)
class CommitGeneration:
    generation: int
    agents: frozenset[int] = frozenset()


@dataclass(frozen=True)
class AbortRound:
    reason: str
    generation: int = 0
    agents: frozenset[int] = frozenset()


CoordAction = Union[SendToAgent, BroadcastCkptRequest, CommitGeneration, AbortRound]


def _abort(s: CoordinatorState, reason: str) -> tuple[CoordinatorState, list[CoordAction]]:
    action = AbortRound(reason, s.round_generation, s.round_agents)
    idle = replace(
        s,
        phase=CoordinatorPhase.IDLE,
        pending_acks=frozenset(),
        round_generation=s.committed_generation,
        round_agents=frozenset(),
    )
    return idle, [action]


def _check_answer(s: CoordinatorState, agent_id: int, generation: int, kind: str) -> None:
    if s.phase is not CoordinatorPhase.COLLECTING:
        raise ProtocolViolation(f"{kind} from agent {agent_id} while no round is in flight")
    if generation != s.round_generation:
        raise ProtocolViolation(
            f"{kind} from agent {agent_id} for generation {generation}, "
            f"round is {s.round_generation}"
        )
    if agent_id not in s.pending_acks:
        raise ProtocolViolation(f"{kind} from non-pending agent {agent_id}")


def coordinator_step(
    s: CoordinatorState, e: CoordEvent
) -> tuple[CoordinatorState, list[CoordAction]]:
    """Apply one event to the coordinator state."""
    if isinstance(e, AgentConnected):
        state = replace(s, connected_agents=s.connected_agents | {e.agent_id})
        info = CkptFrame(MsgType.RESTART_INFO, s.committed_generation, e.agent_id)
        return state, [SendToAgent(e.agent_id, info)]

    if isinstance(e, AgentDisconnected):
        state = replace(
            s,
            connected_agents=s.connected_agents - {e.agent_id},
        )
        if s.phase is CoordinatorPhase.COLLECTING and e.agent_id in s.pending_acks:
            return _abort(
                replace(state, pending_acks=s.pending_acks - {e.agent_id}),
                f"agent {e.agent_id} lost",
            )
        return state, []

    if isinstance(e, CheckpointRequested):
        if s.phase is CoordinatorPhase.COLLECTING:
            _LOGGER.debug("Round %d already in flight, request ignored", s.round_generation)
            return s, []
        if not s.connected_agents:
            return s, [AbortRound("no agents connected", s.committed_generation + 1)]
        generation = s.committed_generation + 1
        state = replace(
            s,
            phase=CoordinatorPhase.COLLECTING,
            pending_acks=s.connected_agents,
            round_generation=generation,
            round_agents=s.connected_agents,
        )
        return state, [BroadcastCkptRequest(generation, s.connected_agents)]

    if isinstance(e, Ack):
        _check_answer(s, e.agent_id, e.generation, "ACK")
        pending = s.pending_acks - {e.agent_id}
        if pending:
            return replace(s, pending_acks=pending), []
        state = replace(
            s,
            phase=CoordinatorPhase.IDLE,
            pending_acks=frozenset(),
            committed_generation=s.round_generation,
            round_agents=frozenset(),
        )
        return state, [CommitGeneration(s.round_generation, s.round_agents)]

    if isinstance(e, Nack):
        _check_answer(s, e.agent_id, e.generation, "NACK")
        return _abort(s, f"agent {e.agent_id} nacked: {e.reason or 'no reason'}")

    if isinstance(e, RoundTimedOut):
        if s.phase is not CoordinatorPhase.COLLECTING or e.generation != s.round_generation:
            return s, []
        return _abort(s, "timeout")

    raise ProtocolViolation(f"unknown coordinator event {e!r}")


# ---------------------------------------------------------------------------
# Agent state machine
# ---------------------------------------------------------------------------


class AgentPhase(Enum):
    """Checkpoint agent phase."""

    RUNNING = "Running"
    QUIESCING = "Quiescing"
    QUIESCED = "Quiesced"
    WRITING_IMAGE = "WritingImage"
    RESTARTING = "Restarting"


@dataclass(frozen=True)
class AgentState:
    """Per-job checkpoint agent state."""

    agent_id: int
    phase: AgentPhase = AgentPhase.RUNNING
    last_acked_generation: int = 0
    round_generation: int = 0


@dataclass(frozen=True)
class CkptRequest:
    generation: int


@dataclass(frozen=True)
class StepBoundaryReached:
    pass


@dataclass(frozen=True)
class SnapshotTaken:
    generation: int


@dataclass(frozen=True)
class ImageWritten:
    generation: int


@dataclass(frozen=True)
class ImageWriteFailed:
    generation: int
    reason: str = ""


@dataclass(frozen=True)
class RestartRequested:
    generation: int


@dataclass(frozen=True)
class ImageLoaded:
    generation: int


AgentEvent = Union[
    CkptRequest,
    StepBoundaryReached,
    SnapshotTaken,
    ImageWritten,
    ImageWriteFailed,
    RestartRequested,
    ImageLoaded,
]


@dataclass(frozen=True)
class TakeSnapshot:
    generation: int


@dataclass(frozen=True)
class WriteImage:
    generation: int


@dataclass(frozen=True)
class SendAck:
    generation: int


@dataclass(frozen=True)
class SendNack:
    generation: int
    reason: str = ""


@dataclass(frozen=True)
class LoadImage:
    generation: int


@dataclass(frozen=True)
class Resume:
    generation: int


AgentAction = Union[TakeSnapshot, WriteImage, SendAck, SendNack, LoadImage, Resume]


def _illegal(s: AgentState, e: AgentEvent) -> IllegalTransition:
    return IllegalTransition(f"agent {s.agent_id}: {type(e).__name__} in phase {s.phase.value}")


def agent_step(s: AgentState, e: AgentEvent) -> tuple[AgentState, list[AgentAction]]:
    """Apply one event to the agent state."""
    phase = s.phase

    if isinstance(e, CkptRequest):
        if phase is not AgentPhase.RUNNING:
            raise _illegal(s, e)
        return replace(s, phase=AgentPhase.QUIESCING, round_generation=e.generation), []

    if isinstance(e, StepBoundaryReached):
        if phase is AgentPhase.RUNNING:
            return s, []
        if phase is not AgentPhase.QUIESCING:
            raise _illegal(s, e)
        return replace(s, phase=AgentPhase.QUIESCED), [TakeSnapshot(s.round_generation)]

    if isinstance(e, SnapshotTaken):
        if phase is not AgentPhase.QUIESCED or e.generation != s.round_generation:
            raise _illegal(s, e)
        return replace(s, phase=AgentPhase.WRITING_IMAGE), [WriteImage(e.generation)]

    if isinstance(e, ImageWritten):
        if phase is not AgentPhase.WRITING_IMAGE or e.generation != s.round_generation:
            raise _illegal(s, e)
        state = replace(s, phase=AgentPhase.RUNNING, last_acked_generation=e.generation)
        return state, [SendAck(e.generation)]

    if isinstance(e, ImageWriteFailed):
        if phase is not AgentPhase.WRITING_IMAGE or e.generation != s.round_generation:
            raise _illegal(s, e)
        return replace(s, phase=AgentPhase.RUNNING), [SendNack(e.generation, e.reason)]

    if isinstance(e, RestartRequested):
        if phase is not AgentPhase.RUNNING:
            raise _illegal(s, e)
        return replace(s, phase=AgentPhase.RESTARTING), [LoadImage(e.generation)]

    if isinstance(e, ImageLoaded):
        if phase is not AgentPhase.RESTARTING:
            raise _illegal(s, e)
        state = replace(s, phase=AgentPhase.RUNNING, last_acked_generation=e.generation)
        return state, [Resume(e.generation)]

    raise IllegalTransition(f"unknown agent event {e!r}")
