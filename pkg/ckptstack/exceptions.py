"""Exceptions raised by ckptstack."""
from __future__ import annotations


class CkptStackError(Exception):
    """Base error for the checkpoint-restart stack."""


class CheckpointFailure(CkptStackError):
    """Error on the checkpoint path (protocol round or image storage)."""


# ---------------------------------------------------------------------------
# Wire codec
# ---------------------------------------------------------------------------


class FrameError(CkptStackError):
    """Error to indicate a corrupted or incompatible peer."""


class BadMagic(FrameError):
    """Frame does not start with the protocol magic byte."""


class BadVersion(FrameError):
    """Frame carries an unsupported protocol version."""


class UnknownType(FrameError):
    """Frame carries an unknown message type."""


class OversizePayload(FrameError):
    """Payload does not fit the 32-bit length field."""


# ---------------------------------------------------------------------------
# Protocol
# ---------------------------------------------------------------------------


class ProtocolError(CkptStackError):
    """Error raised by the coordinator/agent protocol."""


class ProtocolViolation(ProtocolError):
    """Event is inconsistent with the coordinator's round state."""


class IllegalTransition(ProtocolError):
    """Event is inconsistent with the agent's phase."""


class RoundAborted(ProtocolError, CheckpointFailure):
    """Checkpoint round was aborted; no generation was committed."""

    def __init__(self, reason: str, generation: int | None = None) -> None:
        """Initialize."""
        super().__init__(reason)
        self.reason = reason
        self.generation = generation


class RoundTimeout(RoundAborted):
    """An agent failed to ack within the round timeout."""


class EndpointBusy(ProtocolError):
    """Another coordinator already listens on the endpoint."""


class CoordinatorUnreachable(ProtocolError):
    """No coordinator listens on the endpoint."""


# ---------------------------------------------------------------------------
# Job runtime
# ---------------------------------------------------------------------------


class JobError(CkptStackError):
    """Error raised by the job runtime."""


class BadSpec(JobError):
    """Job specification violates its invariants."""


class AlreadyCompleted(JobError):
    """Job has already run all of its steps."""


class SnapshotError(JobError, CheckpointFailure):
    """Snapshot payload cannot be restored."""


class BadSnapshotVersion(SnapshotError):
    """Snapshot version is not supported."""


class CorruptSnapshot(SnapshotError):
    """Snapshot payload is truncated or inconsistent."""


class UnknownId(JobError):
    """Original id was not re-registered after restart."""


class DuplicateId(JobError):
    """Current id is already bound to another original id."""


# ---------------------------------------------------------------------------
# Image store
# ---------------------------------------------------------------------------


class StoreError(CheckpointFailure):
    """Error raised by the image store."""


class NonMonotonicGeneration(StoreError):
    """Generation does not follow the latest committed one."""


class StorageFailure(StoreError):
    """Image could not be written durably."""


class NoImage(StoreError):
    """No committed image exists."""


class AllCopiesCorrupt(StoreError):
    """Every copy of every candidate generation fails its CRC."""


# ---------------------------------------------------------------------------
# Scheduler
# ---------------------------------------------------------------------------


class SchedulerError(CkptStackError):
    """Error raised by the scheduler simulator."""


class DuplicateJobId(SchedulerError):
    """Job id already submitted."""


class UnknownJob(SchedulerError):
    """Job id was never submitted."""


class NotRunning(SchedulerError):
    """Job holds no active allocation."""


class ExhaustedWalltime(SchedulerError):
    """Requeue would leave no remaining walltime."""


# ---------------------------------------------------------------------------
# Supervisor / telemetry / CLI
# ---------------------------------------------------------------------------


class SupervisorError(CkptStackError):
    """Error raised by the job supervisor."""


class Overconsumed(SupervisorError):
    """Consumed time exceeds the requested walltime."""


class DurationParseError(SupervisorError, ValueError):
    """Text is not a canonical D-HH:MM:SS duration."""


class TelemetryError(CkptStackError):
    """Error raised by trace analysis."""


class TooFewSamples(TelemetryError):
    """Trace is too short for the analysis."""


class IncompleteTrace(TelemetryError):
    """Trace does not reach job completion."""


class IoFailure(TelemetryError):
    """Trace file could not be written or read."""


class ScenarioError(CkptStackError):
    """Scenario file is malformed or inconsistent."""


class NoSuchJob(CkptStackError):
    """No session or image exists for the job."""
