"""Deterministic step-based workloads with snapshot/restore and virtual ids."""
from __future__ import annotations

import functools
import hashlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from struct import Struct

import numpy as np

from .const import (
    DEFAULT_BASE_MB,
    DEFAULT_CKPT_SPIKE_FRACTION,
    DEFAULT_DECAY_MB_PER_MIN,
    DEFAULT_STEP_COST,
    SNAPSHOT_VERSION,
)
from .exceptions import (
    AlreadyCompleted,
    BadSnapshotVersion,
    BadSpec,
    CorruptSnapshot,
    DuplicateId,
    UnknownId,
)

_LOGGER = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
MATRIX_DIM = 32
MATRIX_MODULUS = 65521  # keeps 32-term dot products well inside int64

# version[2B] | kind[1B] | job_id[8B] | total_steps[8B] | seed[8B] | steps_done[8B] | acc_len[4B]
SNAPSHOT_HEADER = Struct("!HBQQQQI")
_U64 = Struct("!Q")
_U64_PAIR = Struct("!QQ")


class WorkloadKind(IntEnum):
    """Workload kinds and their snapshot codes."""

    COUNTER = 0
    PRNG_DIGEST = 1
    MATRIX_ITER = 2

    @property
    def label(self) -> str:
        """Return the scenario-file name of the kind."""
        return self.name.lower().replace("_", "-")

    @classmethod
    def from_label(cls, label: str) -> WorkloadKind:
        """Look up a kind by its scenario-file name."""
        try:
            return cls[label.strip().upper().replace("-", "_")]
        except KeyError as exc:
            raise BadSpec(f"unknown workload kind {label!r}") from exc


class JobStatus(Enum):
    """Lifecycle status of a job state."""

    RUNNING = "Running"
    QUIESCED = "Quiesced"
    COMPLETED = "Completed"


@dataclass(frozen=True)
class MemModel:
    """Synthetic memory footprint of a job."""

    base_mb: float = DEFAULT_BASE_MB
    decay_mb_per_min: float = DEFAULT_DECAY_MB_PER_MIN
    ckpt_spike_fraction: float = DEFAULT_CKPT_SPIKE_FRACTION

    def __post_init__(self) -> None:
        """Validate."""
        if not self.base_mb > 0:
            raise BadSpec(f"base_mb must be positive, got {self.base_mb}")
        if self.decay_mb_per_min < 0:
            raise BadSpec(f"decay_mb_per_min must be non-negative, got {self.decay_mb_per_min}")
        if not 0 <= self.ckpt_spike_fraction < 1:
            raise BadSpec(f"ckpt_spike_fraction must be in [0, 1), got {self.ckpt_spike_fraction}")


@dataclass(frozen=True)
class JobSpec:
    """A deterministic, step-based, checkpointable workload."""

    job_id: int
    workload_kind: WorkloadKind
    total_steps: int
    seed: int = 0
    step_cost: int = DEFAULT_STEP_COST
    mem_model: MemModel = field(default_factory=MemModel)

    def __post_init__(self) -> None:
        """Validate."""
        if not 0 <= self.job_id <= MASK64:
            raise BadSpec(f"job_id out of range: {self.job_id}")
        if self.total_steps < 1:
            raise BadSpec(f"total_steps must be >= 1, got {self.total_steps}")
        if self.step_cost < 1:
            raise BadSpec(f"step_cost must be >= 1, got {self.step_cost}")
        if not 0 <= self.seed <= MASK64:
            raise BadSpec(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def total_ticks(self) -> int:
        """Virtual ticks of work needed to complete the job."""
        return self.total_steps * self.step_cost


@dataclass(frozen=True)
class JobState:
    """Live state of a workload."""

    spec: JobSpec
    steps_done: int
    accumulator: bytes
    status: JobStatus = JobStatus.RUNNING

    @property
    def completed(self) -> bool:
        """Return True once every step has run."""
        return self.status is JobStatus.COMPLETED


# ---------------------------------------------------------------------------
# Workload rules
# ---------------------------------------------------------------------------


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _xorshift64(x: int) -> int:
    x ^= (x << 13) & MASK64
    x ^= x >> 7
    x ^= (x << 17) & MASK64
    return x & MASK64


@functools.lru_cache(maxsize=64)
def _affine_map(seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    a = rng.integers(0, MATRIX_MODULUS, size=(MATRIX_DIM, MATRIX_DIM), dtype=np.int64)
    b = rng.integers(0, MATRIX_MODULUS, size=(MATRIX_DIM, MATRIX_DIM), dtype=np.int64)
    a.flags.writeable = False
    b.flags.writeable = False
    return a, b


def _matrix_from_bytes(acc: bytes) -> np.ndarray:
    return np.frombuffer(acc, dtype=">u4").astype(np.int64).reshape(MATRIX_DIM, MATRIX_DIM)


def _matrix_to_bytes(m: np.ndarray) -> bytes:
    return m.astype(">u4").tobytes()


def _initial_accumulator(kind: WorkloadKind, seed: int) -> bytes:
    if kind is WorkloadKind.COUNTER:
        return _U64.pack(0)
    if kind is WorkloadKind.PRNG_DIGEST:
        state = _splitmix64(seed) or 1  # xorshift never leaves zero
        return _U64_PAIR.pack(state, 0)
    m = np.identity(MATRIX_DIM, dtype=np.int64)
    m[0, :] = np.arange(MATRIX_DIM) + (seed % MATRIX_MODULUS)
    return _matrix_to_bytes(m % MATRIX_MODULUS)


def _advance(spec: JobSpec, acc: bytes) -> bytes:
    kind = spec.workload_kind
    if kind is WorkloadKind.COUNTER:
        (n,) = _U64.unpack(acc)
        return _U64.pack((n + 1) & MASK64)
    if kind is WorkloadKind.PRNG_DIGEST:
        state, digest = _U64_PAIR.unpack(acc)
        state = _xorshift64(state)
        digest = ((digest ^ state) * 0x100000001B3) & MASK64
        digest = ((digest << 5) | (digest >> 59)) & MASK64
        return _U64_PAIR.pack(state, digest)
    a, b = _affine_map(spec.seed)
    m = _matrix_from_bytes(acc)
    return _matrix_to_bytes((a @ m + b) % MATRIX_MODULUS)


def _expected_accumulator_len(kind: WorkloadKind) -> int:
    if kind is WorkloadKind.COUNTER:
        return _U64.size
    if kind is WorkloadKind.PRNG_DIGEST:
        return _U64_PAIR.size
    return MATRIX_DIM * MATRIX_DIM * 4


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def make_workload(
    kind: WorkloadKind | str,
    total_steps: int,
    seed: int = 0,
    step_cost: int = DEFAULT_STEP_COST,
    *,
    job_id: int = 0,
    mem_model: MemModel | None = None,
) -> JobState:
    """Create a fresh job state at step 0."""
    if isinstance(kind, str):
        kind = WorkloadKind.from_label(kind)
    spec = JobSpec(
        job_id=job_id,
        workload_kind=kind,
        total_steps=total_steps,
        seed=seed,
        step_cost=step_cost,
        mem_model=mem_model or MemModel(),
    )
    return JobState(spec=spec, steps_done=0, accumulator=_initial_accumulator(kind, seed))


def step(s: JobState) -> JobState:
    """Run one step of the workload."""
    if s.completed or s.steps_done >= s.spec.total_steps:
        raise AlreadyCompleted(f"job {s.spec.job_id} already ran {s.steps_done} steps")
    steps_done = s.steps_done + 1
    status = JobStatus.COMPLETED if steps_done == s.spec.total_steps else JobStatus.RUNNING
    return JobState(s.spec, steps_done, _advance(s.spec, s.accumulator), status)


def run_to_completion(s: JobState) -> JobState:
    """Step a job until it completes."""
    while not s.completed:
        s = step(s)
    return s


def quiesce(s: JobState) -> JobState:
    """Mark a running job as paused at its step boundary."""
    if s.completed:
        return s
    return replace(s, status=JobStatus.QUIESCED)


def digest(s: JobState) -> str:
    """Return the workload digest used for equivalence checks."""
    h = hashlib.sha256()
    h.update(bytes([int(s.spec.workload_kind)]))
    h.update(_U64.pack(s.steps_done))
    h.update(s.accumulator)
    return h.hexdigest()


def snapshot(s: JobState) -> bytes:
    """Serialize a job state into the versioned snapshot payload."""
    spec = s.spec
    header = SNAPSHOT_HEADER.pack(
        SNAPSHOT_VERSION,
        int(spec.workload_kind),
        spec.job_id,
        spec.total_steps,
        spec.seed,
        s.steps_done,
        len(s.accumulator),
    )
    return header + s.accumulator


def restore(
    b: bytes,
    *,
    step_cost: int = DEFAULT_STEP_COST,
    mem_model: MemModel | None = None,
) -> JobState:
    """Rebuild a job state from snapshot bytes; the job resumes Running."""
    if len(b) < 2:
        raise CorruptSnapshot(f"snapshot of {len(b)} bytes is truncated")
    version = int.from_bytes(b[:2], "big")
    if version != SNAPSHOT_VERSION:
        raise BadSnapshotVersion(f"snapshot version {version} is not supported")
    if len(b) < SNAPSHOT_HEADER.size:
        raise CorruptSnapshot(f"snapshot of {len(b)} bytes is truncated")

    _, kind_code, job_id, total_steps, seed, steps_done, acc_len = SNAPSHOT_HEADER.unpack_from(b)
    accumulator = bytes(b[SNAPSHOT_HEADER.size:])
    if len(accumulator) != acc_len:
        raise CorruptSnapshot(f"accumulator length {len(accumulator)} != declared {acc_len}")
    try:
        kind = WorkloadKind(kind_code)
    except ValueError as exc:
        raise CorruptSnapshot(f"unknown workload kind code {kind_code}") from exc
    if acc_len != _expected_accumulator_len(kind):
        raise CorruptSnapshot(f"accumulator length {acc_len} does not fit {kind.label}")
    try:
        spec = JobSpec(job_id, kind, total_steps, seed, step_cost, mem_model or MemModel())
    except BadSpec as exc:
        raise CorruptSnapshot(str(exc)) from exc
    if steps_done > total_steps:
        raise CorruptSnapshot(f"steps_done {steps_done} exceeds total_steps {total_steps}")

    status = JobStatus.COMPLETED if steps_done == total_steps else JobStatus.RUNNING
    _LOGGER.debug("Restored job %d at step %d/%d", job_id, steps_done, total_steps)
    return JobState(spec, steps_done, accumulator, status)


# ---------------------------------------------------------------------------
# Virtual ids
# ---------------------------------------------------------------------------


class VirtualIdTable:
    """Injective map from original resource ids to their current ids."""

    def __init__(self, entries: dict[int, int] | None = None) -> None:
        """Initialize."""
        self._entries: dict[int, int] = {}
        for original, current in (entries or {}).items():
            self.register(original, current)

    @property
    def entries(self) -> dict[int, int]:
        """Return a copy of the mapping."""
        return dict(self._entries)

    def register(self, original: int, current: int) -> None:
        """Bind an original id to its current id."""
        owner = next((o for o, c in self._entries.items() if c == current), None)
        if owner is not None and owner != original:
            raise DuplicateId(f"id {current} already bound to original {owner}")
        self._entries[original] = current

    def reregister(self, entries: dict[int, int]) -> None:
        """Replace every binding after a restart."""
        fresh = VirtualIdTable(entries)
        self._entries = fresh._entries

    def remap(self, original: int) -> int:
        """Return the current id of an original id."""
        try:
            return self._entries[original]
        except KeyError as exc:
            raise UnknownId(f"id {original} was not re-registered after restart") from exc

    def __len__(self) -> int:
        return len(self._entries)


def remap_id(t: VirtualIdTable, original: int) -> int:
    """Return the current id bound to ``original``."""
    return t.remap(original)
