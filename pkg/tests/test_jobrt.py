"""Tests for the deterministic workloads and virtual ids."""
from __future__ import annotations

import random
from struct import Struct

import pytest

from ckptstack.exceptions import (
    AlreadyCompleted,
    BadSnapshotVersion,
    BadSpec,
    CorruptSnapshot,
    DuplicateId,
    UnknownId,
)
from ckptstack.jobrt import (
    SNAPSHOT_HEADER,
    JobStatus,
    VirtualIdTable,
    WorkloadKind,
    digest,
    make_workload,
    quiesce,
    remap_id,
    restore,
    run_to_completion,
    snapshot,
    step,
)


def _counter_value(state) -> int:
    (value,) = Struct("!Q").unpack(state.accumulator)
    return value


def _steps(state, count: int):
    for _ in range(count):
        state = step(state)
    return state


# ---------------------------------------------------------------------------
# Workload rules
# ---------------------------------------------------------------------------


def test_make_workload_starts_at_zero():
    """A fresh counter sits at step 0 with n=0."""
    state = make_workload(WorkloadKind.COUNTER, 10, 0, 1)
    assert state.steps_done == 0
    assert state.status is JobStatus.RUNNING
    assert _counter_value(state) == 0


def test_make_workload_accepts_labels():
    """Scenario-file names select the kind."""
    assert make_workload("matrix-iter", 3).spec.workload_kind is WorkloadKind.MATRIX_ITER
    assert WorkloadKind.PRNG_DIGEST.label == "prng-digest"
    with pytest.raises(BadSpec):
        WorkloadKind.from_label("fortran")


def test_bad_specs_are_rejected():
    """Zero steps and zero step cost are not jobs."""
    with pytest.raises(BadSpec):
        make_workload(WorkloadKind.COUNTER, 0)
    with pytest.raises(BadSpec):
        make_workload(WorkloadKind.COUNTER, 5, step_cost=0)


def test_counter_step():
    """The counter adds one per step."""
    state = _steps(make_workload(WorkloadKind.COUNTER, 10), 5)
    assert _counter_value(state) == 5
    assert _counter_value(step(state)) == 6


def test_completion_and_step_past_end():
    """The last step completes the job; one more is an error."""
    state = run_to_completion(make_workload(WorkloadKind.COUNTER, 4))
    assert state.completed
    assert state.steps_done == 4
    with pytest.raises(AlreadyCompleted):
        step(state)


@pytest.mark.parametrize("kind", list(WorkloadKind))
def test_determinism(kind):
    """(kind, total_steps, seed) fix the final digest."""
    first = run_to_completion(make_workload(kind, 12, 99))
    second = run_to_completion(make_workload(kind, 12, 99))
    assert digest(first) == digest(second)


@pytest.mark.parametrize("kind", [WorkloadKind.PRNG_DIGEST, WorkloadKind.MATRIX_ITER])
def test_seed_changes_result(kind):
    """Different seeds give different digests."""
    first = run_to_completion(make_workload(kind, 12, 1))
    second = run_to_completion(make_workload(kind, 12, 2))
    assert digest(first) != digest(second)


def test_quiesce():
    """Quiescing keeps progress and leaves completed jobs alone."""
    state = _steps(make_workload(WorkloadKind.COUNTER, 5), 2)
    paused = quiesce(state)
    assert paused.status is JobStatus.QUIESCED
    assert paused.steps_done == 2
    done = run_to_completion(state)
    assert quiesce(done) is done


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


def test_interrupted_run_matches_uninterrupted():
    """prng-digest seed 42: 60 steps, snapshot, restore, 40 steps."""
    reference = run_to_completion(make_workload(WorkloadKind.PRNG_DIGEST, 100, 42))
    partial = _steps(make_workload(WorkloadKind.PRNG_DIGEST, 100, 42), 60)
    resumed = run_to_completion(restore(snapshot(partial)))
    assert resumed.steps_done == 100
    assert digest(resumed) == digest(reference)


def test_transparency_over_random_cuts():
    """Snapshot and restore at any set of cut points changes nothing."""
    rng = random.Random(8)
    kinds = list(WorkloadKind)
    for _ in range(200):
        kind = rng.choice(kinds)
        seed = rng.getrandbits(64)
        total = rng.randint(2, 30)
        reference = digest(run_to_completion(make_workload(kind, total, seed)))
        cuts = sorted(rng.sample(range(1, total), rng.randint(1, min(5, total - 1))))
        state = make_workload(kind, total, seed)
        for cut in cuts:
            state = _steps(state, cut - state.steps_done)
            state = restore(snapshot(quiesce(state)))
        assert digest(run_to_completion(state)) == reference


def test_snapshot_round_trip_random_states():
    """restore(snapshot(s)) == s over randomized states of every kind."""
    rng = random.Random(2024)
    kinds = list(WorkloadKind)
    for _ in range(200):
        kind = rng.choice(kinds)
        total = rng.randint(1, 40)
        state = make_workload(
            kind, total, rng.getrandbits(64), job_id=rng.getrandbits(63)
        )
        state = _steps(state, rng.randint(0, total if kind is not WorkloadKind.MATRIX_ITER else min(total, 5)))
        assert restore(snapshot(state)) == state


def test_counter_snapshot_length():
    """A counter snapshot is the fixed header plus an 8-byte accumulator."""
    state = _steps(make_workload(WorkloadKind.COUNTER, 10), 6)
    payload = snapshot(state)
    assert SNAPSHOT_HEADER.size == 39
    assert len(payload) == 47
    restored = restore(payload)
    assert _counter_value(restored) == 6
    assert restored.status is JobStatus.RUNNING


def test_quiesced_snapshot_resumes_running():
    """A quiesced job restores with the same progress, Running again."""
    state = _steps(make_workload(WorkloadKind.MATRIX_ITER, 8, 3), 3)
    restored = restore(snapshot(quiesce(state)))
    assert restored == state
    assert restored.status is JobStatus.RUNNING


def test_restore_keeps_runtime_parameters():
    """Step cost is not part of the payload; the caller supplies it."""
    state = make_workload(WorkloadKind.COUNTER, 10, step_cost=3)
    assert restore(snapshot(state), step_cost=3) == state


def test_unknown_snapshot_version():
    """Version 99 is refused."""
    payload = snapshot(make_workload(WorkloadKind.COUNTER, 10))
    with pytest.raises(BadSnapshotVersion):
        restore((99).to_bytes(2, "big") + payload[2:])


@pytest.mark.parametrize("cut", [0, 1, 10, 45])
def test_truncated_snapshot(cut):
    """Truncated payloads are corrupt."""
    payload = snapshot(_steps(make_workload(WorkloadKind.COUNTER, 10), 6))
    with pytest.raises(CorruptSnapshot):
        restore(payload[:cut])


def test_snapshot_with_impossible_progress():
    """steps_done beyond total_steps is corrupt."""
    payload = bytearray(snapshot(make_workload(WorkloadKind.COUNTER, 10)))
    # steps_done sits after version, kind, job_id, total_steps and seed
    payload[27:35] = (11).to_bytes(8, "big")
    with pytest.raises(CorruptSnapshot):
        restore(bytes(payload))


def test_snapshot_with_unknown_kind():
    """An unknown kind code is corrupt."""
    payload = bytearray(snapshot(make_workload(WorkloadKind.COUNTER, 10)))
    payload[2] = 9
    with pytest.raises(CorruptSnapshot):
        restore(bytes(payload))


# ---------------------------------------------------------------------------
# Virtual ids
# ---------------------------------------------------------------------------


def test_remap_direct_lookup():
    """A registered id maps to its current id."""
    table = VirtualIdTable({101: 7042})
    assert remap_id(table, 101) == 7042


def test_remap_unknown_id():
    """An unregistered id is an error."""
    with pytest.raises(UnknownId):
        remap_id(VirtualIdTable(), 5)


def test_reregister_after_restart():
    """Re-registration replaces every binding and stays injective."""
    table = VirtualIdTable({101: 10, 103: 11})
    table.reregister({101: 7042, 102: 7043})
    assert remap_id(table, 101) == 7042
    assert remap_id(table, 102) == 7043
    assert remap_id(table, 101) != remap_id(table, 102)
    with pytest.raises(UnknownId):
        remap_id(table, 103)
    assert len(table) == 2


def test_duplicate_current_id():
    """Two originals cannot share a current id."""
    table = VirtualIdTable({1: 5})
    table.register(1, 5)
    with pytest.raises(DuplicateId):
        table.register(2, 5)
    with pytest.raises(DuplicateId):
        VirtualIdTable({1: 5, 2: 5})
