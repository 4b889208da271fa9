"""Tests for the job supervisor and simulated scenarios."""
from __future__ import annotations

import pytest

from ckptstack.const import ENV_COORD_HOST, ENV_COORD_PORT
from ckptstack.duration import format_comment
from ckptstack.exceptions import NoSuchJob, Overconsumed, SupervisorError
from ckptstack.jobrt import digest, run_to_completion
from ckptstack.sched import EventKind
from ckptstack.supervisor import (
    JobLog,
    RunLedger,
    SupervisorConfig,
    async_simulate,
    async_start_coordinator,
    command_file_path,
    compute_remaining,
    read_command_file,
    write_command_file,
)
from ckptstack.transport import parse_endpoint

from .conftest import MOCK_JOB_ID, make_job, make_job_spec, make_scenario


def _kinds(result) -> list[tuple[int, EventKind]]:
    return [(event.at, event.kind) for event in result.events]


def _reference_digest(total_steps: int = 60) -> str:
    return digest(run_to_completion(make_job(make_job_spec(total_steps=total_steps))))


# ---------------------------------------------------------------------------
# Accounting
# ---------------------------------------------------------------------------


def test_compute_remaining():
    """Remaining walltime is requested minus consumed."""
    assert compute_remaining(60, 25) == 35
    assert compute_remaining(60, 60) == 0
    with pytest.raises(Overconsumed):
        compute_remaining(60, 61)


def test_ledger_accounts_allocations():
    """Closing an allocation charges its length and refreshes the comment."""
    ledger = RunLedger(MOCK_JOB_ID, 60)
    ledger.open(0, (0,))
    assert ledger.close(25) == 25
    assert ledger.remaining == 35
    assert ledger.comment_text == format_comment(25 * 60)
    with pytest.raises(SupervisorError):
        ledger.close(30)
    ledger.open(25)
    with pytest.raises(SupervisorError):
        ledger.open(26)


def test_ledger_summary_lines():
    """The ledger renders as key=value lines."""
    ledger = RunLedger(MOCK_JOB_ID, 60)
    ledger.open(0, (0, 1))
    ledger.close(10)
    lines = ledger.summary_lines()
    assert "job=1" in lines
    assert "consumed=10" in lines
    assert "allocations=0-10@0,1" in lines
    assert "completed_at=" in lines


def test_supervisor_config_validation(tmp_path):
    """The checkpoint interval must fit inside the requested walltime."""
    config = SupervisorConfig(job_id=3, requested_walltime=60, workdir=tmp_path)
    assert config.log_path == tmp_path / "job.3.log"
    assert config.command_path == tmp_path / "ckpt_command.3"
    with pytest.raises(SupervisorError):
        SupervisorConfig(job_id=3, requested_walltime=10, checkpoint_interval=10)
    with pytest.raises(SupervisorError):
        SupervisorConfig(job_id=3, requested_walltime=60, checkpoint_interval=0)
    with pytest.raises(SupervisorError):
        SupervisorConfig(job_id=3, requested_walltime=60, mode="sometimes")


def test_job_log(tmp_path):
    """Lines are stamped with the virtual minute."""
    log = JobLog(tmp_path / "job.1.log")
    assert log.lines() == []
    log.truncate()
    log.write("checkpoint generation 1 committed at step 10", 10)
    log.write("job completed after 60 steps", 59)
    assert log.lines() == [
        "t=00010 checkpoint generation 1 committed at step 10",
        "t=00059 job completed after 60 steps",
    ]


# ---------------------------------------------------------------------------
# Coordinator lifecycle
# ---------------------------------------------------------------------------


def test_command_file(tmp_path):
    """The command file holds one host:port line."""
    path = command_file_path(tmp_path, 4)
    write_command_file(path, "127.0.0.1:7779")
    assert path.read_text() == "127.0.0.1:7779\n"
    write_command_file(path, "127.0.0.1:7780")
    assert read_command_file(path) == "127.0.0.1:7780"
    assert [p.name for p in tmp_path.iterdir()] == ["ckpt_command.4"]


def test_missing_command_file(tmp_path):
    """No command file means no such job."""
    with pytest.raises(NoSuchJob):
        read_command_file(command_file_path(tmp_path, 9))


async def test_start_coordinator_advertises_endpoint(tmp_path, network, store):
    """The job environment and the command file name the coordinator."""
    config = SupervisorConfig(job_id=MOCK_JOB_ID, requested_walltime=60, workdir=tmp_path)
    handle = await async_start_coordinator(config, network, store)
    try:
        host, port = parse_endpoint(handle.endpoint)
        assert handle.env == {ENV_COORD_HOST: host, ENV_COORD_PORT: str(port)}
        assert read_command_file(handle.command_path) == handle.endpoint
    finally:
        await handle.async_stop()
    assert not handle.coordinator.running


# ---------------------------------------------------------------------------
# Simulated runs
# ---------------------------------------------------------------------------


async def test_preempted_run_completes_with_same_digest(tmp_path):
    """A 60-minute job in 30-minute windows resumes where it was checkpointed."""
    result = await async_simulate(make_scenario(), tmp_path)
    ledger = result.ledgers[MOCK_JOB_ID]

    assert _kinds(result) == [
        (0, EventKind.JOB_STARTED),
        (25, EventKind.PREEMPT_NOTICE),
        (25, EventKind.JOB_REQUEUED),
        (25, EventKind.JOB_STARTED),
        (55, EventKind.PREEMPT_NOTICE),
        (60, EventKind.JOB_COMPLETED),
    ]
    assert [(start, end) for start, end, _ in ledger.allocations] == [(0, 25), (25, 60)]
    assert ledger.checkpoint_minutes == [10, 20, 25, 35, 45, 55]
    assert ledger.checkpoints_taken == 6
    assert ledger.consumed == 60
    assert ledger.reexecuted_steps == 0
    assert ledger.restarts == 1
    assert ledger.completed_at == 60
    assert ledger.final_digest == _reference_digest()
    assert result.failed_jobs == []
    assert result.checkpoint_failures == {MOCK_JOB_ID: 0}


async def test_preempted_run_writes_job_log(tmp_path):
    """The job log tells the story of both allocations."""
    await async_simulate(make_scenario(), tmp_path)
    lines = JobLog(tmp_path / "job.1.log").lines()
    assert lines[0].startswith("t=00000 coordinator started at ")
    assert "t=00025 preemption notice trapped" in lines
    assert any(line.startswith("t=00025 restarted from generation") for line in lines)
    assert "t=00055 preemption notice ignored, remaining work fits the allocation" in lines
    assert (tmp_path / "ckpt_command.1").exists()


async def test_aborted_preemption_checkpoint_falls_back(tmp_path):
    """Both attempts at 25 abort; the restart uses the checkpoint from 20."""
    scenario = make_scenario(requested_walltime=90, fail_checkpoints_at=frozenset({25}))
    result = await async_simulate(scenario, tmp_path)
    ledger = result.ledgers[MOCK_JOB_ID]

    assert result.checkpoint_failures[MOCK_JOB_ID] == 2
    assert [(start, end) for start, end, _ in ledger.allocations] == [(0, 25), (25, 65)]
    assert ledger.reexecuted_steps == 5
    assert ledger.completed_at == 65
    assert ledger.final_digest == _reference_digest()
    lines = JobLog(tmp_path / "job.1.log").lines()
    assert "t=00025 requeueing without a new checkpoint" in lines
    assert any("restarted from generation" in line and "at step 20" in line for line in lines)


async def test_checkpoint_only_ignores_notices(tmp_path):
    """Without auto mode the job keeps running through the notice."""
    scenario = make_scenario(mode="checkpoint-only", window=60)
    result = await async_simulate(scenario, tmp_path)
    ledger = result.ledgers[MOCK_JOB_ID]
    assert ledger.checkpoint_minutes == [10, 20, 30, 40, 50]
    assert ledger.completed_at == 60
    assert ledger.preemptions == 0
    assert "t=00055 preemption notice ignored in checkpoint-only mode" in JobLog(
        tmp_path / "job.1.log"
    ).lines()


async def test_no_cr_run_fails_on_exhausted_walltime(tmp_path):
    """A job that outlives its walltime without checkpoints fails."""
    scenario = make_scenario(mode="no-cr", requested_walltime=40, window=40)
    result = await async_simulate(scenario, tmp_path)
    ledger = result.ledgers[MOCK_JOB_ID]
    assert (40, EventKind.JOB_FAILED) in _kinds(result)
    assert ledger.failed
    assert ledger.checkpoints_taken == 0
    assert result.failed_jobs == [MOCK_JOB_ID]


async def test_horizon_stops_the_run(tmp_path):
    """A run cut by the horizon never completes."""
    scenario = make_scenario(window=60, horizon=20)
    result = await async_simulate(scenario, tmp_path)
    assert result.failed_jobs == [MOCK_JOB_ID]
    assert "t=00020 horizon reached before completion" in JobLog(tmp_path / "job.1.log").lines()


async def test_trace_marks_checkpoints(tmp_path):
    """Every committed checkpoint shows up as a tagged sample."""
    result = await async_simulate(make_scenario(), tmp_path)
    trace = result.traces[MOCK_JOB_ID]
    tagged = {p.t: p.event for p in trace.samples if p.event is not None}
    assert tagged[10] == "ckpt"
    assert tagged[25] == "preempt"
    assert tagged[59] == "complete"
    assert trace.completed_at == 60
