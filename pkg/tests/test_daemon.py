"""Tests for wall-clock daemon sessions."""
from __future__ import annotations

import asyncio

import pytest

from ckptstack.daemon import (
    STATUS_COMPLETED,
    STATUS_REQUEUED,
    STATUS_RUNNING,
    STATUS_STOPPED,
    DaemonSession,
    async_request_checkpoint,
    list_sessions,
    read_session,
)
from ckptstack.exceptions import NoSuchJob
from ckptstack.jobrt import WorkloadKind
from ckptstack.supervisor import JobLog, SupervisorConfig

from .conftest import make_job_spec


def _session(tmp_path, store, network, *, total_steps=30, step_seconds=0.001, mode="auto") -> DaemonSession:
    spec = make_job_spec(kind=WorkloadKind.COUNTER, total_steps=total_steps)
    config = SupervisorConfig(
        job_id=spec.job_id,
        requested_walltime=3600,
        checkpoint_interval=10,
        workdir=tmp_path,
        mode=mode,
        tick_seconds=1,
        round_timeout=2.0,
    )
    return DaemonSession(config, spec, store, network=network, step_seconds=step_seconds)


async def test_session_runs_to_completion(tmp_path, store, network):
    """Interval checkpoints are taken until the job completes."""
    session = _session(tmp_path, store, network)
    assert await session.async_run(install_signals=False) == STATUS_COMPLETED
    info = read_session(tmp_path, 1)
    assert info["status"] == STATUS_COMPLETED
    assert info["steps_done"] == 30
    assert info["checkpoints_taken"] == 2
    assert store.generations(1) == [1, 2]
    assert [s["job_id"] for s in list_sessions(tmp_path)] == [1]


async def test_notice_checkpoints_and_requeues(tmp_path, store, network):
    """A notice ends the session after a checkpoint; the next one restores it."""
    first = _session(tmp_path, store, network, step_seconds=60)
    first.request_notice()
    assert await first.async_run(install_signals=False) == STATUS_REQUEUED
    assert store.latest(1) == 1
    assert "preemption notice trapped" in " ".join(JobLog(tmp_path / "job.1.log").lines())

    second = _session(tmp_path, store, network)
    assert await second.async_run(install_signals=False) == STATUS_COMPLETED
    assert second.ledger.restarts == 1


async def test_stop_request(tmp_path, store, network):
    """A stop ends the session without a checkpoint."""
    session = _session(tmp_path, store, network, step_seconds=60)
    session.request_stop()
    assert await session.async_run(install_signals=False) == STATUS_STOPPED
    assert store.generations(1) == []


async def test_operator_checkpoint(tmp_path, store, network):
    """A control client can ask the running coordinator for a round."""
    session = _session(tmp_path, store, network, total_steps=100000, step_seconds=0.01, mode="manual")
    task = asyncio.create_task(session.async_run(install_signals=False))
    while session.status != STATUS_RUNNING:
        await asyncio.sleep(0.01)
    generation = await async_request_checkpoint(session.handle.endpoint, network)
    assert generation == 1
    session.request_stop()
    assert await task == STATUS_STOPPED
    assert store.latest(1) == 1


def test_read_missing_session(tmp_path):
    """No status file means no such job."""
    with pytest.raises(NoSuchJob):
        read_session(tmp_path, 4)
