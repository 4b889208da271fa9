"""Command line entry point: ``ckptstack``."""
from __future__ import annotations

import argparse
import asyncio
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from .const import (
    DEFAULT_CHECKPOINT_INTERVAL,
    DEFAULT_HOST,
    DEFAULT_KEEP,
    DEFAULT_REDUNDANCY,
    DEFAULT_ROUND_TIMEOUT,
    DEFAULT_STEP_SECONDS,
    ENV_COORD_HOST,
    ENV_COORD_PORT,
    ENV_WORKDIR,
    ERROR_BAD_SCENARIO,
    ERROR_CANNOT_CONNECT,
    ERROR_CHECKPOINT_FAILED,
    ERROR_NO_SUCH_JOB,
    ERROR_UNKNOWN,
    EXIT_CHECKPOINT_FAILURE,
    EXIT_CONFIG_ERROR,
    EXIT_JOB_FAILURE,
    EXIT_OK,
    IMAGES_DIRNAME,
    MODE_AUTO,
    MODES,
    PRESET_ALIASES,
    PRESETS_ALL,
)
from .daemon import (
    STATUS_COMPLETED,
    STATUS_REQUEUED,
    DaemonSession,
    async_order_restart,
    async_request_checkpoint,
    list_sessions,
    read_session,
)
from .exceptions import (
    AllCopiesCorrupt,
    BadSpec,
    CheckpointFailure,
    CkptStackError,
    CoordinatorUnreachable,
    IncompleteTrace,
    NoSuchJob,
    ScenarioError,
    SupervisorError,
)
from .imgstore import ImageStore
from .jobrt import JobSpec, WorkloadKind
from .scenario import Scenario, load_scenario
from .sched import event_log_lines
from .supervisor import SimulationResult, SupervisorConfig, async_simulate, command_file_path, read_command_file
from .telemetry import export_csv, format_report, overhead_report
from .transport import format_endpoint

_LOGGER = logging.getLogger(__name__)

WORK_DIRNAME = "work"
DEFAULT_DAEMON_WALLTIME = 7 * 24 * 3600


def _default_workdir() -> str:
    return os.environ.get(ENV_WORKDIR, ".")


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _write_lines(path: Path, lines: list[str]) -> None:
    path.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")


def run_scenario(scenario: Scenario, out: Path) -> SimulationResult:
    """Simulate a scenario and write its artifacts into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    workdir = out / WORK_DIRNAME
    shutil.rmtree(workdir, ignore_errors=True)
    result = asyncio.run(async_simulate(scenario, workdir))

    _write_lines(out / "events.log", event_log_lines(result.events))
    for job_id, trace in sorted(result.traces.items()):
        export_csv(trace, out / f"trace.{job_id}.csv")
        log_path = workdir / f"job.{job_id}.log"
        if log_path.exists():
            shutil.copyfile(log_path, out / f"job.{job_id}.log")

    ledger_lines: list[str] = []
    for job_id, ledger in sorted(result.ledgers.items()):
        if ledger_lines:
            ledger_lines.append("")
        ledger_lines.extend(ledger.summary_lines())
        ledger_lines.append(f"checkpoint_failures={result.checkpoint_failures.get(job_id, 0)}")
    _write_lines(out / "ledger.txt", ledger_lines)

    reports = []
    skipped = []
    for entry in scenario.jobs:
        job_id = entry.spec.job_id
        if not result.traces[job_id].completed:
            skipped.append(job_id)
            continue
        with tempfile.TemporaryDirectory() as tmp:
            baseline = asyncio.run(async_simulate(scenario.baseline(job_id), tmp))
        telemetry = scenario.telemetry
        try:
            reports.append(
                overhead_report(
                    baseline.traces[job_id],
                    result.traces[job_id],
                    telemetry.spike_factor,
                    telemetry.median_window,
                )
            )
        except IncompleteTrace as exc:
            _LOGGER.warning("No overhead report for job %d: %s", job_id, exc)
            skipped.append(job_id)
    text = format_report(reports) if reports else ""
    text += "".join(f"job.{job_id}.report=incomplete\n" for job_id in sorted(skipped))
    (out / "overhead.txt").write_text(text, encoding="utf-8")
    return result


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    result = run_scenario(scenario, Path(args.out))
    for ledger in sorted(result.ledgers.values(), key=lambda l: l.job_id):
        state = "completed" if ledger.completed_at is not None else "failed" if ledger.failed else "unfinished"
        print(f"job {ledger.job_id}: {state}, {ledger.comment_text}, {len(ledger.allocations)} allocations")
    if result.failed_jobs:
        _LOGGER.error("Jobs without completion: %s", result.failed_jobs)
        if any(result.checkpoint_failures.get(job_id, 0) for job_id in result.failed_jobs):
            _report(ERROR_CHECKPOINT_FAILED)
            return EXIT_CHECKPOINT_FAILURE
        return EXIT_JOB_FAILURE
    return EXIT_OK


# ---------------------------------------------------------------------------
# daemon-mode commands
# ---------------------------------------------------------------------------


def _resolve_endpoint(workdir: str, job_id: int) -> str:
    host = os.environ.get(ENV_COORD_HOST)
    port = os.environ.get(ENV_COORD_PORT)
    if host and port:
        return format_endpoint(host, int(port))
    return read_command_file(command_file_path(workdir, job_id))


def _store(args: argparse.Namespace) -> ImageStore:
    return ImageStore(Path(args.workdir) / IMAGES_DIRNAME, args.redundancy, args.keep)


def _session(args: argparse.Namespace, spec: JobSpec, mode: str, interval: int, walltime: int) -> DaemonSession:
    host = os.environ.get(ENV_COORD_HOST, DEFAULT_HOST)
    port = int(os.environ.get(ENV_COORD_PORT, "0"))
    try:
        config = SupervisorConfig(
            job_id=spec.job_id,
            requested_walltime=walltime,
            checkpoint_interval=interval,
            endpoint=format_endpoint(host, port),
            workdir=Path(args.workdir),
            mode=mode,
            tick_seconds=1,
            round_timeout=args.round_timeout,
        )
    except SupervisorError as exc:
        raise ScenarioError(str(exc)) from exc
    return DaemonSession(config, spec, _store(args), step_seconds=args.step_seconds)


def _session_exit(status: str) -> int:
    print(status)
    return EXIT_OK if status in (STATUS_COMPLETED, STATUS_REQUEUED) else EXIT_JOB_FAILURE


def _cmd_launch(args: argparse.Namespace) -> int:
    try:
        spec = JobSpec(
            job_id=args.jobid,
            workload_kind=WorkloadKind.from_label(args.kind),
            total_steps=args.steps,
            seed=args.seed,
            step_cost=args.step_cost,
        )
    except BadSpec as exc:
        raise ScenarioError(str(exc)) from exc
    session = _session(args, spec, args.mode, args.interval, args.walltime)
    return _session_exit(asyncio.run(session.async_run()))


def _cmd_ckpt_now(args: argparse.Namespace) -> int:
    endpoint = _resolve_endpoint(args.workdir, args.jobid)
    generation = asyncio.run(async_request_checkpoint(endpoint))
    print(generation)
    return EXIT_OK


def _cmd_images(args: argparse.Namespace) -> int:
    store = _store(args)
    generations = store.generations(args.jobid)
    if not generations:
        raise NoSuchJob(f"job {args.jobid} has no images in {store.root}")
    restorable = 0
    for generation in generations:
        verdicts = store.verify(args.jobid, generation)
        ok = any(v.ok for v in verdicts)
        restorable += ok
        copies = ", ".join(
            f"copy{v.copy}=ok" if v.ok else f"copy{v.copy}=corrupt({v.reason})" for v in verdicts
        )
        print(f"gen {generation}: {'restorable' if ok else 'unrestorable'} [{copies}]")
    if not restorable:
        raise AllCopiesCorrupt(f"no generation of job {args.jobid} verifies")
    return EXIT_OK


def _cmd_restart(args: argparse.Namespace) -> int:
    generation = args.gen or 0
    try:
        endpoint = _resolve_endpoint(args.workdir, args.jobid)
        asyncio.run(async_order_restart(endpoint, generation))
    except (CoordinatorUnreachable, NoSuchJob) as exc:
        _LOGGER.info("No live coordinator for job %d (%s), relaunching", args.jobid, exc)
    else:
        print(f"restart from generation {generation or 'latest'} ordered")
        return EXIT_OK

    info = read_session(args.workdir, args.jobid)
    spec = JobSpec(
        job_id=args.jobid,
        workload_kind=WorkloadKind.from_label(info["kind"]),
        total_steps=info["total_steps"],
        seed=info["seed"],
        step_cost=info["step_cost"],
    )
    session = _session(args, spec, info.get("mode", MODE_AUTO), args.interval, args.walltime)
    status = asyncio.run(session.async_run(restart_generation=generation))
    return _session_exit(status)


def _cmd_status(args: argparse.Namespace) -> int:
    sessions = list_sessions(args.workdir)
    if not sessions:
        print(f"no sessions in {args.workdir}")
        return EXIT_OK
    for info in sessions:
        print(
            f"job={info['job_id']} status={info['status']} "
            f"steps={info['steps_done']}/{info['total_steps']} "
            f"generation={info['committed_generation']} "
            f"checkpoints={info['checkpoints_taken']} restarts={info['restarts']} "
            f"endpoint={info['endpoint']} comment={info['comment']}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_session_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--interval",
        type=int,
        default=DEFAULT_CHECKPOINT_INTERVAL,
        help="steps between interval checkpoints",
    )
    parser.add_argument(
        "--walltime", type=int, default=DEFAULT_DAEMON_WALLTIME, help="requested walltime in seconds"
    )
    parser.add_argument(
        "--step-seconds", type=float, default=DEFAULT_STEP_SECONDS, help="wall time per job step"
    )
    parser.add_argument(
        "--round-timeout", type=float, default=DEFAULT_ROUND_TIMEOUT, help="seconds before a round is aborted"
    )


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser."""
    parser = argparse.ArgumentParser(
        prog="ckptstack",
        description="Coordinated checkpoint/restart of batch jobs under preemption.",
    )
    parser.add_argument(
        "--workdir",
        default=_default_workdir(),
        help=f"images, command files, sessions and logs (default: ${ENV_WORKDIR} or .)",
    )
    parser.add_argument("--redundancy", type=int, default=DEFAULT_REDUNDANCY, help="image copies")
    parser.add_argument("--keep", type=int, default=DEFAULT_KEEP, help="generations kept per job")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario file or preset")
    run.add_argument(
        "scenario", help="scenario file, or one of: " + ", ".join((*PRESETS_ALL, *PRESET_ALIASES))
    )
    run.add_argument("--out", required=True, help="output directory")
    run.set_defaults(func=_cmd_run)

    launch = sub.add_parser("launch", help="run a job under a loopback coordinator")
    launch.add_argument("jobid", type=int)
    launch.add_argument("--kind", default="prng-digest", help="counter, prng-digest or matrix-iter")
    launch.add_argument("--steps", type=int, default=60, help="total steps of the workload")
    launch.add_argument("--seed", type=int, default=0)
    launch.add_argument("--step-cost", type=int, default=1)
    launch.add_argument("--mode", choices=MODES, default=MODE_AUTO)
    _add_session_options(launch)
    launch.set_defaults(func=_cmd_launch)

    ckpt = sub.add_parser("ckpt", help="checkpoint commands")
    ckpt_sub = ckpt.add_subparsers(dest="ckpt_command", required=True)
    now = ckpt_sub.add_parser("now", help="run one checkpoint round now")
    now.add_argument("jobid", type=int)
    now.set_defaults(func=_cmd_ckpt_now)

    images = sub.add_parser("images", help="list and verify the images of a job")
    images.add_argument("jobid", type=int)
    images.set_defaults(func=_cmd_images)

    restart = sub.add_parser("restart", help="restart a job from a stored generation")
    restart.add_argument("jobid", type=int)
    restart.add_argument("--gen", type=int, default=None, help="generation (default: latest)")
    _add_session_options(restart)
    restart.set_defaults(func=_cmd_restart)

    status = sub.add_parser("status", help="show the daemon sessions of the working directory")
    status.set_defaults(func=_cmd_status)
    return parser


def _report(code: str) -> None:
    print(f"error={code}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    """Run the command line."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ScenarioError as exc:
        _LOGGER.error("Invalid configuration: %s", exc)
        _report(ERROR_BAD_SCENARIO)
        return EXIT_CONFIG_ERROR
    except CheckpointFailure as exc:
        _LOGGER.error("Checkpoint failure: %s", exc)
        _report(ERROR_CHECKPOINT_FAILED)
        return EXIT_CHECKPOINT_FAILURE
    except CoordinatorUnreachable as exc:
        _LOGGER.error("%s", exc)
        _report(ERROR_CANNOT_CONNECT)
    except NoSuchJob as exc:
        _LOGGER.error("%s", exc)
        _report(ERROR_NO_SUCH_JOB)
    except CkptStackError as exc:
        _LOGGER.error("%s", exc)
        _report(ERROR_UNKNOWN)
    except Exception:  # pylint: disable=broad-except
        _LOGGER.exception("Unexpected error")
        _report(ERROR_UNKNOWN)
    return EXIT_JOB_FAILURE


if __name__ == "__main__":
    sys.exit(main())
