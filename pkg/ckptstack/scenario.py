"""Scenario files and presets."""
from __future__ import annotations

import configparser
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    CONF_BASE_MB,
    CONF_CHECKPOINT_COST,
    CONF_CHECKPOINT_INTERVAL,
    CONF_CKPT_CPU,
    CONF_CKPT_SPIKE_FRACTION,
    CONF_DECAY_MB_PER_MIN,
    CONF_EXTEND_LIMIT,
    CONF_FAIL_CHECKPOINTS_AT,
    CONF_HORIZON,
    CONF_KEEP,
    CONF_KIND,
    CONF_MANUAL_CHECKPOINTS,
    CONF_MEDIAN_WINDOW,
    CONF_MODE,
    CONF_NODES,
    CONF_PRESET,
    CONF_REDUNDANCY,
    CONF_REQUEUE_DELAY,
    CONF_REQUESTED_WALLTIME,
    CONF_SAMPLE_PERIOD,
    CONF_SEED,
    CONF_SIGNAL_LEAD,
    CONF_SPIKE_FACTOR,
    CONF_STEP_COST,
    CONF_TICK_SECONDS,
    CONF_TOTAL_STEPS,
    CONF_WINDOW,
    DEFAULT_BASE_MB,
    DEFAULT_CHECKPOINT_COST,
    DEFAULT_CHECKPOINT_INTERVAL,
    DEFAULT_CKPT_CPU,
    DEFAULT_CKPT_SPIKE_FRACTION,
    DEFAULT_DECAY_MB_PER_MIN,
    DEFAULT_HORIZON,
    DEFAULT_KEEP,
    DEFAULT_MEDIAN_WINDOW,
    DEFAULT_NODES,
    DEFAULT_REDUNDANCY,
    DEFAULT_REQUEUE_DELAY,
    DEFAULT_SAMPLE_PERIOD,
    DEFAULT_SIGNAL_LEAD,
    DEFAULT_SPIKE_FACTOR,
    DEFAULT_STEP_COST,
    DEFAULT_TICK_SECONDS,
    MODE_AUTO,
    MODE_CHECKPOINT_ONLY,
    MODE_NO_CR,
    MODES,
    PRESET_ALIASES,
    PRESET_FIG4_BOTTOM,
    PRESET_FIG4_MIDDLE,
    PRESET_FIG4_TOP,
    PRESETS_ALL,
)
from .exceptions import BadSpec, ScenarioError, SupervisorError
from .jobrt import JobSpec, MemModel, WorkloadKind
from .supervisor import SupervisorConfig
from .telemetry import TelemetryConfig

_LOGGER = logging.getLogger(__name__)

SECTION_SCENARIO = "scenario"
SECTION_CLUSTER = "cluster"
SECTION_SUPERVISOR = "supervisor"
SECTION_TELEMETRY = "telemetry"
SECTION_STORE = "store"
SECTION_FAULTS = "faults"
JOB_SECTION_PREFIX = "job."


def _int_list(value: Any) -> tuple[int, ...]:
    """Parse ``"10, 20,30"`` into a sorted tuple of non-negative ints."""
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [part for part in str(value).replace(",", " ").split() if part]
    try:
        numbers = sorted(int(item) for item in items)
    except ValueError as exc:
        raise vol.Invalid(f"expected a list of integers, got {value!r}") from exc
    if any(n < 0 for n in numbers):
        raise vol.Invalid("minutes must be non-negative")
    return tuple(numbers)


def _kind(value: Any) -> WorkloadKind:
    try:
        return WorkloadKind.from_label(str(value))
    except BadSpec as exc:
        raise vol.Invalid(str(exc)) from exc


SCENARIO_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_PRESET): vol.In(PRESETS_ALL + tuple(PRESET_ALIASES)),
        vol.Optional(CONF_MODE, default=MODE_AUTO): vol.In(MODES),
        vol.Optional(CONF_HORIZON, default=DEFAULT_HORIZON): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
    }
)

CLUSTER_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_NODES, default=DEFAULT_NODES): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_SIGNAL_LEAD, default=DEFAULT_SIGNAL_LEAD): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional(CONF_REQUEUE_DELAY, default=DEFAULT_REQUEUE_DELAY): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional(CONF_TICK_SECONDS, default=DEFAULT_TICK_SECONDS): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
    }
)

JOB_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_KIND): _kind,
        vol.Required(CONF_TOTAL_STEPS): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_SEED, default=0): vol.All(vol.Coerce(int), vol.Range(min=0, max=(1 << 64) - 1)),
        vol.Optional(CONF_STEP_COST, default=DEFAULT_STEP_COST): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional(CONF_NODES, default=1): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Required(CONF_REQUESTED_WALLTIME): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_WINDOW): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_BASE_MB, default=DEFAULT_BASE_MB): vol.All(
            vol.Coerce(float), vol.Range(min=0, min_included=False)
        ),
        vol.Optional(CONF_DECAY_MB_PER_MIN, default=DEFAULT_DECAY_MB_PER_MIN): vol.All(
            vol.Coerce(float), vol.Range(min=0)
        ),
        vol.Optional(CONF_CKPT_SPIKE_FRACTION, default=DEFAULT_CKPT_SPIKE_FRACTION): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
        ),
    }
)

SUPERVISOR_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_CHECKPOINT_INTERVAL, default=DEFAULT_CHECKPOINT_INTERVAL): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional(CONF_CHECKPOINT_COST, default=DEFAULT_CHECKPOINT_COST): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional(CONF_EXTEND_LIMIT, default=False): vol.Boolean(),
        vol.Optional(CONF_MANUAL_CHECKPOINTS, default=()): _int_list,
    }
)

TELEMETRY_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SAMPLE_PERIOD, default=DEFAULT_SAMPLE_PERIOD): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional(CONF_CKPT_CPU, default=DEFAULT_CKPT_CPU): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=100)
        ),
        vol.Optional(CONF_SPIKE_FACTOR, default=DEFAULT_SPIKE_FACTOR): vol.All(
            vol.Coerce(float), vol.Range(min=1, min_included=False)
        ),
        vol.Optional(CONF_MEDIAN_WINDOW, default=DEFAULT_MEDIAN_WINDOW): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
    }
)

STORE_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_REDUNDANCY, default=DEFAULT_REDUNDANCY): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional(CONF_KEEP, default=DEFAULT_KEEP): vol.All(vol.Coerce(int), vol.Range(min=1)),
    }
)

FAULTS_SCHEMA = vol.Schema({vol.Optional(CONF_FAIL_CHECKPOINTS_AT, default=()): _int_list})

SECTION_SCHEMAS = {
    SECTION_SCENARIO: SCENARIO_SCHEMA,
    SECTION_CLUSTER: CLUSTER_SCHEMA,
    SECTION_SUPERVISOR: SUPERVISOR_SCHEMA,
    SECTION_TELEMETRY: TELEMETRY_SCHEMA,
    SECTION_STORE: STORE_SCHEMA,
    SECTION_FAULTS: FAULTS_SCHEMA,
}


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

_PRESET_JOB = {
    CONF_KIND: "prng-digest",
    CONF_TOTAL_STEPS: "37",
    CONF_SEED: "4",
    CONF_STEP_COST: "1",
    CONF_NODES: "1",
    CONF_REQUESTED_WALLTIME: "120",
    CONF_WINDOW: "120",
    CONF_BASE_MB: "1000",
    CONF_DECAY_MB_PER_MIN: "0.02",
    CONF_CKPT_SPIKE_FRACTION: "0.008",
}

_PRESET_COMMON = {
    SECTION_CLUSTER: {CONF_NODES: "1", CONF_SIGNAL_LEAD: "5", CONF_REQUEUE_DELAY: "0"},
    SECTION_SUPERVISOR: {CONF_CHECKPOINT_INTERVAL: "10", CONF_CHECKPOINT_COST: "1"},
    f"{JOB_SECTION_PREFIX}1": _PRESET_JOB,
}


def _preset(mode: str, **overrides: dict[str, str]) -> dict[str, dict[str, str]]:
    sections = {name: dict(values) for name, values in _PRESET_COMMON.items()}
    sections[SECTION_SCENARIO] = {CONF_MODE: mode, CONF_HORIZON: "200"}
    for name, values in overrides.items():
        sections.setdefault(name.replace("_", "."), {}).update(values)
    return sections


PRESETS: dict[str, dict[str, dict[str, str]]] = {
    # uninterrupted run without checkpointing
    PRESET_FIG4_TOP: _preset(MODE_NO_CR),
    # interval checkpoints, never preempted
    PRESET_FIG4_MIDDLE: _preset(MODE_CHECKPOINT_ONLY),
    # preempted at minute 28, requeued at 29, restarted at 45
    PRESET_FIG4_BOTTOM: _preset(
        MODE_AUTO,
        cluster={CONF_REQUEUE_DELAY: "16"},
        job_1={CONF_WINDOW: "33"},
    ),
}


def preset_name(name: str) -> str | None:
    """Return the preset a name or alias refers to, if any."""
    name = PRESET_ALIASES.get(name, name)
    return name if name in PRESETS else None


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterConfig:
    """Simulated cluster parameters."""

    nodes: int = DEFAULT_NODES
    signal_lead: int = DEFAULT_SIGNAL_LEAD
    requeue_delay: int = DEFAULT_REQUEUE_DELAY
    tick_seconds: int = DEFAULT_TICK_SECONDS


@dataclass(frozen=True)
class JobEntry:
    """A job of a scenario with its scheduler request."""

    spec: JobSpec
    nodes: int
    requested_walltime: int
    window: int


@dataclass(frozen=True)
class Scenario:
    """A complete, validated scenario."""

    name: str
    mode: str
    horizon: int
    cluster: ClusterConfig
    jobs: tuple[JobEntry, ...]
    checkpoint_interval: int = DEFAULT_CHECKPOINT_INTERVAL
    checkpoint_cost: int = DEFAULT_CHECKPOINT_COST
    extend_limit_on_requeue: bool = False
    manual_checkpoints: tuple[int, ...] = ()
    telemetry: TelemetryConfig = TelemetryConfig()
    redundancy: int = DEFAULT_REDUNDANCY
    keep: int = DEFAULT_KEEP
    fail_checkpoints_at: frozenset[int] = frozenset()

    def job(self, job_id: int) -> JobEntry:
        """Return the entry of one job."""
        for entry in self.jobs:
            if entry.spec.job_id == job_id:
                return entry
        raise KeyError(job_id)

    def supervisor_config(self, entry: JobEntry, workdir: str | os.PathLike[str]) -> SupervisorConfig:
        """Build the supervisor settings of one job."""
        return SupervisorConfig(
            job_id=entry.spec.job_id,
            requested_walltime=entry.requested_walltime,
            checkpoint_interval=self.checkpoint_interval,
            signal_lead=self.cluster.signal_lead,
            workdir=Path(workdir),
            mode=self.mode,
            checkpoint_cost=self.checkpoint_cost,
            extend_limit_on_requeue=self.extend_limit_on_requeue,
            manual_checkpoints=self.manual_checkpoints,
            fail_checkpoints_at=self.fail_checkpoints_at,
            tick_seconds=self.cluster.tick_seconds,
        )

    def baseline(self, job_id: int) -> Scenario:
        """Return the uninterrupted, checkpoint-free run of one job."""
        entry = self.job(job_id)
        walltime = max(entry.spec.total_ticks, self.checkpoint_interval + 1)
        return replace(
            self,
            name=f"{self.name}-baseline-{job_id}",
            mode=MODE_NO_CR,
            horizon=max(self.horizon, walltime + 1),
            cluster=replace(self.cluster, nodes=max(self.cluster.nodes, entry.nodes), requeue_delay=0),
            jobs=(replace(entry, requested_walltime=walltime, window=walltime),),
            manual_checkpoints=(),
            fail_checkpoints_at=frozenset(),
        )


def _validate(section: str, schema: vol.Schema, values: dict[str, Any]) -> dict[str, Any]:
    try:
        return schema(values)
    except vol.Invalid as exc:
        raise ScenarioError(f"[{section}] {exc}") from exc


def build_scenario(sections: dict[str, dict[str, Any]], name: str = "scenario") -> Scenario:
    """Validate raw sections (preset values already merged) into a Scenario."""
    unknown = [
        s for s in sections if s not in SECTION_SCHEMAS and not s.startswith(JOB_SECTION_PREFIX)
    ]
    if unknown:
        raise ScenarioError(f"unknown sections: {', '.join(sorted(unknown))}")

    data = {
        section: _validate(section, schema, sections.get(section, {}))
        for section, schema in SECTION_SCHEMAS.items()
    }
    scenario_data = data[SECTION_SCENARIO]
    cluster_data = data[SECTION_CLUSTER]
    supervisor_data = data[SECTION_SUPERVISOR]

    jobs = []
    for section in sorted(s for s in sections if s.startswith(JOB_SECTION_PREFIX)):
        raw_id = section[len(JOB_SECTION_PREFIX):]
        if not raw_id.isdigit():
            raise ScenarioError(f"job section {section!r} needs a numeric id")
        values = _validate(section, JOB_SCHEMA, sections[section])
        try:
            spec = JobSpec(
                job_id=int(raw_id),
                workload_kind=values[CONF_KIND],
                total_steps=values[CONF_TOTAL_STEPS],
                seed=values[CONF_SEED],
                step_cost=values[CONF_STEP_COST],
                mem_model=MemModel(
                    values[CONF_BASE_MB],
                    values[CONF_DECAY_MB_PER_MIN],
                    values[CONF_CKPT_SPIKE_FRACTION],
                ),
            )
        except BadSpec as exc:
            raise ScenarioError(f"[{section}] {exc}") from exc
        requested = values[CONF_REQUESTED_WALLTIME]
        interval = supervisor_data[CONF_CHECKPOINT_INTERVAL]
        if not interval < requested:
            raise ScenarioError(
                f"[{section}] checkpoint_interval {interval} must be below requested_walltime {requested}"
            )
        jobs.append(
            JobEntry(
                spec=spec,
                nodes=values[CONF_NODES],
                requested_walltime=requested,
                window=values.get(CONF_WINDOW, requested),
            )
        )
    if not jobs:
        raise ScenarioError("scenario defines no [job.<id>] section")

    telemetry_data = data[SECTION_TELEMETRY]
    scenario = Scenario(
        name=scenario_data.get(CONF_PRESET, name),
        mode=scenario_data[CONF_MODE],
        horizon=scenario_data[CONF_HORIZON],
        cluster=ClusterConfig(
            nodes=cluster_data[CONF_NODES],
            signal_lead=cluster_data[CONF_SIGNAL_LEAD],
            requeue_delay=cluster_data[CONF_REQUEUE_DELAY],
            tick_seconds=cluster_data[CONF_TICK_SECONDS],
        ),
        jobs=tuple(jobs),
        checkpoint_interval=supervisor_data[CONF_CHECKPOINT_INTERVAL],
        checkpoint_cost=supervisor_data[CONF_CHECKPOINT_COST],
        extend_limit_on_requeue=supervisor_data[CONF_EXTEND_LIMIT],
        manual_checkpoints=supervisor_data[CONF_MANUAL_CHECKPOINTS],
        telemetry=TelemetryConfig(
            sample_period=telemetry_data[CONF_SAMPLE_PERIOD],
            ckpt_cpu=telemetry_data[CONF_CKPT_CPU],
            spike_factor=telemetry_data[CONF_SPIKE_FACTOR],
            median_window=telemetry_data[CONF_MEDIAN_WINDOW],
        ),
        redundancy=data[SECTION_STORE][CONF_REDUNDANCY],
        keep=data[SECTION_STORE][CONF_KEEP],
        fail_checkpoints_at=frozenset(data[SECTION_FAULTS][CONF_FAIL_CHECKPOINTS_AT]),
    )
    # surfaces cross-field errors before any run starts
    for entry in scenario.jobs:
        try:
            scenario.supervisor_config(entry, Path("."))
        except SupervisorError as exc:
            raise ScenarioError(str(exc)) from exc
    return scenario


def _merge(base: dict[str, dict[str, str]], extra: dict[str, dict[str, str]]) -> dict[str, dict[str, str]]:
    merged = {name: dict(values) for name, values in base.items()}
    for name, values in extra.items():
        merged.setdefault(name, {}).update(values)
    return merged


def parse_scenario_text(text: str, name: str = "scenario") -> Scenario:
    """Parse the flat ``[section]`` / ``key = value`` scenario format."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"cannot parse scenario: {exc}") from exc
    sections = {section: dict(parser.items(section)) for section in parser.sections()}
    preset = sections.get(SECTION_SCENARIO, {}).get(CONF_PRESET)
    if preset is not None:
        resolved = preset_name(preset)
        if resolved is None:
            raise ScenarioError(f"unknown preset {preset!r}")
        sections = _merge(PRESETS[resolved], sections)
        sections[SECTION_SCENARIO][CONF_PRESET] = resolved
        name = resolved
    return build_scenario(sections, name)


def load_scenario(source: str | os.PathLike[str]) -> Scenario:
    """Load a scenario file, or a preset given by name."""
    text_source = str(source)
    resolved = preset_name(text_source)
    if resolved is not None and not Path(text_source).exists():
        _LOGGER.debug("Using preset %s", resolved)
        return build_scenario(PRESETS[resolved], resolved)
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario_text(text, path.stem)
