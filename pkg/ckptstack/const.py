"""Constants for the ckptstack checkpoint-restart stack."""

DOMAIN = "ckptstack"

# Wire protocol
FRAME_MAGIC = 0xD7
FRAME_VERSION = 0x01
FRAME_HEADER_SIZE = 15
MAX_PAYLOAD_SIZE = (1 << 32) - 1

# Snapshot / image formats
SNAPSHOT_VERSION = 1
IMAGE_MAGIC = b"CKPT"
IMAGE_VERSION = 1
IMAGE_SUFFIX = ".ckpt"
STAGED_SUFFIX = ".staged"
TEMP_SUFFIX = ".tmp"

# Environment
ENV_COORD_HOST = "CKPT_COORD_HOST"
ENV_COORD_PORT = "CKPT_COORD_PORT"
ENV_WORKDIR = "CKPT_WORKDIR"
COMMAND_FILE_PREFIX = "ckpt_command."
IMAGES_DIRNAME = "images"
INPROC_HOST = "inproc"
DEFAULT_HOST = "127.0.0.1"

# Scenario configuration keys
CONF_PRESET = "preset"
CONF_MODE = "mode"
CONF_HORIZON = "horizon"
CONF_NODES = "nodes"
CONF_SIGNAL_LEAD = "signal_lead"
CONF_REQUEUE_DELAY = "requeue_delay"
CONF_TICK_SECONDS = "tick_seconds"
CONF_KIND = "kind"
CONF_TOTAL_STEPS = "total_steps"
CONF_SEED = "seed"
CONF_STEP_COST = "step_cost"
CONF_REQUESTED_WALLTIME = "requested_walltime"
CONF_WINDOW = "window"
CONF_BASE_MB = "base_mb"
CONF_DECAY_MB_PER_MIN = "decay_mb_per_min"
CONF_CKPT_SPIKE_FRACTION = "ckpt_spike_fraction"
CONF_CHECKPOINT_INTERVAL = "checkpoint_interval"
CONF_CHECKPOINT_COST = "checkpoint_cost"
CONF_EXTEND_LIMIT = "extend_limit_on_requeue"
CONF_MANUAL_CHECKPOINTS = "manual_checkpoints"
CONF_SAMPLE_PERIOD = "sample_period"
CONF_CKPT_CPU = "ckpt_cpu"
CONF_SPIKE_FACTOR = "spike_factor"
CONF_MEDIAN_WINDOW = "median_window"
CONF_REDUNDANCY = "redundancy"
CONF_KEEP = "keep"
CONF_FAIL_CHECKPOINTS_AT = "fail_checkpoints_at"

# Scenario modes
MODE_AUTO = "auto"
MODE_MANUAL = "manual"
MODE_CHECKPOINT_ONLY = "checkpoint-only"
MODE_NO_CR = "no-cr"
MODES = (MODE_AUTO, MODE_MANUAL, MODE_CHECKPOINT_ONLY, MODE_NO_CR)

# Presets
PRESET_FIG4_TOP = "fig4-top"
PRESET_FIG4_MIDDLE = "fig4-middle"
PRESET_FIG4_BOTTOM = "fig4-bottom"
PRESETS_ALL = (PRESET_FIG4_TOP, PRESET_FIG4_MIDDLE, PRESET_FIG4_BOTTOM)

# Descriptive aliases of the presets
PRESET_ALIASES = {
    "uninterrupted": PRESET_FIG4_TOP,
    "checkpointed": PRESET_FIG4_MIDDLE,
    "preempted": PRESET_FIG4_BOTTOM,
}

# Default values
DEFAULT_ROUND_TIMEOUT = 30.0  # seconds of wall time, daemon mode only
DEFAULT_REDUNDANCY = 2
DEFAULT_KEEP = 2
DEFAULT_TICK_SECONDS = 60  # one tick is one virtual minute
DEFAULT_SIGNAL_LEAD = 5
DEFAULT_REQUEUE_DELAY = 0
DEFAULT_NODES = 1
DEFAULT_HORIZON = 10_000
DEFAULT_CHECKPOINT_INTERVAL = 10
DEFAULT_CHECKPOINT_COST = 0
DEFAULT_STEP_COST = 1
DEFAULT_BASE_MB = 1000.0
DEFAULT_DECAY_MB_PER_MIN = 0.0
DEFAULT_CKPT_SPIKE_FRACTION = 0.008
DEFAULT_SAMPLE_PERIOD = 1
DEFAULT_CKPT_CPU = 20.0
DEFAULT_SPIKE_FACTOR = 1.004
DEFAULT_MEDIAN_WINDOW = 5
DEFAULT_STEP_SECONDS = 1.0  # daemon mode wall time per step
MIN_RUNNING_MEM_MB = 1.0

# CLI exit codes
EXIT_OK = 0
EXIT_JOB_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_CHECKPOINT_FAILURE = 3

# Error codes
ERROR_BAD_SCENARIO = "bad_scenario"
ERROR_CHECKPOINT_FAILED = "checkpoint_failed"
ERROR_CANNOT_CONNECT = "cannot_connect"
ERROR_NO_SUCH_JOB = "no_such_job"
ERROR_UNKNOWN = "unknown"
