"""Human-readable walltime and the job comment grammar."""
from __future__ import annotations

import re

from .exceptions import DurationParseError

_DURATION_RE = re.compile(r"^(\d+)-(\d{2}):(\d{2}):(\d{2})$")
COMMENT_KEY_CONSUMED = "consumed"


def format_duration(seconds: int) -> str:
    """Format a non-negative second count as D-HH:MM:SS."""
    if seconds < 0:
        raise ValueError(f"negative duration: {seconds}")
    days, rest = divmod(int(seconds), 86400)
    hours, rest = divmod(rest, 3600)
    minutes, secs = divmod(rest, 60)
    return f"{days}-{hours:02d}:{minutes:02d}:{secs:02d}"


def parse_duration(text: str) -> int:
    """Parse canonical D-HH:MM:SS text back to seconds."""
    match = _DURATION_RE.match(text.strip()) if isinstance(text, str) else None
    if not match:
        raise DurationParseError(f"not a D-HH:MM:SS duration: {text!r}")
    days, hours, minutes, secs = (int(part) for part in match.groups())
    if hours > 23 or minutes > 59 or secs > 59:
        raise DurationParseError(f"field out of range in {text!r}")
    return ((days * 24 + hours) * 60 + minutes) * 60 + secs


def format_comment(consumed_seconds: int) -> str:
    """Render the accounting comment for a consumed walltime."""
    return f"{COMMENT_KEY_CONSUMED}={format_duration(consumed_seconds)}"


def parse_comment(text: str) -> dict[str, str]:
    """Split a comment into key=value fields; unknown keys are kept, not checked."""
    fields: dict[str, str] = {}
    for token in text.split():
        key, sep, value = token.partition("=")
        if sep:
            fields[key] = value
    return fields


def comment_consumed(text: str) -> int:
    """Return the consumed seconds recorded in a comment."""
    fields = parse_comment(text)
    if COMMENT_KEY_CONSUMED not in fields:
        raise DurationParseError(f"comment has no {COMMENT_KEY_CONSUMED} field: {text!r}")
    return parse_duration(fields[COMMENT_KEY_CONSUMED])
