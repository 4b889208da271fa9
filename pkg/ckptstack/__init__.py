"""Coordinated checkpoint/restart of batch jobs under scheduler preemption."""
from __future__ import annotations

__version__ = "0.3.0"
