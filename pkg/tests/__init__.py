"""Tests for ckptstack."""
