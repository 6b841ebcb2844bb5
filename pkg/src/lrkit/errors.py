"""Shared exception hierarchy.

Every domain error raised by this package derives from LrKitError so the
CLI can map them to a single exit code without enumerating modules.
"""
from __future__ import annotations


class LrKitError(ValueError):
    """Base class for all domain errors raised by lrkit."""


class PolicyFormatError(LrKitError):
    """Malformed policy document: bad JSON, unknown type, missing or extra fields."""


class ScheduleError(LrKitError):
    """Invalid schedule evaluation or a policy that fails validation."""


class OptimizerError(LrKitError):
    """Invalid optimizer construction or update inputs."""


class TaskError(LrKitError):
    """Unknown task spec, bad task parameters, or unreadable data files."""


class TunerError(LrKitError):
    """Search or plateau-composition request that cannot be satisfied."""


class VerifyError(LrKitError):
    """Verification workflow failure, e.g. too short a run for estimates."""


class DbError(LrKitError):
    """Policy store failure: version mismatch, corrupt line, bad import."""
