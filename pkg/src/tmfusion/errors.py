"""Exception types and line-level ingest diagnostics shared across the package."""

from __future__ import annotations

from dataclasses import dataclass


class TmfusionError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(TmfusionError, ValueError):
    """An argument violates an operation's documented precondition."""


class NotReadyError(TmfusionError):
    """An indicator was requested inside its warmup window."""


class OrderingError(TmfusionError):
    """A timestamp or date sequence regressed where ascending order is required."""


class AssemblyError(TmfusionError):
    """A feature block demanded by the active feature set is missing or unusable."""


class JoinError(TmfusionError):
    """Tweet and market data share no usable dates."""


class SchemaError(TmfusionError):
    """An input or artifact file violates its documented format."""


class DivergedError(TmfusionError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


@dataclass(frozen=True)
class Diagnostic:
    """One rejected input line: where it was and why it was rejected."""

    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"
