"""Exception types shared across the package."""

from __future__ import annotations


class StprError(Exception):
    """Base class for all package errors."""


class ShapeError(StprError, ValueError):
    """Operands have incompatible or unexpected dimensions."""


class DegenerateVectorError(StprError, ValueError):
    """A vector that must have positive norm is zero."""


class InsufficientDataError(StprError, ValueError):
    """Too few samples for the requested statistic."""


class MaskError(StprError, ValueError):
    """A contrastive mask row or column has no positive entries."""


class GenerationError(StprError, RuntimeError):
    """Stream generation failed a separation constraint within the retry budget."""


class NumericError(StprError, ArithmeticError):
    """A quantity that must be finite is NaN or infinite."""


class DivergenceError(StprError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, task_id: int, epoch: int, detail: str = ""):
        self.task_id = task_id
        self.epoch = epoch
        msg = f"non-finite loss at task {task_id}, epoch {epoch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SerializationError(StprError, RuntimeError):
    """A persisted artifact is malformed or inconsistent with its run."""


class ConfigError(StprError, ValueError):
    """Invalid run configuration. Carries one message per offending field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
