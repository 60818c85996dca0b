# src/errors.py
"""
Exception hierarchy for the forecasting engine.

Everything raised on purpose derives from GSwanError so the CLI can map
failures to stable exit codes (2 = usage/config, 3 = numeric failure).
"""

from __future__ import annotations

from typing import Any, Optional


class GSwanError(Exception):
    """Base class for all errors raised by this package."""


# ---------- numerical core ----------

class DimensionError(GSwanError):
    """Operand shapes do not fit the operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = "") -> None:
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.shapes = shapes


class ReceptiveFieldError(GSwanError):
    """Input sequence shorter than the convolution's receptive field."""

    def __init__(self, length: int, required: int) -> None:
        super().__init__(f"sequence length {length} is shorter than the required minimum {required}")
        self.length = length
        self.required = required


class ParameterError(GSwanError):
    """An operation parameter is out of its valid range."""


class ContractError(GSwanError):
    """A caller broke an API contract (e.g. backward on a non-scalar)."""


class GradientCheckError(GSwanError):
    """The finite-difference oracle could not be evaluated."""

    def __init__(self, coordinate: tuple[int, ...], value: float) -> None:
        super().__init__(f"non-finite function value {value!r} at coordinate {coordinate}")
        self.coordinate = coordinate


# ---------- data ----------

class DatasetFormatError(GSwanError):
    """A dataset directory file is malformed."""

    def __init__(self, path: Any, line: Optional[int], reason: str) -> None:
        where = f"{path}" if line is None else f"{path}:{line}"
        super().__init__(f"{where}: {reason}")
        self.path = path
        self.line = line


class SplitTooSmallError(GSwanError):
    """A temporal split cannot hold a single window."""


class WindowError(GSwanError):
    """Too few timesteps to form a window."""


class FitError(GSwanError):
    """A statistic could not be fitted (e.g. all values missing)."""


class ExportError(GSwanError):
    """A requested export cannot be produced from the dataset."""


# ---------- configuration / training ----------

class ConfigError(GSwanError):
    """Invalid or inconsistent configuration."""


class TrainingDiverged(GSwanError):
    """Loss or gradients became non-finite during training."""

    def __init__(self, message: str, epoch: int, last_good: Any = None, history: Any = None) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.last_good = last_good
        self.history = history
