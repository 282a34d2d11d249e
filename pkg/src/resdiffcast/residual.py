"""Residual learning targets and rainfall reconstruction."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import timedelta

import numpy as np

from .errors import DataError, GeometryError
from .gridio import GridField, require_same_geometry


class ResidualKind(enum.Enum):
    OBSERVATION_DELTA = "delta"
    FORECAST_ERROR = "error"


@dataclass(frozen=True)
class ResidualSpec:
    kind: ResidualKind
    lead_hours: int = 1

    def __post_init__(self):
        if self.kind is ResidualKind.FORECAST_ERROR and not 1 <= self.lead_hours <= 12:
            raise DataError(f"lead_hours must be in [1, 12], got {self.lead_hours}")


def make_delta_target(mrms_next: GridField, mrms_now: GridField) -> GridField:
    """Observation change ``MRMS(t+1) - MRMS(t)`` for the data-driven model."""
    require_same_geometry(mrms_next, mrms_now)
    if (mrms_next.valid_time is not None and mrms_now.valid_time is not None
            and mrms_next.valid_time - mrms_now.valid_time != timedelta(hours=1)):
        raise DataError(
            f"delta target needs consecutive hours, got {mrms_now.valid_time} "
            f"-> {mrms_next.valid_time}")
    return mrms_next.derive(mrms_next.values - mrms_now.values,
                            variable="residual_delta", units="mm/h")


def make_error_target(mrms_valid: GridField, hrrr_fl: GridField) -> GridField:
    """Forecast error ``MRMS(t+L) - HRRR fL(t)``; both fields valid at t+L."""
    require_same_geometry(mrms_valid, hrrr_fl)
    if (mrms_valid.valid_time is not None and hrrr_fl.valid_time is not None
            and mrms_valid.valid_time != hrrr_fl.valid_time):
        raise DataError(
            f"valid time mismatch: MRMS {mrms_valid.valid_time} vs HRRR {hrrr_fl.valid_time}")
    return mrms_valid.derive(mrms_valid.values - hrrr_fl.values,
                             variable="residual_error", units="mm/h")


def reconstruct_unclamped(base: GridField, residual: GridField) -> GridField:
    """``base + residual`` before the non-negativity clamp (diagnostics only)."""
    require_same_geometry(base, residual)
    if base.is_residual or not residual.is_residual:
        raise GeometryError("reconstruct expects a rainfall base and a residual field")
    return residual.derive(base.values + residual.values, variable="residual_raw_rain")


def reconstruct(base: GridField, residual: GridField,
                variable: str = "qpe_pred") -> GridField:
    """Rainfall prediction ``max(base + residual, 0)``."""
    raw = reconstruct_unclamped(base, residual)
    values = np.maximum(raw.values, 0.0)  # NaN propagates
    return GridField(base.geom, values, variable, "mm/h",
                     residual.valid_time or base.valid_time)
