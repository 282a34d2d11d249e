"""Small constructors shared by the tests."""

from __future__ import annotations

from datetime import datetime, timezone

import numpy as np

from resdiffcast.gridio import GridField, GridGeometry

T0 = datetime(2024, 5, 1, 0, tzinfo=timezone.utc)


def rain(values, geom: GridGeometry | None = None, variable="qpe", valid_time=None):
    v = np.asarray(values, dtype=np.float64)
    geom = geom or GridGeometry(*v.shape)
    return GridField(geom, v, variable, "mm/h", valid_time)


def resid(values, geom: GridGeometry | None = None, valid_time=None):
    v = np.asarray(values, dtype=np.float64)
    geom = geom or GridGeometry(*v.shape)
    return GridField(geom, v, "residual", "mm/h", valid_time)
