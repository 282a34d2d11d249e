"""Lead-time-offset ensemble bounds and their evaluation.

Three members reuse one predicted residual on forecasts one hour early, on
time and one hour late. Coverage counts a truth pixel as covered when some
pixel within the tolerance radius brackets its value.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .gridio import GridField, GridGeometry, require_same_geometry
from .residual import reconstruct

DEFAULT_PERCENTILES = (50, 75, 90, 95)


@dataclass(frozen=True)
class UqBounds:
    lower: GridField
    middle: GridField
    upper: GridField

    def __post_init__(self):
        require_same_geometry(self.lower, self.middle, self.upper)
        lo, mid, hi = self.lower.values, self.middle.values, self.upper.values
        ok = np.isfinite(lo) & np.isfinite(mid) & np.isfinite(hi)
        if np.any(lo[ok] > mid[ok]) or np.any(mid[ok] > hi[ok]) or np.any(lo[ok] < 0):
            raise DataError("bounds must satisfy 0 <= lower <= middle <= upper")

    @property
    def geom(self) -> GridGeometry:
        return self.middle.geom


def _check_consecutive(a: GridField, b: GridField) -> None:
    if a.valid_time is not None and b.valid_time is not None:
        if b.valid_time - a.valid_time != timedelta(hours=1):
            raise DataError(f"leads not consecutive: {a.variable} valid {a.valid_time}, "
                            f"{b.variable} valid {b.valid_time}")


def make_scenarios(hrrr_prev: GridField | None, hrrr_on: GridField,
                   hrrr_next: GridField, residual: GridField) -> UqBounds:
    """Bounds from early (f(L-1)), on-time (fL) and delayed (f(L+1)) members.

    With no f(L-1) (lead 1 and no analysis field) the early member falls back
    to the on-time one.
    """
    if hrrr_prev is None:
        hrrr_prev = hrrr_on
    else:
        _check_consecutive(hrrr_prev, hrrr_on)
    _check_consecutive(hrrr_on, hrrr_next)
    require_same_geometry(hrrr_prev, hrrr_on, hrrr_next, residual)
    members = [reconstruct(f, residual).values for f in (hrrr_prev, hrrr_on, hrrr_next)]
    stack = np.stack(members)
    mid = reconstruct(hrrr_on, residual)
    return UqBounds(mid.derive(np.min(stack, axis=0), variable="uq_lower"), mid,
                    mid.derive(np.max(stack, axis=0), variable="uq_upper"))


@dataclass(frozen=True)
class IntensityBins:
    """Half-open intensity bins ``(lo, hi]``; the last bin is open-ended."""

    edges: tuple[float, ...]       # lo of the first bin ... hi of the last
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.labels) + 1:
            raise ConfigError("need one more edge than labels")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ConfigError("bin edges must increase strictly")

    def index(self, v: np.ndarray) -> np.ndarray:
        """Bin index per value (-1 outside every bin)."""
        e = np.asarray(self.edges)
        idx = np.searchsorted(e, v, side="left") - 1
        return np.where((v > e[0]) & (v <= e[-1]), idx, -1)


def percentile_bins(truth_values: np.ndarray,
                    percentiles: Sequence[float] = DEFAULT_PERCENTILES) -> IntensityBins:
    """Bins cut at percentiles of the non-zero truth climatology."""
    v = np.asarray(truth_values, dtype=np.float64)
    v = v[np.isfinite(v) & (v > 0)]
    if v.size == 0:
        raise DataError("no rainy pixels to derive bins from")
    cuts = np.percentile(v, percentiles)
    edges, names = [0.0], ["0"]
    for p, c in zip(percentiles, cuts):
        if c > edges[-1]:
            edges.append(float(c))
            names.append(f"p{p:g}")
    edges.append(np.inf)
    labels = [f"{a}-{b}" for a, b in zip(names, names[1:])] + [f">{names[-1]}"]
    return IntensityBins(tuple(edges), tuple(labels))


def fixed_bins(edges: Sequence[float]) -> IntensityBins:
    """Bins from explicit edges in mm/h; append ``inf`` for an open last bin."""
    edges = tuple(float(e) for e in edges)
    labels = tuple(f"{a:g}-{b:g}" if np.isfinite(b) else f">{a:g}"
                   for a, b in zip(edges, edges[1:]))
    return IntensityBins(edges, labels)


def disc_offsets(geom: GridGeometry, tolerance_km: float) -> list[tuple[int, int]]:
    """Pixel offsets whose centre distance is within the tolerance."""
    if tolerance_km < 0:
        raise ConfigError("tolerance_km must be >= 0")
    ry = int(np.floor(tolerance_km / geom.dy_km + 1e-9))
    rx = int(np.floor(tolerance_km / geom.dx_km + 1e-9))
    out = []
    for dy in range(-ry, ry + 1):
        for dx in range(-rx, rx + 1):
            if np.hypot(dy * geom.dy_km, dx * geom.dx_km) <= tolerance_km + 1e-9:
                out.append((dy, dx))
    return out


def _shift(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``out[i, j] = a[i + dy, j + dx]``, NaN where that falls outside."""
    h, w = a.shape
    out = np.full_like(a, np.nan)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    out[max(-dy, 0):h - max(dy, 0), max(-dx, 0):w - max(dx, 0)] = \
        a[max(dy, 0):h - max(-dy, 0), max(dx, 0):w - max(-dx, 0)]
    return out


def covered_mask(bounds: UqBounds, truth: GridField, tolerance_km: float) -> np.ndarray:
    """True where some pixel within the tolerance brackets the truth value."""
    require_same_geometry(bounds.middle, truth)
    t = truth.values
    lo, hi = bounds.lower.values, bounds.upper.values
    cov = np.zeros(t.shape, dtype=bool)
    with np.errstate(invalid="ignore"):
        for dy, dx in disc_offsets(truth.geom, tolerance_km):
            cov |= (_shift(lo, dy, dx) <= t) & (t <= _shift(hi, dy, dx))
    return cov


def _rainy(bounds: UqBounds, truth: GridField) -> np.ndarray:
    t = truth.values
    return np.isfinite(t) & (np.where(np.isfinite(t), t, 0) > 0)


def interval_error(bounds: UqBounds, truth: GridField, bins: IntensityBins,
                   mode: str = "middle") -> dict[str, float]:
    """Mean error per occupied bin over rainy truth pixels.

    ``mode="middle"`` uses ``|middle - truth|``; ``"nearest_bound"`` uses the
    distance to the nearer bound for pixels outside the interval and 0 inside.
    """
    require_same_geometry(bounds.middle, truth)
    t = truth.values
    if mode == "middle":
        err = np.abs(bounds.middle.values - t)
    elif mode == "nearest_bound":
        err = np.maximum(bounds.lower.values - t, 0) + np.maximum(t - bounds.upper.values, 0)
    else:
        raise ConfigError(f"unknown interval error mode {mode!r}")
    m = _rainy(bounds, truth) & np.isfinite(err)
    idx = bins.index(np.where(m, t, 0))
    out = {}
    for i, label in enumerate(bins.labels):
        sel = m & (idx == i)
        if sel.any():
            out[label] = float(err[sel].mean())
    return out


@dataclass(frozen=True)
class BinCoverage:
    label: str
    lo: float
    hi: float
    coverage: float
    interval_error: float
    n_pixels: int
    nearest_bound_error: float | None = None


@dataclass(frozen=True)
class CoverageReport:
    tolerance_km: float
    bins: tuple[BinCoverage, ...]

    def by_label(self) -> dict[str, BinCoverage]:
        return {b.label: b for b in self.bins}


def coverage_rate(bounds: UqBounds, truth: GridField, tolerance_km: float,
                  bins: IntensityBins, nearest_bound: bool = False) -> CoverageReport:
    """Per-bin coverage and interval error over rainy truth pixels. Empty bins
    are left out of the report."""
    cov = covered_mask(bounds, truth, tolerance_km)
    m = _rainy(bounds, truth)
    idx = bins.index(np.where(m, truth.values, 0))
    err = interval_error(bounds, truth, bins)
    near = interval_error(bounds, truth, bins, "nearest_bound") if nearest_bound else {}
    rows = []
    for i, label in enumerate(bins.labels):
        sel = m & (idx == i)
        n = int(sel.sum())
        if n:
            rows.append(BinCoverage(label, bins.edges[i], bins.edges[i + 1],
                                    float(cov[sel].mean()), err[label], n,
                                    near.get(label)))
    return CoverageReport(float(tolerance_km), tuple(rows))


def write_coverage_csv(path: str | Path, report: CoverageReport) -> None:
    extra = any(b.nearest_bound_error is not None for b in report.bins)
    head = ["bin_label", "bin_lo_mm", "bin_hi_mm", "coverage", "avg_interval_error_mm",
            "n_pixels"] + (["avg_nearest_bound_error_mm"] if extra else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for b in report.bins:
            row = [b.label, f"{b.lo:.6f}", f"{b.hi:.6f}", f"{b.coverage:.6f}",
                   f"{b.interval_error:.6f}", b.n_pixels]
            if extra:
                row.append(f"{b.nearest_bound_error:.6f}")
            w.writerow(row)
