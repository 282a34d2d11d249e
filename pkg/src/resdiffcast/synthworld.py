"""Synthetic storm world: advected Gaussian rain cells, degraded pseudo-HRRR
forecasts, a pseudo-ARI raster and region labels.

The domain is periodic, so cells that leave one edge re-enter at the other
and the world never dries out.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from datetime import datetime, timedelta, timezone

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError
from .gridio import REGIONS, GridField, GridGeometry

@dataclass(frozen=True)
class WorldConfig:
    ny: int = 256
    nx: int = 256
    dx_km: float = 1.0
    n_blobs: int = 6
    amp_range: tuple = (4.0, 16.0)        # mm/h
    radius_range: tuple = (6.0, 20.0)     # km
    velocity: tuple = (9.0, 12.0)         # km/h along (rows, cols), 15 km/h
    rain_cut: float = 0.25                # mm/h subtracted so cells have edges
    lag_hours: float = 1.0
    bias: float = 0.7
    smooth_km: float = 3.0
    smooth_growth: float = 0.1            # relative smoothing increase per lead hour
    seed: int = 0
    base_time: str = "2024-05-01T00:00Z"

    def __post_init__(self):
        if self.ny < 1 or self.nx < 1 or self.dx_km <= 0:
            raise ConfigError("invalid world geometry")
        if self.n_blobs < 0:
            raise ConfigError("n_blobs must be >= 0")
        for lo, hi in (self.amp_range, self.radius_range):
            if not 0 < lo <= hi:
                raise ConfigError("amplitude and radius ranges must be positive")
        if self.lag_hours < 0 or self.smooth_km < 0 or self.bias < 0 or self.rain_cut < 0:
            raise ConfigError("degradation parameters must be non-negative")

    @property
    def geom(self) -> GridGeometry:
        return GridGeometry(self.ny, self.nx, dy_km=self.dx_km, dx_km=self.dx_km)

    @property
    def t0(self) -> datetime:
        return datetime.strptime(self.base_time, "%Y-%m-%dT%H:%MZ").replace(tzinfo=timezone.utc)

    def time(self, t: float) -> datetime:
        return self.t0 + timedelta(hours=float(t))

    def to_dict(self) -> dict:
        return asdict(self)


def _blobs(cfg: WorldConfig):
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_blobs
    ly, lx = cfg.ny * cfg.dx_km, cfg.nx * cfg.dx_km
    cy = rng.uniform(0, ly, n)
    cx = rng.uniform(0, lx, n)
    amp = rng.uniform(*cfg.amp_range, n)
    rad = rng.uniform(*cfg.radius_range, n)
    return cy, cx, amp, rad


def _periodic(d, length):
    return (d + length / 2) % length - length / 2


def truth_values(cfg: WorldConfig, t: float) -> np.ndarray:
    """Rain rate (mm/h) at hour ``t``; ``t`` may be fractional."""
    cy, cx, amp, rad = _blobs(cfg)
    ly, lx = cfg.ny * cfg.dx_km, cfg.nx * cfg.dx_km
    y = np.arange(cfg.ny) * cfg.dx_km
    x = np.arange(cfg.nx) * cfg.dx_km
    vy, vx = cfg.velocity
    field = np.zeros((cfg.ny, cfg.nx))
    for k in range(cfg.n_blobs):
        dy = _periodic(y - (cy[k] + vy * t), ly)
        dx = _periodic(x - (cx[k] + vx * t), lx)
        field += amp[k] * np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2 * rad[k] ** 2))
    return np.maximum(field - cfg.rain_cut, 0.0)


def gen_truth(cfg: WorldConfig, t: int) -> GridField:
    return GridField(cfg.geom, truth_values(cfg, t), "mrms_qpe", "mm/h", cfg.time(t))


def gen_pseudo_hrrr(cfg: WorldConfig, t: int, lead: int) -> GridField:
    """Pseudo forecast initialized at hour ``t`` and valid at ``t + lead``.

    The truth is advanced by ``lag_hours`` (the forecast runs early), scaled
    by ``bias`` and Gaussian-smoothed with a radius that grows with lead.
    """
    values = truth_values(cfg, t + lead + cfg.lag_hours) * cfg.bias
    radius = cfg.smooth_km * (1.0 + cfg.smooth_growth * max(lead - 1, 0))
    if radius > 0:
        values = gaussian_filter(values, radius / cfg.dx_km, mode="wrap")
    return GridField(cfg.geom, np.maximum(values, 0.0), f"hrrr_f{lead:02d}", "mm/h",
                     cfg.time(t + lead))


def gen_ari(cfg: WorldConfig, base: float = 12.0, spread: float = 4.0) -> GridField:
    """Smooth pseudo 10-year/1-hour ARI raster (mm/h)."""
    rng = np.random.default_rng(cfg.seed + 7919)
    noise = gaussian_filter(rng.standard_normal((cfg.ny, cfg.nx)), 16, mode="wrap")
    noise /= noise.std() or 1.0
    return GridField(cfg.geom, np.maximum(base + spread * noise, 1.0), "ari_10yr_1h",
                     "mm/h", None)


def gen_region_codes(cfg: WorldConfig) -> tuple[np.ndarray, tuple[str, ...]]:
    """Eight rectangular regions laid out 2 x 4 (north row first)."""
    rows = (np.arange(cfg.ny) * 2) // cfg.ny
    cols = (np.arange(cfg.nx) * 4) // cfg.nx
    codes = rows[:, None] * 4 + cols[None, :]
    return codes.astype(np.int64), REGIONS
