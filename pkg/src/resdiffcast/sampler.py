"""Training-tile sampling: rainfall/ARI validity, spacing, regional balance
and evaluation hours."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, GeometryError
from .gridio import REGIONS, GridField, GridGeometry, TileSpec

REASON_COVERAGE = "coverage"
REASON_ARI = "ari"
REASON_DRY = "dry"


@dataclass(frozen=True)
class SamplingCriteria:
    min_coverage_fraction: float = 0.25
    ari_map: GridField | None = None
    min_spacing_km: float = 30.0
    max_candidates_per_timestep: int = 50
    max_retained_per_timestep: int = 20
    tile_size_km: float = 512.0

    def __post_init__(self):
        if not 0 < self.min_coverage_fraction <= 1:
            raise ConfigError("min_coverage_fraction must lie in (0, 1]")
        if self.min_spacing_km <= 0:
            raise ConfigError("min_spacing_km must be positive")
        if self.max_retained_per_timestep > self.max_candidates_per_timestep:
            raise ConfigError("cannot retain more tiles than candidates evaluated")
        if self.max_retained_per_timestep < 1 or self.tile_size_km <= 0:
            raise ConfigError("tile count and size must be positive")

    def tile_pixels(self, geom: GridGeometry) -> int:
        """Tile edge in pixels (the coarser of the two axes decides)."""
        return max(1, int(round(self.tile_size_km / max(geom.dx_km, geom.dy_km))))


@dataclass(frozen=True)
class RegionMap:
    """Integer region code per pixel; ``names[code]`` gives the label and a
    negative code marks an unlabeled pixel."""

    codes: np.ndarray
    names: tuple[str, ...] = REGIONS

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2 or not np.issubdtype(codes.dtype, np.integer):
            raise ConfigError("region codes must be a 2-D integer array")
        if codes.max(initial=-1) >= len(self.names):
            raise ConfigError("region code without a name")

    def region_at(self, row: int, col: int) -> str:
        code = int(self.codes[row, col])
        if code < 0:
            raise DataError(f"pixel ({row}, {col}) has no region label")
        return self.names[code]

    def region_of(self, tile: TileSpec) -> str:
        r, c = tile.center
        return self.region_at(int(r), int(c))


def tile_valid(field: GridField, tile: TileSpec,
               criteria: SamplingCriteria) -> tuple[bool, str]:
    """Coverage rule first, then ARI exceedance; reason is ``coverage``,
    ``ari`` or ``dry``."""
    if not tile.inside(field.geom):
        raise GeometryError(f"tile {tile} outside field {field.geom.shape}")
    sl = (slice(tile.row0, tile.row0 + tile.size), slice(tile.col0, tile.col0 + tile.size))
    v = field.values[sl]
    ok = np.isfinite(v)
    n = int(ok.sum())
    if n and (v[ok] > 0).sum() / n >= criteria.min_coverage_fraction:
        return True, REASON_COVERAGE
    ari = criteria.ari_map
    if ari is not None:
        if not tile.inside(ari.geom):
            raise GeometryError(f"tile {tile} outside ARI map {ari.geom.shape}")
        a = ari.values[sl]
        hit = ok & np.isfinite(a)
        if np.any(v[hit] > a[hit]):
            return True, REASON_ARI
    return False, REASON_DRY


def timestep_rng(seed: int, timestep: int) -> np.random.Generator:
    """Independent stream per timestep, so sampling order never matters."""
    return np.random.default_rng([seed, timestep])


def _center_km(tile: TileSpec, geom: GridGeometry) -> tuple[float, float]:
    r, c = tile.center
    return r * geom.dy_km, c * geom.dx_km


def sample_timestep(field: GridField, criteria: SamplingCriteria,
                    rng: np.random.Generator) -> list[TileSpec]:
    """Draw uniform in-bounds candidates and keep valid, well-spaced ones."""
    geom = field.geom
    size = criteria.tile_pixels(geom)
    if size > geom.ny or size > geom.nx:
        raise GeometryError(f"{size}-pixel tile does not fit in {geom.shape}")
    month = field.valid_time.strftime("%Y-%m") if field.valid_time else ""
    kept: list[TileSpec] = []
    centers: list[tuple[float, float]] = []
    for _ in range(criteria.max_candidates_per_timestep):
        r0 = int(rng.integers(0, geom.ny - size + 1))
        c0 = int(rng.integers(0, geom.nx - size + 1))
        tile = TileSpec(r0, c0, size, month=month)
        cy, cx = _center_km(tile, geom)
        if any(np.hypot(cy - y, cx - x) < criteria.min_spacing_km for y, x in centers):
            continue
        ok, reason = tile_valid(field, tile, criteria)
        if ok:
            kept.append(replace(tile, reason=reason))
            centers.append((cy, cx))
            if len(kept) >= criteria.max_retained_per_timestep:
                break
    return kept


def min_spacing_km(tiles: Sequence[TileSpec], geom: GridGeometry) -> float:
    """Smallest pairwise center distance (inf for fewer than two tiles)."""
    pts = np.array([_center_km(t, geom) for t in tiles]).reshape(-1, 2)
    if len(pts) < 2:
        return float("inf")
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    return float(d[np.triu_indices(len(pts), 1)].min())


def balance_indices(pool: Sequence[TileSpec], regions: RegionMap, cap: int = 120,
                    rng: np.random.Generator | None = None) -> list[int]:
    """Pool positions kept by :func:`regional_balance`, ascending."""
    if cap < 1:
        raise ConfigError("cap must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    groups: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, t in enumerate(pool):
        groups[(regions.region_of(t), t.month)].append(i)
    keep: list[int] = []
    for key in sorted(groups):
        idx = groups[key]
        if len(idx) <= cap:
            keep.extend(idx)
        else:
            keep.extend(idx[j] for j in rng.choice(len(idx), cap, replace=False))
    return sorted(keep)


def regional_balance(pool: Iterable[TileSpec], regions: RegionMap, cap: int = 120,
                     rng: np.random.Generator | None = None) -> list[TileSpec]:
    """Keep at most ``cap`` tiles per (region, month), chosen uniformly.

    Tiles come back labeled with their center pixel's region, in pool order.
    """
    pool = list(pool)
    return [replace(pool[i], region=regions.region_of(pool[i]))
            for i in balance_indices(pool, regions, cap, rng)]


def eval_hours(year: int, month: int) -> tuple[int, int]:
    """Two UTC evaluation hours 12 h apart that rotate month to month."""
    if not 1 <= month <= 12:
        raise ConfigError(f"month must be 1..12, got {month}")
    h1 = (year % 12 + month) % 12
    return h1, h1 + 12


MANIFEST_FIELDS = ("timestep", "row0", "col0", "size", "region", "reason", "seed")


def write_tile_manifest(path: str | Path,
                        rows: Iterable[tuple[int, TileSpec]], seed: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for ts, t in rows:
            w.writerow((ts, t.row0, t.col0, t.size, t.region, t.reason, seed))


def read_tile_manifest(path: str | Path) -> list[tuple[int, TileSpec]]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append((int(rec["timestep"]),
                        TileSpec(int(rec["row0"]), int(rec["col0"]), int(rec["size"]),
                                 rec["region"], "", rec["reason"])))
    return out
