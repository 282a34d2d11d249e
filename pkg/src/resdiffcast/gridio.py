"""Gridded fields: data model, GRDF file container, normalization, regridding,
tiling and overlap-averaged mosaicking.

Pixel centers live on a single locally Cartesian kilometre plane: latitude and
longitude are mapped with a fixed equirectangular projection centred on
CONUS, so every geometry in a run shares one coordinate frame. Rasters are
north-up (row index grows southward).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, GeometryError, GridFormatError

GRID_MAGIC = b"GRDF"
GRID_VERSION = 1
QUIET_NAN_BITS = 0x7FC00000

KM_PER_DEG = 111.195
REF_LAT = 38.5
REF_LON = -97.5
_COS_REF = math.cos(math.radians(REF_LAT))

TIME_FORMAT = "%Y-%m-%dT%H:00Z"

REGIONS = ("PCST", "ROCK", "SW", "NGP", "SGP", "MDWST", "NE", "SE")


def format_time(t: datetime | None) -> str | None:
    if t is None:
        return None
    return t.strftime(TIME_FORMAT)


def parse_time(s: str | None) -> datetime | None:
    if s is None:
        return None
    try:
        t = datetime.strptime(s, TIME_FORMAT)
    except ValueError as exc:
        raise GridFormatError(f"bad valid_time {s!r}: expected {TIME_FORMAT}") from exc
    return t.replace(tzinfo=timezone.utc)


@dataclass(frozen=True)
class GridGeometry:
    """Regular raster placement.

    ``lat0``/``lon0`` locate the centre of pixel (0, 0); spacings are in km.
    """

    ny: int
    nx: int
    lat0: float = REF_LAT
    lon0: float = REF_LON
    dy_km: float = 1.0
    dx_km: float = 1.0

    def __post_init__(self):
        if int(self.ny) < 1 or int(self.nx) < 1:
            raise GeometryError(f"grid must be at least 1x1, got {self.ny}x{self.nx}")
        if not (self.dy_km > 0 and self.dx_km > 0):
            raise GeometryError("pixel spacing must be positive")
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "nx", int(self.nx))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def origin_km(self) -> tuple[float, float]:
        """(y, x) of pixel (0, 0) on the shared km plane."""
        return ((self.lat0 - REF_LAT) * KM_PER_DEG,
                (self.lon0 - REF_LON) * KM_PER_DEG * _COS_REF)

    def centers_km(self) -> tuple[np.ndarray, np.ndarray]:
        """1-D arrays of row-center y and column-center x in km."""
        y0, x0 = self.origin_km
        return (y0 - np.arange(self.ny) * self.dy_km,
                x0 + np.arange(self.nx) * self.dx_km)

    def latlon(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-row latitude and per-column longitude of pixel centers."""
        lat = self.lat0 - np.arange(self.ny) * self.dy_km / KM_PER_DEG
        lon = self.lon0 + np.arange(self.nx) * self.dx_km / (KM_PER_DEG * _COS_REF)
        return lat, lon

    def subgrid(self, row0: int, col0: int, ny: int, nx: int) -> "GridGeometry":
        lat, lon = self.lat0 - row0 * self.dy_km / KM_PER_DEG, \
            self.lon0 + col0 * self.dx_km / (KM_PER_DEG * _COS_REF)
        return GridGeometry(ny, nx, lat, lon, self.dy_km, self.dx_km)


@dataclass(eq=False)
class GridField:
    """A 2-D raster with missing values stored as NaN.

    Values are held as float64; files store binary32. Fields tagged with a
    ``residual*`` variable may take any sign, z-scored fields carry units
    ``"z"``, anything else in ``mm/h`` is rainfall and must be non-negative.
    """

    geom: GridGeometry
    values: np.ndarray
    variable: str = "qpe"
    units: str = "mm/h"
    valid_time: datetime | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.geom.shape:
            raise GeometryError(
                f"values shape {v.shape} does not match geometry {self.geom.shape}")
        v.setflags(write=False)
        self.values = v
        if self.valid_time is not None and self.valid_time.tzinfo is None:
            self.valid_time = self.valid_time.replace(tzinfo=timezone.utc)
        if self.is_rain:
            with np.errstate(invalid="ignore"):
                if np.any(v < 0):
                    raise DataError(f"rainfall field {self.variable!r} has negative values")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def is_residual(self) -> bool:
        return self.variable.startswith("residual")

    @property
    def is_rain(self) -> bool:
        return self.units == "mm/h" and not self.is_residual

    def filled(self, fill: float = 0.0) -> np.ndarray:
        return np.where(self.missing, fill, self.values)

    def derive(self, values: np.ndarray, **changes) -> "GridField":
        """Copy of this field with new values and optionally new metadata."""
        return replace(self, values=values, **changes)

    def equals(self, other: "GridField") -> bool:
        return (self.geom == other.geom and self.variable == other.variable
                and self.units == other.units and self.valid_time == other.valid_time
                and np.array_equal(self.values, other.values, equal_nan=True))


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float
    variable: str = ""
    units: str = "mm/h"

    def __post_init__(self):
        if not self.std > 0:
            raise DataError(f"normalization std must be positive, got {self.std}")

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "variable": self.variable,
                "units": self.units}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(float(d["mean"]), float(d["std"]), d.get("variable", ""),
                   d.get("units", "mm/h"))


@dataclass(frozen=True)
class TileSpec:
    """Square tile placement inside a parent grid (pixel indices)."""

    row0: int
    col0: int
    size: int = 512
    region: str = ""
    month: str = ""
    reason: str = ""

    @property
    def center(self) -> tuple[float, float]:
        half = (self.size - 1) / 2.0
        return (self.row0 + half, self.col0 + half)

    def inside(self, geom: GridGeometry) -> bool:
        return (self.row0 >= 0 and self.col0 >= 0 and self.size >= 1
                and self.row0 + self.size <= geom.ny
                and self.col0 + self.size <= geom.nx)


def require_same_geometry(*fields: GridField) -> GridGeometry:
    g = fields[0].geom
    for f in fields[1:]:
        if f.geom != g:
            raise GeometryError(f"geometry mismatch: {g} vs {f.geom}")
    return g


# ---------------------------------------------------------------------------
# File container


def _header_bytes(field: GridField) -> bytes:
    g = field.geom
    header = {
        "ny": g.ny, "nx": g.nx, "lat0": g.lat0, "lon0": g.lon0,
        "dx_km": g.dx_km, "dy_km": g.dy_km,
        "variable": field.variable, "units": field.units,
        "valid_time": format_time(field.valid_time),
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_grid(field: GridField) -> bytes:
    header = _header_bytes(field)
    payload = field.values.astype("<f4")
    bits = payload.view("<u4")
    bits[np.isnan(field.values)] = QUIET_NAN_BITS
    return (GRID_MAGIC + struct.pack("<II", GRID_VERSION, len(header)) + header
            + payload.tobytes())


def decode_grid(buf: bytes) -> GridField:
    if len(buf) < 12 or buf[:4] != GRID_MAGIC:
        raise GridFormatError("not a GRDF file (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != GRID_VERSION:
        raise GridFormatError(f"unsupported GRDF version {version}")
    if 12 + hlen > len(buf):
        raise GridFormatError("truncated header")
    try:
        h = json.loads(buf[12:12 + hlen].decode("utf-8"))
        geom = GridGeometry(int(h["ny"]), int(h["nx"]), float(h["lat0"]),
                            float(h["lon0"]), float(h["dy_km"]), float(h["dx_km"]))
        variable, units = str(h["variable"]), str(h["units"])
        valid_time = parse_time(h["valid_time"])
    except GridFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise GridFormatError(f"malformed header: {exc}") from exc
    payload = buf[12 + hlen:]
    n = geom.ny * geom.nx
    if len(payload) != 4 * n:
        raise GridFormatError(
            f"shape mismatch: header declares {geom.ny}x{geom.nx} = {n} values, "
            f"payload holds {len(payload) / 4:g}")
    values = np.frombuffer(payload, dtype="<f4").reshape(geom.shape).astype(np.float64)
    return GridField(geom, values, variable, units, valid_time)


def read_grid(path: str | Path) -> GridField:
    """Read a GRDF file; NaN payload words become missing pixels."""
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"grid file not found: {path}") from exc
    return decode_grid(buf)


def write_grid(field: GridField, path: str | Path) -> None:
    Path(path).write_bytes(encode_grid(field))


# ---------------------------------------------------------------------------
# Normalization


def compute_stats(fields: Iterable[GridField], eps: float = 1e-6,
                  variable: str | None = None) -> NormStats:
    """Mean and population standard deviation over all non-missing pixels.

    The std is floored at ``eps`` so constant fields stay invertible.
    """
    fields = list(fields)
    if not fields:
        raise DataError("compute_stats needs at least one field")
    vals = np.concatenate([f.values[~f.missing] for f in fields])
    if vals.size == 0:
        raise DataError("all pixels are missing")
    mean = float(vals.mean())
    std = float(np.sqrt(np.mean((vals - mean) ** 2)))
    return NormStats(mean, max(std, eps), variable if variable is not None
                     else fields[0].variable, fields[0].units)


def zscore(field: GridField, stats: NormStats) -> GridField:
    return field.derive((field.values - stats.mean) / stats.std, units="z")


def inverse_zscore(field: GridField, stats: NormStats) -> GridField:
    v = field.values * stats.std + stats.mean
    if stats.units == "mm/h" and not field.is_residual:
        # undo round-off that pushes exact zeros slightly negative
        tol = 1e-9 * (abs(stats.mean) + stats.std)
        v = np.where((v < 0) & (v > -tol), 0.0, v)
    return field.derive(v, units=stats.units)


# ---------------------------------------------------------------------------
# Regridding


def _axis_weights(pos: np.ndarray, n: int, what: str):
    tol = 1e-9
    if np.any(pos < -tol) or np.any(pos > n - 1 + tol):
        raise GeometryError(f"target {what} extent lies outside the source grid")
    snapped = np.round(pos)
    pos = np.where(np.abs(pos - snapped) < tol, snapped, pos)
    pos = np.clip(pos, 0, n - 1)
    if n == 1:
        z = np.zeros(pos.shape, dtype=np.int64)
        return z, z, np.zeros(pos.shape)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    return i0, i0 + 1, pos - i0


def bilinear_regrid(src: GridField, target: GridGeometry) -> GridField:
    """Interpolate ``src`` onto ``target`` pixel centers.

    Values are point samples at pixel centers. An output pixel is missing
    when any source pixel with non-zero weight is missing. Extrapolation is
    an error.
    """
    g = src.geom
    sy0, sx0 = g.origin_km
    ty0, tx0 = target.origin_km
    rows = (sy0 - ty0 + np.arange(target.ny) * target.dy_km) / g.dy_km
    cols = (tx0 - sx0 + np.arange(target.nx) * target.dx_km) / g.dx_km
    r0, r1, wr = _axis_weights(rows, g.ny, "row")
    c0, c1, wc = _axis_weights(cols, g.nx, "column")

    v = src.filled(0.0)
    m = src.missing
    wr = wr[:, None]
    wc = wc[None, :]
    terms = (
        ((1 - wr) * (1 - wc), r0[:, None], c0[None, :]),
        ((1 - wr) * wc, r0[:, None], c1[None, :]),
        (wr * (1 - wc), r1[:, None], c0[None, :]),
        (wr * wc, r1[:, None], c1[None, :]),
    )
    out = np.zeros(target.shape)
    miss = np.zeros(target.shape, dtype=bool)
    for w, ri, ci in terms:
        w = np.broadcast_to(w, target.shape)
        out += w * v[ri, ci]
        miss |= m[ri, ci] & (w > 0)
    out[miss] = np.nan
    return GridField(target, out, src.variable, src.units, src.valid_time)


# ---------------------------------------------------------------------------
# Tiles


def extract_tile(field: GridField, tile: TileSpec) -> GridField:
    if not tile.inside(field.geom):
        raise GeometryError(f"tile {tile} lies outside the {field.geom.shape} grid")
    s = tile.size
    sub = field.values[tile.row0:tile.row0 + s, tile.col0:tile.col0 + s]
    return field.derive(sub, geom=field.geom.subgrid(tile.row0, tile.col0, s, s))


def tile_layout(geom: GridGeometry, size: int, overlap: int,
                region: str = "", month: str = "") -> list[TileSpec]:
    """Cover ``geom`` with square tiles.

    Stride is ``size - overlap``; the last row/column of tiles is clamped to
    the domain edge, so edge overlaps may exceed ``overlap``.
    """
    if size > geom.ny or size > geom.nx:
        raise GeometryError(f"tile size {size} exceeds grid {geom.shape}")
    if not 0 <= overlap < size:
        raise GeometryError("overlap must be in [0, size)")
    stride = size - overlap

    def starts(n):
        s = list(range(0, n - size + 1, stride))
        if s[-1] != n - size:
            s.append(n - size)
        return s

    return [TileSpec(r, c, size, region, month)
            for r in starts(geom.ny) for c in starts(geom.nx)]


def mosaic(tiles: Sequence[tuple[TileSpec, GridField]], target: GridGeometry) -> GridField:
    """Average overlapping tiles onto ``target``.

    Contributions at each pixel are sorted before summation, so the result
    does not depend on tile order. Missing tile pixels do not contribute.
    """
    if not tiles:
        raise DataError("mosaic needs at least one tile")
    count = np.zeros(target.shape, dtype=np.int64)
    for spec, f in tiles:
        if not spec.inside(target):
            raise GeometryError(f"tile {spec} lies outside target {target.shape}")
        if f.geom.shape != (spec.size, spec.size):
            raise GeometryError(f"tile field shape {f.geom.shape} != size {spec.size}")
        count[spec.row0:spec.row0 + spec.size, spec.col0:spec.col0 + spec.size] += 1
    uncovered = np.argwhere(count == 0)
    if uncovered.size:
        r, c = uncovered[0]
        raise GeometryError(
            f"pixel ({r}, {c}) is not covered by any tile "
            f"({len(uncovered)} uncovered pixels)")

    depth = int(count.max())
    stack = np.full((depth,) + target.shape, np.nan)
    slot = np.zeros(target.shape, dtype=np.int64)
    for spec, f in tiles:
        rs = slice(spec.row0, spec.row0 + spec.size)
        cs = slice(spec.col0, spec.col0 + spec.size)
        rr, cc = np.mgrid[rs, cs]
        stack[slot[rs, cs], rr, cc] = f.values
        slot[rs, cs] += 1

    stack.sort(axis=0)  # NaN sorts last
    n = np.sum(~np.isnan(stack), axis=0)
    total = np.add.reduce(np.nan_to_num(stack, nan=0.0), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(n > 0, total / np.maximum(n, 1), np.nan)
    first = tiles[0][1]
    return GridField(target, out, first.variable, first.units, first.valid_time)
