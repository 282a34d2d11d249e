"""Verification metrics: MAE on rainy pixels, contingency scores, FSS and
bootstrap confidence intervals over tiles."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError, GeometryError

PERCENTILES = (50, 75, 90, 95)


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def _pair(pred, truth):
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise GeometryError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    return p, t, np.isfinite(p) & np.isfinite(t)


def mae_nonzero(pred, truth) -> float:
    """Mean absolute error over pixels with truth > 0 (both non-missing)."""
    p, t, ok = _pair(pred, truth)
    m = ok & (np.where(ok, t, 0) > 0)
    if not m.any():
        raise DataError("no non-zero truth pixels to evaluate")
    return float(np.abs(p[m] - t[m]).mean())


@dataclass(frozen=True)
class ContingencyCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("contingency counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ContingencyCounts") -> "ContingencyCounts":
        return ContingencyCounts(self.tp + other.tp, self.fp + other.fp,
                                 self.fn + other.fn, self.tn + other.tn)


def contingency(pred, truth, threshold: float,
                exclude_zero: bool = False) -> ContingencyCounts:
    """Event counts with the rule ``value >= threshold``.

    With ``exclude_zero`` only pixels with truth > 0 are counted.
    """
    if not threshold > 0:
        raise ConfigError("threshold must be positive")
    p, t, ok = _pair(pred, truth)
    if exclude_zero:
        ok &= np.where(ok, t, 0) > 0
    pe = p[ok] >= threshold
    te = t[ok] >= threshold
    tp = int(np.sum(pe & te))
    fp = int(np.sum(pe & ~te))
    fn = int(np.sum(~pe & te))
    return ContingencyCounts(tp, fp, fn, int(ok.sum()) - tp - fp - fn)


def pod(c: ContingencyCounts) -> float | None:
    """TP / (TP + FN); ``None`` when no events were observed."""
    d = c.tp + c.fn
    return c.tp / d if d else None


def csi(c: ContingencyCounts) -> float | None:
    """TP / (TP + FP + FN); ``None`` when neither field has events."""
    d = c.tp + c.fp + c.fn
    return c.tp / d if d else None


def box_sum(a: np.ndarray, n: int) -> np.ndarray:
    """Sum over the ``n x n`` window centred on each pixel, truncated at the
    edges, via an integral image."""
    h, w = a.shape
    r = n // 2
    s = np.zeros((h + 1, w + 1))
    s[1:, 1:] = a.cumsum(0).cumsum(1)
    r0 = np.clip(np.arange(h) - r, 0, h)
    r1 = np.clip(np.arange(h) + r + 1, 0, h)
    c0 = np.clip(np.arange(w) - r, 0, w)
    c1 = np.clip(np.arange(w) + r + 1, 0, w)
    return (s[r1][:, c1] - s[r0][:, c1] - s[r1][:, c0] + s[r0][:, c0])


def neighborhood_fraction(event: np.ndarray, valid: np.ndarray, n: int) -> np.ndarray:
    """Event fraction over the in-bounds, non-missing part of each window."""
    cnt = box_sum(valid.astype(np.float64), n)
    num = box_sum((event & valid).astype(np.float64), n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, num / np.where(cnt > 0, cnt, 1), np.nan)


def fss(pred, truth, threshold: float, n: int = 27) -> float | None:
    """Fraction skill score ``1 - MSE(f, o) / (mean(f^2) + mean(o^2))``.

    Missing pixels in either field are dropped from the windows and from the
    average. Returns ``None`` when neither field has an event.
    """
    p, t, ok = _pair(pred, truth)
    if n < 1 or n % 2 == 0:
        raise ConfigError(f"neighborhood size must be odd and positive, got {n}")
    if n > min(p.shape):
        raise ConfigError(f"neighborhood {n} exceeds the grid {p.shape}")
    f = neighborhood_fraction(np.where(ok, p, 0) >= threshold, ok, n)
    o = neighborhood_fraction(np.where(ok, t, 0) >= threshold, ok, n)
    m = ok & np.isfinite(f)
    if not m.any():
        raise DataError("no valid pixels for FSS")
    ref = np.mean(f[m] ** 2) + np.mean(o[m] ** 2)
    if ref == 0:
        return None
    return float(1.0 - np.mean((f[m] - o[m]) ** 2) / ref)


@dataclass(frozen=True)
class BootstrapCI:
    lo: float
    hi: float
    point: float
    n_skipped: int = 0


def bootstrap_ci(metric: Callable[[Sequence], float | None], units: Sequence,
                 n_boot: int = 1000, level: float = 0.95,
                 rng: np.random.Generator | None = None) -> BootstrapCI:
    """Percentile bootstrap over resampling units (e.g. tile/time pairs).

    ``metric`` maps a list of units to a value, or ``None`` when undefined;
    undefined replicates are skipped and counted.
    """
    units = list(units)
    if len(units) < 2:
        raise DataError("bootstrap needs at least two units")
    if not 0 < level < 1 or n_boot < 1:
        raise ConfigError("level must lie in (0, 1) and n_boot be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    point = metric(units)
    if point is None:
        raise DataError("metric undefined on the full sample")
    draws = rng.integers(0, len(units), size=(n_boot, len(units)))
    vals = []
    for idx in draws:
        v = metric([units[i] for i in idx])
        if v is not None:
            vals.append(v)
    if not vals:
        raise DataError("metric undefined on every bootstrap replicate")
    a = (1 - level) / 2 * 100
    lo, hi = np.percentile(vals, [a, 100 - a])
    return BootstrapCI(float(lo), float(hi), float(point), n_boot - len(vals))


def pooled(fn: Callable) -> Callable[[Sequence], float | None]:
    """Turn a field metric into one over a list of (pred, truth) units by
    concatenating the units' pixels (MAE, contingency-based scores)."""
    def metric(units):
        p = np.concatenate([_values(u[0]).ravel() for u in units])
        t = np.concatenate([_values(u[1]).ravel() for u in units])
        return fn(p, t)
    return metric


def pooled_mae(units) -> float | None:
    try:
        return pooled(mae_nonzero)(units)
    except DataError:
        return None


def pooled_score(score: Callable, threshold: float, exclude_zero: bool = False):
    """POD or CSI on contingency counts summed over units."""
    def metric(units):
        c = ContingencyCounts(0, 0, 0, 0)
        for p, t in units:
            c = c + contingency(p, t, threshold, exclude_zero)
        return score(c)
    return metric


def mean_fss(threshold: float, n: int):
    """Mean per-unit FSS (units where it is undefined are ignored)."""
    def metric(units):
        v = [fss(p, t, threshold, n) for p, t in units]
        v = [x for x in v if x is not None]
        return float(np.mean(v)) if v else None
    return metric


@dataclass(frozen=True)
class ThresholdTable:
    thresholds: dict    # region -> {percentile: mm}

    def __post_init__(self):
        for region, row in self.thresholds.items():
            vals = [row[p] for p in PERCENTILES]
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError(f"thresholds for {region} must increase with percentile")

    def get(self, region: str, percentile: int) -> float:
        try:
            return self.thresholds[region][percentile]
        except KeyError:
            raise ConfigError(f"no threshold for region {region!r} at p{percentile}") from None

    @property
    def regions(self) -> tuple[str, ...]:
        return tuple(self.thresholds)

    @classmethod
    def from_csv_text(cls, text: str) -> "ThresholdTable":
        rows = {}
        for rec in csv.DictReader(io.StringIO(text)):
            try:
                rows[rec["region"]] = {p: float(rec[f"p{p}"]) for p in PERCENTILES}
            except (KeyError, ValueError) as e:
                raise ConfigError(f"bad threshold row {rec}: {e}") from None
        if not rows:
            raise ConfigError("threshold table is empty")
        return cls(rows)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ThresholdTable":
        """Read ``path``, or the shipped default table when ``None``."""
        if path is None:
            text = resources.files("resdiffcast").joinpath("data/thresholds.csv").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_csv_text(text)


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float | None
    ci_lo: float | None = None
    ci_hi: float | None = None
    month: str = ""
    region: str = ""
    lead_hours: int = 0
    threshold: float | None = None
    neighborhood: int | None = None
    n: int = 0


REPORT_FIELDS = tuple(f.name for f in fields(MetricReport))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_reports_csv(path: str | Path, reports: Sequence[MetricReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow([_fmt(getattr(r, k)) for k in REPORT_FIELDS])


def write_reports_json(path: str | Path, reports: Sequence[MetricReport]) -> None:
    doc = [{k: (round(v, 6) if isinstance(v, float) else v) for k, v in asdict(r).items()}
           for r in reports]
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
