"""Fourier power spectra, spectral coherence and intensity histograms.

Transforms use numpy's unnormalized forward FFT, so for an unwindowed field
``sum(P) = N * sum(v**2)`` with ``N`` the pixel count. Wavenumbers are in
cycles per km.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, GeometryError

FFT_CONVENTION = "numpy unnormalized forward fft2; sum(P) = N * sum(v^2)"


def _clean(field) -> tuple[np.ndarray, float, float]:
    v = np.asarray(getattr(field, "values", field), dtype=np.float64)
    if v.ndim != 2:
        raise GeometryError("spectral input must be 2-D")
    if not np.all(np.isfinite(v)):
        raise DataError("missing pixels present; fill or mask before spectral analysis")
    geom = getattr(field, "geom", None)
    dy, dx = (geom.dy_km, geom.dx_km) if geom is not None else (1.0, 1.0)
    return v, dy, dx


def _window(kind: str, ny: int, nx: int) -> np.ndarray:
    if kind == "none":
        return np.ones((ny, nx))
    if kind == "hann":
        return np.outer(np.hanning(ny), np.hanning(nx))
    raise ConfigError(f"unknown window {kind!r}")


def _radial_index(ny: int, nx: int, dy: float, dx: float) -> tuple[np.ndarray, float]:
    """Radial bin index per 2-D wavenumber and the bin width (cycles/km)."""
    ky = np.fft.fftfreq(ny, dy)
    kx = np.fft.fftfreq(nx, dx)
    k = np.hypot(ky[:, None], kx[None, :])
    dk = 1.0 / (max(ny, nx) * max(dy, dx))
    return np.floor(k / dk + 0.5).astype(np.int64), dk


@dataclass(frozen=True)
class RadialSpectrum:
    wavenumber: np.ndarray     # bin centres, cycles/km
    power: np.ndarray          # mean power per bin
    counts: np.ndarray
    convention: str = FFT_CONVENTION


def power_spectrum_2d(field, window: str = "none") -> tuple[np.ndarray, RadialSpectrum]:
    """2-D power ``|FFT|^2`` and its radial average (empty bins dropped)."""
    v, dy, dx = _clean(field)
    ny, nx = v.shape
    p = np.abs(np.fft.fft2(v * _window(window, ny, nx))) ** 2
    idx, dk = _radial_index(ny, nx, dy, dx)
    counts = np.bincount(idx.ravel())
    sums = np.bincount(idx.ravel(), weights=p.ravel())
    keep = counts > 0
    return p, RadialSpectrum(np.nonzero(keep)[0] * dk, sums[keep] / counts[keep],
                             counts[keep])


@dataclass(frozen=True)
class CoherenceCurve:
    frequency: np.ndarray      # cycles/km
    coherence: np.ndarray
    n_segments: int
    squared: bool = False


def segment_starts(n: int, size: int, overlap: float) -> list[int]:
    step = max(1, int(round(size * (1 - overlap))))
    return list(range(0, n - size + 1, step))


def spectral_coherence(pred, truth, segment: int = 64, overlap: float = 0.5,
                       window: str = "hann", detrend: str = "mean",
                       squared: bool = False) -> CoherenceCurve:
    """Welch-style coherence ``|Sxy| / sqrt(Sxx Syy)`` per radial bin.

    Cross and auto spectra are summed over square segments and over the 2-D
    wavenumbers of each bin before the ratio is taken. ``squared=True``
    returns the conventional magnitude-squared coherence instead.
    """
    x, dy, dx = _clean(pred)
    y, _, _ = _clean(truth)
    if x.shape != y.shape:
        raise GeometryError(f"shape mismatch {x.shape} vs {y.shape}")
    if not 0 <= overlap < 1:
        raise ConfigError("overlap must lie in [0, 1)")
    if detrend not in ("mean", "none"):
        raise ConfigError(f"unknown detrend {detrend!r}")
    ny, nx = x.shape
    if segment > min(ny, nx):
        raise ConfigError(f"segment {segment} larger than the field {x.shape}")
    rows = segment_starts(ny, segment, overlap)
    cols = segment_starts(nx, segment, overlap)
    nseg = len(rows) * len(cols)
    if nseg < 2:
        raise ConfigError("coherence needs at least two segments")
    w = _window(window, segment, segment)
    sxy = np.zeros((segment, segment), dtype=np.complex128)
    sxx = np.zeros((segment, segment))
    syy = np.zeros((segment, segment))
    for r in rows:
        for c in cols:
            a = x[r:r + segment, c:c + segment]
            b = y[r:r + segment, c:c + segment]
            if detrend == "mean":
                a, b = a - a.mean(), b - b.mean()
            fa, fb = np.fft.fft2(a * w), np.fft.fft2(b * w)
            sxy += fa * np.conj(fb)
            sxx += np.abs(fa) ** 2
            syy += np.abs(fb) ** 2
    idx, dk = _radial_index(segment, segment, dy, dx)
    flat = idx.ravel()
    bxy = (np.bincount(flat, weights=sxy.real.ravel())
           + 1j * np.bincount(flat, weights=sxy.imag.ravel()))
    bxx = np.bincount(flat, weights=sxx.ravel())
    byy = np.bincount(flat, weights=syy.ravel())
    keep = (bxx > 0) & (byy > 0)
    coh = np.abs(bxy[keep]) / np.sqrt(bxx[keep] * byy[keep])
    if squared:
        coh = coh ** 2
    return CoherenceCurve(np.nonzero(keep)[0] * dk, np.minimum(coh, 1.0), nseg, squared)


@dataclass(frozen=True)
class IntensityHistogram:
    edges: np.ndarray
    frequency: np.ndarray
    n: int


def intensity_pdf(field, edges: Sequence[float],
                  exclude_zero: bool = False) -> IntensityHistogram:
    """Relative frequency per bin over non-missing pixels inside the edges.

    Bins are ``[e_i, e_{i+1})`` with the last bin closed. With
    ``exclude_zero`` pixels equal to 0 are left out.
    """
    e = np.asarray(edges, dtype=np.float64)
    if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
        raise ConfigError("histogram edges must increase strictly")
    v = np.asarray(getattr(field, "values", field), dtype=np.float64).ravel()
    v = v[np.isfinite(v)]
    if exclude_zero:
        v = v[v != 0]
    counts, _ = np.histogram(v, bins=e)
    n = int(counts.sum())
    if n == 0:
        raise DataError("no pixels fall inside the histogram edges")
    return IntensityHistogram(e, counts / n, n)


def write_spectrum_csv(path: str | Path, spec: RadialSpectrum) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavenumber_per_km", "power", "count"])
        for k, p, c in zip(spec.wavenumber, spec.power, spec.counts):
            w.writerow([f"{k:.8g}", f"{p:.10g}", int(c)])


def write_coherence_csv(path: str | Path, curve: CoherenceCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frequency_per_km", "coherence"])
        for f, c in zip(curve.frequency, curve.coherence):
            w.writerow([f"{f:.8g}", f"{c:.8f}"])


def write_pdf_csv(path: str | Path, hist: IntensityHistogram) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo_mm", "bin_hi_mm", "frequency"])
        for lo, hi, f in zip(hist.edges[:-1], hist.edges[1:], hist.frequency):
            w.writerow([f"{lo:g}", f"{hi:g}", f"{f:.8f}"])
