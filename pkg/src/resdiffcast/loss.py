"""HybridSigmaLoss: a sigma-scaled MAE blended with an intensity-weighted MAE.

All reductions are means over pixels where both prediction and target are
finite. Inputs may be single fields ``(H, W)`` or batches ``(B, H, W)``; in
the batched case ``sigma`` is one noise level per item.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, GeometryError

# (threshold, steepness, amplitude) of the rising sigmoid ramps
DEFAULT_RAMPS = (
    (0.015, 150.0, 3.5),
    (0.08, 50.0, 5.0),
    (0.25, 20.0, 6.0),
    (0.5, 10.0, 7.0),
)
# (threshold, steepness, amplitude) of the low-rain complement term
DEFAULT_COMPLEMENT = (0.015, 150.0, 0.6)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.8
    epsilon: float = 1e-6
    ramps: tuple = DEFAULT_RAMPS
    complement: tuple = DEFAULT_COMPLEMENT
    weight_on: str = "truth"
    weight_units: str = "normalized"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if any(a <= 0 for _, _, a in self.ramps) or self.complement[2] <= 0:
            raise ConfigError("weight amplitudes must be positive")
        if self.weight_on not in ("truth", "pred"):
            raise ConfigError(f"weight_on must be 'truth' or 'pred', got {self.weight_on!r}")
        if self.weight_units not in ("normalized", "mm/h"):
            raise ConfigError(f"unknown weight_units {self.weight_units!r}")

    @property
    def max_weight(self) -> float:
        return sum(a for _, _, a in self.ramps) + self.complement[2]


def weight_curve(y, cfg: LossConfig | None = None):
    """Intensity weight: sum of sigmoid ramps plus a decaying low-rain floor."""
    cfg = cfg or LossConfig()
    y = np.asarray(y, dtype=np.float64)
    w = np.zeros_like(y)
    for thr, k, a in cfg.ramps:
        w += expit((y - thr) * k) * a
    thr, k, a = cfg.complement
    w += (1.0 - expit((y - thr) * k)) * a
    return w


def weight_curve_grad(y, cfg: LossConfig | None = None):
    """dw/dy of :func:`weight_curve`."""
    cfg = cfg or LossConfig()
    y = np.asarray(y, dtype=np.float64)
    g = np.zeros_like(y)
    for thr, k, a in cfg.ramps:
        s = expit((y - thr) * k)
        g += a * k * s * (1 - s)
    thr, k, a = cfg.complement
    s = expit((y - thr) * k)
    g -= a * k * s * (1 - s)
    return g


def _prepare(pred, truth):
    pred = np.asarray(getattr(pred, "values", pred), dtype=np.float64)
    truth = np.asarray(getattr(truth, "values", truth), dtype=np.float64)
    if pred.shape != truth.shape:
        raise GeometryError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    valid = np.isfinite(pred) & np.isfinite(truth)
    n = int(valid.sum())
    if n == 0:
        raise GeometryError("no valid pixels to evaluate")
    return pred, truth, valid, n


def _sigma_like(sigma, shape):
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim == 1 and len(shape) == 3:
        s = s[:, None, None]
    if np.any(s < 0):
        raise ValueError("sigma must be non-negative")
    return np.broadcast_to(s, shape)


def scaled_mae(pred, truth, sigma, epsilon: float = 1e-6) -> float:
    """Mean of ``|pred - truth| / (sigma + epsilon)``."""
    pred, truth, valid, n = _prepare(pred, truth)
    s = _sigma_like(sigma, pred.shape)
    err = np.abs(pred - truth)[valid] / (s[valid] + epsilon)
    return float(err.sum() / n)


def weighted_mae(pred, truth, cfg: LossConfig | None = None, weight_y=None) -> float:
    """Mean of ``w(y) * |pred - truth|``.

    ``y`` is the target by default; pass ``weight_y`` to evaluate the curve
    on another array (e.g. the target in physical units).
    """
    cfg = cfg or LossConfig()
    pred, truth, valid, n = _prepare(pred, truth)
    y = _weight_source(pred, truth, cfg, weight_y)
    w = weight_curve(y, cfg)
    return float((w * np.abs(pred - truth))[valid].sum() / n)


def _weight_source(pred, truth, cfg, weight_y):
    if weight_y is not None:
        return np.asarray(weight_y, dtype=np.float64)
    return truth if cfg.weight_on == "truth" else pred


def hybrid_sigma_loss(pred, truth, sigma, cfg: LossConfig | None = None,
                      weight_y=None) -> float:
    cfg = cfg or LossConfig()
    if cfg.alpha == 1.0:
        return scaled_mae(pred, truth, sigma, cfg.epsilon)
    if cfg.alpha == 0.0:
        return weighted_mae(pred, truth, cfg, weight_y)
    return (cfg.alpha * scaled_mae(pred, truth, sigma, cfg.epsilon)
            + (1.0 - cfg.alpha) * weighted_mae(pred, truth, cfg, weight_y))


def hybrid_sigma_loss_grad(pred, truth, sigma, cfg: LossConfig | None = None,
                           weight_y=None):
    """Loss value and its (sub)gradient with respect to ``pred``.

    ``sign(0) = 0`` is used at the kink of the absolute value. When weights
    are taken from the prediction itself (``weight_on="pred"``) the chain
    rule through the weight curve is included.
    """
    cfg = cfg or LossConfig()
    pred, truth, valid, n = _prepare(pred, truth)
    s = _sigma_like(sigma, pred.shape)
    diff = np.where(valid, pred - truth, 0.0)
    absd = np.abs(diff)
    sgn = np.sign(diff)
    inv = 1.0 / (s + cfg.epsilon)
    y = _weight_source(pred, truth, cfg, weight_y)
    y = np.where(valid, y, 0.0)
    w = weight_curve(y, cfg)

    scaled = (absd * inv).sum() / n
    weighted = (w * absd).sum() / n
    loss = cfg.alpha * scaled + (1 - cfg.alpha) * weighted

    grad = cfg.alpha * sgn * inv + (1 - cfg.alpha) * w * sgn
    if cfg.weight_on == "pred" and weight_y is None:
        grad = grad + (1 - cfg.alpha) * weight_curve_grad(y, cfg) * absd
    grad = np.where(valid, grad / n, 0.0)
    return float(loss), grad


def weight_table(y_min: float = -0.1, y_max: float = 1.0, n: int = 221,
                 cfg: LossConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(y, w) samples of the weighting curve, e.g. for plotting."""
    y = np.linspace(y_min, y_max, n)
    return y, weight_curve(y, cfg)
