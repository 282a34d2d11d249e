"""EDM preconditioning coefficients, noise-level sampling and the wrapped
x0 denoiser."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, GeometryError


@dataclass(frozen=True)
class EdmCoeffs:
    c_skip: np.ndarray | float
    c_out: np.ndarray | float
    c_in: np.ndarray | float
    c_noise: np.ndarray | float


@dataclass(frozen=True)
class SigmaSchedule:
    """Karras-style noise ladder used by the sampler."""

    sigma_min: float = 0.002
    sigma_max: float = 80.0
    num_steps: int = 18
    rho: float = 7.0
    sigma_data: float = 1.0

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("need 0 < sigma_min < sigma_max")
        if int(self.num_steps) < 1:
            raise ConfigError("num_steps must be >= 1")
        if not self.rho > 0 or not self.sigma_data > 0:
            raise ConfigError("rho and sigma_data must be positive")

    def ladder(self) -> np.ndarray:
        """Noise levels ``sigma_0 = sigma_max > ... > sigma_{n-1} = sigma_min``
        followed by a terminal 0."""
        n = int(self.num_steps)
        if n == 1:
            sig = np.array([self.sigma_max])
        else:
            inv = 1.0 / self.rho
            i = np.arange(n)
            sig = (self.sigma_max ** inv
                   + i / (n - 1) * (self.sigma_min ** inv - self.sigma_max ** inv)) ** self.rho
        return np.append(sig, 0.0)


def precondition_coeffs(sigma, sigma_data: float = 1.0) -> EdmCoeffs:
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0) or not sigma_data > 0:
        raise ValueError("sigma and sigma_data must be positive")
    sd2 = sigma_data ** 2
    tot = sigma ** 2 + sd2
    coeffs = EdmCoeffs(
        c_skip=sd2 / tot,
        c_out=sigma * sigma_data / np.sqrt(tot),
        c_in=1.0 / np.sqrt(tot),
        c_noise=np.log(sigma) / 4.0,
    )
    if sigma.ndim == 0:
        coeffs = EdmCoeffs(*(float(c) for c in (coeffs.c_skip, coeffs.c_out,
                                                coeffs.c_in, coeffs.c_noise)))
    return coeffs


def sigma_from_noise(c_noise):
    """Invert the ``c_noise = ln(sigma) / 4`` embedding."""
    return np.exp(4.0 * np.asarray(c_noise, dtype=np.float64))


def sample_sigma(rng: np.random.Generator, p_mean: float = -1.2, p_std: float = 1.2,
                 size=None):
    """Log-normal training noise level ``exp(p_mean + p_std * z)``."""
    if p_std < 0:
        raise ValueError("p_std must be non-negative")
    return np.exp(p_mean + p_std * rng.standard_normal(size))


def _batched(x_noisy, cond):
    x = np.asarray(x_noisy, dtype=np.float64)
    c = np.asarray(cond, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x, c = x[None], c[None]
    if c.ndim != 4 or c.shape[0] != x.shape[0] or c.shape[2:] != x.shape[1:]:
        raise GeometryError(f"condition stack {c.shape} does not match noisy field {x.shape}")
    return x, c, single


def wrap_denoise(d, x_noisy, sigma, cond, sigma_data: float = 1.0) -> np.ndarray:
    """x0 estimate ``c_skip * x + c_out * d(c_in * x, cond, c_noise)``.

    ``x_noisy`` is ``(H, W)`` with ``cond`` ``(C, H, W)``, or batched
    ``(B, H, W)`` / ``(B, C, H, W)`` with one sigma per item.
    """
    x, c, single = _batched(x_noisy, cond)
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (x.shape[0],))
    k = precondition_coeffs(sig, sigma_data)
    raw = np.asarray(d(k.c_in[:, None, None] * x, c, k.c_noise))
    if raw.shape != x.shape:
        raise GeometryError(f"denoiser returned {raw.shape}, expected {x.shape}")
    out = k.c_skip[:, None, None] * x + k.c_out[:, None, None] * raw
    return out[0] if single else out
