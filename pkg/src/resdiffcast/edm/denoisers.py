"""Denoiser interface, analytic oracles and two small trainable networks.

A denoiser is any callable ``d(x_in, cond, c_noise) -> raw`` where ``x_in`` is
the preconditioned noisy residual ``(B, H, W)``, ``cond`` the condition stack
``(B, C, H, W)`` and ``c_noise`` the per-item noise embedding ``(B,)``. It
returns the raw network output ``(B, H, W)`` that :func:`wrap_denoise` mixes
into the x0 estimate.

Trainable denoisers additionally expose ``params`` (list of float64 arrays,
updated in place), ``param_names``, ``forward`` returning ``(out, cache)``
and ``backward(cache, grad_out)`` returning one gradient per parameter.

A denoiser may define ``prepare_step(state)``; the rollout engine calls it
before sampling each step.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .precond import precondition_coeffs, sigma_from_noise


class Denoiser(Protocol):
    def __call__(self, x_in: np.ndarray, cond: np.ndarray,
                 c_noise: np.ndarray) -> np.ndarray: ...


class ZeroDenoiser:
    """Always outputs zero; the wrapped estimate is then ``c_skip * x``."""

    def __call__(self, x_in, cond, c_noise):
        return np.zeros(np.shape(x_in))


class OracleDenoiser:
    """Makes the wrapped denoiser return ``target`` exactly at every sigma.

    Inverts the preconditioning: ``raw = (x0 - c_skip * x) / c_out`` with
    ``x = x_in / c_in`` and sigma recovered from ``c_noise``.
    """

    def __init__(self, target: np.ndarray | None = None, sigma_data: float = 1.0):
        self.target = None if target is None else np.asarray(target, dtype=np.float64)
        self.sigma_data = sigma_data

    def __call__(self, x_in, cond, c_noise):
        k = precondition_coeffs(sigma_from_noise(c_noise), self.sigma_data)
        bc = (slice(None), None, None)
        x = x_in / k.c_in[bc]
        target = np.broadcast_to(self.target, np.shape(x_in))
        return (target - k.c_skip[bc] * x) / k.c_out[bc]


class ShrinkageDenoiser:
    """Bayes-optimal denoiser for scalar Gaussian data ``x0 ~ N(mu, s^2)``.

    The posterior mean ``(s^2 x + sigma^2 mu) / (s^2 + sigma^2)`` is affine in
    the noisy input, so the raw output is an affine map of ``x_in``.
    """

    def __init__(self, mu: float, s: float, sigma_data: float = 1.0):
        self.mu, self.s, self.sigma_data = mu, s, sigma_data

    def __call__(self, x_in, cond, c_noise):
        sig = sigma_from_noise(c_noise)
        k = precondition_coeffs(sig, self.sigma_data)
        bc = (slice(None), None, None)
        x = x_in / k.c_in[bc]
        s2, sg2 = self.s ** 2, sig[bc] ** 2
        post = (s2 * x + sg2 * self.mu) / (s2 + sg2)
        return (post - k.c_skip[bc] * x) / k.c_out[bc]


def _input_stack(x_in, cond, c_noise):
    b, h, w = x_in.shape
    noise_plane = np.broadcast_to(np.asarray(c_noise, dtype=np.float64)[:, None, None, None],
                                  (b, 1, h, w))
    return np.concatenate([x_in[:, None], noise_plane, cond], axis=1)


class LinearDenoiser:
    """Per-pixel affine map of the input channels (a 1x1 convolution)."""

    def __init__(self, n_cond: int, seed: int = 0, scale: float = 0.1):
        rng = np.random.default_rng(seed)
        self.n_cond = n_cond
        self.seed = seed
        self.params = [rng.standard_normal(n_cond + 2) * scale, np.zeros(1)]
        self.param_names = ["w", "b"]

    def forward(self, x_in, cond, c_noise):
        z = _input_stack(x_in, cond, c_noise)
        w, b = self.params
        return np.tensordot(w, z, axes=([0], [1])) + b[0], z

    def backward(self, z, grad_out):
        return [np.tensordot(grad_out, z, axes=([0, 1, 2], [0, 2, 3])),
                np.array([grad_out.sum()])]

    def __call__(self, x_in, cond, c_noise):
        return self.forward(x_in, cond, c_noise)[0]


def _windows(x):
    """3x3 'same' patches of ``x`` (B, C, H, W) -> (B, C, H, W, 3, 3)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(xp, (3, 3), axis=(2, 3))


def conv3x3(x, w, b):
    out = np.tensordot(_windows(x), w, axes=([1, 4, 5], [1, 2, 3]))
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None]


def conv3x3_backward(x, w, grad):
    """Gradients of :func:`conv3x3` w.r.t. input, weights and bias."""
    gw = np.tensordot(grad, _windows(x), axes=([0, 2, 3], [0, 2, 3]))
    gb = grad.sum(axis=(0, 2, 3))
    gx = np.tensordot(_windows(grad), w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))
    return gx.transpose(0, 3, 1, 2), gw, gb


def silu(x):
    return x * expit(x)


def silu_grad(x):
    s = expit(x)
    return s * (1 + x * (1 - s))


class TinyConvDenoiser:
    """Three 3x3 convolutions (cond+2 -> width -> width -> 1) with SiLU.

    The noise embedding enters as a constant extra input plane. Initialization
    is seeded and deterministic. Computation runs in float64.
    """

    def __init__(self, n_cond: int, width: int = 16, seed: int = 0,
                 linear: bool = False, out_scale: float = 0.1):
        rng = np.random.default_rng(seed)
        self.n_cond, self.width, self.seed, self.linear = n_cond, width, seed, linear
        chans = [n_cond + 2, width, width, 1]
        self.params = []
        self.param_names = []
        for i, (ci, co) in enumerate(zip(chans[:-1], chans[1:])):
            std = np.sqrt(1.0 / (9 * ci))
            if i == len(chans) - 2:
                std *= out_scale
            self.params += [rng.standard_normal((co, ci, 3, 3)) * std, np.zeros(co)]
            self.param_names += [f"conv{i}.weight", f"conv{i}.bias"]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def _act(self, x):
        return x if self.linear else silu(x)

    def _act_grad(self, x):
        return np.ones_like(x) if self.linear else silu_grad(x)

    def forward(self, x_in, cond, c_noise):
        h0 = _input_stack(x_in, cond, c_noise)
        w0, b0, w1, b1, w2, b2 = self.params
        a1 = conv3x3(h0, w0, b0)
        h1 = self._act(a1)
        a2 = conv3x3(h1, w1, b1)
        h2 = self._act(a2)
        out = conv3x3(h2, w2, b2)[:, 0]
        return out, (h0, a1, h1, a2, h2)

    def backward(self, cache, grad_out):
        h0, a1, h1, a2, h2 = cache
        w0, b0, w1, b1, w2, b2 = self.params
        g = grad_out[:, None]
        gh2, gw2, gb2 = conv3x3_backward(h2, w2, g)
        ga2 = gh2 * self._act_grad(a2)
        gh1, gw1, gb1 = conv3x3_backward(h1, w1, ga2)
        ga1 = gh1 * self._act_grad(a1)
        _, gw0, gb0 = conv3x3_backward(h0, w0, ga1)
        return [gw0, gb0, gw1, gb1, gw2, gb2]

    def __call__(self, x_in, cond, c_noise):
        return self.forward(x_in, cond, c_noise)[0]


def param_shapes(d) -> list[tuple[str, tuple[int, ...]]]:
    return [(n, tuple(p.shape)) for n, p in zip(d.param_names, d.params)]


def flat_params(d) -> np.ndarray:
    return np.concatenate([p.ravel() for p in d.params])


def set_flat_params(d, flat: Sequence[float]) -> None:
    flat = np.asarray(flat, dtype=np.float64)
    i = 0
    for p in d.params:
        p[...] = flat[i:i + p.size].reshape(p.shape)
        i += p.size
