"""Adam trainer for the x0-parameterized denoiser and a finite-difference
gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericError
from ..loss import LossConfig, hybrid_sigma_loss, hybrid_sigma_loss_grad
from .precond import SigmaSchedule, precondition_coeffs, sample_sigma


@dataclass
class Adam:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class ProbeBatch:
    """A fully specified training micro-batch: noise draws are frozen so the
    loss is a deterministic function of the parameters."""

    cond: np.ndarray        # (B, C, H, W)
    clean: np.ndarray       # (B, H, W)
    sigma: np.ndarray       # (B,)
    noise: np.ndarray       # (B, H, W)
    weight_y: np.ndarray | None = None

    @classmethod
    def random(cls, n_cond: int, batch: int = 2, size: int = 8, seed: int = 0,
               p_mean: float = -1.2, p_std: float = 1.2) -> "ProbeBatch":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((batch, n_cond, size, size)),
                   rng.standard_normal((batch, size, size)),
                   sample_sigma(rng, p_mean, p_std, batch),
                   rng.standard_normal((batch, size, size)))


def loss_and_grads(d, probe: ProbeBatch, loss_cfg: LossConfig,
                   sigma_data: float = 1.0):
    """HybridSigmaLoss of the wrapped denoiser on ``probe`` and its parameter
    gradients (backpropagated through the preconditioning)."""
    k = precondition_coeffs(probe.sigma, sigma_data)
    bc = (slice(None), None, None)
    x = probe.clean + probe.sigma[bc] * probe.noise
    raw, cache = d.forward(k.c_in[bc] * x, probe.cond, k.c_noise)
    pred = k.c_skip[bc] * x + k.c_out[bc] * raw
    if not np.all(np.isfinite(pred)):
        raise NumericError("non-finite denoiser output")
    loss, g_pred = hybrid_sigma_loss_grad(pred, probe.clean, probe.sigma, loss_cfg,
                                          probe.weight_y)
    grads = d.backward(cache, k.c_out[bc] * g_pred)
    return loss, grads


def probe_loss(d, probe: ProbeBatch, loss_cfg: LossConfig,
               sigma_data: float = 1.0) -> float:
    """Forward-only loss on ``probe``."""
    k = precondition_coeffs(probe.sigma, sigma_data)
    bc = (slice(None), None, None)
    x = probe.clean + probe.sigma[bc] * probe.noise
    pred = k.c_skip[bc] * x + k.c_out[bc] * d(k.c_in[bc] * x, probe.cond, k.c_noise)
    return hybrid_sigma_loss(pred, probe.clean, probe.sigma, loss_cfg, probe.weight_y)


def train_step(d, batch, sched: SigmaSchedule, loss_cfg: LossConfig, opt: Adam,
               rng: np.random.Generator, p_mean: float = -1.2,
               p_std: float = 1.2) -> float:
    """One Adam update on ``batch = (cond, clean[, weight_y])``; returns the loss."""
    cond, clean = np.asarray(batch[0], dtype=np.float64), np.asarray(batch[1], dtype=np.float64)
    weight_y = batch[2] if len(batch) > 2 else None
    if clean.ndim != 3 or clean.shape[0] == 0:
        raise DataError("batch must hold at least one (cond, clean) pair")
    n = clean.shape[0]
    probe = ProbeBatch(cond, clean, sample_sigma(rng, p_mean, p_std, n),
                       rng.standard_normal(clean.shape), weight_y)
    loss, grads = loss_and_grads(d, probe, loss_cfg, sched.sigma_data)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericError(f"non-finite loss or gradient (loss={loss})")
    opt.step(d.params, grads)
    return loss


def grad_check(d, probe: ProbeBatch, loss_cfg: LossConfig | None = None,
               h: float = 1e-4, sigma_data: float = 1.0, analytic=None,
               floor: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``analytic`` optionally replaces :func:`loss_and_grads` (used to inject
    faults). The relative error of one entry is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps finite-difference
    rounding noise on near-zero entries from reading as a large relative error.
    """
    loss_cfg = loss_cfg or LossConfig()
    analytic = analytic or loss_and_grads
    _, grads = analytic(d, probe, loss_cfg, sigma_data)
    worst = 0.0
    for p, g in zip(d.params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = probe_loss(d, probe, loss_cfg, sigma_data)
            flat[i] = orig - h
            lm = probe_loss(d, probe, loss_cfg, sigma_data)
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, err)
    return worst


def fit(d, draw, steps: int, sched: SigmaSchedule | None = None,
        loss_cfg: LossConfig | None = None, lr: float = 1e-5, seed: int = 0,
        p_mean: float = -1.2, p_std: float = 1.2, log_every: int = 0,
        log=None) -> list[float]:
    """Run ``steps`` Adam updates on batches from ``draw(rng)``.

    Returns the per-step losses. One generator seeded with ``seed`` drives
    batch selection and noise, so a run is reproducible.
    """
    sched = sched or SigmaSchedule()
    loss_cfg = loss_cfg or LossConfig()
    opt = Adam(lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for i in range(steps):
        loss = train_step(d, draw(rng), sched, loss_cfg, opt, rng, p_mean, p_std)
        history.append(loss)
        if log is not None and log_every and (i + 1) % log_every == 0:
            log(f"step {i + 1}/{steps} loss {np.mean(history[-log_every:]):.5f}")
    return history
