"""Desk-scale denoising-score-matching trainer for the compact Denoiser.

Noise levels are drawn log-normally, sigma = exp(p_mean + p_std * z) with
z ~ N(0,1), unclipped.  The loss is the preconditioned form: with
target = (x0 - c_skip * x_t) / c_out, minimize mean (F - target)^2, which
equals the weighted error lambda(sigma) * |D - x0|^2 exactly.  Gradients
are reverse-mode by hand through the fixed two-hidden-layer network.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, TrainingDivergedError
from .grid import Rng
from .prior import Denoiser, edm_scalings

__all__ = [
    "TrainConfig",
    "TrainState",
    "adam_step",
    "clip_global_norm",
    "edm_loss",
    "edm_loss_and_grad",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    p_mean: float = -1.2        # mean of log-noise
    p_std: float = 1.2          # std of log-noise
    sigma_data: float = 0.5     # data standard deviation for preconditioning
    lr: float = 1e-4
    batch: int = 16
    steps: int = 5000
    warmup_steps: int = 500     # linear LR ramp
    grad_clip: float = 1.0      # global-norm clip; 0 disables
    ema_decay: float = 0.9999   # steady-state per-step EMA decay
    ema_every: int = 10         # apply EMA every this many steps
    ema_rampup: float = 0.05    # EMA half-life grows as this fraction of steps seen
    hidden: int = 64            # network width
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    diverge_loss: float = 1e6

    def __post_init__(self):
        if self.lr <= 0 or self.batch < 1 or self.steps < 0:
            raise ValueError("need lr > 0, batch >= 1, steps >= 0")
        if not (0.0 < self.ema_decay < 1.0):
            raise ValueError(f"ema_decay must be in (0,1), got {self.ema_decay}")
        if self.p_std <= 0 or self.sigma_data <= 0:
            raise ValueError("p_std and sigma_data must be positive")


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    ema: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> "TrainState":
        zeros = lambda: {k: np.zeros_like(p) for k, p in params.items()}
        return cls(
            params={k: p.copy() for k, p in params.items()},
            m=zeros(), v=zeros(),
            ema={k: p.copy() for k, p in params.items()},
            step=0,
        )


def _draw_noise(batch: np.ndarray, rng: Rng, cfg: TrainConfig):
    n = batch.shape[0]
    sigma = np.exp(cfg.p_mean + cfg.p_std * rng.normal((n,)))
    eps = rng.normal(batch.shape)
    return sigma, batch + sigma[:, None] * eps


def edm_loss(denoise_fn, batch: np.ndarray, rng: Rng, cfg: TrainConfig) -> float:
    """Weighted denoising loss for any callable (x_t, sigma_vec) -> x0_hat.

    Same noise draws as :func:`edm_loss_and_grad` for an equally-seeded rng,
    so oracle denoisers can be scored against trained ones.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    sigma, x_t = _draw_noise(batch, rng, cfg)
    d_hat = denoise_fn(x_t, sigma)
    lam = (sigma**2 + cfg.sigma_data**2) / (sigma * cfg.sigma_data) ** 2
    per_sample = np.mean((d_hat - batch) ** 2, axis=1)
    loss = float(np.mean(lam * per_sample))
    if not np.isfinite(loss):
        raise NumericError("denoising loss is non-finite")
    return loss


def edm_loss_and_grad(d: Denoiser, batch: np.ndarray, rng: Rng,
                      cfg: TrainConfig) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus exact parameter gradients (reverse-mode by hand)."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] < 1:
        raise ValueError("batch must be nonempty")
    if batch.shape[1] != d.dim:
        raise ValueError(f"batch dim {batch.shape[1]} does not match denoiser dim {d.dim}")
    sigma, x_t = _draw_noise(batch, rng, cfg)
    c_skip, c_out, c_in, c_noise = edm_scalings(sigma, d.sigma_data)
    f, cache = d._forward(c_in[:, None] * x_t, c_noise)
    target = (batch - c_skip[:, None] * x_t) / c_out[:, None]
    resid = f - target
    loss = float(np.mean(resid**2))
    if not np.isfinite(loss):
        raise NumericError("denoising loss is non-finite")
    df = (2.0 / resid.size) * resid
    grads = d._backward(cache, df)
    return loss, grads


def clip_global_norm(grads: dict[str, np.ndarray], clip: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale grads so their global L2 norm is at most ``clip`` (0 disables)."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if clip > 0 and norm > clip:
        scale = clip / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adam_step(state: TrainState, grads: dict[str, np.ndarray], cfg: TrainConfig) -> TrainState:
    """Adaptive-moment update with bias correction; the global gradient norm
    is clipped at cfg.grad_clip first, and the LR warms up linearly."""
    grads, _ = clip_global_norm(grads, cfg.grad_clip)
    t = state.step + 1
    lr = cfg.lr * min(1.0, t / cfg.warmup_steps) if cfg.warmup_steps > 0 else cfg.lr
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    params, m, v = {}, {}, {}
    for key, p in state.params.items():
        g = grads[key]
        m[key] = cfg.beta1 * state.m[key] + (1.0 - cfg.beta1) * g
        v[key] = cfg.beta2 * state.v[key] + (1.0 - cfg.beta2) * g * g
        step_dir = (m[key] / bc1) / (np.sqrt(v[key] / bc2) + cfg.eps)
        params[key] = p - lr * step_dir
    return TrainState(params=params, m=m, v=v, ema=state.ema, step=t)


def _ema_beta(step: int, cfg: TrainConfig) -> float:
    """Per-update EMA retention with ramp-up: the half-life grows linearly as
    ema_rampup * steps_seen, capped at the half-life implied by ema_decay."""
    cap = math.log(0.5) / math.log(cfg.ema_decay)
    halflife = min(cap, max(step * cfg.ema_rampup, 1e-12))
    return 0.5 ** (cfg.ema_every / halflife)


def train(dataset: np.ndarray, cfg: TrainConfig, curve_path: str | None = None) -> Denoiser:
    """Train a Denoiser on flattened clean samples (rows of ``dataset``).

    Returns the EMA denoiser.  Raises TrainingDivergedError when the loss
    exceeds cfg.diverge_loss.  When ``curve_path`` is given, writes a CSV of
    (step, loss, grad_norm, lr) rows.
    """
    data = np.atleast_2d(np.asarray(dataset, dtype=np.float64))
    if data.shape[0] < 1 or data.size == 0:
        raise ValueError("dataset must be nonempty")
    rng = Rng(cfg.seed)
    d = Denoiser.init(data.shape[1], cfg.hidden, rng, sigma_data=cfg.sigma_data)
    state = TrainState.fresh(d.params)
    rows = []
    for _ in range(cfg.steps):
        idx = rng.integers(0, data.shape[0], (cfg.batch,))
        batch = data[idx]
        d.params = state.params
        loss, grads = edm_loss_and_grad(d, batch, rng, cfg)
        if loss > cfg.diverge_loss:
            raise TrainingDivergedError(state.step, loss)
        _, gnorm = clip_global_norm(grads, 0.0)
        state = adam_step(state, grads, cfg)
        if any(not np.all(np.isfinite(p)) for p in state.params.values()):
            raise NumericError(f"non-finite parameters after step {state.step}")
        if state.step % cfg.ema_every == 0:
            beta = _ema_beta(state.step, cfg)
            state.ema = {k: beta * state.ema[k] + (1.0 - beta) * state.params[k]
                         for k in state.params}
        lr = cfg.lr * min(1.0, state.step / cfg.warmup_steps) if cfg.warmup_steps > 0 else cfg.lr
        rows.append((state.step, loss, gnorm, lr))
    if curve_path is not None:
        with open(curve_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "grad_norm", "lr"])
            writer.writerows(rows)
    return Denoiser(state.ema, sigma_data=cfg.sigma_data)
