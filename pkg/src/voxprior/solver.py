"""Annealed decoupled posterior sampling with three task likelihoods
(restoration with multiplicative bias, inpainting, refinement) and the
interleaved coordinate-descent update of the bias coefficients.

Noise-scale bookkeeping: tau_y and tau_t are noise standard deviations used
as tau^2 in denominators; tau_s (refinement) is a precision, so its gradient
term is tau_s * (x0 - x_ref) and larger tau_s means more trust in x_ref.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .biasfield import (
    BiasBasis,
    BiasField,
    alpha_schedule,
    basis_build,
    bias_eval,
    bias_objective,
    bias_objective_grad,
    bias_update,
)
from .errors import NumericError
from .grid import Rng, Volume
from .linops import LinearOperator, Mask
from .prior import estimate_x0, schedule_poly7

__all__ = [
    "InpaintingTask",
    "RefinementTask",
    "RestorationTask",
    "SolveReport",
    "SolverConfig",
    "StepRecord",
    "daps_solve",
    "inpaint",
    "langevin_x0",
    "likelihood_grad",
    "refine",
    "restore",
]

TAU_Y_RESTORATION = 0.025   # moderate data weight
TAU_Y_INPAINTING = 0.005    # tight consistency on observed voxels
TAU_S_REFINEMENT = 0.05


@dataclass(frozen=True)
class SolverConfig:
    annealing_steps: int = 50
    sigma_max: float = 100.0
    sigma_min: float = 0.1          # outer annealing floor
    ode_steps: int = 5
    ode_sigma_min: float = 0.01     # inner x0-ODE floor
    ode_method: str = "euler"
    langevin_steps: int = 20
    langevin_eta: float = 1e-4
    eta_decay_ratio: float = 0.01
    eta_schedule: str = "geometric"  # geometric (linear in log) or "linear"
    tau_y: float | None = None       # None = per-task default
    tau_t_multiplier: float = 1.0
    bias_order: int = 4
    bias_lambda: float = 1e-2
    bias_alpha0: float = 1.0         # headroom; the solver backtracks to a stable step
    bias_updates_per_step: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.annealing_steps < 2:
            raise ValueError(f"annealing_steps must be >= 2, got {self.annealing_steps}")
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.ode_steps < 1 or self.ode_sigma_min <= 0:
            raise ValueError("need ode_steps >= 1 and ode_sigma_min > 0")
        if self.langevin_steps < 0 or self.langevin_eta < 0 or self.eta_decay_ratio <= 0:
            raise ValueError("langevin parameters out of range")
        if self.eta_schedule not in ("geometric", "linear"):
            raise ValueError(f"unknown eta_schedule {self.eta_schedule!r}")
        if self.tau_y is not None and self.tau_y <= 0:
            raise ValueError(f"tau_y must be > 0, got {self.tau_y}")
        if self.tau_t_multiplier <= 0:
            raise ValueError("tau_t_multiplier must be > 0")
        if self.bias_order < 0 or self.bias_lambda < 0 or self.bias_alpha0 < 0 or self.bias_updates_per_step < 0:
            raise ValueError("bias parameters out of range")


# ---------------------------------------------------------------------------
# tasks

@dataclass(frozen=True)
class RestorationTask:
    """y = b . A x + noise on the low-res grid; b optional (None = fixed 1)."""

    y: np.ndarray
    a_op: LinearOperator
    bias: BiasField | None = None
    basis: BiasBasis | None = None
    tau_y: float = TAU_Y_RESTORATION

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if self.a_op.in_shape is None:
            raise ValueError("restoration operator must be pinned to a grid (known input shape)")
        if self.a_op.out_shape is not None and y.shape != self.a_op.out_shape:
            raise ValueError(f"observation shape {y.shape} does not match operator output {self.a_op.out_shape}")
        if self.tau_y <= 0:
            raise ValueError(f"tau_y must be > 0, got {self.tau_y}")
        if (self.bias is None) != (self.basis is None):
            raise ValueError("bias and basis must be provided together")
        if self.basis is not None and self.basis.dims != y.shape:
            raise ValueError(f"bias basis grid {self.basis.dims} does not match observation {y.shape}")
        object.__setattr__(self, "y", y)
        b = bias_eval(self.bias, self.basis) if self.bias is not None else None
        object.__setattr__(self, "_b", b)

    @property
    def state_shape(self):
        return self.a_op.in_shape

    def bias_values(self) -> np.ndarray | None:
        return self._b


@dataclass(frozen=True)
class InpaintingTask:
    """Observed voxels (mask = 1) of y constrain x; the rest is free."""

    y: np.ndarray
    mask: Mask
    tau_y: float = TAU_Y_INPAINTING

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.shape != self.mask.dims:
            raise ValueError(f"observation shape {y.shape} does not match mask {self.mask.dims}")
        if self.tau_y <= 0:
            raise ValueError(f"tau_y must be > 0, got {self.tau_y}")
        object.__setattr__(self, "y", y)

    @property
    def state_shape(self):
        return self.mask.dims


@dataclass(frozen=True)
class RefinementTask:
    """Pull toward an initial approximation x_ref with precision tau_s."""

    x_ref: np.ndarray
    tau_s: float = TAU_S_REFINEMENT

    def __post_init__(self):
        x = np.asarray(self.x_ref, dtype=np.float64)
        if self.tau_s <= 0:
            raise ValueError(f"tau_s must be > 0, got {self.tau_s}")
        object.__setattr__(self, "x_ref", x)

    @property
    def state_shape(self):
        return self.x_ref.shape


Task = RestorationTask | InpaintingTask | RefinementTask


def likelihood_grad(task: Task, x0: np.ndarray) -> np.ndarray:
    """Gradient of the negative log-likelihood at the clean state x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != tuple(task.state_shape):
        raise ValueError(f"state shape {x0.shape} does not match task {tuple(task.state_shape)}")
    if isinstance(task, RestorationTask):
        ax = task.a_op.apply(x0)
        b = task.bias_values()
        if b is None:
            resid = ax - task.y
            return task.a_op.adjoint(resid) / task.tau_y**2
        resid = b * ax - task.y
        return task.a_op.adjoint(b * resid) / task.tau_y**2
    if isinstance(task, InpaintingTask):
        grad = np.zeros_like(x0)
        sel = task.mask.data
        grad[sel] = (x0[sel] - task.y[sel]) / task.tau_y**2
        return grad
    if isinstance(task, RefinementTask):
        return task.tau_s * (x0 - task.x_ref)
    raise TypeError(f"unknown task type {type(task).__name__}")


def data_residual_rms(task: Task, x0: np.ndarray) -> float:
    """RMS of the task's data-fit residual (for reporting)."""
    if isinstance(task, RestorationTask):
        ax = task.a_op.apply(x0)
        b = task.bias_values()
        r = (ax if b is None else b * ax) - task.y
    elif isinstance(task, InpaintingTask):
        r = x0[task.mask.data] - task.y[task.mask.data]
    elif isinstance(task, RefinementTask):
        r = x0 - task.x_ref
    else:
        raise TypeError(f"unknown task type {type(task).__name__}")
    return float(np.sqrt(np.mean(np.square(r))))


# ---------------------------------------------------------------------------
# inner Langevin loop

def _eta_at(j: int, cfg: SolverConfig) -> float:
    if cfg.langevin_steps <= 1:
        return cfg.langevin_eta
    frac = j / (cfg.langevin_steps - 1)
    if cfg.eta_schedule == "geometric":
        return cfg.langevin_eta * cfg.eta_decay_ratio**frac
    return cfg.langevin_eta * (1.0 + (cfg.eta_decay_ratio - 1.0) * frac)


def langevin_x0(x_init: np.ndarray, x0_anchor: np.ndarray, tau_t: float,
                task: Task | None, cfg: SolverConfig, rng: Rng) -> np.ndarray:
    """Sample the anchored clean-state posterior:
    x <- x + eta_j * (grad log N(x; anchor, tau_t^2 I) + grad log p(y|x))
           + sqrt(2 eta_j) * eps_j,
    with eta_j decaying from langevin_eta by eta_decay_ratio across steps."""
    if tau_t <= 0:
        raise ValueError(f"tau_t must be > 0, got {tau_t}")
    x = np.asarray(x_init, dtype=np.float64).copy()
    anchor = np.asarray(x0_anchor, dtype=np.float64)
    if x.shape != anchor.shape:
        raise ValueError(f"init shape {x.shape} does not match anchor {anchor.shape}")
    inv_tau2 = 1.0 / tau_t**2
    for j in range(cfg.langevin_steps):
        eta = _eta_at(j, cfg)
        drift = (anchor - x) * inv_tau2
        if task is not None:
            drift -= likelihood_grad(task, x)
        x += eta * drift + np.sqrt(2.0 * eta) * rng.normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"Langevin state non-finite at inner step {j}")
    return x


# ---------------------------------------------------------------------------
# bias coordinate descent (restoration only)

def _bias_descent(task: RestorationTask, x0: np.ndarray, alpha_start: float,
                  updates: int) -> tuple[RestorationTask, float, list]:
    """Run c-updates at fixed x0; each accepted step must not increase the
    objective (step size is halved until it does not), so the sequence of
    objective values is non-increasing by construction.  Returns the updated
    task, the last accepted step size, and the objective trace (the value
    before the first update, then after each accepted one)."""
    cur = task
    alpha_used = alpha_start
    trace = [bias_objective(cur.bias, cur.basis, x0, cur.y, cur.a_op, cur.tau_y)]
    for _ in range(updates):
        obj0 = trace[-1]
        grad = bias_objective_grad(cur.bias, cur.basis, x0, cur.y, cur.a_op, cur.tau_y)
        alpha = alpha_used
        accepted = None
        accepted_obj = obj0
        for _try in range(60):
            if alpha <= 0:
                break
            cand = bias_update(cur.bias.c, grad, alpha)
            try:
                cand_field = BiasField(cand, cur.bias.lam)
                obj1 = bias_objective(cand_field, cur.basis, x0, cur.y, cur.a_op, cur.tau_y)
            except NumericError:
                alpha *= 0.5
                continue
            if obj1 <= obj0:
                accepted = cand_field
                accepted_obj = obj1
                break
            alpha *= 0.5
        if accepted is None:
            break  # keep c; objective unchanged, still non-increasing
        alpha_used = alpha
        cur = replace(cur, bias=accepted)
        trace.append(accepted_obj)
    return cur, alpha_used, trace


# ---------------------------------------------------------------------------
# outer annealing loop

@dataclass(frozen=True)
class StepRecord:
    sigma: float
    data_residual: float
    prior_residual: float
    finite: bool


@dataclass
class SolveReport:
    estimate: np.ndarray
    records: list[StepRecord]
    bias_coefficients: np.ndarray | None
    wall_time_s: float
    estimate_rule: str = "last_x0y"  # the final Langevin sample, not an average
    # per annealing step, the bias objective before the first c-update and
    # after each accepted one; None when no bias is being estimated
    bias_objective_traces: list[list[float]] | None = None

    def to_json(self) -> str:
        doc = {
            "estimate_rule": self.estimate_rule,
            "wall_time_s": self.wall_time_s,
            "annealing_steps": len(self.records),
            "bias_coefficients": None if self.bias_coefficients is None else list(self.bias_coefficients),
            "bias_objective_traces": self.bias_objective_traces,
            "records": [
                {
                    "sigma": r.sigma,
                    "data_residual": r.data_residual,
                    "prior_residual": r.prior_residual,
                    "finite": r.finite,
                }
                for r in self.records
            ],
        }
        return json.dumps(doc, indent=2)


def daps_solve(task: Task, score, cfg: SolverConfig, rng: Rng | None = None) -> SolveReport:
    """Annealed decoupled posterior sampling.

    Per annealing level sigma_t: estimate the clean state along the
    probability-flow ODE, sample the anchored posterior by Langevin dynamics
    with tau_t = multiplier * sigma_t, optionally update bias coefficients
    (restoration), then re-noise at the next level.  Returns the final
    Langevin sample and per-step diagnostics.
    """
    if rng is None:
        rng = Rng(cfg.seed)
    shape = tuple(task.state_shape)
    schedule = schedule_poly7(cfg.annealing_steps, cfg.sigma_min, cfg.sigma_max)
    sigmas = schedule.sigmas
    x = cfg.sigma_max * rng.normal(shape)
    cur_task = task
    alpha_working = None
    track_bias = (isinstance(task, RestorationTask) and task.bias is not None
                  and cfg.bias_updates_per_step > 0)
    bias_traces: list[list[float]] | None = [] if track_bias else None
    records: list[StepRecord] = []
    x0y = x
    t_start = time.perf_counter()
    for t, sigma_t in enumerate(sigmas):
        sigma_t = float(sigma_t)
        try:
            x0_hat = estimate_x0(x, sigma_t, score, cfg.ode_steps, cfg.ode_sigma_min, cfg.ode_method)
            x0y = langevin_x0(x0_hat, x0_hat, cfg.tau_t_multiplier * sigma_t, cur_task, cfg, rng)
        except NumericError as e:
            raise NumericError(f"annealing step {t} (sigma={sigma_t:.4g}): {e}") from e
        if track_bias:
            alpha_t = alpha_schedule(cfg.bias_alpha0, sigma_t, cfg.sigma_max)
            if alpha_working is not None:
                alpha_t = min(alpha_t, alpha_working * 4.0)
            cur_task, alpha_used, trace = _bias_descent(cur_task, x0y, alpha_t, cfg.bias_updates_per_step)
            if alpha_used > 0 and alpha_t > 0:
                alpha_working = alpha_used
            bias_traces.append(trace)
        records.append(StepRecord(
            sigma=sigma_t,
            data_residual=data_residual_rms(cur_task, x0y),
            prior_residual=float(np.sqrt(np.mean(np.square(x0y - x0_hat)))),
            finite=bool(np.all(np.isfinite(x0y))),
        ))
        if t + 1 < sigmas.size:
            x = x0y + float(sigmas[t + 1]) * rng.normal(shape)
    wall = time.perf_counter() - t_start
    bias_c = None
    if isinstance(cur_task, RestorationTask) and cur_task.bias is not None:
        bias_c = cur_task.bias.c.copy()
    return SolveReport(estimate=x0y, records=records, bias_coefficients=bias_c,
                       wall_time_s=wall, bias_objective_traces=bias_traces)


# ---------------------------------------------------------------------------
# high-level task entry points

def _resolved_tau(cfg: SolverConfig, default: float) -> float:
    return default if cfg.tau_y is None else cfg.tau_y


def restore(y: Volume, a_op: LinearOperator, score, cfg: SolverConfig | None = None,
            hr_affine: np.ndarray | None = None, estimate_bias: bool = True,
            rng: Rng | None = None) -> tuple[Volume, np.ndarray | None]:
    """Recover the high-res volume behind ``y`` = bias . A x + noise.

    ``a_op`` must be pinned to the high-res grid (known input shape).  When
    ``hr_affine`` is omitted it is approximated from the grid-size ratio.
    Returns the estimate and the final bias coefficients (None when bias
    estimation is disabled).
    """
    cfg = cfg or SolverConfig()
    hr_dims = a_op.in_shape
    if hr_dims is None:
        raise ValueError("operator must expose its high-res input shape")
    tau_y = _resolved_tau(cfg, TAU_Y_RESTORATION)
    bias_field = basis = None
    if estimate_bias:
        basis = basis_build(cfg.bias_order, y.dims)
        bias_field = BiasField(np.zeros(basis.k), cfg.bias_lambda)
    task = RestorationTask(y.data, a_op, bias_field, basis, tau_y)
    report = daps_solve(task, score, cfg, rng)
    if hr_affine is None:
        ratio = [y.dims[a] / hr_dims[a] for a in range(3)]
        hr_affine = y.affine @ np.diag([ratio[0], ratio[1], ratio[2], 1.0])
    spacing = tuple(float(np.linalg.norm(hr_affine[:3, a])) for a in range(3))
    return Volume(report.estimate, spacing, hr_affine), report.bias_coefficients


def inpaint(y: Volume, mask: Mask, score, cfg: SolverConfig | None = None,
            rng: Rng | None = None) -> Volume:
    """Fill unobserved voxels from the prior while constraining observed ones."""
    cfg = cfg or SolverConfig()
    if mask.dims != y.dims:
        raise ValueError(f"mask dims {mask.dims} do not match volume {y.dims}")
    task = InpaintingTask(y.data, mask, _resolved_tau(cfg, TAU_Y_INPAINTING))
    report = daps_solve(task, score, cfg, rng)
    return y.with_data(report.estimate)


def refine(x_hat: Volume, score, cfg: SolverConfig | None = None,
           tau_s: float = TAU_S_REFINEMENT, rng: Rng | None = None) -> Volume:
    """Resample around an initial approximation; larger tau_s trusts it more."""
    cfg = cfg or SolverConfig()
    task = RefinementTask(x_hat.data, tau_s)
    report = daps_solve(task, score, cfg, rng)
    return x_hat.with_data(report.estimate)
