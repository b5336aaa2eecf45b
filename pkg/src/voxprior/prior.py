"""Priors over volumes: the polynomial noise schedule, analytic
Gaussian-mixture scores, a compact trainable denoiser with EDM
preconditioning, the probability-flow x0 estimator, and unconditional
ancestral sampling.

Analytic priors operate on flattened states; any input shape is accepted
and restored on output, so flat vectors and volume grids share one path.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, NumericError
from .grid import Rng

__all__ = [
    "Denoiser",
    "GmmPrior",
    "NoiseSchedule",
    "denoiser_score",
    "edm_scalings",
    "estimate_x0",
    "gmm_score",
    "sample_prior",
    "schedule_poly7",
]

POLY_RHO = 7.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing noise levels sigma_0 > ... > sigma_{N-1}."""

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=np.float64)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("schedule needs at least two levels")
        if not np.all(s > 0) or not np.all(np.diff(s) < 0):
            raise ValueError("schedule must be strictly decreasing and positive")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "sigmas", s)

    @property
    def steps(self) -> int:
        return self.sigmas.size

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[0])

    @property
    def sigma_min(self) -> float:
        return float(self.sigmas[-1])


def schedule_poly7(steps: int, sigma_min: float, sigma_max: float) -> NoiseSchedule:
    """sigma_i = (sigma_max^(1/7) + i/(steps-1) * (sigma_min^(1/7) - sigma_max^(1/7)))^7.

    Endpoints are pinned to sigma_max / sigma_min exactly.
    """
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    if not (0 < sigma_min < sigma_max):
        raise ValueError(f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    t = np.arange(steps, dtype=np.float64) / (steps - 1)
    lo = sigma_min ** (1.0 / POLY_RHO)
    hi = sigma_max ** (1.0 / POLY_RHO)
    sigmas = (hi + t * (lo - hi)) ** POLY_RHO
    sigmas[0] = sigma_max
    sigmas[-1] = sigma_min
    return NoiseSchedule(sigmas)


# ---------------------------------------------------------------------------
# analytic Gaussian-mixture prior

@dataclass(frozen=True)
class GmmPrior:
    """Isotropic Gaussian mixture: sum_j w_j N(mu_j, s_j^2 I).

    Smoothing with noise level sigma yields another GMM with variances
    s_j^2 + sigma^2, so scores are available in closed form.  ``shape`` is
    an optional grid shape for states (kept for (de)serialization).
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    shape: tuple | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        m = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        v = np.asarray(self.variances, dtype=np.float64).ravel()
        if m.shape[0] != w.size or v.size != w.size:
            raise ValueError(f"inconsistent component counts: {w.size} weights, {m.shape[0]} means, {v.size} variances")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1 (within 1e-12)")
        if np.any(v <= 0):
            raise ValueError("variances must be positive")
        for arr in (w, m, v):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "shape", tuple(self.shape) if self.shape is not None else None)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def kind(self) -> str:
        return "gaussian" if self.n_components == 1 else "gmm"

    def evaluate(self, x: np.ndarray, sigma: float) -> np.ndarray:
        return gmm_score(x, sigma, self)

    def to_json(self) -> str:
        doc = {
            "kind": "gmm",
            "weights": self.weights.tolist(),
            "variances": self.variances.tolist(),
            "means": self.means.tolist(),
        }
        if self.shape is not None:
            doc["shape"] = list(self.shape)
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "GmmPrior":
        try:
            doc = json.loads(text)
            shape = tuple(doc["shape"]) if "shape" in doc else None
            return cls(doc["weights"], doc["means"], doc["variances"], shape)
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise FormatError(f"bad GMM prior document: {e}") from e


def _log_weighted_gaussians(x_flat: np.ndarray, sigma: float, prior: GmmPrior):
    v = prior.variances + sigma**2                    # (J,)
    diff = prior.means - x_flat                       # (J, D)
    sq = np.einsum("jd,jd->j", diff, diff)
    d = x_flat.size
    log_terms = np.log(prior.weights) - 0.5 * d * np.log(2.0 * np.pi * v) - 0.5 * sq / v
    return log_terms, diff, v


def gmm_score(x: np.ndarray, sigma: float, prior: GmmPrior) -> np.ndarray:
    """Gradient of log sum_j w_j N(x; mu_j, (s_j^2 + sigma^2) I),
    log-sum-exp stabilized.  Accepts any state shape matching prior.dim."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    if flat.size != prior.dim:
        raise ValueError(f"state has {flat.size} entries, prior expects {prior.dim}")
    log_terms, diff, v = _log_weighted_gaussians(flat, sigma, prior)
    log_terms = log_terms - log_terms.max()
    gamma = np.exp(log_terms)
    gamma /= gamma.sum()
    score = (gamma / v) @ diff
    return score.reshape(x.shape)


def gmm_logpdf(x: np.ndarray, sigma: float, prior: GmmPrior) -> float:
    """Log-density of the sigma-smoothed mixture (used by test oracles)."""
    flat = np.asarray(x, dtype=np.float64).ravel()
    log_terms, _, _ = _log_weighted_gaussians(flat, sigma, prior)
    peak = log_terms.max()
    return float(peak + np.log(np.exp(log_terms - peak).sum()))


# ---------------------------------------------------------------------------
# compact trainable denoiser with EDM preconditioning

def edm_scalings(sigma, sigma_data: float):
    """(c_skip, c_out, c_in, c_noise) for preconditioning the raw network:
    D(x; sigma) = c_skip*x + c_out*F(c_in*x, c_noise)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    s2 = sigma**2 + sigma_data**2
    c_skip = sigma_data**2 / s2
    c_out = sigma * sigma_data / np.sqrt(s2)
    c_in = 1.0 / np.sqrt(s2)
    c_noise = np.log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


_MAGIC = b"VXDN"
_VERSION = 1
PARAM_KEYS = ("w1", "b1", "u1", "w2", "b2", "u2", "w3", "b3")


class Denoiser:
    """Two-hidden-layer tanh network under EDM preconditioning.

    The raw network F sees the scaled state c_in*x plus the noise embedding
    c_noise, injected additively into each hidden layer through learned
    per-unit couplings.  Gradients are derived by hand in the trainer; no
    autodiff machinery is involved.
    """

    kind = "denoiser"

    def __init__(self, params: dict[str, np.ndarray], sigma_data: float = 0.5):
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_KEYS}
        self.sigma_data = float(sigma_data)
        h, d = self.params["w1"].shape
        if self.params["w2"].shape != (h, h) or self.params["w3"].shape != (d, h):
            raise ValueError("inconsistent layer shapes")
        for key, n in (("b1", h), ("u1", h), ("b2", h), ("u2", h), ("b3", d)):
            if self.params[key].shape != (n,):
                raise ValueError(f"parameter {key} must have shape ({n},)")
        self.dim = d
        self.hidden = h

    @classmethod
    def init(cls, dim: int, hidden: int, rng: Rng, sigma_data: float = 0.5,
             zero_final: bool = True) -> "Denoiser":
        """Random init; the output layer starts at zero by default so the
        initial denoiser is the pure skip path D(x) = c_skip*x."""
        params = {
            "w1": rng.normal((hidden, dim)) / np.sqrt(dim),
            "b1": np.zeros(hidden),
            "u1": rng.normal((hidden,)) * 0.1,
            "w2": rng.normal((hidden, hidden)) / np.sqrt(hidden),
            "b2": np.zeros(hidden),
            "u2": rng.normal((hidden,)) * 0.1,
            "w3": np.zeros((dim, hidden)) if zero_final else rng.normal((dim, hidden)) / np.sqrt(hidden),
            "b3": np.zeros(dim),
        }
        return cls(params, sigma_data)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _forward(self, v: np.ndarray, t: np.ndarray):
        """Raw network on pre-scaled input; returns output and the
        activations needed for the backward pass."""
        p = self.params
        a1 = v @ p["w1"].T + p["b1"] + np.outer(t, p["u1"])
        h1 = np.tanh(a1)
        a2 = h1 @ p["w2"].T + p["b2"] + np.outer(t, p["u2"])
        h2 = np.tanh(a2)
        f = h2 @ p["w3"].T + p["b3"]
        return f, (v, t, h1, h2)

    def _backward(self, cache, df: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. parameters, given dL/dF."""
        p = self.params
        v, t, h1, h2 = cache
        grads: dict[str, np.ndarray] = {}
        grads["w3"] = df.T @ h2
        grads["b3"] = df.sum(axis=0)
        dh2 = df @ p["w3"]
        da2 = dh2 * (1.0 - h2**2)
        grads["w2"] = da2.T @ h1
        grads["b2"] = da2.sum(axis=0)
        grads["u2"] = da2.T @ t
        dh1 = da2 @ p["w2"]
        da1 = dh1 * (1.0 - h1**2)
        grads["w1"] = da1.T @ v
        grads["b1"] = da1.sum(axis=0)
        grads["u1"] = da1.T @ t
        return grads

    def denoise(self, x: np.ndarray, sigma) -> np.ndarray:
        """EDM-preconditioned prediction of the clean state.

        ``x`` may be a flat state, a batch (B, dim), or any grid whose size
        equals ``dim``; sigma is a scalar or per-row vector for batches.
        """
        x = np.asarray(x, dtype=np.float64)
        orig_shape = x.shape
        if x.ndim == 2 and x.shape[1] == self.dim:
            batch = x
        else:
            if x.size != self.dim:
                raise ValueError(f"state has {x.size} entries, denoiser expects {self.dim}")
            batch = x.reshape(1, self.dim)
        sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (batch.shape[0],))
        c_skip, c_out, c_in, c_noise = edm_scalings(sig, self.sigma_data)
        f, _ = self._forward(c_in[:, None] * batch, c_noise)
        out = c_skip[:, None] * batch + c_out[:, None] * f
        return out.reshape(orig_shape)

    def evaluate(self, x: np.ndarray, sigma: float) -> np.ndarray:
        return denoiser_score(x, sigma, self)

    # -- versioned binary checkpoint: magic, version, dim, hidden,
    #    sigma_data, then parameters as little-endian float32 in fixed order
    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIId", _VERSION, self.dim, self.hidden, self.sigma_data))
            for key in PARAM_KEYS:
                fh.write(self.params[key].astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str) -> "Denoiser":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != _MAGIC:
            raise FormatError(f"bad denoiser magic {blob[:4]!r}, expected {_MAGIC!r}")
        try:
            version, dim, hidden, sigma_data = struct.unpack_from("<IIId", blob, 4)
        except struct.error as e:
            raise FormatError(f"truncated denoiser header: {e}") from e
        if version != _VERSION:
            raise FormatError(f"unsupported denoiser version {version}")
        shapes = {
            "w1": (hidden, dim), "b1": (hidden,), "u1": (hidden,),
            "w2": (hidden, hidden), "b2": (hidden,), "u2": (hidden,),
            "w3": (dim, hidden), "b3": (dim,),
        }
        offset = 4 + struct.calcsize("<IIId")
        params = {}
        for key in PARAM_KEYS:
            n = int(np.prod(shapes[key]))
            end = offset + 4 * n
            if end > len(blob):
                raise FormatError(f"truncated denoiser payload at parameter {key}")
            params[key] = np.frombuffer(blob[offset:end], dtype="<f4").astype(np.float64).reshape(shapes[key])
            offset = end
        if offset != len(blob):
            raise FormatError(f"{len(blob) - offset} trailing bytes after denoiser payload")
        return cls(params, sigma_data)


def denoiser_score(x: np.ndarray, sigma: float, d: Denoiser) -> np.ndarray:
    """Score via the denoising identity: (d(x, sigma) - x) / sigma^2."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    den = d.denoise(x, sigma)
    if not np.all(np.isfinite(den)):
        raise NumericError("denoiser produced non-finite output")
    return (den - x) / sigma**2


# ---------------------------------------------------------------------------
# PF-ODE x0 estimator and ancestral sampling

def _eval_score(score, x: np.ndarray, sigma: float) -> np.ndarray:
    if hasattr(score, "evaluate"):
        return score.evaluate(x, sigma)
    return score(x, sigma)


def estimate_x0(x_t: np.ndarray, sigma_t: float, score, ode_steps: int = 5,
                sigma_stop: float = 0.01, method: str = "euler") -> np.ndarray:
    """Clean-state estimate: integrate dx/dsigma = -sigma * score(x, sigma)
    from sigma_t down to sigma_stop on a poly-7 sub-schedule, then apply one
    Tweedie jump x0 = x + sigma^2 * score(x, sigma) at the stop level.

    With sigma_t <= sigma_stop the ODE leg is skipped (single jump).
    """
    if ode_steps < 1:
        raise ValueError(f"ode_steps must be >= 1, got {ode_steps}")
    if sigma_t <= 0:
        raise ValueError(f"sigma_t must be > 0, got {sigma_t}")
    if method not in ("euler", "heun"):
        raise ValueError(f"unknown ODE method {method!r}")
    x = np.asarray(x_t, dtype=np.float64)
    stop = min(float(sigma_stop), float(sigma_t))
    if stop <= 0:
        raise ValueError(f"sigma_stop must be > 0, got {sigma_stop}")
    if sigma_t > stop:
        sig = schedule_poly7(ode_steps + 1, stop, float(sigma_t)).sigmas
        for i in range(ode_steps):
            s_cur, s_next = sig[i], sig[i + 1]
            slope = -s_cur * _eval_score(score, x, s_cur)
            x_next = x + (s_next - s_cur) * slope
            if method == "heun":
                slope2 = -s_next * _eval_score(score, x_next, s_next)
                x_next = x + 0.5 * (s_next - s_cur) * (slope + slope2)
            x = x_next
            if not np.all(np.isfinite(x)):
                raise NumericError(f"x0 estimate diverged at ODE step {i} (sigma {s_cur:.4g} -> {s_next:.4g})")
    x0 = x + stop**2 * _eval_score(score, x, stop)
    if not np.all(np.isfinite(x0)):
        raise NumericError("x0 estimate is non-finite after the Tweedie jump")
    return x0


def sample_prior(schedule: NoiseSchedule, score, rng: Rng, shape,
                 ode_steps: int = 5, sigma_stop: float = 0.01,
                 method: str = "euler") -> np.ndarray:
    """Unconditional ancestral sampling over the schedule.

    x starts at N(0, sigma_0^2 I); each step denoises to x0 and re-noises at
    the next level; the return value is the final denoised state.
    """
    if isinstance(shape, int):
        shape = (shape,)
    sigmas = schedule.sigmas
    x = sigmas[0] * rng.normal(shape)
    for i in range(sigmas.size - 1):
        x0 = estimate_x0(x, float(sigmas[i]), score, ode_steps, sigma_stop, method)
        x = x0 + sigmas[i + 1] * rng.normal(shape)
    return estimate_x0(x, float(sigmas[-1]), score, ode_steps, sigma_stop, method)
