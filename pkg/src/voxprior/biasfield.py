"""Exponential-polynomial bias field, its smoothing prior, and the annealed
coordinate-descent update of the coefficients.

The field over a grid is b_i = exp(sum_k c_k * phi_k(r_i)) with phi_k the 3D
monomials of total degree <= order, evaluated on coordinates normalized to
[-1, 1] per axis.  Positivity is automatic and log(b) is exactly linear in c.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .linops import LinearOperator

__all__ = [
    "BiasBasis",
    "BiasField",
    "alpha_schedule",
    "basis_build",
    "bias_eval",
    "bias_objective",
    "bias_objective_grad",
    "bias_update",
    "monomial_exponents",
]


def monomial_exponents(order: int) -> list[tuple[int, int, int]]:
    """Exponent triples (a, b, c) with a+b+c <= order, graded lexicographic:
    degree first, then x before y before z.  Order 1 yields
    [(0,0,0), (1,0,0), (0,1,0), (0,0,1)], i.e. [1, x, y, z]."""
    out = []
    for deg in range(order + 1):
        for a in range(deg, -1, -1):
            for b in range(deg - a, -1, -1):
                out.append((a, b, deg - a - b))
    return out


def _normalized_axis(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return 2.0 * np.arange(n, dtype=np.float64) / (n - 1) - 1.0


@dataclass(frozen=True)
class BiasBasis:
    """Monomial basis evaluated on a grid.

    ``phi`` has shape (K, n_voxels) with voxels in canonical flat order
    (x fastest); K = (order+1)(order+2)(order+3)/6.
    """

    order: int
    dims: tuple[int, int, int]
    phi: np.ndarray

    def __post_init__(self):
        k_expect = (self.order + 1) * (self.order + 2) * (self.order + 3) // 6
        n_vox = int(np.prod(self.dims))
        if self.phi.shape != (k_expect, n_vox):
            raise ValueError(f"basis shape {self.phi.shape} does not match order {self.order} on dims {self.dims}")
        phi = self.phi.copy()
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def k(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class BiasField:
    """Coefficients plus the smoothing-prior weight lambda (p(c) ~ exp(-lam*|c|^2))."""

    c: np.ndarray
    lam: float = 1e-2

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64).ravel()
        if not np.all(np.isfinite(c)):
            raise NumericError("bias coefficients must be finite")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "lam", float(self.lam))


def basis_build(order: int, dims) -> BiasBasis:
    """Monomials x^a y^b z^c with a+b+c <= order on normalized coordinates."""
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"dims must be 3 positive integers, got {dims}")
    axes = [_normalized_axis(n) for n in dims]
    # per-axis power tables up to the requested order
    powers = [np.stack([ax**p for p in range(order + 1)]) for ax in axes]
    exps = monomial_exponents(order)
    n_vox = int(np.prod(dims))
    phi = np.empty((len(exps), n_vox), dtype=np.float64)
    for k, (a, b, c) in enumerate(exps):
        cube = (
            powers[0][a][:, None, None]
            * powers[1][b][None, :, None]
            * powers[2][c][None, None, :]
        )
        phi[k] = cube.ravel(order="F")
    return BiasBasis(order, dims, phi)


def bias_eval(field: BiasField, basis: BiasBasis) -> np.ndarray:
    """b_i = exp(sum_k c_k phi_k(r_i)), shaped like the basis grid."""
    if field.c.shape != (basis.k,):
        raise ValueError(f"expected {basis.k} coefficients, got {field.c.shape}")
    log_b = field.c @ basis.phi
    with np.errstate(over="ignore"):
        b = np.exp(log_b)
    if not np.all(np.isfinite(b)):
        raise NumericError("bias field overflowed the finite range; coefficients too large")
    return b.reshape(basis.dims, order="F")


def _residual(field: BiasField, basis: BiasBasis, x0: np.ndarray, y: np.ndarray,
              a_op: LinearOperator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ax = a_op.apply(x0)
    if ax.shape != y.shape:
        raise ValueError(f"operator output {ax.shape} does not match observation {y.shape}")
    if ax.shape != basis.dims:
        raise ValueError(f"basis grid {basis.dims} does not match observation grid {ax.shape}")
    b = bias_eval(field, basis)
    with np.errstate(over="ignore"):
        return b * ax - y, b, ax


def bias_objective(field: BiasField, basis: BiasBasis, x0: np.ndarray, y: np.ndarray,
                   a_op: LinearOperator, tau_y: float) -> float:
    """|y - b.Ax0|^2 / (2 tau_y^2) + lam |c|^2 / 2."""
    if tau_y <= 0:
        raise ValueError(f"tau_y must be > 0, got {tau_y}")
    r, _, _ = _residual(field, basis, x0, y, a_op)
    with np.errstate(over="ignore"):
        val = 0.5 * float(r.ravel() @ r.ravel()) / tau_y**2 + 0.5 * field.lam * float(field.c @ field.c)
    if not np.isfinite(val):
        raise NumericError("bias objective is non-finite")
    return val


def bias_objective_grad(field: BiasField, basis: BiasBasis, x0: np.ndarray, y: np.ndarray,
                        a_op: LinearOperator, tau_y: float) -> np.ndarray:
    """Exact gradient of the data-fit-plus-prior objective w.r.t. c,
    using db_i/dc_k = b_i * phi_k(r_i)."""
    if tau_y <= 0:
        raise ValueError(f"tau_y must be > 0, got {tau_y}")
    r, b, ax = _residual(field, basis, x0, y, a_op)
    weighted = (r * b * ax).ravel(order="F")
    grad = basis.phi @ weighted / tau_y**2 + field.lam * field.c
    if not np.all(np.isfinite(grad)):
        raise NumericError("bias gradient is non-finite")
    return grad


def bias_update(c: np.ndarray, grad: np.ndarray, alpha_t: float) -> np.ndarray:
    """One annealed descent step: c' = c - alpha_t * grad."""
    if alpha_t < 0:
        raise ValueError(f"alpha_t must be >= 0, got {alpha_t}")
    c = np.asarray(c, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if c.shape != grad.shape:
        raise ValueError(f"coefficient/gradient shape mismatch: {c.shape} vs {grad.shape}")
    return c - alpha_t * grad


def alpha_schedule(alpha0: float, sigma_t: float, sigma_max: float) -> float:
    """Annealing of the coefficient step size: small early (high sigma),
    approaching alpha0 late; clipped to [0, alpha0]."""
    if alpha0 < 0:
        raise ValueError(f"alpha0 must be >= 0, got {alpha0}")
    return float(np.clip(alpha0 * (1.0 - sigma_t / sigma_max), 0.0, alpha0))
