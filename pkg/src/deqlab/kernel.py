"""Population Gram matrices of the infinite-width, weight-untied limit.

Layer l of the limit has kernel entries K^(l)_ij = rho^(l) Q(cos_theta^(l)_ij)
with rho^(l) = (1 - sigma_w^(2l)) / (1 - sigma_w^2) and

    cos_theta^(l)_ij = (1 - 1/rho^(l)) Q(cos_theta^(l-1)_ij)
                       + (1/rho^(l)) x_i^T x_j / d,

where Q(x) = (sqrt(1-x^2) + (pi - arccos x) x) / pi is the degree-one
arc-cosine kernel of ReLU. At l = 1 this reduces to rho^(1) = 1 and
cos_theta^(1) = x_i^T x_j / d. Letting l -> infinity, each pair's cosine
solves the scalar fixed point c = sigma_w^2 Q(c) + (1 - sigma_w^2) x^T x'/d
and K_ij = Q(c)/(1 - sigma_w^2). The least eigenvalue of the limit, here
`lambda_star`, controls how wide a finite model must be for its initial
Gram matrix to be well conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InputError
from .linalg import as_matrix, min_eig_sym

__all__ = [
    "PopulationKernel",
    "q_func",
    "kernel_layer_sequence",
    "kernel_recursion",
    "kernel_fixed_point",
    "suggested_width",
    "suggested_depth",
    "export_kernel",
]


@dataclass(frozen=True)
class PopulationKernel:
    """Kernel matrix K with its pairwise cosines and least eigenvalue.

    `depth` is the layer index, or None for the infinite-depth limit.
    `lambda_star` may legitimately come out <= 0 for data violating the
    no-parallel-pairs assumption; it is reported, never clamped, and
    downstream consumers decide whether that is fatal.
    """

    k: np.ndarray
    cos_theta: np.ndarray
    lambda_star: float
    sigma_w2: float
    depth: int | None

    @property
    def n(self) -> int:
        return self.k.shape[0]


def q_func(x):
    """Arc-cosine kernel Q(x) = (sqrt(1-x^2) + (pi - arccos x) x) / pi.

    Accepts scalars or arrays on [-1, 1]; inputs outside by at most 1e-12
    are clamped, anything further out is an error.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InputError("q_func input contains non-finite values")
    over = np.abs(arr) - 1.0
    if np.any(over > 1e-12):
        raise InputError(f"q_func input out of [-1, 1]: max overshoot {over.max():.3e}")
    arr = np.clip(arr, -1.0, 1.0)
    out = (np.sqrt(1.0 - arr * arr) + (np.pi - np.arccos(arr)) * arr) / np.pi
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def _check_inputs(x: np.ndarray, sigma_w2: float) -> np.ndarray:
    x = as_matrix(x, "X")
    d = x.shape[0]
    norms = np.linalg.norm(x, axis=0)
    if np.any(np.abs(norms - np.sqrt(d)) > 1e-8 * np.sqrt(d)):
        raise InputError("X columns must be normalized to norm sqrt(d)")
    if not (0.0 < sigma_w2 < 0.125):
        raise InputError(f"sigma_w2 must lie in (0, 1/8), got {sigma_w2}")
    c1 = (x.T @ x) / d
    np.fill_diagonal(c1, 1.0)  # exact on the diagonal
    return np.clip(c1, -1.0, 1.0)


def rho(sigma_w2: float, depth: int) -> float:
    """Diagonal kernel value (1 - sigma_w^(2 l)) / (1 - sigma_w^2)."""
    return (1.0 - sigma_w2**depth) / (1.0 - sigma_w2)


def kernel_layer_sequence(x, sigma_w2: float, depth: int):
    """K^(1), ..., K^(depth) together with the final cosine matrix."""
    if depth < 1:
        raise InputError(f"depth must be >= 1, got {depth}")
    cos = _check_inputs(x, sigma_w2)
    xtx_over_d = cos.copy()
    ks = []
    # l = 1: rho = 1 and the cosine is the raw normalized inner product.
    k = q_func(cos)
    np.fill_diagonal(k, 1.0)
    ks.append(k)
    for level in range(2, depth + 1):
        r = rho(sigma_w2, level)
        cos = (1.0 - 1.0 / r) * q_func(cos) + xtx_over_d / r
        np.fill_diagonal(cos, 1.0)
        k = r * q_func(cos)
        np.fill_diagonal(k, r)
        ks.append(k)
    return ks, cos


def kernel_recursion(x, sigma_w2: float, depth: int) -> PopulationKernel:
    """Depth-L population kernel by running the layer recursion."""
    ks, cos = kernel_layer_sequence(x, sigma_w2, depth)
    k = ks[-1]
    return PopulationKernel(k=k, cos_theta=cos, lambda_star=min_eig_sym(k),
                            sigma_w2=sigma_w2, depth=depth)


def kernel_fixed_point(x, sigma_w2: float, tol: float = 1e-14,
                       max_iter: int = 10000) -> PopulationKernel:
    """Infinite-depth kernel by solving each pair's scalar fixed point.

    Picard iteration c <- sigma_w^2 Q(c) + (1 - sigma_w^2) x^T x'/d from
    c = x^T x'/d; a contraction with factor at most sigma_w^2 < 1/8.
    """
    if tol <= 0:
        raise InputError("tol must be positive")
    if max_iter < 1:
        raise InputError("max_iter must be >= 1")
    target = _check_inputs(x, sigma_w2)
    c = target.copy()
    for _ in range(max_iter):
        c_next = sigma_w2 * q_func(c) + (1.0 - sigma_w2) * target
        delta = np.abs(c_next - c).max()
        c = c_next
        if delta <= tol:
            break
    else:
        raise ConvergenceError(
            f"kernel fixed point did not reach tol={tol:.1e}", residual=delta)
    np.fill_diagonal(c, 1.0)
    k = q_func(c) / (1.0 - sigma_w2)
    np.fill_diagonal(k, 1.0 / (1.0 - sigma_w2))
    return PopulationKernel(k=k, cos_theta=c, lambda_star=min_eig_sym(k),
                            sigma_w2=sigma_w2, depth=None)


def suggested_width(n: int, lambda_star: float, t: float, c: float = 1.0) -> int:
    """ceil(c * (n^2 / lambda_star^2) * log(n / (lambda_star t))).

    A report, never an enforced gate: the constant in front is unknown,
    so `c` is exposed and defaults to 1.
    """
    if lambda_star <= 0:
        raise InputError(f"lambda_star must be positive, got {lambda_star}")
    if not (0.0 < t < 1.0):
        raise InputError(f"failure probability t must lie in (0, 1), got {t}")
    if c <= 0:
        raise InputError(f"constant c must be positive, got {c}")
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    return math.ceil(c * (n**2 / lambda_star**2) * math.log(n / (lambda_star * t)))


def suggested_depth(n: int, lambda_star: float, sigma_w2: float,
                    c: float = 1.0) -> int:
    """ceil(c * log(n / lambda_star) / log(sqrt(2) / (4 sigma_w))).

    The denominator is positive exactly when sigma_w^2 < 1/8; it tends to
    zero (and the suggestion diverges) as sigma_w^2 approaches 1/8.
    """
    if lambda_star <= 0:
        raise InputError(f"lambda_star must be positive, got {lambda_star}")
    if not (0.0 < sigma_w2 < 0.125):
        raise InputError(f"sigma_w2 must lie in (0, 1/8), got {sigma_w2}")
    if c <= 0:
        raise InputError(f"constant c must be positive, got {c}")
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    denom = math.log(math.sqrt(2.0) / (4.0 * math.sqrt(sigma_w2)))
    return math.ceil(c * math.log(n / lambda_star) / denom)


def export_kernel(pk: PopulationKernel, out_dir, t: float = 0.01,
                  width_c: float = 1.0, depth_c: float = 1.0) -> dict:
    """Write K and cos_theta CSVs plus a summary record; returns the summary."""
    from pathlib import Path

    from .data import save_matrix_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix_csv(out / "kernel.csv", pk.k)
    save_matrix_csv(out / "cos_theta.csv", pk.cos_theta)
    summary = {
        "n": pk.n,
        "sigma_w2": pk.sigma_w2,
        "depth": "infinite" if pk.depth is None else pk.depth,
        "lambda_star": pk.lambda_star,
    }
    if pk.lambda_star > 0:
        summary["suggested_width"] = suggested_width(pk.n, pk.lambda_star, t, width_c)
        summary["suggested_depth"] = suggested_depth(pk.n, pk.lambda_star,
                                                     pk.sigma_w2, depth_c)
    else:
        summary["warning"] = ("lambda_star <= 0: data violates the "
                              "no-parallel-pairs assumption")
    lines = [f"{key} = {value}" for key, value in summary.items()]
    (out / "kernel_summary.txt").write_text("\n".join(lines) + "\n")
    return summary
