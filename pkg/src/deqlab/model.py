"""DEQ parameters, initialization, and the contractive fixed-point solver.

The model is z* = relu(W z* + U x) per input column, with prediction
a^T z*. Initialization follows the variance scaling W ~ N(0, 2*sigma_w^2/m),
U ~ N(0, 2/d), a ~ N(0, 1/m) with sigma_w^2 < 1/8, which keeps the layer
map a contraction with high probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InputError, WellPosednessError
from .linalg import as_matrix, spectral_norm

__all__ = [
    "DeqParams",
    "SolverConfig",
    "EquilibriumSolution",
    "SIGMA_W2_MAX",
    "init_params",
    "forward_layer",
    "solve_equilibrium",
    "predict",
    "loss",
    "well_posedness",
    "save_params",
    "load_params",
]

SIGMA_W2_MAX = 0.125  # the theory's standing assumption: sigma_w^2 < 1/8

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DeqParams:
    """Trainable triple (W, U, a) plus the variance scale sigma_w^2."""

    w: np.ndarray  # (m, m)
    u: np.ndarray  # (m, d)
    a: np.ndarray  # (m,)
    sigma_w2: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        u = np.asarray(self.u, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "a", a)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InputError(f"W must be square, got {w.shape}")
        m = w.shape[0]
        if u.ndim != 2 or u.shape[0] != m:
            raise InputError(f"U must be ({m}, d), got {u.shape}")
        if a.shape != (m,):
            raise InputError(f"a must have shape ({m},), got {a.shape}")
        if not (0.0 < self.sigma_w2 < SIGMA_W2_MAX):
            raise InputError(
                f"sigma_w2 must lie in (0, 1/8), got {self.sigma_w2}")
        for name, arr in (("W", w), ("U", u), ("a", a)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains non-finite entries")

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @property
    def d(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 10000

    def __post_init__(self):
        if self.tol <= 0:
            raise InputError("solver tol must be positive")
        if self.max_iter < 1:
            raise InputError("solver max_iter must be >= 1")


@dataclass(frozen=True)
class EquilibriumSolution:
    """Equilibrium features Z (m x n) with convergence diagnostics.

    `residual` is ||Z - relu(W Z + U X)||_F / max(1, ||Z||_F) for the
    returned Z. `iterations` counts layer-map applications. `residuals`
    is the per-iterate residual history (one entry per application).
    """

    z: np.ndarray
    residual: float
    iterations: int
    residuals: tuple = ()


def init_params(m: int, d: int, sigma_w2: float, seed: int) -> DeqParams:
    """Gaussian initialization; deterministic in (m, d, sigma_w2, seed).

    Draw order is W, then U, then a, from one PCG64 stream.
    """
    if m < 1 or d < 1:
        raise InputError(f"m and d must be >= 1, got m={m}, d={d}")
    if not (0.0 < sigma_w2 < SIGMA_W2_MAX):
        raise InputError(f"sigma_w2 must lie in (0, 1/8), got {sigma_w2}")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((m, m)) * np.sqrt(2.0 * sigma_w2 / m)
    u = rng.standard_normal((m, d)) * np.sqrt(2.0 / d)
    a = rng.standard_normal(m) * np.sqrt(1.0 / m)
    return DeqParams(w=w, u=u, a=a, sigma_w2=sigma_w2)


def forward_layer(p: DeqParams, z, x) -> np.ndarray:
    """One layer application: relu(W z + U x)."""
    z = np.asarray(z, dtype=np.float64)
    x = as_matrix(x, "X")
    if z.shape[0] != p.m or x.shape[0] != p.d or z.shape[1] != x.shape[1]:
        raise InputError(
            f"shape mismatch: W {p.w.shape}, U {p.u.shape}, "
            f"Z {z.shape}, X {x.shape}")
    return np.maximum(p.w @ z + p.u @ x, 0.0)


def solve_equilibrium(p: DeqParams, x, cfg: SolverConfig = SolverConfig(),
                      z0=None, w_norm: float | None = None) -> EquilibriumSolution:
    """Picard iteration Z <- relu(W Z + U X) until the residual meets tol.

    Starts from Z = 0 unless `z0` (a nonnegative warm start, typically a
    previous solution for nearby parameters) is given. Geometric
    convergence at rate <= ||W||_2 under well-posedness. `w_norm` skips
    the spectral-norm precondition check when the caller already knows it.
    """
    x = as_matrix(x, "X")
    if x.shape[0] != p.d:
        raise InputError(f"X has {x.shape[0]} rows, expected d={p.d}")
    if w_norm is None:
        w_norm = spectral_norm(p.w)
    if w_norm >= 1.0:
        raise WellPosednessError(
            f"||W||_2 = {w_norm:.6f} >= 1: the layer map is not a contraction")
    n = x.shape[1]
    if z0 is None:
        z = np.zeros((p.m, n))
    else:
        z = np.asarray(z0, dtype=np.float64)
        if z.shape != (p.m, n):
            raise InputError(f"z0 has shape {z.shape}, expected ({p.m}, {n})")
        if not np.all(np.isfinite(z)) or np.any(z < 0.0):
            raise InputError("z0 must be finite and nonnegative (a ReLU image)")

    ux = p.u @ x
    history = []
    for k in range(1, cfg.max_iter + 1):
        z_next = np.maximum(p.w @ z + ux, 0.0)
        res = float(np.linalg.norm(z_next - z)
                    / max(1.0, np.linalg.norm(z)))
        history.append(res)
        if res <= cfg.tol:
            return EquilibriumSolution(z=z, residual=res, iterations=k,
                                       residuals=tuple(history))
        z = z_next
    raise ConvergenceError(
        f"equilibrium solve did not reach tol={cfg.tol:.1e} in "
        f"{cfg.max_iter} iterations (last residual {history[-1]:.3e})",
        residual=history[-1], iterations=cfg.max_iter)


def predict(p: DeqParams, z) -> np.ndarray:
    """Per-column readout a^T z_i."""
    z = as_matrix(z, "Z")
    if z.shape[0] != p.m:
        raise InputError(f"Z has {z.shape[0]} rows, expected m={p.m}")
    return p.a @ z


def loss(yhat, y) -> float:
    """Quadratic empirical risk 0.5 * ||yhat - y||_2^2."""
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if yhat.shape != y.shape:
        raise InputError(f"length mismatch: {yhat.shape} vs {y.shape}")
    diff = yhat - y
    return 0.5 * float(diff @ diff)


def well_posedness(p: DeqParams, margin: float = 0.0):
    """(||W||_2, ok) where ok means ||W||_2 < 1 - margin."""
    s = spectral_norm(p.w)
    return s, s < 1.0 - margin


def save_params(path, p: DeqParams) -> None:
    """Versioned binary checkpoint; round-trips bit-exactly."""
    np.savez(path, format_version=np.int64(CHECKPOINT_VERSION),
             m=np.int64(p.m), d=np.int64(p.d),
             sigma_w2=np.float64(p.sigma_w2), w=p.w, u=p.u, a=p.a)


def load_params(path) -> DeqParams:
    with np.load(path) as ckpt:
        version = int(ckpt["format_version"])
        if version != CHECKPOINT_VERSION:
            raise InputError(f"unsupported checkpoint version {version}")
        p = DeqParams(w=ckpt["w"], u=ckpt["u"], a=ckpt["a"],
                      sigma_w2=float(ckpt["sigma_w2"]))
        if p.m != int(ckpt["m"]) or p.d != int(ckpt["d"]):
            raise InputError("checkpoint dimensions are inconsistent")
    return p
