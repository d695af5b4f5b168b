"""Implicit-differentiation gradients through the equilibrium.

Rather than forming the mn x mn Jacobian, all three parameter gradients
come from one adjoint fixed point

    M = D .* (a e^T + W^T M),    e = yhat - y,

where D is the 0/1 ReLU activation mask at the equilibrium. Then

    grad_W = M Z^T,   grad_U = M X^T,   grad_a = Z e.

The dense Kronecker construction (J, D, R formed literally) survives here
only as a small-instance reference, alongside a central finite-difference
reference; both are used by the verification harness and the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InputError, WellPosednessError
from .linalg import as_matrix, spectral_norm
from .model import DeqParams, SolverConfig, loss, predict, solve_equilibrium

__all__ = [
    "GradientTriple",
    "AdjointSolution",
    "activation_mask",
    "solve_adjoint",
    "gradients",
    "grad_norm_sq",
    "solve_sensitivity",
    "dense_gradients_reference",
    "finite_difference_gradients",
]


@dataclass(frozen=True)
class GradientTriple:
    gw: np.ndarray  # (m, m)
    gu: np.ndarray  # (m, d)
    ga: np.ndarray  # (m,)


@dataclass(frozen=True)
class AdjointSolution:
    m: np.ndarray  # (m, n) adjoint fixed point
    residual: float
    iterations: int
    residuals: tuple = ()


def activation_mask(p: DeqParams, z, x) -> np.ndarray:
    """0/1 indicator of W z + U x >= 0 (the ReLU sub-gradient; ties at
    exactly zero map to 1)."""
    z = as_matrix(z, "Z")
    x = as_matrix(x, "X")
    if z.shape[0] != p.m or x.shape[0] != p.d or z.shape[1] != x.shape[1]:
        raise InputError(f"shape mismatch: Z {z.shape}, X {x.shape}")
    pre = p.w @ z + p.u @ x
    return (pre >= 0.0).astype(np.float64)


def solve_adjoint(p: DeqParams, mask, e, cfg: SolverConfig = SolverConfig(),
                  m0=None, w_norm: float | None = None) -> AdjointSolution:
    """Picard iteration for M = mask .* (a e^T + W^T M), from M = 0.

    Contraction at rate <= ||W||_2 since mask entries are at most 1.
    `m0` warm-starts from a previous solution for nearby parameters.
    """
    mask = as_matrix(mask, "mask")
    e = np.asarray(e, dtype=np.float64).ravel()
    if mask.shape[0] != p.m or mask.shape[1] != e.shape[0]:
        raise InputError(f"shape mismatch: mask {mask.shape}, e {e.shape}")
    if w_norm is None:
        w_norm = spectral_norm(p.w)
    if w_norm >= 1.0:
        raise WellPosednessError(
            f"||W||_2 = {w_norm:.6f} >= 1: adjoint fixed point may not exist")
    source = mask * np.outer(p.a, e)
    if m0 is None:
        m = np.zeros_like(mask)
    else:
        m = np.asarray(m0, dtype=np.float64)
        if m.shape != mask.shape or not np.all(np.isfinite(m)):
            raise InputError("m0 has wrong shape or non-finite entries")

    wt = p.w.T
    history = []
    for k in range(1, cfg.max_iter + 1):
        m_next = source + mask * (wt @ m)
        res = float(np.linalg.norm(m_next - m) / max(1.0, np.linalg.norm(m)))
        history.append(res)
        if res <= cfg.tol:
            return AdjointSolution(m=m, residual=res, iterations=k,
                                   residuals=tuple(history))
        m = m_next
    raise ConvergenceError(
        f"adjoint solve did not reach tol={cfg.tol:.1e} in "
        f"{cfg.max_iter} iterations (last residual {history[-1]:.3e})",
        residual=history[-1], iterations=cfg.max_iter)


def gradients(p: DeqParams, z, x, y, cfg: SolverConfig = SolverConfig(),
              m0=None, w_norm: float | None = None,
              return_adjoint: bool = False):
    """Gradients of the quadratic loss w.r.t. (W, U, a) at equilibrium Z.

    `z` must be an equilibrium for (p, x). Returns a GradientTriple, or
    (GradientTriple, AdjointSolution) with `return_adjoint` so callers
    can chain warm starts.
    """
    z = as_matrix(z, "Z")
    x = as_matrix(x, "X")
    y = np.asarray(y, dtype=np.float64).ravel()
    e = predict(p, z) - y
    mask = activation_mask(p, z, x)
    adj = solve_adjoint(p, mask, e, cfg, m0=m0, w_norm=w_norm)
    triple = GradientTriple(gw=adj.m @ z.T, gu=adj.m @ x.T, ga=z @ e)
    return (triple, adj) if return_adjoint else triple


def grad_norm_sq(g: GradientTriple) -> float:
    """||grad_W||_F^2 + ||grad_U||_F^2 + ||grad_a||_2^2."""
    return float(np.sum(g.gw**2) + np.sum(g.gu**2) + np.sum(g.ga**2))


def solve_sensitivity(p: DeqParams, mask, rhs, cfg: SolverConfig = SolverConfig(),
                      s0=None, w_norm: float | None = None) -> AdjointSolution:
    """Directional derivative of the equilibrium: S = mask .* (W S + rhs).

    `rhs` is dW Z + dU X for a parameter direction (dW, dU); the solution
    S is the first-order response of Z. Same contraction argument as the
    adjoint solve.
    """
    mask = as_matrix(mask, "mask")
    rhs = as_matrix(rhs, "rhs")
    if rhs.shape != mask.shape:
        raise InputError(f"rhs shape {rhs.shape} != mask shape {mask.shape}")
    if w_norm is None:
        w_norm = spectral_norm(p.w)
    if w_norm >= 1.0:
        raise WellPosednessError(
            f"||W||_2 = {w_norm:.6f} >= 1: sensitivity fixed point may not exist")
    source = mask * rhs
    s = np.zeros_like(mask) if s0 is None else np.asarray(s0, dtype=np.float64)
    history = []
    for k in range(1, cfg.max_iter + 1):
        s_next = source + mask * (p.w @ s)
        res = float(np.linalg.norm(s_next - s) / max(1.0, np.linalg.norm(s)))
        history.append(res)
        if res <= cfg.tol:
            return AdjointSolution(m=s, residual=res, iterations=k,
                                   residuals=tuple(history))
        s = s_next
    raise ConvergenceError(
        f"sensitivity solve did not reach tol={cfg.tol:.1e} in "
        f"{cfg.max_iter} iterations", residual=history[-1],
        iterations=cfg.max_iter)


def dense_gradients_reference(p: DeqParams, z, x, y) -> GradientTriple:
    """Reference gradients by explicit dense construction (small mn only).

    Builds, with column-major vec convention,
        J = I_mn - D (I_n kron W),   D = diag(vec(mask)),
        R = (I_n kron a^T) J^{-1} D,
    then vec(grad_W) = (Z kron I_m) R^T e and likewise with X for grad_U.
    Memory is O(m^2 n^2); intended for verification at mn <= ~400.
    """
    z = as_matrix(z, "Z")
    x = as_matrix(x, "X")
    y = np.asarray(y, dtype=np.float64).ravel()
    m, n = z.shape
    if m * n > 2500:
        raise InputError(f"dense reference limited to small instances, mn={m * n}")
    e = predict(p, z) - y
    mask = activation_mask(p, z, x)
    d_diag = np.diag(mask.flatten(order="F"))
    j = np.eye(m * n) - d_diag @ np.kron(np.eye(n), p.w)
    r = np.kron(np.eye(n), p.a) @ np.linalg.solve(j, d_diag)
    rte = r.T @ e
    gw = (np.kron(z, np.eye(m)) @ rte).reshape((m, m), order="F")
    gu = (np.kron(x, np.eye(m)) @ rte).reshape((m, p.d), order="F")
    ga = z @ e
    return GradientTriple(gw=gw, gu=gu, ga=ga)


def _loss_at(p: DeqParams, x, y, cfg: SolverConfig):
    sol = solve_equilibrium(p, x, cfg)
    pre = p.w @ sol.z + p.u @ x
    return loss(predict(p, sol.z), y), pre


def finite_difference_gradients(p: DeqParams, x, y, step: float = 1e-5,
                                cfg: SolverConfig = SolverConfig(tol=1e-12),
                                kink_tol: float = 1e-7):
    """Central finite differences of the loss, probe by probe.

    Re-solves the equilibrium for every W and U probe (the equilibrium
    does not depend on a, so a-probes reuse it). Returns
    (GradientTriple, valid) where valid is a matching triple of boolean
    arrays; a probe is invalid when either perturbed point has a
    pre-activation within `kink_tol` of zero or the activation pattern
    differs between the two sides (the ReLU kink cases).
    """
    x = as_matrix(x, "X")
    y = np.asarray(y, dtype=np.float64).ravel()
    m, d = p.m, p.d

    def probe(param, i, j):
        def shifted(delta):
            arrs = {"w": p.w.copy(), "u": p.u.copy(), "a": p.a.copy()}
            if param == "a":
                arrs["a"][i] += delta
            else:
                arrs[param][i, j] += delta
            return DeqParams(w=arrs["w"], u=arrs["u"], a=arrs["a"],
                             sigma_w2=p.sigma_w2)

        lo, pre_lo = _loss_at(shifted(-step), x, y, cfg)
        hi, pre_hi = _loss_at(shifted(+step), x, y, cfg)
        valid = (np.abs(pre_lo).min() > kink_tol
                 and np.abs(pre_hi).min() > kink_tol
                 and np.array_equal(pre_lo >= 0, pre_hi >= 0))
        return (hi - lo) / (2 * step), valid

    gw = np.empty((m, m))
    gw_valid = np.empty((m, m), dtype=bool)
    for i in range(m):
        for j in range(m):
            gw[i, j], gw_valid[i, j] = probe("w", i, j)
    gu = np.empty((m, d))
    gu_valid = np.empty((m, d), dtype=bool)
    for i in range(m):
        for j in range(d):
            gu[i, j], gu_valid[i, j] = probe("u", i, j)

    # a enters the loss quadratically with Z fixed; differences are exact.
    sol = solve_equilibrium(p, x, cfg)
    ga = np.empty(m)
    for i in range(m):
        a_hi, a_lo = p.a.copy(), p.a.copy()
        a_hi[i] += step
        a_lo[i] -= step
        hi = loss(a_hi @ sol.z, y)
        lo = loss(a_lo @ sol.z, y)
        ga[i] = (hi - lo) / (2 * step)
    ga_valid = np.ones(m, dtype=bool)

    return (GradientTriple(gw=gw, gu=gu, ga=ga),
            GradientTriple(gw=gw_valid, gu=gu_valid, ga=ga_valid))
