"""Full-batch gradient descent on (W, U, a) with convergence monitors.

Each monitored step records the loss, the spectral norm of W (the
well-posedness certificate), the least Gram eigenvalue lambda_tau, the
squared gradient norm, the PL ratio ||grad||^2 / (2 Phi), and the linear
rate envelope (1 - eta lambda_0 / 2)^tau Phi(0). The envelope and the
lambda_tau > lambda_0/2 flags are recorded, not enforced: the
initialization condition they assume rarely holds at desk scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import (
    ConvergenceError,
    InputError,
    TrainingAssertionError,
    WellPosednessError,
)
from .grad import (
    GradientTriple,
    grad_norm_sq,
    gradients,
    solve_adjoint,
    solve_sensitivity,
)
from .linalg import gram, min_eig_sym, spectral_norm
from .model import DeqParams, SolverConfig, forward_layer, loss, predict, solve_equilibrium

__all__ = [
    "TrainConfig",
    "TrainRecord",
    "TrainTrace",
    "METRICS_HEADER",
    "auto_eta",
    "ntk_max_eig",
    "monitors",
    "train",
    "write_metrics_csv",
]

METRICS_HEADER = ("step,loss,w_spec_norm,lambda_tau,grad_norm_sq,"
                  "pl_ratio,rate_envelope,solver_iters,residual")


@dataclass(frozen=True)
class TrainConfig:
    """eta may be an explicit float or "auto" (curvature-scaled, see auto_eta)."""

    eta: float | str = "auto"
    steps: int = 100
    monitor_every: int = 1
    solver: SolverConfig = field(default_factory=SolverConfig)
    assert_mode: str = "record"  # "record" or "fail-fast"
    auto_eta_safety: float = 0.5
    warm_start: bool = True

    def __post_init__(self):
        if isinstance(self.eta, str):
            if self.eta != "auto":
                raise InputError(f"eta must be a float or 'auto', got {self.eta!r}")
        elif self.eta <= 0:
            raise InputError("explicit eta must be positive")
        if self.steps < 1:
            raise InputError("steps must be >= 1")
        if self.monitor_every < 1:
            raise InputError("monitor_every must be >= 1")
        if self.assert_mode not in ("record", "fail-fast"):
            raise InputError(f"unknown assert_mode {self.assert_mode!r}")
        if not (0 < self.auto_eta_safety <= 1):
            raise InputError("auto_eta_safety must lie in (0, 1]")


@dataclass(frozen=True)
class TrainRecord:
    step: int
    loss: float
    w_spec_norm: float
    lambda_tau: float
    grad_norm_sq: float
    pl_ratio: float
    rate_envelope: float
    solver_iters: int
    residual: float
    lambda_half_ok: bool = True
    pl_ok: bool = True


@dataclass
class TrainTrace:
    records: list
    eta: float
    eta_mode: str
    lambda_0: float
    phi_0: float
    warm_start: bool

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def ntk_max_eig(p: DeqParams, z, x, solver: SolverConfig = SolverConfig(),
                w_norm: float | None = None, tol: float = 1e-3,
                max_sweeps: int = 30) -> float:
    """Top eigenvalue of the n x n tangent kernel H = (dyhat/dtheta)(..)^T.

    Power iteration using only fixed-point solves: for a direction v,
    H v = G v + S^T a where S is the equilibrium's first-order response
    to the parameter direction (M(v) Z^T, M(v) X^T, Z v) produced by the
    adjoint solve. No mn x mn object is ever formed.
    """
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w_norm is None:
        w_norm = spectral_norm(p.w)
    mask = (p.w @ z + p.u @ x >= 0.0).astype(np.float64)
    g = z.T @ z
    xtx = x.T @ x
    n = z.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    m_warm = None
    s_warm = None
    for _ in range(max_sweeps):
        adj = solve_adjoint(p, mask, v, solver, m0=m_warm, w_norm=w_norm)
        m_warm = adj.m
        rhs = adj.m @ g + adj.m @ xtx  # (M Z^T) Z + (M X^T) X, reassociated
        sens = solve_sensitivity(p, mask, rhs, solver, s0=s_warm, w_norm=w_norm)
        s_warm = sens.m
        hv = g @ v + sens.m.T @ p.a
        norm_hv = float(np.linalg.norm(hv))
        if norm_hv == 0.0:
            return 0.0
        lam_new = float(v @ hv)
        v = hv / norm_hv
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam = lam_new
    return lam


def auto_eta(p: DeqParams, z0, x, safety: float = 0.5,
             solver: SolverConfig = SolverConfig()) -> float:
    """Step size safety * 2 / lambda_max(H) from the measured tangent kernel.

    lambda_max(H) is the curvature of the linearized training dynamics,
    so eta < 2 / lambda_max(H) is the classical stability threshold and
    `safety` (default one half) buys margin against kernel drift. (The
    convergence theorem's own eta bound is reported by the condition
    checker; at desk scale it is orders of magnitude too small to move
    the loss, so the trainer uses this measured-curvature rule instead.)
    """
    w_norm = spectral_norm(p.w)
    if w_norm >= 1.0:
        raise WellPosednessError(f"||W||_2 = {w_norm:.6f} >= 1")
    lam = ntk_max_eig(p, z0, x, solver, w_norm=w_norm)
    if lam <= 0:
        raise InputError("tangent kernel has no positive curvature; "
                         "supply an explicit eta")
    return safety * 2.0 / lam


def monitors(p: DeqParams, z, data: Dataset, lambda_0: float, eta: float,
             tau: int, phi0: float, solver: SolverConfig = SolverConfig(),
             grads: GradientTriple | None = None,
             w_norm: float | None = None,
             solver_iters: int | None = None,
             residual: float | None = None) -> TrainRecord:
    """Assemble one monitored record at the current state.

    Pass precomputed pieces (gradients, ||W||, solver diagnostics) to
    avoid recomputation inside the training loop; anything missing is
    computed here from scratch.
    """
    if w_norm is None:
        w_norm = spectral_norm(p.w)
    if grads is None:
        grads = gradients(p, z, data.x, data.y, solver, w_norm=w_norm)
    if residual is None:
        residual = float(np.linalg.norm(z - forward_layer(p, z, data.x))
                         / max(1.0, np.linalg.norm(z)))
    phi = loss(predict(p, z), data.y)
    lambda_tau = min_eig_sym(gram(z))
    gsq = grad_norm_sq(grads)
    pl_ratio = gsq / (2.0 * phi) if phi > 0 else np.inf
    return TrainRecord(
        step=tau,
        loss=phi,
        w_spec_norm=w_norm,
        lambda_tau=lambda_tau,
        grad_norm_sq=gsq,
        pl_ratio=pl_ratio,
        rate_envelope=(1.0 - eta * lambda_0 / 2.0) ** tau * phi0,
        solver_iters=0 if solver_iters is None else solver_iters,
        residual=residual,
        lambda_half_ok=lambda_tau > 0.5 * lambda_0,
        pl_ok=pl_ratio >= lambda_0 if phi > 0 else True,
    )


def _extrapolate(z_prev, z_prev2):
    if z_prev2 is None:
        return z_prev
    return np.maximum(2.0 * z_prev - z_prev2, 0.0)


def train(p0: DeqParams, data: Dataset, cfg: TrainConfig = TrainConfig(),
          start_step: int = 0, anchor: dict | None = None,
          on_checkpoint=None, checkpoint_every: int = 0):
    """Run `cfg.steps` full-batch GD updates; returns (params, trace).

    Records are written at step 0, every `monitor_every`-th step, and the
    final step. In fail-fast mode the run aborts if ||W(tau)||_2 >= 1 or,
    under auto eta, if the loss increases by more than 1e-8 relative.
    Warm starts (secant extrapolation of Z, previous adjoint M) change
    iteration counts, never results beyond the solver tolerance; the
    choice is recorded on the trace.

    Resuming: `start_step` offsets the recorded step indices, and
    `anchor` = {"eta", "lambda_0", "phi_0"} pins the step size and the
    rate-envelope reference to the original run's values so a resumed
    trace continues the same envelope. `on_checkpoint(step, params)`
    fires every `checkpoint_every` updates (0 disables) and at the end.
    """
    if not isinstance(data, Dataset):
        raise InputError("train expects a Dataset (its constructor enforces "
                         "the data assumptions)")
    w_norm, w_vec = spectral_norm(p0.w, return_vector=True)
    if w_norm >= 1.0:
        raise WellPosednessError(
            f"initial ||W||_2 = {w_norm:.6f} >= 1; training would be ill-posed")

    p = p0
    records = []
    z_prev2 = None
    m_prev = None
    m_prev2 = None
    tau = 0
    try:
        sol = solve_equilibrium(p, data.x, cfg.solver, w_norm=w_norm)
        if anchor is not None:
            eta = float(anchor["eta"])
            eta_mode = "resumed"
            lambda_0 = float(anchor["lambda_0"])
            phi0 = float(anchor["phi_0"])
        else:
            lambda_0 = min_eig_sym(gram(sol.z))
            phi0 = loss(predict(p, sol.z), data.y)
            if cfg.eta == "auto":
                eta = auto_eta(p, sol.z, data.x, cfg.auto_eta_safety, cfg.solver)
                eta_mode = "auto"
            else:
                eta = float(cfg.eta)
                eta_mode = "explicit"
        phi_prev = loss(predict(p, sol.z), data.y)

        for tau in range(cfg.steps + 1):
            if cfg.warm_start and m_prev is not None:
                m_guess = m_prev if m_prev2 is None else 2.0 * m_prev - m_prev2
            else:
                m_guess = None
            grads, adj = gradients(p, sol.z, data.x, data.y, cfg.solver,
                                   m0=m_guess, w_norm=w_norm,
                                   return_adjoint=True)
            m_prev2 = m_prev
            m_prev = adj.m
            if tau % cfg.monitor_every == 0 or tau == cfg.steps:
                records.append(monitors(
                    p, sol.z, data, lambda_0, eta, start_step + tau, phi0,
                    solver=cfg.solver, grads=grads, w_norm=w_norm,
                    solver_iters=sol.iterations, residual=sol.residual))
            if on_checkpoint is not None and tau == cfg.steps:
                on_checkpoint(start_step + tau, p)
            if tau == cfg.steps:
                break

            p = DeqParams(w=p.w - eta * grads.gw, u=p.u - eta * grads.gu,
                          a=p.a - eta * grads.ga, sigma_w2=p.sigma_w2)
            if (on_checkpoint is not None and checkpoint_every > 0
                    and (tau + 1) % checkpoint_every == 0 and tau + 1 < cfg.steps):
                on_checkpoint(start_step + tau + 1, p)
            w_norm, w_vec = spectral_norm(p.w, v0=w_vec, return_vector=True)
            if w_norm >= 1.0:
                message = (f"step {start_step + tau + 1}: ||W||_2 = "
                           f"{w_norm:.6f} >= 1, equilibrium existence lost")
                if cfg.assert_mode == "fail-fast":
                    raise TrainingAssertionError(message)
                raise WellPosednessError(message)

            z_guess = _extrapolate(sol.z, z_prev2) if cfg.warm_start else None
            z_prev2 = sol.z
            sol = solve_equilibrium(p, data.x, cfg.solver, z0=z_guess,
                                    w_norm=w_norm)
            phi = loss(predict(p, sol.z), data.y)
            if (cfg.assert_mode == "fail-fast" and eta_mode == "auto"
                    and phi > phi_prev * (1.0 + 1e-8)):
                raise TrainingAssertionError(
                    f"step {start_step + tau + 1}: loss increased from "
                    f"{phi_prev:.6e} to {phi:.6e} under auto eta")
            phi_prev = phi
    except ConvergenceError as exc:
        raise ConvergenceError(f"at training step {start_step + tau}: {exc}",
                               residual=exc.residual,
                               iterations=exc.iterations) from exc

    trace = TrainTrace(records=records, eta=eta, eta_mode=eta_mode,
                       lambda_0=lambda_0, phi_0=phi0, warm_start=cfg.warm_start)
    return p, trace


def write_metrics_csv(path, trace: TrainTrace) -> None:
    """Metrics CSV with the exact header the experiment tooling expects."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER.split(","))
        for r in trace.records:
            writer.writerow([
                r.step,
                f"{r.loss:.17g}",
                f"{r.w_spec_norm:.17g}",
                f"{r.lambda_tau:.17g}",
                f"{r.grad_norm_sq:.17g}",
                f"{r.pl_ratio:.17g}",
                f"{r.rate_envelope:.17g}",
                r.solver_iters,
                f"{r.residual:.17g}",
            ])
