"""Over-parameterization condition and norm-inequality diagnostics.

Everything here is a report, never a gate: at desk scale the constants
are usually unachievable (the initial loss grows like n), so training
proceeds regardless and the margins are logged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .linalg import as_matrix, spectral_norm
from .model import DeqParams

__all__ = [
    "InitBounds",
    "ConditionReport",
    "BoundCheck",
    "init_bounds",
    "check_condition",
    "appendix_bounds_check",
    "write_condition_csv",
]


@dataclass(frozen=True)
class InitBounds:
    """delta-inflated norm bounds at initialization and their c-constants.

    rho_w = ||W(0)|| + delta (must stay below 1), rho_u = ||U(0)|| + delta,
    rho_a = ||a(0)|| + delta, and

        c_w = rho_u rho_a / (1 - rho_w)^2,
        c_u = rho_a / (1 - rho_w),
        c_a = rho_u / (1 - rho_w).
    """

    delta: float
    rho_w: float
    rho_u: float
    rho_a: float
    c_w: float
    c_u: float
    c_a: float


@dataclass(frozen=True)
class ConditionReport:
    """Margins (lhs - rhs) of the three initialization inequalities.

    satisfied[k] is margins[k] >= 0. eta_max is the learning-rate bound
    min(2/lambda_0, 2(c_w^2+c_u^2) / ((c_w^2+c_u^2+c_a^2)^2 ||X||_F^2)).
    """

    lambda_0: float
    margins: tuple
    satisfied: tuple
    eta_max: float
    phi_0: float


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    ok: bool
    precondition_ok: bool = True


def init_bounds(p: DeqParams, delta: float | None = None) -> InitBounds:
    """Compute the delta-inflated bounds; delta=None takes half the gap to 1."""
    w_norm = spectral_norm(p.w)
    if w_norm >= 1.0:
        raise InputError(f"||W(0)||_2 = {w_norm:.6f} >= 1; no valid delta exists")
    if delta is None:
        delta = 0.5 * (1.0 - w_norm)
    if delta <= 0:
        raise InputError(f"delta must be positive, got {delta}")
    rho_w = w_norm + delta
    if rho_w >= 1.0:
        raise InputError(
            f"delta = {delta} makes rho_w = {rho_w:.6f} >= 1; pick delta < "
            f"{1 - w_norm:.6f}")
    rho_u = spectral_norm(p.u) + delta
    rho_a = float(np.linalg.norm(p.a)) + delta
    gap = 1.0 - rho_w
    return InitBounds(delta=delta, rho_w=rho_w, rho_u=rho_u, rho_a=rho_a,
                      c_w=rho_u * rho_a / gap**2, c_u=rho_a / gap,
                      c_a=rho_u / gap)


def check_condition(b: InitBounds, lambda_0: float, x,
                    residual_norm_0: float) -> ConditionReport:
    """Evaluate the three initialization inequalities and the eta bound.

    residual_norm_0 is ||yhat(0) - y||_2. The three inequalities are

        lambda_0       >= (4/delta) max(c_w, c_u, c_a) ||X||_F r0,
        lambda_0^(3/2) >= 4 (2 + sqrt 2) rho_a^{-1} (c_w^2 + c_u^2) ||X||_F^2 r0,
        lambda_0       >= 4 (c_w^2 + c_u^2) ||X||_F^2.
    """
    if lambda_0 < 0:
        raise InputError(f"lambda_0 must be >= 0, got {lambda_0}")
    if residual_norm_0 < 0:
        raise InputError("residual_norm_0 must be >= 0")
    x = as_matrix(x, "X")
    xf = float(np.linalg.norm(x))
    c_sq = b.c_w**2 + b.c_u**2

    rhs1 = (4.0 / b.delta) * max(b.c_w, b.c_u, b.c_a) * xf * residual_norm_0
    rhs2 = 4.0 * (2.0 + math.sqrt(2.0)) / b.rho_a * c_sq * xf**2 * residual_norm_0
    rhs3 = 4.0 * c_sq * xf**2
    margins = (lambda_0 - rhs1, lambda_0**1.5 - rhs2, lambda_0 - rhs3)
    satisfied = tuple(m >= 0 for m in margins)

    denom = (c_sq + b.c_a**2) ** 2 * xf**2
    eta_curvature = 2.0 * c_sq / denom if denom > 0 else math.inf
    eta_rate = 2.0 / lambda_0 if lambda_0 > 0 else math.inf
    eta_max = min(eta_rate, eta_curvature)
    return ConditionReport(lambda_0=lambda_0, margins=margins,
                           satisfied=satisfied, eta_max=eta_max,
                           phi_0=0.5 * residual_norm_0**2)


def appendix_bounds_check(p_k: DeqParams, p_s: DeqParams, z_k, z_s, x,
                          b: InitBounds) -> list[BoundCheck]:
    """Check the trajectory norm inequalities between two parameter states.

    Verifies, with 1e-8 slack,
        ||Z(s)||_F  <= c_a ||X||_F,
        ||Z(k)-Z(s)||_F <= rho_a^{-1} (c_w ||dW|| + c_u ||dU||) ||X||_F,
        ||yhat(k)-yhat(s)||_2 <= (c_w ||dW|| + c_u ||dU|| + c_a ||da||) ||X||_F.
    States violating the norm preconditions (||W|| <= rho_w etc.) yield
    rows flagged precondition_ok=False instead of raising.
    """
    z_k = as_matrix(z_k, "Z_k")
    z_s = as_matrix(z_s, "Z_s")
    x = as_matrix(x, "X")
    xf = float(np.linalg.norm(x))
    slack = 1e-8

    pre_ok = True
    for q in (p_k, p_s):
        if (spectral_norm(q.w) > b.rho_w * (1 + 1e-12)
                or spectral_norm(q.u) > b.rho_u * (1 + 1e-12)
                or np.linalg.norm(q.a) > b.rho_a * (1 + 1e-12)):
            pre_ok = False

    dw = spectral_norm(p_k.w - p_s.w) if not np.array_equal(p_k.w, p_s.w) else 0.0
    du = spectral_norm(p_k.u - p_s.u) if not np.array_equal(p_k.u, p_s.u) else 0.0
    da = float(np.linalg.norm(p_k.a - p_s.a))

    checks = []

    lhs = float(np.linalg.norm(z_s))
    rhs = b.c_a * xf
    checks.append(BoundCheck("equilibrium_norm", lhs, rhs,
                             ok=lhs <= rhs * (1 + slack) + slack,
                             precondition_ok=pre_ok))

    lhs = float(np.linalg.norm(z_k - z_s))
    rhs = (b.c_w * dw + b.c_u * du) * xf / b.rho_a
    checks.append(BoundCheck("equilibrium_shift", lhs, rhs,
                             ok=lhs <= rhs * (1 + slack) + slack,
                             precondition_ok=pre_ok))

    yhat_k = p_k.a @ z_k
    yhat_s = p_s.a @ z_s
    lhs = float(np.linalg.norm(yhat_k - yhat_s))
    rhs = (b.c_w * dw + b.c_u * du + b.c_a * da) * xf
    checks.append(BoundCheck("prediction_shift", lhs, rhs,
                             ok=lhs <= rhs * (1 + slack) + slack,
                             precondition_ok=pre_ok))
    return checks


def write_condition_csv(path, b: InitBounds, report: ConditionReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["quantity", "value"])
        for name in ("delta", "rho_w", "rho_u", "rho_a", "c_w", "c_u", "c_a"):
            writer.writerow([name, f"{getattr(b, name):.17g}"])
        writer.writerow(["lambda_0", f"{report.lambda_0:.17g}"])
        writer.writerow(["phi_0", f"{report.phi_0:.17g}"])
        writer.writerow(["eta_max", f"{report.eta_max:.17g}"])
        for idx, (margin, ok) in enumerate(zip(report.margins, report.satisfied), 1):
            writer.writerow([f"margin_{idx}", f"{margin:.17g}"])
            writer.writerow([f"satisfied_{idx}", str(ok).lower()])
