"""Dense float64 matrix kernels shared by the rest of the package.

Everything here is a pure function of its inputs. Matrices are plain
numpy arrays in C order; all public operations validate finiteness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateInputError, InputError

__all__ = [
    "SymEig",
    "as_matrix",
    "spectral_norm",
    "sym_eig",
    "min_eig_sym",
    "gram",
    "gram_schmidt",
    "frobenius_norm",
]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite, non-empty 2-D float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InputError(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.size == 0:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} contains non-finite entries")
    return a


def spectral_norm(a, tol: float = 1e-10, max_iter: int = 10000,
                  v0=None, return_vector: bool = False):
    """Largest singular value of `a` by power iteration on A^T A.

    Deterministic: starts from the normalized all-ones vector unless `v0`
    is supplied (a warm start from a previous call on a nearby matrix).
    Stops when the singular-value estimate is stable to a relative change
    of `tol`; raises ConvergenceError after `max_iter` sweeps. With
    `return_vector` the converged right singular direction is returned
    alongside, suitable as the next call's `v0`.
    """
    a = as_matrix(a, "A")
    if tol <= 0:
        raise InputError("tol must be positive")
    if max_iter < 1:
        raise InputError("max_iter must be >= 1")
    n = a.shape[1]
    # Cheap exact answer; also keeps the restart logic below trivial.
    if not a.any():
        return (0.0, np.full(n, 1.0 / np.sqrt(n))) if return_vector else 0.0
    if v0 is None:
        v = np.full(n, 1.0 / np.sqrt(n))
    else:
        v = np.asarray(v0, dtype=np.float64)
        if v.shape != (n,) or not np.all(np.isfinite(v)):
            raise InputError("v0 has wrong shape or non-finite entries")
        nv = np.linalg.norm(v)
        if nv == 0.0:
            raise InputError("v0 is the zero vector")
        v = v / nv

    sigma = 0.0
    restarted = False
    for sweep in range(max_iter):
        bv = a.T @ (a @ v)
        norm_bv = np.linalg.norm(bv)
        if norm_bv == 0.0:
            if restarted:
                # A maps every probed direction to zero yet has nonzero
                # entries; fall back to the column of largest mass.
                break
            v = np.zeros(n)
            v[int(np.argmax(np.abs(a).sum(axis=0)))] = 1.0
            restarted = True
            continue
        rayleigh = float(v @ bv)
        sigma_new = float(np.sqrt(rayleigh)) if rayleigh > 0 else 0.0
        v = bv / norm_bv
        if abs(sigma_new - sigma) <= 0.1 * tol * max(sigma_new, 1e-300):
            return (sigma_new, v) if return_vector else sigma_new
        sigma = sigma_new
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} sweeps",
        residual=None, iterations=max_iter)


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None


def _check_symmetric(s: np.ndarray, tol: float) -> np.ndarray:
    asym = np.abs(s - s.T).max()
    scale = float(np.linalg.norm(s))
    if asym > tol * max(scale, 1e-300):
        raise InputError(
            f"matrix is not symmetric: max|S - S^T| = {asym:.3e} "
            f"exceeds {tol:.1e} * ||S||")
    return 0.5 * (s + s.T)


def sym_eig(s, tol: float = 1e-8, vectors: bool = False) -> SymEig:
    """Full symmetric eigendecomposition (LAPACK), eigenvalues ascending."""
    s = as_matrix(s, "S")
    if s.shape[0] != s.shape[1]:
        raise InputError(f"S must be square, got {s.shape}")
    s = _check_symmetric(s, tol)
    if vectors:
        vals, vecs = np.linalg.eigh(s)
        return SymEig(eigenvalues=vals, eigenvectors=vecs)
    vals = np.linalg.eigvalsh(s)
    return SymEig(eigenvalues=vals)


def min_eig_sym(s, tol: float = 1e-8) -> float:
    """Least eigenvalue of a symmetric matrix via full eigendecomposition."""
    return float(sym_eig(s, tol=tol).eigenvalues[0])


def gram(z) -> np.ndarray:
    """Z^T Z, symmetrized exactly after the product."""
    z = as_matrix(z, "Z")
    g = z.T @ z
    return 0.5 * (g + g.T)


def gram_schmidt(vectors, drop_tol: float = 1e-12) -> np.ndarray:
    """Column-orthonormalize an ordered collection of equal-length vectors.

    Modified Gram-Schmidt with one re-orthogonalization pass. Raises
    DegenerateInputError if any vector's residual after projection onto
    the previous columns has norm below `drop_tol` (the caller decides
    whether to drop such vectors and retry).
    """
    vecs = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if not vecs:
        raise InputError("no vectors given")
    m = vecs[0].shape[0]
    for k, v in enumerate(vecs):
        if v.shape[0] != m:
            raise InputError(f"vector {k} has length {v.shape[0]}, expected {m}")
        if not np.all(np.isfinite(v)):
            raise InputError(f"vector {k} has non-finite entries")
    cols = []
    for k, v in enumerate(vecs):
        w = v.copy()
        for c in cols:
            w -= (c @ w) * c
        for c in cols:  # second pass: twice is enough
            w -= (c @ w) * c
        norm = np.linalg.norm(w)
        if norm < drop_tol:
            raise DegenerateInputError(
                f"vector {k} is linearly dependent on its predecessors "
                f"(residual norm {norm:.3e} < drop_tol {drop_tol:.1e})")
        cols.append(w / norm)
    return np.column_stack(cols)


def frobenius_norm(a) -> float:
    a = as_matrix(a, "A")
    return float(np.linalg.norm(a))
