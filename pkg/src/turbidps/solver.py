"""Matrix-free BiCGStab plus a dense direct solver used as an oracle."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SolverError

log = logging.getLogger(__name__)

DENSE_GUARD = 4097


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual: float       # recomputed ||b - A x|| / ||b||, not the recurrence
    breakdown: bool = False
    restarted: bool = False


def bicgstab(apply, rhs: np.ndarray, tol: float = 1e-8,
             max_iter: int = 2000, x0: np.ndarray | None = None
             ) -> tuple[np.ndarray, SolveReport]:
    """Stabilized bi-conjugate gradients for a nonsymmetric operator.

    ``apply`` maps a vector to the operator product.  Deterministic: the
    shadow vector is the initial residual; on numerical breakdown of the
    recurrence the solve restarts once from the current iterate with a
    perturbed shadow vector, then gives up.  The report's residual is
    recomputed from scratch on the returned iterate, and the recurrence
    is only trusted after that recomputation also meets the tolerance.
    """
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise SolverError("right-hand side must be finite")
    if tol <= 0:
        raise SolverError("tol must be positive")
    b_norm = np.linalg.norm(rhs)
    if b_norm == 0.0:
        return np.zeros_like(rhs), SolveReport(True, 0, 0.0)

    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - apply(x)
    if np.linalg.norm(r) <= tol * b_norm:
        return x, SolveReport(True, 0, float(np.linalg.norm(r) / b_norm))
    shadow = r.copy()
    best_x, best_res = x.copy(), np.linalg.norm(r)
    rho = alpha = omega = 1.0
    v = np.zeros_like(rhs)
    p = np.zeros_like(rhs)
    iterations = 0
    restarted = False

    while iterations < max_iter:
        rho_new = shadow @ r
        if abs(rho_new) < 1e-300 or (iterations > 0 and abs(omega) < 1e-300):
            if restarted:
                res = np.linalg.norm(rhs - apply(best_x)) / b_norm
                log.warning("bicgstab: breakdown after restart, residual %.3e", res)
                return best_x, SolveReport(False, iterations, res,
                                           breakdown=True, restarted=True)
            # deterministic perturbation, then one more attempt
            shadow = r + np.linalg.norm(r) / np.sqrt(r.size)
            p[:] = 0.0
            v[:] = 0.0
            rho = alpha = omega = 1.0
            restarted = True
            continue
        if iterations == 0:
            p = r.copy()
        else:
            beta = (rho_new / rho) * (alpha / omega)
            p = r + beta * (p - omega * v)
        rho = rho_new
        v = apply(p)
        denom = shadow @ v
        if abs(denom) < 1e-300:
            if restarted:
                res = np.linalg.norm(rhs - apply(best_x)) / b_norm
                return best_x, SolveReport(False, iterations, res,
                                           breakdown=True, restarted=True)
            shadow = r + np.linalg.norm(r) / np.sqrt(r.size)
            p[:] = 0.0
            v[:] = 0.0
            rho = alpha = omega = 1.0
            restarted = True
            continue
        alpha = rho / denom
        s = r - alpha * v
        iterations += 1
        if np.linalg.norm(s) <= tol * b_norm:
            x = x + alpha * p
            true_res = np.linalg.norm(rhs - apply(x)) / b_norm
            if true_res <= tol:
                return x, SolveReport(True, iterations, true_res,
                                      restarted=restarted)
        t = apply(s)
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x = x + alpha * p + omega * s
        r = s - omega * t
        res_norm = np.linalg.norm(r)
        if res_norm < best_res:
            best_res, best_x = res_norm, x.copy()
        if res_norm <= tol * b_norm:
            true_res = np.linalg.norm(rhs - apply(x)) / b_norm
            if true_res <= tol:
                return x, SolveReport(True, iterations, true_res,
                                      restarted=restarted)

    res = np.linalg.norm(rhs - apply(best_x)) / b_norm
    log.warning("bicgstab: stagnated at residual %.3e after %d iterations",
                res, iterations)
    return best_x, SolveReport(False, iterations, res, restarted=restarted)


def dense_solve(matrix: np.ndarray, rhs: np.ndarray
                ) -> tuple[np.ndarray, float]:
    """LU solve with a residual report; small systems only."""
    matrix = np.asarray(matrix, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = matrix.shape[0]
    if matrix.shape != (n, n):
        raise SolverError("matrix must be square")
    if n > DENSE_GUARD:
        raise SolverError(f"dense solve refused for n={n} > {DENSE_GUARD}")
    try:
        lu, piv = scipy.linalg.lu_factor(matrix)
    except scipy.linalg.LinAlgError as exc:
        raise SolverError(f"singular matrix: {exc}") from exc
    if np.any(np.abs(np.diag(lu)) < 1e3 * np.finfo(float).tiny):
        cond = np.linalg.cond(matrix)
        raise SolverError(f"matrix singular to working precision "
                          f"(condition estimate {cond:.3e})")
    x = scipy.linalg.lu_solve((lu, piv), rhs)
    residual = float(np.linalg.norm(rhs - matrix @ x)
                     / max(np.linalg.norm(rhs), 1e-300))
    return x, residual
