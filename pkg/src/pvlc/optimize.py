"""Damped least-squares minimizer for small smooth parameter-estimation problems.

Levenberg-style damping on the Gauss-Newton normal equations, with a central
finite-difference Jacobian.  Parameters are whatever the caller hands in;
callers wanting positivity should optimize in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LsqResult", "damped_least_squares"]


@dataclass
class LsqResult:
    x: np.ndarray
    cost: float
    cost_history: list  # objective after each accepted step, monotone
    iterations: int
    converged: bool


def _jacobian(fun, x, rel_step):
    r0 = np.asarray(fun(x), dtype=float)
    jac = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(abs(x[j]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h)
    return r0, jac


def damped_least_squares(fun, x0, max_iter: int = 200, rel_tol: float = 1e-10,
                         rel_step: float = 1e-6) -> LsqResult:
    """Minimize sum(fun(x)**2) starting from x0.

    fun maps a parameter vector to a residual vector.  Steps solve
    (J^T J + lam * diag(J^T J)) dx = -J^T r; lam shrinks on accepted steps and
    grows on rejected ones, so the recorded objective history is monotone
    non-increasing.  Converged when the relative objective change over an
    accepted step falls below rel_tol (or the gradient stalls).
    """
    x = np.asarray(x0, dtype=float).copy()
    cost = float(np.sum(np.asarray(fun(x), dtype=float) ** 2))
    history = [cost]
    lam = 1e-3
    iterations = 0
    for iterations in range(1, max_iter + 1):
        r, jac = _jacobian(fun, x, rel_step)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        if np.max(np.abs(jtr)) < 1e-300:
            return LsqResult(x, cost, history, iterations, True)
        damp = np.diag(np.maximum(np.diag(jtj), 1e-300))
        accepted = False
        for _ in range(25):
            try:
                dx = np.linalg.solve(jtj + lam * damp, -jtr)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = x + dx
            trial_cost = float(np.sum(np.asarray(fun(trial), dtype=float) ** 2))
            if np.isfinite(trial_cost) and trial_cost <= cost:
                rel_change = (cost - trial_cost) / max(cost, 1e-300)
                x, cost = trial, trial_cost
                history.append(cost)
                lam = max(lam / 10, 1e-12)
                accepted = True
                if rel_change < rel_tol:
                    return LsqResult(x, cost, history, iterations, True)
                break
            lam *= 10
        if not accepted:
            # Damping exhausted: no descent direction left at this scale.
            return LsqResult(x, cost, history, iterations, True)
    return LsqResult(x, cost, history, iterations, False)
