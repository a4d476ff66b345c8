"""Pinball-loss machinery: plain, ridge-regularized and augmented quantile fits.

The central object is the linear quantile regression

    minimize_beta  (1/n) sum_i rho_tau(S_i - Phi_i' beta) + (ridge/2) ||beta||^2

with rho_tau the pinball loss.  ``fit_augmented`` solves the same problem on
the calibration rows plus one imputed test row, which is the primitive the
conditional calibration methods refit per prompt.

Three engines are available:

* ``"ipm"`` (default) -- interior-point solve of the bounded dual, exact to
  ~1e-10 on the objective, compiled kernel when built.
* ``"highs"`` -- the split-variable linear program via scipy/HiGHS
  (``ridge == 0`` only); kept as a slow exact reference.
* ``"subgradient"`` -- projected subgradient descent with step decay; a
  last-resort engine, far less accurate than the other two.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cfc._backend import pinball_fit
from cfc.errors import DomainError, SolverError

_SUBGRAD_MAX_ITER = 50_000
_SUBGRAD_BOX = 10.0


def pinball_loss(u, tau):
    """rho_tau(u) = u * (tau - 1{u < 0}); accepts scalars or arrays."""
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise DomainError("pinball_loss requires finite residuals")
    out = u * (tau - (u < 0))
    return float(out) if out.ndim == 0 else out


def pinball_objective(X, S, beta, tau, ridge=0.0):
    """Mean pinball loss plus ridge penalty at ``beta``."""
    r = np.asarray(S, dtype=np.float64) - np.asarray(X, dtype=np.float64) @ beta
    mean = float(np.mean(r * (tau - (r < 0)))) if r.size else 0.0
    return mean + 0.5 * ridge * float(beta @ beta)


@dataclass(frozen=True)
class QuantileFit:
    """A fitted quantile regression.

    ``objective`` is the achieved mean pinball loss (the ridge penalty is not
    included); ``degenerate`` marks a rank-deficient design solved with the
    minimum-norm convention.
    """

    beta: np.ndarray
    tau: float
    objective: float
    ridge: float
    iterations: int
    degenerate: bool = False
    history: tuple = field(default=(), repr=False)


def _validate(X, S, tau, ridge):
    X = np.ascontiguousarray(X, dtype=np.float64)
    S = np.ascontiguousarray(S, dtype=np.float64)
    if X.ndim != 2:
        raise DomainError("basis matrix must be 2-d")
    n, d = X.shape
    if n < 1 or d < 1:
        raise DomainError(f"need n >= 1 and d >= 1, got shape {X.shape}")
    if S.shape != (n,):
        raise DomainError(f"score vector has length {S.shape}, expected ({n},)")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(S))):
        raise DomainError("non-finite entries in basis or scores")
    if np.any(S < 0.0) or np.any(S > 1.0):
        raise DomainError("scores must lie in [0, 1]; clamp on ingestion")
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    if ridge < 0.0:
        raise DomainError(f"ridge must be >= 0, got {ridge}")
    return X, S


def fit_quantile_regression(X, S, tau, ridge=0.0, tol=1e-8, engine="ipm"):
    """Fit a linear quantile regression at level ``tau``.

    Returns a :class:`QuantileFit`.  Rank-deficient designs with
    ``ridge == 0`` are solved in the span of the basis and reported with
    ``degenerate=True`` (minimum-norm coefficient vector).
    """
    X, S = _validate(X, S, tau, ridge)
    n, d = X.shape

    # Rank handling: project onto the column space so the kernel always sees
    # a full-rank design; lift back with the minimum-norm convention.
    degenerate = False
    lift = None
    if ridge == 0.0:
        u, sv, vt = np.linalg.svd(X, full_matrices=False)
        cutoff = max(n, d) * np.finfo(np.float64).eps * (sv[0] if sv.size else 0.0)
        rank = int(np.sum(sv > cutoff))
        if rank < d:
            degenerate = True
            if rank == 0:
                beta = np.zeros(d)
                return QuantileFit(beta, float(tau), pinball_objective(X, S, beta, tau),
                                   float(ridge), 0, True)
            lift = vt[:rank].T
            X_fit = X @ lift
        else:
            X_fit = X
    else:
        X_fit = X

    if engine == "ipm":
        beta, iters, converged = pinball_fit(X_fit, S, float(tau), float(ridge))
        history = ()
    elif engine == "highs":
        beta, iters, converged = _highs_fit(X_fit, S, tau, ridge)
        history = ()
    elif engine == "subgradient":
        beta, iters, converged, history = _subgradient_fit(X_fit, S, tau, ridge, tol)
    else:
        raise DomainError(f"unknown engine {engine!r}")
    if not converged:
        raise SolverError(f"quantile fit did not converge (engine={engine}, n={n}, d={d})")

    if lift is not None:
        beta = lift @ beta
    beta = np.asarray(beta, dtype=np.float64)
    return QuantileFit(beta, float(tau), pinball_objective(X, S, beta, tau),
                       float(ridge), int(iters), degenerate, tuple(history))


def fit_augmented(X_cal, S_cal, phi_test, s, tau, ridge=0.0, engine="ipm"):
    """Quantile fit on the calibration rows plus one imputed test row.

    All rows carry weight 1/(N+1); ``s`` is the imputed score attached to the
    test basis vector ``phi_test``.  ``X_cal`` may be empty (N = 0).
    """
    phi_test = np.asarray(phi_test, dtype=np.float64).reshape(-1)
    X_cal = np.asarray(X_cal, dtype=np.float64).reshape(-1, phi_test.size)
    S_cal = np.asarray(S_cal, dtype=np.float64).reshape(-1)
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"imputed score must lie in [0, 1], got {s}")
    X = np.vstack([X_cal, phi_test[None, :]])
    S = np.concatenate([S_cal, [float(s)]])
    return fit_quantile_regression(X, S, tau, ridge=ridge, engine=engine)


def _highs_fit(X, S, tau, ridge):
    if ridge != 0.0:
        raise DomainError("the HiGHS engine only handles ridge == 0")
    from scipy.optimize import linprog
    from scipy.sparse import csr_matrix, hstack, identity

    n, d = X.shape
    cost = np.concatenate([np.zeros(d), tau * np.ones(n), (1.0 - tau) * np.ones(n)])
    A = hstack([csr_matrix(X), identity(n, format="csr"), -identity(n, format="csr")],
               format="csr")
    bounds = [(None, None)] * d + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=A, b_eq=S, bounds=bounds, method="highs")
    if not res.success:
        return np.zeros(d), 0, False
    return res.x[:d], int(res.nit), True


def _subgradient_fit(X, S, tau, ridge, tol):
    # Projected subgradient with c0/sqrt(t) decay; tracks the best iterate so
    # the reported objective sequence is non-increasing.
    n, d = X.shape
    reg = max(ridge, 1e-8)
    beta = np.linalg.solve(X.T @ X / n + reg * np.eye(d), X.T @ S / n)
    np.clip(beta, -_SUBGRAD_BOX, _SUBGRAD_BOX, out=beta)
    best = beta.copy()
    best_obj = pinball_objective(X, S, beta, tau, ridge)
    history = [best_obj]
    c0 = 0.5
    last_check = best_obj
    for t in range(1, _SUBGRAD_MAX_ITER + 1):
        r = S - X @ beta
        g = -X.T @ (np.where(r >= 0, tau, tau - 1.0)) / n + ridge * beta
        norm = float(np.linalg.norm(g))
        if norm < 1e-14:
            break
        beta = beta - (c0 / np.sqrt(t)) * g / norm
        np.clip(beta, -_SUBGRAD_BOX, _SUBGRAD_BOX, out=beta)
        obj = pinball_objective(X, S, beta, tau, ridge)
        if obj < best_obj:
            best_obj = obj
            best = beta.copy()
        history.append(best_obj)
        if t % 200 == 0:
            if last_check - best_obj < tol:
                break
            last_check = best_obj
    return best, len(history) - 1, True, history
