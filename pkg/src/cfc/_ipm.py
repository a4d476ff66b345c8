"""Pure-numpy interior-point kernel for pinball (quantile) fits.

Solves, for a design ``X`` (n x d), responses ``y`` (n,), level ``tau`` and
ridge weight ``gamma >= 0``::

    minimize_beta  (1/n) sum_i rho_tau(y_i - x_i' beta) + (gamma/2) ||beta||^2

via the bounded dual.  Writing rho_tau(u) = max(tau*u, (tau-1)*u) and
substituting a_i = eta_i + (1 - tau) with eta_i in [tau-1, tau]:

  gamma = 0:  max  y'a   s.t.  X'a = (1-tau) X'1,   0 <= a <= 1
  gamma > 0:  max  y'a - ||X'a - b||^2 / (2 c),     0 <= a <= 1,  c = gamma*n

with beta recovered as the equality multiplier (gamma = 0) or as
beta = (X'a - b)/c (gamma > 0).  Both cases reduce each Mehrotra
predictor-corrector step to a d x d solve, so the per-iteration cost is
O(n d^2) with d tiny.

The compiled extension ``cfc._ipm_c`` implements the same iteration; this
module is the fallback and the reference for parity tests.
"""

from __future__ import annotations

import numpy as np

# Fraction-to-boundary factor and convergence targets.  The duality gap is
# driven far below the 1e-6 accuracy demanded of the fit so that oracle
# comparisons are never limited by the solver.
_STEP = 0.9995
_MAX_ITER = 200
_GAP_TOL = 1e-12
_DUAL_TOL = 1e-10


def _solve_spd(M, rhs):
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * (1.0 + abs(float(np.trace(M))))
        return np.linalg.solve(M + jitter * np.eye(M.shape[0]), rhs)


def _max_step(x1, dx1, x2, dx2):
    out = np.inf
    for x, dx in ((x1, dx1), (x2, dx2)):
        neg = dx < 0
        if np.any(neg):
            out = min(out, float(np.min(-x[neg] / dx[neg])))
    return out


def pinball_fit(X, y, tau, ridge=0.0, max_iter=_MAX_ITER):
    """Return ``(beta, iterations, converged)`` for the objective above.

    ``X`` must have full column rank when ``ridge == 0``; callers handle
    rank-deficient designs before reaching the kernel.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, d = X.shape
    b = (1.0 - tau) * X.sum(axis=0)
    c = ridge * n

    a = np.full(n, 1.0 - tau)
    s = 1.0 - a
    if ridge > 0.0:
        v = (X.T @ a - b) / c
    else:
        v = np.linalg.lstsq(X, y, rcond=None)[0]
    r = y - X @ v
    # Optimality demands y - Xv = w - z, so w tracks positive residuals.
    w = np.where(r > 0, r, 0.0) + 1e-2
    z = np.where(r < 0, -r, 0.0) + 1e-2

    scale = 1.0 + float(np.max(np.abs(y), initial=0.0))
    it = 0
    for it in range(1, max_iter + 1):
        if ridge > 0.0:
            v = (X.T @ a - b) / c
        rd = y - X @ v - w + z
        gap = float(a @ z + s @ w)
        mu = gap / (2.0 * n)
        if gap <= _GAP_TOL * n * scale and float(np.max(np.abs(rd))) <= _DUAL_TOL * scale:
            return (v.copy(), it, True)

        theta = w / s + z / a
        dinv = 1.0 / theta

        def _directions(rcz, rcw):
            # Eliminate (dz, dw); da comes from a d x d solve either way.
            rhs = rd - rcw / s + rcz / a
            if ridge == 0.0:
                M = X.T @ (dinv[:, None] * X)
            else:
                M = c * np.eye(d) + X.T @ (dinv[:, None] * X)
            dv = _solve_spd(M, X.T @ (dinv * rhs))
            da = dinv * (rhs - X @ dv)
            dz = (rcz - z * da) / a
            dw = (rcw + w * da) / s
            return da, dv, dz, dw

        # Affine (predictor) direction.
        da, dv, dz, dw = _directions(-a * z, -s * w)
        ap = min(1.0, _max_step(a, da, s, -da))
        ad = min(1.0, _max_step(z, dz, w, dw))
        mu_aff = (
            (a + ap * da) @ (z + ad * dz) + (s - ap * da) @ (w + ad * dw)
        ) / (2.0 * n)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.1
        sigma = min(max(sigma, 1e-8), 0.99)

        # Corrector, reusing the affine products.
        rcz = sigma * mu - a * z - da * dz
        rcw = sigma * mu - s * w + da * dw
        da, dv, dz, dw = _directions(rcz, rcw)
        ap = min(1.0, _STEP * _max_step(a, da, s, -da))
        ad = min(1.0, _STEP * _max_step(z, dz, w, dw))

        a = a + ap * da
        s = 1.0 - a
        z = z + ad * dz
        w = w + ad * dw
        if ridge == 0.0:
            v = v + ad * dv
        np.clip(a, 1e-14, 1.0 - 1e-14, out=a)
        np.clip(s, 1e-14, 1.0 - 1e-14, out=s)
        z = np.maximum(z, 1e-14)
        w = np.maximum(w, 1e-14)

    beta = v if ridge == 0.0 else (X.T @ a - b) / c
    return (np.asarray(beta, dtype=np.float64), it, False)
