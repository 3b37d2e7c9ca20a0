"""Dense primal-dual interior-point solver for convex quadratic programs.

Solves::

    minimize    1/2 x^T P x + c^T x
    subject to  G x >= h
                A x  = b

with Mehrotra's predictor-corrector scheme. Each iteration factorizes
the dense matrix ``P + G^T diag(z/s) G`` with Cholesky, so ``P`` must be
positive definite on the null space of ``A`` (a strictly convex
objective is the intended use).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

__all__ = ["QPResult", "QPError", "solve_qp", "kkt_residuals", "polish"]


class QPError(RuntimeError):
    pass


@dataclass
class QPResult:
    x: np.ndarray
    z: np.ndarray  # multipliers of G x >= h
    y: np.ndarray  # multipliers of A x = b
    objective: float
    iterations: int
    converged: bool
    residuals: dict


def _objective(P, c, x):
    return 0.5 * x @ (P @ x) + c @ x


def kkt_residuals(P, c, G, h, x, z, A=None, b=None, y=None):
    """Scaled KKT residuals of a candidate primal-dual point.

    Returns a dict with the stationarity (``dual``), inequality
    (``primal``), equality (``equality``) and complementarity (``gap``)
    residuals, each normalized by the size of the data it involves.
    """
    Px = P @ x
    Gx = G @ x
    rd = Px + c - G.T @ z
    if A is not None and len(A):
        rd = rd - A.T @ y
        re = np.max(np.abs(A @ x - b), initial=0.0) / (1.0 + np.max(np.abs(b), initial=0.0))
    else:
        re = 0.0
    slack = Gx - h
    scale_d = 1.0 + max(np.max(np.abs(c), initial=0.0), np.max(np.abs(Px), initial=0.0))
    return {
        "dual": float(np.max(np.abs(rd), initial=0.0) / scale_d),
        "primal": float(max(0.0, -slack.min(initial=0.0)) / (1.0 + np.max(np.abs(h), initial=0.0))),
        "equality": float(re),
        "gap": float(abs(z @ slack) / (1.0 + abs(_objective(P, c, x)))),
        "dual_sign": float(max(0.0, -z.min(initial=0.0))),
    }


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_qp(P, c, G, h, A=None, b=None, x0=None, tol=1e-8, max_iter=200,
             polish_result=True) -> QPResult:
    """Minimize a convex quadratic subject to linear constraints.

    ``P`` may be given as a 1-D array, meaning a diagonal matrix.
    Termination requires the relative dual, primal and equality residuals
    and the relative duality gap all to be at most ``tol``. A converged
    solution is then refined with :func:`polish` unless ``polish_result``
    is false.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    P = np.asarray(P, dtype=float)
    Pm = np.diag(P) if P.ndim == 1 else P
    G = np.asarray(G, dtype=float).reshape(-1, n)
    h = np.asarray(h, dtype=float)
    m = G.shape[0]
    if A is None:
        A = np.zeros((0, n))
        b = np.zeros(0)
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float)
    p = A.shape[0]

    def newton_solver(d):
        M = Pm + (G.T * d) @ G
        cf = linalg.cho_factor(M, lower=True, check_finite=False)
        if p:
            MiAt = linalg.cho_solve(cf, A.T, check_finite=False)
            S = linalg.cho_factor(A @ MiAt, lower=True, check_finite=False)
        else:
            MiAt = S = None

        def solve(g, re):
            dx = linalg.cho_solve(cf, g, check_finite=False)
            if not p:
                return dx, np.zeros(0)
            dy = linalg.cho_solve(S, -re - A @ dx, check_finite=False)
            return dx + MiAt @ dy, dy
        return solve

    # start from the equality-constrained minimizer with unit duals
    solve = newton_solver(np.ones(m))
    if x0 is None:
        x = solve(-c, -b)[0]
    else:
        x = np.asarray(x0, dtype=float).copy()
        if p:
            x = x + solve(np.zeros(n), A @ x - b)[0]
    s = G @ x - h
    shift = max(0.0, 1.0 - s.min(initial=1.0))
    s = s + shift
    z = np.ones(m)
    y = np.zeros(p)

    hscale = 1.0 + np.max(np.abs(h), initial=0.0)
    bscale = 1.0 + np.max(np.abs(b), initial=0.0)
    converged = False
    res = {}
    it = 0
    for it in range(1, max_iter + 1):
        Px = Pm @ x
        rd = Px + c - G.T @ z - (A.T @ y if p else 0.0)
        rp = G @ x - s - h
        re = A @ x - b if p else np.zeros(0)
        mu = s @ z / m if m else 0.0
        obj = 0.5 * x @ Px + c @ x
        dscale = 1.0 + max(np.max(np.abs(c), initial=0.0), np.max(np.abs(Px), initial=0.0))
        res = {
            "dual": float(np.max(np.abs(rd), initial=0.0) / dscale),
            "primal": float(np.max(np.abs(rp), initial=0.0) / hscale),
            "equality": float(np.max(np.abs(re), initial=0.0) / bscale),
            "gap": float(s @ z / (1.0 + abs(obj))),
        }
        if max(res.values()) <= tol:
            converged = True
            break
        d = z / s
        try:
            solve = newton_solver(d)
        except linalg.LinAlgError as exc:
            raise QPError(f"Newton system became singular at iteration {it}") from exc

        def direction(rc):
            g = -rd - G.T @ (rc / s + d * rp)
            dx, dy = solve(g, re)
            ds = G @ dx + rp
            dz = -(rc + z * ds) / s
            return dx, ds, dz, dy

        # affine predictor
        dx, ds, dz, dy = direction(s * z)
        a_p = _max_step(s, ds)
        a_d = _max_step(z, dz)
        mu_aff = (s + a_p * ds) @ (z + a_d * dz) / m if m else 0.0
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # centering corrector
        dx, ds, dz, dy = direction(s * z + ds * dz - sigma * mu)
        a_p = min(1.0, 0.99 * _max_step(s, ds))
        a_d = min(1.0, 0.99 * _max_step(z, dz))
        x = x + a_p * dx
        s = s + a_p * ds
        z = z + a_d * dz
        y = y + a_d * dy
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise QPError(f"iterates diverged at iteration {it}")

    out = QPResult(x, z, y, float(_objective(Pm, c, x)), it, converged, res)
    if converged and polish_result:
        out = polish(Pm, c, G, h, A, b, out, s)
    return out


def _solve_equality(P, c, E, e):
    n, m = len(c), len(e)
    K = np.block([[P, -E.T], [E, np.zeros((m, m))]])
    with warnings.catch_warnings():
        # a degenerate active set is a failed polish, not a result
        warnings.simplefilter("error", linalg.LinAlgWarning)
        sol = linalg.solve(K, np.concatenate([-c, e]), check_finite=False)
    if not np.all(np.isfinite(sol)):
        raise linalg.LinAlgError("non-finite solution")
    return sol[:n], sol[n:]


def polish(P, c, G, h, A, b, result: QPResult, slack=None, max_rounds=25) -> QPResult:
    """Refine an interior-point solution by solving on its active set.

    Constraints whose multiplier exceeds their slack start out active.
    The equality-constrained problem on the active set is solved exactly;
    violated constraints are then added and the most negative multiplier
    dropped until the point is primal feasible with nonnegative
    multipliers, which certifies it as optimal. If that does not happen
    within ``max_rounds`` the interior-point result is returned unchanged.
    """
    x0, z0 = result.x, result.z
    slack = G @ x0 - h if slack is None else slack
    active = set(np.flatnonzero(z0 > slack).tolist())
    hscale = 1.0 + np.max(np.abs(h), initial=0.0)
    zscale = 1.0 + np.max(np.abs(z0), initial=0.0)
    p = len(b)
    for _ in range(max_rounds):
        act = np.array(sorted(active), dtype=int)
        try:
            x, lam = _solve_equality(P, c, np.vstack([G[act], A]), np.concatenate([h[act], b]))
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            return result
        zk = lam[: len(act)]
        viol = np.flatnonzero(G @ x - h < -1e-12 * hscale)
        if viol.size:
            active.update(viol.tolist())
            continue
        if zk.size and zk.min() < -1e-12 * zscale:
            active.discard(int(act[np.argmin(zk)]))
            continue
        break
    else:
        return result
    z = np.zeros(len(h))
    z[act] = np.maximum(zk, 0.0)
    y = lam[len(act):] if p else np.zeros(0)
    obj = float(_objective(P, c, x))
    if obj > result.objective + 1e-12 * (1.0 + abs(result.objective)):
        return result
    res = kkt_residuals(P, c, G, h, x, z, A if p else None, b, y)
    return QPResult(x, z, y, obj, result.iterations, True, {**res, "polished": 1.0})
