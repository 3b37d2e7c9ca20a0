"""Independent reference solvers used by the tests.

Constraint convention everywhere: ``G x >= h`` and ``A x = b``.
"""

from itertools import combinations

import numpy as np
from scipy.optimize import lsq_linear


def solve_on_active_set(P, c, G, h, A, b, active):
    """Minimizer with the ``active`` inequalities held as equalities.

    Returns ``(x, ok)`` where ``ok`` certifies optimality of the full
    problem: ``x`` is feasible and there exist multipliers ``z >= 0`` on
    the active rows (and free ``y``) with ``P x + c = G_S^T z + A^T y``.
    """
    P = np.atleast_2d(P) if np.ndim(P) == 2 else np.diag(P)
    n = len(c)
    Ge = G[list(active)]
    E = np.vstack([Ge, A]) if len(A) else Ge
    e = np.concatenate([h[list(active)], b]) if len(A) else h[list(active)]
    m = len(E)
    K = np.block([[P, E.T], [E, np.zeros((m, m))]])
    rhs = np.concatenate([-c, e])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x = sol[:n]
    if m and np.max(np.abs(E @ x - e)) > 1e-9 * (1 + np.abs(e).max()):
        return x, False  # inconsistent active set
    if np.any(G @ x - h < -1e-9 * (1 + np.abs(h).max())):
        return x, False
    grad = P @ x + c
    if m == 0:
        return x, bool(np.max(np.abs(grad)) <= 1e-9 * (1 + np.abs(c).max()))
    k = len(active)
    lb = np.concatenate([np.zeros(k), np.full(len(A), -np.inf)])
    fit = lsq_linear(E.T, grad, bounds=(lb, np.inf), method="bvls", tol=1e-14)
    ok = np.max(np.abs(E.T @ fit.x - grad)) <= 1e-8 * (1 + np.abs(grad).max())
    return x, bool(ok)


def exhaustive_qp(P, c, G, h, A=None, b=None):
    """Strictly convex QP solved by trying every active set."""
    n = len(c)
    A = np.zeros((0, n)) if A is None else np.atleast_2d(A)
    b = np.zeros(0) if b is None else np.atleast_1d(b)
    for k in range(0, min(len(G), n - len(A)) + 1):
        for active in combinations(range(len(G)), k):
            x, ok = solve_on_active_set(P, c, G, h, A, b, active)
            if ok:
                return x
    raise AssertionError("no certified active set found")


def active_set_oracle(P, c, G, h, A=None, b=None, threshold=1e-6):
    """Certified QP solution for problems too large to enumerate.

    cvxopt proposes the active set; the reported solution is the exact
    solve on that set and is only returned if its KKT certificate holds.
    """
    from cvxopt import matrix, solvers

    n = len(c)
    A = np.zeros((0, n)) if A is None else np.atleast_2d(A)
    b = np.zeros(0) if b is None else np.atleast_1d(b)
    Pm = np.diag(P) if np.ndim(P) == 1 else np.asarray(P)
    opts = {"show_progress": False, "abstol": 1e-12, "reltol": 1e-12, "feastol": 1e-12, "maxiters": 200}
    kw = {"A": matrix(A), "b": matrix(b)} if len(A) else {}
    sol = solvers.qp(matrix(Pm), matrix(c), matrix(-G), matrix(-h), options=opts, **kw)
    x0 = np.array(sol["x"]).ravel()
    z0 = np.array(sol["z"]).ravel()
    slack = G @ x0 - h
    scale = 1 + np.abs(h).max()
    for t in (threshold, threshold * 1e-2, threshold * 1e2):
        active = np.flatnonzero((slack <= t * scale) & (z0 > t * 1e-3 * (1 + z0.max())))
        x, ok = solve_on_active_set(Pm, c, G, h, A, b, active)
        if ok:
            return x
        active = np.flatnonzero(slack <= t * scale)
        x, ok = solve_on_active_set(Pm, c, G, h, A, b, active)
        if ok:
            return x
    raise AssertionError("cvxopt active set could not be certified")
