"""Propagator reconstruction on a Cartesian q-space grid.

The grid has an odd number ``n`` of points per axis so that it contains
the origin and is symmetric under negation. The displacement grid has
spacing ``dr = 2 pi / (n dq)``, which makes the discrete transform
exactly invertible and gives ``sum(P) dr^3 = f(0)``.

Because the signal estimates are even in q, the inverse Fourier
transform reduces to a real cosine transform::

    P(r_m) = dq^3 / (2 pi)^3 * sum_k cos(q_k . r_m) f(q_k)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import GpPrediction
from .qp import QPError, QPResult, solve_qp

log = logging.getLogger(__name__)

__all__ = [
    "CartesianGrid",
    "EapVolume",
    "QPReconstruction",
    "make_grid",
    "idft_matrix",
    "forward_matrix",
    "reconstruct_qp",
    "reconstruct_naive",
    "rtop",
    "eap_from_signal",
    "VARIANCE_FLOOR",
]

VARIANCE_FLOOR = 1e-6  # sigma floor relative to the largest predicted sigma


@dataclass(frozen=True, eq=False)
class CartesianGrid:
    n: int
    q_max: float

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise ValueError(f"grid size must be an odd integer >= 3, got {self.n}")
        if not self.q_max > 0:
            raise ValueError("q_max must be positive")

    @property
    def dq(self) -> float:
        return 2.0 * self.q_max / (self.n - 1)

    @property
    def dr(self) -> float:
        return 2.0 * np.pi / (self.n * self.dq)

    @property
    def size(self) -> int:
        return self.n**3

    @property
    def origin_index(self) -> int:
        return (self.size - 1) // 2

    @property
    def index(self) -> np.ndarray:
        """(n^3, 3) integer lattice coordinates, x slowest, origin at 0."""
        h = (self.n - 1) // 2
        k = np.arange(-h, h + 1)
        return np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1).reshape(-1, 3)

    @property
    def q(self) -> np.ndarray:
        return self.dq * self.index

    @property
    def r(self) -> np.ndarray:
        return self.dr * self.index

    def negation(self) -> np.ndarray:
        """Index permutation mapping each grid point to its negative."""
        return np.arange(self.size)[::-1]

    def symmetrize(self, f):
        f = np.asarray(f, dtype=float)
        return 0.5 * (f + f[..., self.negation()])


def make_grid(n: int = 11, q_max: float = 1.0) -> CartesianGrid:
    return CartesianGrid(int(n), float(q_max))


def _cosine_matrix(grid: CartesianGrid):
    idx = grid.index
    # integer phases keep the periodicity exact
    phase = np.mod(idx @ idx.T, grid.n)
    return np.cos(2.0 * np.pi / grid.n * phase)


def idft_matrix(grid: CartesianGrid) -> np.ndarray:
    """Matrix F with P = F f (signal on the q-grid to propagator on the r-grid)."""
    return _cosine_matrix(grid) * (grid.dq / (2.0 * np.pi)) ** 3


def forward_matrix(grid: CartesianGrid) -> np.ndarray:
    """Inverse of :func:`idft_matrix` on even functions: f = B P."""
    return _cosine_matrix(grid) * grid.dr**3


@dataclass(frozen=True, eq=False)
class EapVolume:
    grid: CartesianGrid
    values: np.ndarray  # mm^-3, on grid.r

    @property
    def dr(self) -> float:
        return self.grid.dr

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.values) * self.grid.dr**3)

    @property
    def rtop(self) -> float:
        return float(self.values[self.grid.origin_index])

    def slice_z0(self):
        """(rx, ry, rz, P) rows of the z = 0 plane."""
        mask = self.grid.index[:, 2] == 0
        return np.column_stack([self.grid.r[mask], self.values[mask]])

    def table(self):
        return np.column_stack([self.grid.r, self.values])


@dataclass(frozen=True, eq=False)
class QPReconstruction:
    signal: np.ndarray  # adjusted signal f* on grid.q
    eap: EapVolume
    objective: float
    result: QPResult | None  # None if the unconstrained optimum was feasible


def eap_from_signal(f, grid: CartesianGrid, F=None) -> EapVolume:
    F = idft_matrix(grid) if F is None else F
    return EapVolume(grid, F @ np.asarray(f, dtype=float))


def rtop(f, grid: CartesianGrid) -> float:
    """Return-to-origin probability P(0) = dq^3 / (2 pi)^3 * sum(f)."""
    return float(np.sum(f) * (grid.dq / (2.0 * np.pi)) ** 3)


def weights(variance, floor=VARIANCE_FLOOR):
    """Inverse standard deviations with sigma floored at ``floor * max(sigma)``."""
    sd = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    top = sd.max()
    if top <= 0:
        return np.ones_like(sd)
    return 1.0 / np.maximum(sd, floor * top)


def qp_objective(f, mean, variance):
    w = weights(variance)
    return float(np.sum((w * (np.asarray(f) - mean)) ** 2))


def _is_even(v, neg, rtol=1e-12):
    return np.allclose(v, v[neg], rtol=rtol, atol=rtol * np.max(np.abs(v), initial=0.0))


def reconstruct_qp(pred: GpPrediction, grid: CartesianGrid, F=None, tol=1e-8,
                   max_iter=200, symmetric: bool | None = None,
                   q_cut: float | None = None) -> QPReconstruction:
    """Nonnegative, unit-mass propagator from a signal prediction on the grid.

    Solves::

        minimize    || W (f - mean) ||^2,  W = diag(1 / sigma)
        subject to  F f >= 0,  f(0) = 1,  f >= 0

    ``f(0)`` is fixed by eliminating that variable, so it is exactly 1.
    With ``q_cut``, grid points beyond that radius are held at zero.
    With ``symmetric`` (default: detected from the inputs) the problem is
    solved over pairs ``{q, -q}`` only; the optimum of the full problem is
    even in that case, so nothing is lost.
    """
    mean = np.asarray(pred.mean, dtype=float)
    if mean.shape != (grid.size,):
        raise ValueError(f"prediction has shape {mean.shape}, grid has {grid.size} points")
    F = idft_matrix(grid) if F is None else F
    w2 = weights(pred.variance) ** 2
    o = grid.origin_index

    # the equality-constrained optimum is the mean with f(0) = 1; take it if feasible
    fixed = np.zeros(grid.size, dtype=bool)
    if q_cut is not None:
        fixed = np.linalg.norm(grid.q, axis=1) > q_cut
    f_unc = np.where(fixed, 0.0, mean)
    f_unc[o] = 1.0
    P_unc = F @ f_unc
    if f_unc.min() >= 0 and P_unc.min() >= 0:
        return QPReconstruction(f_unc, EapVolume(grid, P_unc), qp_objective(f_unc, mean, pred.variance), None)

    neg = grid.negation()
    if symmetric is None:
        symmetric = _is_even(mean, neg) and _is_even(w2, neg)

    C = F / (grid.dq / (2.0 * np.pi)) ** 3  # unit-scaled rows, same feasible set
    if symmetric:
        # variables: one value per pair {k, -k}, k < origin; f(-k) = f(k)
        half = np.flatnonzero(~fixed[:o])
        E = C[: o + 1, half] + C[: o + 1, neg[half]]
        Pd = 2.0 * w2[half] / w2[half].max()
        c = -Pd * mean[half]
        G = np.vstack([E, np.eye(len(half))])
        h = np.concatenate([-C[: o + 1, o], np.zeros(len(half))])
    else:
        rest = np.flatnonzero(~fixed)
        rest = rest[rest != o]
        Pd = w2[rest] / w2[rest].max()
        c = -Pd * mean[rest]
        # rows for r and -r coincide, keep one of each pair
        G = np.vstack([C[: o + 1, rest], np.eye(len(rest))])
        h = np.concatenate([-C[: o + 1, o], np.zeros(len(rest))])

    res = solve_qp(Pd, c, G, h, tol=tol, max_iter=max_iter)
    if not res.converged:
        raise QPError(f"interior point did not converge in {res.iterations} iterations "
                      f"(residuals {res.residuals})")
    x = res.x
    # interior-point iterates may undershoot the bound by O(tol)
    x = np.where(x < 0, 0.0, x)
    f = np.zeros(grid.size)
    f[o] = 1.0
    if symmetric:
        f[half] = x
        f[neg[half]] = x
    else:
        f[rest] = x
    return QPReconstruction(f, EapVolume(grid, F @ f), qp_objective(f, mean, pred.variance), res)


def reconstruct_naive(mean, grid: CartesianGrid, F=None) -> EapVolume:
    """Transform, clip negative values to zero and renormalize to unit mass."""
    F = idft_matrix(grid) if F is None else F
    P = np.maximum(F @ np.asarray(mean, dtype=float), 0.0)
    mass = P.sum() * grid.dr**3
    if not mass > 0:
        raise ValueError("propagator is nowhere positive; cannot renormalize")
    return EapVolume(grid, P / mass)
