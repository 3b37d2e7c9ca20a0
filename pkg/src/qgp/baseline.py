"""Piecewise-linear resampling of scattered q-space data.

The (augmented) samples and their antipodal mirrors are tetrahedralized
once; values at query points are barycentric combinations of the
enclosing tetrahedron's vertex values. Queries outside the convex hull
get 0.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay, QhullError

from .core import AcquisitionScheme
from .eap import CartesianGrid

__all__ = ["LinearInterpolator", "linear_resample"]


class LinearInterpolator:
    """Delaunay-based linear interpolation from fixed sample points.

    Parameters
    ----------
    points : (N, 3) array
        Sample locations. Their negatives are added so the interpolant
        is even; coincident points are merged.
    """

    def __init__(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        both = np.vstack([points, -points])
        src = np.concatenate([np.arange(len(points))] * 2)
        scale = np.abs(both).max() or 1.0
        key = np.round(both / scale, 12)
        _, first = np.unique(key, axis=0, return_index=True)
        first = np.sort(first)
        self.vertices = both[first]
        self.source = src[first]
        self.n_samples = len(points)
        try:
            self.tri = Delaunay(self.vertices)
        except QhullError as exc:
            raise ValueError(f"degenerate (coplanar) sample set: {exc}") from None

    def weights(self, queries):
        """Sparse (M, N) matrix W with interpolated values ``W @ y``."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        # brute-force search returns the lowest-index cell containing each point
        simplex = self.tri.find_simplex(queries, bruteforce=True)
        inside = simplex >= 0
        rows, cols, vals = [], [], []
        if np.any(inside):
            s = simplex[inside]
            T = self.tri.transform[s]
            bary = np.einsum("ijk,ik->ij", T[:, :3, :], queries[inside] - T[:, 3, :])
            bary = np.column_stack([bary, 1.0 - bary.sum(axis=1)])
            verts = self.tri.simplices[s]
            qi = np.flatnonzero(inside)
            rows = np.repeat(qi, 4)
            cols = self.source[verts].ravel()
            vals = bary.ravel()
        W = sparse.csr_matrix((vals, (rows, cols)), shape=(len(queries), self.n_samples))
        return W

    def __call__(self, y, queries):
        y = np.asarray(y, dtype=float)
        return (self.weights(queries) @ y.T).T


def linear_resample(scheme: AcquisitionScheme, y, grid) -> np.ndarray:
    """Interpolate ``y`` from ``scheme`` onto ``grid`` (a CartesianGrid or (M, 3) points).

    ``scheme`` should already contain the origin and zero-shell anchors
    so that the hull covers the region of interest.
    """
    queries = grid.q if isinstance(grid, CartesianGrid) else grid
    return LinearInterpolator(scheme.q)(y, queries)
