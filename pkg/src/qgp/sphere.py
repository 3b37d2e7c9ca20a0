"""Point sets on the unit sphere."""

import numpy as np

__all__ = ["fibonacci", "dodecahedron", "random_rotation", "directions"]


def fibonacci(n):
    """``n`` near-uniform unit vectors on a Fibonacci spiral."""
    if n < 1:
        raise ValueError("need at least one direction")
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def dodecahedron():
    """The 20 vertices of a regular dodecahedron, normalized. Antipodally closed."""
    g = (1.0 + np.sqrt(5.0)) / 2.0
    pts = [(x, y, z) for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    for a in (-1 / g, 1 / g):
        for b in (-g, g):
            pts += [(0, a, b), (a, b, 0), (b, 0, a)]
    pts = np.array(pts, dtype=float)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def random_rotation(rng):
    """Uniformly distributed proper rotation matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((3, 3)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def directions(n):
    """Default direction set of size ``n``: axes for 6, dodecahedron for 20, else Fibonacci."""
    if n == 6:
        return np.vstack([np.eye(3), -np.eye(3)])
    if n == 20:
        return dodecahedron()
    return fibonacci(n)
