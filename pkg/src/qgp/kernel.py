"""Covariance function for the q-space signal.

The kernel factorizes into a radial and an angular part,

    k(q_i, q_j) = C_r(|q_i|, |q_j|) * C_theta(qhat_i . qhat_j),

where the angular part is a nonnegative combination of the even
Legendre polynomials P0, P2, P4, P6 (a valid covariance on the sphere
that is symmetric under q -> -q) and the radial part is a squared
exponential in ``log(xi^2 + q^2)``.

Points with magnitude below ``EPS_DIR`` have no direction. For those
the angular factor is the spherical average of C_theta, which is
``a0`` against every other point (including another origin point).
"""

import numpy as np

from .core import Hyperparameters

__all__ = [
    "EPS_DIR",
    "ORDERS",
    "legendre",
    "legendre_basis",
    "angular_cov",
    "radial_cov",
    "cov",
    "cross_cov",
    "gram",
    "gram_and_grad",
    "default_xi",
]

EPS_DIR = 1e-9
ORDERS = (0, 2, 4, 6)


def legendre(n, x):
    """Even Legendre polynomial P_n(x) for n in {0, 2, 4, 6}."""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    x2 = x * x
    if n == 0:
        return np.ones_like(x)
    if n == 2:
        return (3.0 * x2 - 1.0) / 2.0
    if n == 4:
        return ((35.0 * x2 - 30.0) * x2 + 3.0) / 8.0
    if n == 6:
        return (((231.0 * x2 - 315.0) * x2 + 105.0) * x2 - 5.0) / 16.0
    raise ValueError(f"unsupported Legendre order {n}; expected one of {ORDERS}")


def legendre_basis(x):
    """Stack P0, P2, P4, P6 of ``x`` along a new last axis."""
    return np.stack([legendre(n, x) for n in ORDERS], axis=-1)


def angular_cov(c, a):
    """sum_n a_n P_n(c) over the even orders up to 6."""
    a = np.asarray(a, dtype=float)
    if a.shape != (4,) or np.any(a < 0):
        raise ValueError("angular coefficients must be 4 nonnegative numbers")
    return legendre_basis(c) @ a


def radial_cov(qi, qj, sigma_r, xi):
    qi = np.asarray(qi, dtype=float)
    qj = np.asarray(qj, dtype=float)
    xi2 = xi * xi
    lr = np.log((xi2 + qi * qi) / (xi2 + qj * qj))
    return np.exp(-0.5 * lr * lr / sigma_r**2)


def _geometry(qa, qb):
    """Log-radius ratios, cosines and origin mask between two point sets."""
    qa = np.atleast_2d(np.asarray(qa, dtype=float))
    qb = np.atleast_2d(np.asarray(qb, dtype=float))
    ma = np.linalg.norm(qa, axis=1)
    mb = np.linalg.norm(qb, axis=1)
    oa = ma < EPS_DIR
    ob = mb < EPS_DIR
    ua = qa / np.where(oa, 1.0, ma)[:, None]
    ub = qb / np.where(ob, 1.0, mb)[:, None]
    c = np.clip(ua @ ub.T, -1.0, 1.0)
    origin = oa[:, None] | ob[None, :]
    return ma, mb, c, origin


def _angular_basis(c, origin):
    B = legendre_basis(c)
    if np.any(origin):
        # spherical average of P_n is 1 for n = 0 and 0 otherwise
        B[origin] = (1.0, 0.0, 0.0, 0.0)
    return B


def cross_cov(qa, qb, h: Hyperparameters):
    """Covariance matrix between point sets ``qa`` (N, 3) and ``qb`` (M, 3)."""
    ma, mb, c, origin = _geometry(qa, qb)
    R = radial_cov(ma[:, None], mb[None, :], h.sigma_r, h.xi)
    return R * (_angular_basis(c, origin) @ h.angular)


def cov(qi, qj, h: Hyperparameters) -> float:
    return float(cross_cov(np.reshape(qi, (1, 3)), np.reshape(qj, (1, 3)), h)[0, 0])


def gram(points, h: Hyperparameters):
    """Noise-free Gram matrix of ``points``; exactly symmetric."""
    K = cross_cov(points, points, h)
    return 0.5 * (K + K.T)


def gram_and_grad(points, h: Hyperparameters):
    """Gram matrix and its derivatives w.r.t. log a0..a6 and log sigma_r.

    Returns ``K`` (N, N) and ``dK`` (5, N, N). The noise term is not
    included in either.
    """
    m, _, c, origin = _geometry(points, points)
    xi2 = h.xi * h.xi
    lr = np.log((xi2 + m[:, None] ** 2) / (xi2 + m[None, :] ** 2))
    lr2 = lr * lr
    R = np.exp(-0.5 * lr2 / h.sigma_r**2)
    B = _angular_basis(c, origin)
    A = B @ h.angular
    K = R * A
    K = 0.5 * (K + K.T)
    dK = np.empty((5,) + K.shape)
    for k in range(4):
        dK[k] = h.angular[k] * R * B[..., k]
    dK[4] = K * lr2 / h.sigma_r**2
    dK = 0.5 * (dK + dK.transpose(0, 2, 1))
    return K, dK


def default_xi(q) -> float:
    """1e-2 times the smallest nonzero magnitude in ``q``."""
    m = np.linalg.norm(np.atleast_2d(q), axis=1)
    m = m[m >= EPS_DIR]
    if m.size == 0:
        raise ValueError("no nonzero q-space points to derive xi from")
    return 1e-2 * float(m.min())
