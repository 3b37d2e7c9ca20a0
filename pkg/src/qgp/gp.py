"""Gaussian-process training and prediction over q-space.

All voxels share one acquisition scheme, so the noisy Gram matrix
``K + sigma_n2 * I`` and its Cholesky factor are computed once and reused
for every voxel. The prior mean is zero.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .core import AcquisitionScheme, GpPrediction, Hyperparameters, SignalTable
from .kernel import EPS_DIR, cross_cov, gram, gram_and_grad

log = logging.getLogger(__name__)

__all__ = [
    "TrainedModel",
    "TrainConfig",
    "ConvergenceWarning",
    "noisy_cholesky",
    "fit",
    "predict",
    "condition",
    "log_marginal",
    "grad_log_marginal",
    "train",
    "prior_variance",
]

# bounds of the optimized log-parameters (a0, a2, a4, a6, sigma_r, sigma_n2)
LOG_BOUNDS = [(-20.0, 7.0)] * 4 + [(-5.0, 5.0), (-30.0, 2.0)]


class ConvergenceWarning(UserWarning):
    pass


def noisy_cholesky(K, sigma_n2, signal_variance, retries=3):
    """Lower Cholesky factor of ``K + sigma_n2 I``.

    On failure, a jitter of ``1e-10 * signal_variance`` is added to the
    diagonal and the factorization retried, growing tenfold each time.
    """
    n = K.shape[0]
    Kn = K + sigma_n2 * np.eye(n)
    jitter = 0.0
    for attempt in range(retries + 1):
        try:
            return linalg.cholesky(Kn + jitter * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError:
            if attempt == retries:
                raise
            jitter = 1e-10 * signal_variance * 10.0**attempt
            log.debug("Cholesky failed, retrying with jitter %.3g", jitter)


def prior_variance(queries, h: Hyperparameters):
    """k(x, x) for each query; the origin carries only the isotropic term."""
    m = np.linalg.norm(np.atleast_2d(queries), axis=1)
    return np.where(m < EPS_DIR, h.a0, h.signal_variance)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """Hyperparameters plus the cached factorization for one scheme."""

    hyperparameters: Hyperparameters
    scheme: AcquisitionScheme
    chol: np.ndarray = field(repr=False)
    log_marginal: float | None = None
    converged: bool = True
    n_iter: int = 0

    def predict(self, y, queries) -> GpPrediction:
        return predict(self, y, queries)


def fit(scheme: AcquisitionScheme, h: Hyperparameters, **kw) -> TrainedModel:
    """Factorize the noisy Gram matrix of ``scheme`` without optimizing."""
    L = noisy_cholesky(gram(scheme.q, h), h.sigma_n2, h.signal_variance)
    return TrainedModel(h, scheme, L, **kw)


def predict(model: TrainedModel, y, queries) -> GpPrediction:
    """Posterior mean and latent variance at ``queries``.

    ``y`` may be one voxel (N,) or a stack (V, N); the mean then has the
    matching leading shape. The variance does not depend on ``y``.
    """
    y = np.asarray(y, dtype=float)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if y.shape[-1] != len(model.scheme):
        raise ValueError(f"signal has {y.shape[-1]} values, scheme has {len(model.scheme)}")
    if not np.all(np.isfinite(queries)):
        raise ValueError("query points must be finite")
    h = model.hyperparameters
    Ks = cross_cov(model.scheme.q, queries, h)
    return condition(model.chol, Ks, prior_variance(queries, h), y)


def condition(L, Ks, kss, y) -> GpPrediction:
    """Posterior given the Cholesky factor ``L`` of the noisy Gram matrix.

    ``Ks`` holds training-by-query covariances, ``kss`` the prior
    variances at the queries.
    """
    y = np.asarray(y, dtype=float)
    Ks = np.asarray(Ks, dtype=float)
    alpha = linalg.cho_solve((L, True), y.T, check_finite=False)
    mean = (Ks.T @ alpha).T
    v = linalg.solve_triangular(L, Ks, lower=True, check_finite=False)
    var = np.asarray(kss, dtype=float) - np.sum(v * v, axis=0)
    return GpPrediction(mean, np.maximum(var, 0.0))


def _values(signals):
    Y = signals.values if isinstance(signals, SignalTable) else np.asarray(signals, dtype=float)
    Y = np.atleast_2d(Y)
    if Y.shape[0] < 1:
        raise ValueError("need at least one voxel")
    return Y


def _lml_and_grad(q, Y, h: Hyperparameters, want_grad=True):
    n_vox, n = Y.shape
    if want_grad:
        K, dK = gram_and_grad(q, h)
    else:
        K = gram(q, h)
    L = noisy_cholesky(K, h.sigma_n2, h.signal_variance)
    alpha = linalg.cho_solve((L, True), Y.T, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    # voxel sum in fixed order
    value = -0.5 * (np.einsum("ij,ij->", Y.T, alpha) + n_vox * logdet)
    if not want_grad:
        return value, None
    Kinv = linalg.cho_solve((L, True), np.eye(n), check_finite=False)
    M = alpha @ alpha.T - n_vox * Kinv
    grad = np.empty(6)
    for k in range(5):
        grad[k] = 0.5 * np.einsum("ij,ij->", M, dK[k])
    grad[5] = 0.5 * h.sigma_n2 * np.trace(M)
    return value, grad


def log_marginal(scheme: AcquisitionScheme, signals, h: Hyperparameters) -> float:
    """Log marginal likelihood summed over voxels, without the 2*pi constant."""
    return float(_lml_and_grad(scheme.q, _values(signals), h, want_grad=False)[0])


def grad_log_marginal(scheme: AcquisitionScheme, signals, h: Hyperparameters) -> np.ndarray:
    """Gradient of :func:`log_marginal` w.r.t. the log of (a0, a2, a4, a6, sigma_r, sigma_n2)."""
    return _lml_and_grad(scheme.q, _values(signals), h)[1]


@dataclass
class TrainConfig:
    """Optimizer settings for :func:`train`.

    ``gtol`` applies to the gradient of the log marginal likelihood divided
    by the number of observations (voxels times samples).
    """

    max_iter: int = 500
    gtol: float = 1e-6
    starts: int = 3
    spread: float = 1.0
    max_voxels: int = 100_000
    seed: int = 0


def _start_points(theta0, cfg: TrainConfig):
    rng = np.random.default_rng(cfg.seed)
    starts = [theta0]
    for _ in range(max(cfg.starts, 1) - 1):
        starts.append(theta0 + cfg.spread * rng.standard_normal(theta0.shape))
    lo, hi = np.array(LOG_BOUNDS).T
    return [np.clip(s, lo, hi) for s in starts]


def train(scheme: AcquisitionScheme, signals, init: Hyperparameters,
          config: TrainConfig | None = None) -> TrainedModel:
    """Maximize the log marginal likelihood over the six hyperparameters.

    Optimization runs in log-parameter space with L-BFGS-B from
    ``config.starts`` starting points (the first is ``init``); the best
    result over all starts is returned, and never one worse than ``init``.
    If no start converges a :class:`ConvergenceWarning` is issued and the
    best point found is still returned with ``converged=False``.
    """
    cfg = config or TrainConfig()
    Y = _values(signals)
    if Y.shape[0] > cfg.max_voxels:
        rng = np.random.default_rng(cfg.seed)
        Y = Y[np.sort(rng.choice(Y.shape[0], cfg.max_voxels, replace=False))]
    scale = 1.0 / Y.size
    xi = init.xi
    q = scheme.q

    def objective(theta):
        try:
            v, g = _lml_and_grad(q, Y, Hyperparameters.from_log(theta, xi))
        except (linalg.LinAlgError, ValueError):
            return 1e10, np.zeros_like(theta)
        return -v * scale, -g * scale

    theta0 = init.to_log()
    best_theta = theta0
    best_val = -objective(theta0)[0] / scale
    converged = cfg.max_iter == 0
    total_iter = 0
    if cfg.max_iter > 0:
        for start in _start_points(theta0, cfg):
            res = optimize.minimize(
                objective, start, jac=True, method="L-BFGS-B", bounds=LOG_BOUNDS,
                options={"maxiter": cfg.max_iter, "gtol": cfg.gtol, "ftol": 1e-15},
            )
            total_iter += res.nit
            val = -res.fun / scale
            gnorm = np.max(np.abs(res.jac))
            ok = bool(res.success) or gnorm <= cfg.gtol
            log.info("start %s: lml=%.6g |g|=%.2e iters=%d %s", np.round(start, 2), val, gnorm, res.nit, res.message)
            converged = converged or ok
            if val > best_val:
                best_val, best_theta = val, res.x
    if not converged:
        warnings.warn("marginal likelihood optimization did not converge; returning best point",
                      ConvergenceWarning, stacklevel=2)
    h = init if best_theta is theta0 else Hyperparameters.from_log(best_theta, xi)
    return fit(scheme, h, log_marginal=float(best_val), converged=converged, n_iter=total_iter)
