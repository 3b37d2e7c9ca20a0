import warnings

import numpy as np
import pytest

from qgp import gp
from qgp.core import AcquisitionScheme, Hyperparameters
from qgp.kernel import cross_cov, gram
from qgp.simulate import make_shell_scheme
from qgp.sphere import random_rotation

from conftest import T_D


def _scheme(q, t_d=T_D):
    """Single-shell-per-point scheme for arbitrary q-vectors."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    mags = np.linalg.norm(q, axis=1)
    order = np.argsort(mags, kind="stable")
    uniq, sid = np.unique(mags[order], return_inverse=True)
    out = np.empty(len(q), dtype=int)
    out[order] = sid
    return AcquisitionScheme(q, out, t_d, t_d * uniq**2)


def _brute(q, y, queries, h):
    K = gram(q, h) + h.sigma_n2 * np.eye(len(q))
    Ki = np.linalg.inv(K)
    Ks = cross_cov(q, queries, h)
    mean = Ks.T @ Ki @ y
    var = gp.prior_variance(queries, h) - np.einsum("ij,ik,kj->j", Ks, Ki, Ks)
    return mean, var


def test_condition_two_point_oracle():
    L = np.linalg.cholesky(np.array([[1.0, 0.5], [0.5, 1.0]]))
    p = gp.condition(L, np.array([[0.5], [0.25]]), [1.0], np.array([1.0, 0.0]))
    np.testing.assert_allclose(p.mean, [0.5], atol=1e-15)
    np.testing.assert_allclose(p.variance, [0.75], atol=1e-15)


def test_condition_noiseless_single_point():
    p = gp.condition(np.ones((1, 1)), np.ones((1, 1)), [1.0], np.array([0.8]))
    assert p.mean[0] == pytest.approx(0.8, abs=1e-15)
    assert p.variance[0] == 0.0


def test_uncorrelated_query_recovers_prior(hyp):
    h = hyp.replace(a2=0.0, a4=0.0, a6=0.0, sigma_r=0.05)
    m = gp.fit(_scheme([[1.0, 0, 0]]), h)
    p = m.predict([0.7], [[0, 0, 1e4]])
    assert abs(p.mean[0]) < 1e-12
    assert p.variance[0] == pytest.approx(h.signal_variance, rel=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_brute_force_equivalence(n, hyp, rng):
    q = rng.normal(size=(n, 3)) * 10
    y = rng.uniform(size=n)
    queries = np.vstack([rng.normal(size=(7, 3)) * 10, np.zeros((1, 3))])
    p = gp.fit(_scheme(q), hyp).predict(y, queries)
    mean, var = _brute(q, y, queries, hyp)
    np.testing.assert_allclose(p.mean, mean, atol=1e-10)
    np.testing.assert_allclose(p.variance, np.maximum(var, 0), atol=1e-10)


def test_noiseless_interpolation(small_scheme, hyp, rng):
    h = hyp.replace(sigma_n2=1e-12, xi=0.1)
    sub = small_scheme.subset(np.arange(0, len(small_scheme), 4))
    y = rng.uniform(0.1, 1, len(sub))
    m = gp.fit(sub, h)
    K = gram(sub.q, h)
    assert np.linalg.cond(K) < 1e4
    p = m.predict(y, sub.q)
    np.testing.assert_allclose(p.mean, y, atol=1e-8)


def test_cholesky_reproduces_gram(small_scheme, hyp):
    m = gp.fit(small_scheme, hyp)
    Kn = gram(small_scheme.q, hyp) + hyp.sigma_n2 * np.eye(len(small_scheme))
    err = np.linalg.norm(m.chol @ m.chol.T - Kn) / np.linalg.norm(Kn)
    assert err <= 1e-8


def test_variance_within_prior(small_scheme, hyp, rng):
    m = gp.fit(small_scheme, hyp)
    queries = rng.normal(size=(50, 3)) * 400
    p = m.predict(np.zeros(len(small_scheme)), queries)
    assert np.all(p.variance >= 0)
    assert np.all(p.variance <= gp.prior_variance(queries, hyp) + 1e-12)


def test_rotation_equivariance(small_scheme, hyp, rng):
    R = random_rotation(rng)
    y = rng.uniform(size=len(small_scheme))
    queries = rng.normal(size=(20, 3)) * 300
    a = gp.fit(small_scheme, hyp).predict(y, queries)
    rot = AcquisitionScheme(small_scheme.q @ R.T, small_scheme.shell_id, small_scheme.t_d, small_scheme.b_values)
    b = gp.fit(rot, hyp).predict(y, queries @ R.T)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
    np.testing.assert_allclose(a.variance, b.variance, atol=1e-10)


def test_joint_and_single_voxel_predictions_agree(small_scheme, hyp, rng):
    Y = rng.uniform(size=(4, len(small_scheme)))
    queries = rng.normal(size=(6, 3)) * 300
    m = gp.fit(small_scheme, hyp)
    joint = m.predict(Y, queries)
    for v in range(4):
        np.testing.assert_allclose(joint.mean[v], m.predict(Y[v], queries).mean, atol=1e-12)


def test_predict_rejects_bad_input(small_scheme, hyp):
    m = gp.fit(small_scheme, hyp)
    with pytest.raises(ValueError):
        m.predict(np.zeros(3), [[1, 0, 0]])
    with pytest.raises(ValueError):
        m.predict(np.zeros(len(small_scheme)), [[np.nan, 0, 0]])


def test_log_marginal_scalar():
    h = Hyperparameters(1.0, 0.0, 0.0, 0.0, sigma_r=1.0, sigma_n2=0.25, xi=0.1)
    s = _scheme([[1.0, 0, 0]])
    expected = -0.5 * (0.25 / 1.25 + np.log(1.25))
    assert expected == pytest.approx(-0.21157, abs=1e-5)
    assert gp.log_marginal(s, [[0.5]], h) == pytest.approx(expected, rel=1e-14)
    assert gp.log_marginal(s, [[0.5], [0.5]], h) == pytest.approx(2 * expected, rel=1e-14)
    assert gp.log_marginal(s, [[0.0]], h) == pytest.approx(-0.5 * np.log(1.25), rel=1e-14)


def test_gradient_additive(small_scheme, hyp, rng):
    Y = rng.uniform(size=(3, len(small_scheme)))
    g1 = gp.grad_log_marginal(small_scheme, Y, hyp)
    g2 = gp.grad_log_marginal(small_scheme, np.vstack([Y, Y]), hyp)
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12)


def _fd_check(scheme, Y, h, step=1e-5):
    theta = h.to_log()
    g = gp.grad_log_marginal(scheme, Y, h)
    fd = np.empty(6)
    for k in range(6):
        e = np.zeros(6)
        e[k] = step
        fp = gp.log_marginal(scheme, Y, Hyperparameters.from_log(theta + e, h.xi))
        fm = gp.log_marginal(scheme, Y, Hyperparameters.from_log(theta - e, h.xi))
        fd[k] = (fp - fm) / (2 * step)
    return g, fd


def _random_config(rng):
    n_sh = rng.integers(1, 4)
    bs = np.sort(rng.choice([500, 1000, 2000, 3000, 5000], n_sh, replace=False))
    scheme = make_shell_scheme(bs, rng.integers(4, 12, n_sh), T_D, seed=int(rng.integers(1000)))
    theta = np.concatenate([rng.uniform(-3, 0.5, 4), [rng.uniform(-1, 1)], [rng.uniform(-7, -2)]])
    h = Hyperparameters.from_log(theta, xi=rng.uniform(0.1, 5))
    Y = np.exp(-scheme.b_values[scheme.shell_id] * rng.uniform(5e-4, 2.5e-3, (rng.integers(1, 4), 1)))
    Y = Y + rng.normal(scale=0.02, size=Y.shape)
    return scheme, Y, h


def test_gradient_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(50):
        scheme, Y, h = _random_config(rng)
        g, fd = _fd_check(scheme, Y, h)
        worst = max(worst, np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)))
    assert worst <= 1e-5


def test_train_never_worse_than_init(small_scheme, hyp, rng):
    Y = np.exp(-small_scheme.b_values[small_scheme.shell_id] * 1e-3) + rng.normal(scale=0.02, size=(5, len(small_scheme)))
    lml0 = gp.log_marginal(small_scheme, Y, hyp)
    m = gp.train(small_scheme, Y, hyp, gp.TrainConfig(starts=2))
    assert m.log_marginal >= lml0
    assert m.log_marginal == pytest.approx(gp.log_marginal(small_scheme, Y, m.hyperparameters), rel=1e-10)
    assert m.hyperparameters.xi == hyp.xi


def test_train_stationary_init_returned(small_scheme, hyp, rng):
    Y = np.exp(-small_scheme.b_values[small_scheme.shell_id] * 1e-3) + rng.normal(scale=0.02, size=(5, len(small_scheme)))
    first = gp.train(small_scheme, Y, hyp, gp.TrainConfig(starts=1))
    again = gp.train(small_scheme, Y, first.hyperparameters, gp.TrainConfig(starts=1))
    assert again.log_marginal >= first.log_marginal
    np.testing.assert_allclose(again.hyperparameters.to_log(), first.hyperparameters.to_log(), atol=1e-3)
    g = gp.grad_log_marginal(small_scheme, Y, first.hyperparameters) / Y.size
    assert np.max(np.abs(g)) <= 1e-4


def test_train_zero_iterations_returns_init(small_scheme, hyp):
    Y = np.ones((2, len(small_scheme))) * 0.5
    m = gp.train(small_scheme, Y, hyp, gp.TrainConfig(max_iter=0))
    assert m.hyperparameters is hyp
    assert m.n_iter == 0


def test_multistart_takes_best(small_scheme, hyp, rng):
    Y = np.exp(-small_scheme.b_values[small_scheme.shell_id] * 1e-3) + rng.normal(scale=0.02, size=(5, len(small_scheme)))
    single = [gp.train(small_scheme, Y, hyp, gp.TrainConfig(starts=1)).log_marginal]
    multi = gp.train(small_scheme, Y, hyp, gp.TrainConfig(starts=3, seed=4)).log_marginal
    assert multi >= max(single) - 1e-9


def test_train_recovers_noise_scale(rng):
    scheme = make_shell_scheme([1000, 2000, 3000], [10, 10, 10], T_D, seed=1)
    sigma = 0.03
    d = rng.uniform(0.7e-3, 2.0e-3, (200, 1))
    Y = np.exp(-scheme.b_values[scheme.shell_id] * d) + rng.normal(scale=sigma, size=(200, len(scheme)))
    init = Hyperparameters(0.5, 0.1, 0.05, 0.01, sigma_r=1.0, sigma_n2=1e-2,
                           xi=0.01 * np.linalg.norm(scheme.q, axis=1).min())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", gp.ConvergenceWarning)
        m = gp.train(scheme, Y, init)
    s = np.sqrt(m.hyperparameters.sigma_n2)
    assert sigma / 2 <= s <= 2 * sigma


def test_voxel_cap_subsamples(small_scheme, hyp, rng):
    Y = rng.uniform(0, 1, (30, len(small_scheme)))
    m = gp.train(small_scheme, Y, hyp, gp.TrainConfig(max_iter=0, max_voxels=10, seed=2))
    pick = np.sort(np.random.default_rng(2).choice(30, 10, replace=False))
    assert m.log_marginal == pytest.approx(gp.log_marginal(small_scheme, Y[pick], hyp), rel=1e-12)


def test_nonconvergence_warns(small_scheme, hyp, rng):
    Y = rng.uniform(0, 1, (3, len(small_scheme)))
    with pytest.warns(gp.ConvergenceWarning):
        m = gp.train(small_scheme, Y, hyp, gp.TrainConfig(max_iter=1, starts=1, gtol=1e-30))
    assert not m.converged
