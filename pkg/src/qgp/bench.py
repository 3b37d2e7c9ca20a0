"""Experiment harness: RTOP accuracy per crossing angle and subsampling curves.

Both experiments run on phantom data from :mod:`qgp.simulate` but accept
any scheme and signal table, so measured data can be used as well.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import augment as aug
from .baseline import linear_resample
from .core import AcquisitionScheme, Hyperparameters, SignalTable
from .eap import idft_matrix, make_grid, reconstruct_qp, rtop
from .gp import TrainConfig, fit, train
from .kernel import default_xi
from .simulate import TensorPhantom, latent_signal, make_phantom_dataset, mixture_rtop, rician

log = logging.getLogger(__name__)

__all__ = [
    "SubsampleReport",
    "RtopReport",
    "DEFAULT_FRACTIONS",
    "subsample_masks",
    "subsample_experiment",
    "gp_method",
    "linear_method",
    "rtop_experiment",
    "train_on_phantoms",
    "split_voxels",
]

DEFAULT_FRACTIONS = tuple(np.round(np.arange(0.05, 0.951, 0.10), 2))

# (train scheme, train signals (V, N), query points (M, 3)) -> estimates (V, M)
Method = Callable[[AcquisitionScheme, np.ndarray, np.ndarray], np.ndarray]


def split_voxels(table: SignalTable, n_train: int, n_test: int, rng):
    """Disjoint random training and test subsets of the voxels."""
    if n_train < 0 or n_test < 0:
        raise ValueError("subset sizes must be nonnegative")
    if n_train + n_test > table.n_voxels:
        raise ValueError(f"need {n_train + n_test} voxels, table has {table.n_voxels}")
    perm = rng.permutation(table.n_voxels)
    tr = np.sort(perm[:n_train])
    te = np.sort(perm[n_train : n_train + n_test])
    return SignalTable(table.scheme, table.values[tr]), SignalTable(table.scheme, table.values[te])


def subsample_masks(scheme: AcquisitionScheme, fraction: float, rng) -> np.ndarray:
    """Boolean mask of removed samples: ``round(fraction * count)`` per shell."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction removed must lie in (0, 1), got {fraction}")
    removed = np.zeros(len(scheme), dtype=bool)
    for k in range(scheme.n_shells):
        idx = np.flatnonzero(scheme.shell_id == k)
        m = int(round(fraction * len(idx)))
        if m == 0:
            raise ValueError(f"fraction {fraction} removes nothing from shell {k} ({len(idx)} samples)")
        if m == len(idx):
            raise ValueError(f"fraction {fraction} removes all of shell {k}")
        removed[rng.choice(idx, m, replace=False)] = True
    return removed


def gp_method(h: Hyperparameters, q_cut_factor=aug.DEFAULT_CUT_FACTOR, zero_dirs=None) -> Method:
    """GP prediction from the retained samples plus origin and zero-shell anchors."""

    def predict(scheme, Y, queries):
        a, aY = aug.augment(scheme, Y, aug.default_q_cut(scheme, q_cut_factor), zero_dirs)
        return fit(a, h).predict(aY, queries).mean

    return predict


def linear_method(q_cut_factor=aug.DEFAULT_CUT_FACTOR, zero_dirs=None) -> Method:
    """Linear interpolation over the same anchored sample set."""

    def predict(scheme, Y, queries):
        a, aY = aug.augment(scheme, Y, aug.default_q_cut(scheme, q_cut_factor), zero_dirs)
        return linear_resample(a, aY, queries)

    return predict


@dataclass(frozen=True, eq=False)
class SubsampleReport:
    """Held-out errors per removed fraction and shell, averaged over realizations.

    ``errors[method]`` has shape (fractions, shells); each entry is the
    mean absolute difference between measured and estimated held-out
    values on that shell, divided by the shell's mean measured value.
    """

    fractions_removed: np.ndarray
    b_values: np.ndarray
    errors: dict = field(default_factory=dict)
    realizations: int = 1

    @property
    def methods(self):
        return tuple(self.errors)

    @property
    def fractions_retained(self):
        return 1.0 - self.fractions_removed

    def rows(self):
        for i, f in enumerate(self.fractions_removed):
            for k, b in enumerate(self.b_values):
                for name, err in self.errors.items():
                    yield float(f), float(b), name, float(err[i, k])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fraction", "shell", "method", "error"])
            for f, b, name, e in self.rows():
                w.writerow([repr(f), repr(b), name, repr(e)])


def subsample_experiment(signals: SignalTable, fractions=DEFAULT_FRACTIONS, repeats=10, rng=None,
                         methods: Mapping[str, Method] | None = None) -> SubsampleReport:
    """Remove an equal fraction of each shell, predict it back and score it.

    One removal mask per fraction and realization is shared by all voxels.
    ``fractions`` are fractions removed.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    if not methods:
        raise ValueError("no methods given")
    rng = np.random.default_rng() if rng is None else rng
    scheme = signals.scheme
    Y = signals.values
    fractions = np.asarray(fractions, dtype=float)
    shell_mean = np.array([Y[:, scheme.shell_id == k].mean() for k in range(scheme.n_shells)])
    if np.any(shell_mean <= 0):
        raise ValueError("a shell has zero mean signal; relative errors are undefined")
    errors = {name: np.zeros((len(fractions), scheme.n_shells)) for name in methods}
    for i, frac in enumerate(fractions):
        for _ in range(repeats):
            removed = subsample_masks(scheme, frac, rng)
            kept = np.flatnonzero(~removed)
            held = np.flatnonzero(removed)
            sub = scheme.subset(kept)
            for name, method in methods.items():
                est = method(sub, Y[:, kept], scheme.q[held])
                diff = np.abs(Y[:, held] - est)
                for k in range(scheme.n_shells):
                    on = scheme.shell_id[held] == k
                    errors[name][i, k] += diff[:, on].mean() / shell_mean[k]
        log.info("fraction %.2f done", frac)
    for e in errors.values():
        e /= repeats
    return SubsampleReport(fractions, scheme.b_values.copy(), errors, repeats)


def train_on_phantoms(scheme: AcquisitionScheme, noise_sigma: float, rng, n_voxels=100,
                      init: Hyperparameters | None = None, config: TrainConfig | None = None):
    """Hyperparameters learned from mixtures with crossing angles uniform on [0, 90] degrees."""
    angles = rng.uniform(0.0, np.pi / 2, n_voxels)
    data = make_phantom_dataset(angles, scheme, noise_sigma, rng)
    init = init or Hyperparameters(xi=default_xi(scheme.q))
    return train(scheme, data.noisy, init, config)


@dataclass(frozen=True, eq=False)
class RtopReport:
    """Relative RTOP errors ``|P_est(0) - P(0)| / P(0)``.

    ``errors[method]`` has shape (angles, repeats); :attr:`mean` averages
    over repeats.
    """

    angles_deg: np.ndarray
    errors: dict
    truth: np.ndarray
    hyperparameters: Hyperparameters
    seconds: float = 0.0

    @property
    def methods(self):
        return tuple(self.errors)

    @property
    def mean(self):
        return {k: v.mean(axis=1) for k, v in self.errors.items()}

    def rows(self):
        for name, m in self.mean.items():
            for a, e in zip(self.angles_deg, m):
                yield float(a), name, float(e)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["angle", "method", "error"])
            for a, name, e in self.rows():
                w.writerow([repr(a), name, repr(e)])


def rtop_experiment(scheme: AcquisitionScheme, angles_deg=(30, 60, 90), noise_sigma=0.01, repeats=10,
                    rng=None, h: Hyperparameters | None = None, grid_n=11,
                    q_cut_factor=aug.DEFAULT_CUT_FACTOR, zero_dirs=None, n_train=100,
                    config: TrainConfig | None = None) -> RtopReport:
    """RTOP of two-tensor phantoms from GP + constrained reconstruction and from linear interpolation.

    Without ``h`` the hyperparameters are first trained on ``n_train``
    noisy mixtures with random crossing angles. Each repeat draws a new
    noise realization per angle. The GP estimate is the RTOP of the
    constrained signal with values beyond ``q_cut`` held at zero; the
    linear estimate is the RTOP of the interpolated signal with the same
    cutoff.
    """
    start = time.perf_counter()
    rng = np.random.default_rng() if rng is None else rng
    if h is None:
        h = train_on_phantoms(scheme, noise_sigma, rng, n_train, config=config).hyperparameters
    q_cut = aug.default_q_cut(scheme, q_cut_factor)
    grid = make_grid(grid_n, q_cut)
    F = idft_matrix(grid)
    outside = np.linalg.norm(grid.q, axis=1) > q_cut
    angles_deg = np.asarray(angles_deg, dtype=float)
    truth = np.array([mixture_rtop(TensorPhantom(np.deg2rad(a), scheme.t_d)) for a in angles_deg])
    errors = {"gp": np.zeros((len(angles_deg), repeats)), "linear": np.zeros((len(angles_deg), repeats))}
    model = None
    for j in range(repeats):
        for i, a in enumerate(angles_deg):
            ph = TensorPhantom(np.deg2rad(a), scheme.t_d)
            y = rician(latent_signal(scheme.q, ph), noise_sigma, rng)
            a_s, a_y = aug.augment(scheme, y, q_cut, zero_dirs)
            if model is None:
                model = fit(a_s, h)
            pred = aug.apply_cutoff(model.predict(a_y, grid.q), grid.q, q_cut)
            rec = reconstruct_qp(pred, grid, F, q_cut=q_cut)
            f_lin = linear_resample(a_s, a_y, grid)
            f_lin[outside] = 0.0
            errors["gp"][i, j] = abs(rtop(rec.signal, grid) - truth[i]) / truth[i]
            errors["linear"][i, j] = abs(rtop(f_lin, grid) - truth[i]) / truth[i]
        log.info("repeat %d/%d done", j + 1, repeats)
    return RtopReport(angles_deg, errors, truth, h, time.perf_counter() - start)
