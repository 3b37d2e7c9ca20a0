"""Two-tensor Gaussian phantom, Rician noise and shell schemes.

Diffusivities are in mm^2/s internally; ``D0 = 2.5e-3`` mm^2/s equals
2.5e-9 m^2/s. The latent signal of a phantom with tensors D1, D2 is::

    E(q) = (exp(-t_d q^T D1 q) + exp(-t_d q^T D2 q)) / 2

whose propagator is an equal mixture of zero-mean Gaussians with
covariances ``2 t_d D1`` and ``2 t_d D2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AcquisitionScheme, SignalTable
from .sphere import fibonacci, random_rotation

__all__ = [
    "D0",
    "FOUR_SHELLS",
    "TensorPhantom",
    "rotation_z",
    "latent_signal",
    "rician",
    "fa",
    "md",
    "make_shell_scheme",
    "make_phantom_dataset",
    "PhantomDataset",
    "gaussian_mixture_eap",
    "mixture_rtop",
]

D0 = 2.5e-3  # mm^2/s
# b-values (s/mm^2) and orientation counts of the four-shell protocol
FOUR_SHELLS = ((1000.0, 64), (3000.0, 64), (5000.0, 128), (10000.0, 256))


def rotation_z(phi):
    """Counterclockwise rotation by ``phi`` radians about the z axis."""
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class TensorPhantom:
    phi: float
    t_d: float
    d0: float = D0
    noise_sigma: float = 0.0
    D1: np.ndarray = field(init=False, repr=False, compare=False)
    D2: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        D1 = self.d0 * np.diag([1.0, 0.1, 0.1])
        R = rotation_z(self.phi)
        object.__setattr__(self, "D1", D1)
        object.__setattr__(self, "D2", R.T @ D1 @ R)

    @property
    def tensors(self):
        return (self.D1, self.D2)


def latent_signal(q, phantom: TensorPhantom):
    """Noise-free signal at ``q`` (3,) or (N, 3)."""
    q = np.asarray(q, dtype=float)
    one = q.ndim == 1
    q = np.atleast_2d(q)
    E = np.zeros(len(q))
    for D in phantom.tensors:
        E += 0.5 * np.exp(-phantom.t_d * np.einsum("ij,jk,ik->i", q, D, q))
    return E[0] if one else E


def rician(value, sigma, rng):
    """Magnitude of ``value`` plus complex Gaussian noise of std ``sigma`` per channel."""
    value = np.asarray(value, dtype=float)
    if sigma == 0:
        return value.copy()
    re = value + rng.normal(0.0, sigma, value.shape)
    im = rng.normal(0.0, sigma, value.shape)
    return np.hypot(re, im)


def _check_tensor(D):
    D = np.asarray(D, dtype=float)
    if D.shape != (3, 3) or not np.allclose(D, D.T, rtol=1e-12, atol=1e-15 * np.abs(D).max()):
        raise ValueError("diffusion tensor must be a symmetric 3x3 matrix")
    return np.linalg.eigvalsh(D)


def md(D):
    """Mean diffusivity, trace / 3, in the units of ``D``."""
    _check_tensor(D)
    return float(np.trace(D) / 3.0)


def fa(D):
    """Fractional anisotropy from the tensor eigenvalues."""
    lam = _check_tensor(D)
    den = np.sum(lam**2)
    if den == 0:
        return 0.0
    return float(np.sqrt(1.5 * np.sum((lam - lam.mean()) ** 2) / den))


def make_shell_scheme(b_list, dirs_per_shell, t_d, shared_directions=False, seed=0,
                      direction_generator=fibonacci) -> AcquisitionScheme:
    """Multi-shell scheme with ``dirs_per_shell[i]`` directions at ``b_list[i]``.

    Each shell gets its own generated direction set, rotated by a random
    rotation drawn from ``seed`` so that shells do not share directions.
    With ``shared_directions`` the rotation is skipped; shells with equal
    counts then use identical directions.
    """
    b_list = [float(b) for b in b_list]
    counts = [int(c) for c in dirs_per_shell]
    if len(b_list) != len(counts):
        raise ValueError("b_list and dirs_per_shell differ in length")
    if any(b <= 0 for b in b_list) or any(c < 1 for c in counts):
        raise ValueError("b-values must be positive and counts at least 1")
    rng = np.random.default_rng(seed)
    dirs, sid = [], []
    for k, count in enumerate(counts):
        d = direction_generator(count)
        if not shared_directions:
            d = d @ random_rotation(rng).T
        dirs.append(d)
        sid.append(np.full(count, k))
    return AcquisitionScheme.from_directions(np.vstack(dirs), np.concatenate(sid), b_list, t_d)


@dataclass(frozen=True, eq=False)
class PhantomDataset:
    angles: np.ndarray  # radians, one per voxel
    latent: SignalTable
    noisy: SignalTable

    @property
    def scheme(self):
        return self.noisy.scheme


def make_phantom_dataset(angles, scheme: AcquisitionScheme, noise_sigma, rng,
                         d0: float = D0) -> PhantomDataset:
    """One two-tensor voxel per crossing angle (radians), latent and noisy."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    latent = np.array([latent_signal(scheme.q, TensorPhantom(a, scheme.t_d, d0)) for a in angles])
    latent = latent.reshape(len(angles), len(scheme))
    noisy = rician(latent, noise_sigma, rng)
    return PhantomDataset(angles, SignalTable(scheme, latent), SignalTable(scheme, noisy))


def gaussian_mixture_eap(r, phantom: TensorPhantom):
    """Analytic propagator of the phantom at displacements ``r`` (N, 3), in mm^-3."""
    r = np.atleast_2d(np.asarray(r, dtype=float))
    P = np.zeros(len(r))
    for D in phantom.tensors:
        S = 2.0 * phantom.t_d * D
        Si = np.linalg.inv(S)
        norm = 1.0 / np.sqrt((2.0 * np.pi) ** 3 * np.linalg.det(S))
        P += 0.5 * norm * np.exp(-0.5 * np.einsum("ij,jk,ik->i", r, Si, r))
    return P


def mixture_rtop(phantom: TensorPhantom) -> float:
    return float(gaussian_mixture_eap(np.zeros((1, 3)), phantom)[0])
