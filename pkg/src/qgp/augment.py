"""Synthetic anchors that stabilize extrapolation.

After training, each voxel's data gets an extra sample at the origin
(signal 1) and a shell of zero-signal samples at a cut-off radius
``q_cut`` beyond the measurements. Estimates outside ``q_cut`` are then
forced to zero. The hyperparameters are left untouched; the anchors
carry the learned noise variance like real samples.
"""

import numpy as np

from .core import AcquisitionScheme, GpPrediction
from .sphere import dodecahedron

__all__ = ["DEFAULT_CUT_FACTOR", "default_q_cut", "augment", "apply_cutoff"]

DEFAULT_CUT_FACTOR = 1.25


def default_q_cut(scheme: AcquisitionScheme, factor: float = DEFAULT_CUT_FACTOR) -> float:
    return factor * float(scheme.magnitudes.max())


def augment(scheme: AcquisitionScheme, y, q_cut: float, zero_dirs=None, origin: bool = True):
    """Append the origin and zero-shell anchors to ``scheme`` and ``y``.

    Parameters
    ----------
    scheme : AcquisitionScheme
    y : array, (N,) or (V, N)
        Signals aligned with ``scheme``.
    q_cut : float
        Radius of the zero shell; must exceed every measured magnitude.
    zero_dirs : (M, 3) array, optional
        Directions of the zero-shell samples. Defaults to the 20
        dodecahedron vertices. An empty array adds no zero shell.
    origin : bool
        Whether to add the origin sample.

    Returns
    -------
    scheme, y
        New objects; the originals come first in their original order,
        followed by the origin sample and then the zero shell.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != len(scheme):
        raise ValueError("signal length does not match scheme")
    qmax = float(scheme.magnitudes.max())
    if not q_cut > qmax:
        raise ValueError(f"q_cut = {q_cut:g} must exceed the largest measured |q| = {qmax:g}")
    zero_dirs = dodecahedron() if zero_dirs is None else np.asarray(zero_dirs, dtype=float).reshape(-1, 3)
    zero_dirs = zero_dirs / np.linalg.norm(zero_dirs, axis=1, keepdims=True) if len(zero_dirs) else zero_dirs

    q = [scheme.q]
    sid = [scheme.shell_id]
    b = list(scheme.b_values)
    vals = []
    if origin:
        q.append(np.zeros((1, 3)))
        sid.append([len(b)])
        b.append(0.0)
        vals.append(1.0)
    if len(zero_dirs):
        q.append(q_cut * zero_dirs)
        sid.append([len(b)] * len(zero_dirs))
        b.append(scheme.t_d * q_cut**2)
        vals.extend([0.0] * len(zero_dirs))
    new_scheme = AcquisitionScheme(np.vstack(q), np.concatenate(sid), scheme.t_d, b)
    extra = np.broadcast_to(np.array(vals), y.shape[:-1] + (len(vals),))
    return new_scheme, np.concatenate([y, extra], axis=-1)


def apply_cutoff(pred: GpPrediction, queries, q_cut: float) -> GpPrediction:
    """Zero the mean wherever ``|q| > q_cut``; the variance is kept."""
    m = np.linalg.norm(np.atleast_2d(queries), axis=1)
    if m.shape[0] != pred.mean.shape[-1]:
        raise ValueError("predictions and queries are not aligned")
    mean = np.where(m > q_cut, 0.0, pred.mean)
    return GpPrediction(mean, pred.variance.copy())
