"""Data model and text formats shared across the package.

Units are fixed throughout: q in mm^-1, b in s/mm^2, the effective
diffusion time ``t_d`` in seconds and displacements r in mm, so that
``b = t_d * |q|**2``.

Three plain-text formats are supported:

* scheme files: ``t_d <seconds>`` and ``shells <b0> <b1> ...`` header
  lines followed by one sample per line, either ``<shell_id> dx dy dz``
  (unit direction, scaled to ``sqrt(b / t_d)``) or ``q qx qy qz``;
* signal files: headerless CSV, one voxel per row;
* hyperparameter files: ``key = value`` lines.

``#`` starts a comment in scheme and hyperparameter files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "FormatError",
    "QPoint",
    "AcquisitionScheme",
    "SignalTable",
    "Hyperparameters",
    "GpPrediction",
    "read_scheme",
    "write_scheme",
    "read_signals",
    "write_signals",
    "read_hyperparameters",
    "write_hyperparameters",
]

# relative tolerance of the b = t_d * q^2 consistency check
B_RTOL = 1e-6


class FormatError(ValueError):
    """Raised for malformed input files or violated data invariants."""


class QPoint(NamedTuple):
    """A single q-space location in mm^-1."""

    qx: float
    qy: float
    qz: float

    def magnitude(self) -> float:
        return math.sqrt(self.qx**2 + self.qy**2 + self.qz**2)


@dataclass(frozen=True, eq=False)
class AcquisitionScheme:
    """Ordered q-space samples with shell labels.

    Parameters
    ----------
    q : (N, 3) array
        Sample locations in mm^-1.
    shell_id : (N,) int array
        Shell index of each sample; the set of ids is ``0..n_shells-1``.
    t_d : float
        Effective diffusion time in seconds.
    b_values : (n_shells,) array
        b-value of each shell in s/mm^2.
    """

    q: np.ndarray
    shell_id: np.ndarray
    t_d: float
    b_values: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1, 3)
        shell_id = np.array(self.shell_id, dtype=int).reshape(-1)
        b_values = np.array(self.b_values, dtype=float).reshape(-1)
        q.setflags(write=False)
        shell_id.setflags(write=False)
        b_values.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "shell_id", shell_id)
        object.__setattr__(self, "b_values", b_values)
        object.__setattr__(self, "t_d", float(self.t_d))
        self._validate()

    def _validate(self):
        n = len(self.q)
        if n < 1:
            raise FormatError("scheme must contain at least one point")
        if len(self.shell_id) != n:
            raise FormatError("shell_id length does not match number of points")
        if not np.all(np.isfinite(self.q)):
            bad = int(np.flatnonzero(~np.isfinite(self.q).all(axis=1))[0])
            raise FormatError(f"point {bad} has non-finite components")
        if not (np.isfinite(self.t_d) and self.t_d > 0):
            raise FormatError(f"t_d must be positive, got {self.t_d}")
        ids = np.unique(self.shell_id)
        if ids[0] != 0 or not np.array_equal(ids, np.arange(len(ids))):
            raise FormatError("shell ids must form a contiguous range starting at 0")
        if len(self.b_values) != len(ids):
            raise FormatError(
                f"{len(ids)} shells referenced but {len(self.b_values)} b-values given"
            )
        if np.any(self.b_values < 0):
            raise FormatError("b-values must be nonnegative")
        b_point = self.t_d * np.sum(self.q**2, axis=1)
        b_shell = self.b_values[self.shell_id]
        err = np.abs(b_point - b_shell)
        bad = err > B_RTOL * np.maximum(b_shell, 1e-12)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise FormatError(
                f"point {i}: t_d*|q|^2 = {b_point[i]:.6g} does not match "
                f"shell {self.shell_id[i]} b-value {b_shell[i]:.6g}"
            )

    def __len__(self):
        return len(self.q)

    @property
    def n_shells(self) -> int:
        return len(self.b_values)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.linalg.norm(self.q, axis=1)

    @property
    def points(self) -> list[QPoint]:
        return [QPoint(*map(float, row)) for row in self.q]

    def subset(self, index) -> "AcquisitionScheme":
        """Scheme restricted to ``index``; shells are renumbered if some vanish."""
        index = np.asarray(index)
        sid = self.shell_id[index]
        kept = np.unique(sid)
        remap = np.full(self.n_shells, -1)
        remap[kept] = np.arange(len(kept))
        return AcquisitionScheme(self.q[index], remap[sid], self.t_d, self.b_values[kept])

    @classmethod
    def from_directions(cls, directions, shell_id, b_values, t_d) -> "AcquisitionScheme":
        """Build a scheme from unit directions, shell labels and shell b-values.

        Zero directions are allowed for b = 0 shells only.
        """
        d = np.array(directions, dtype=float).reshape(-1, 3)
        shell_id = np.asarray(shell_id, dtype=int)
        b_values = np.asarray(b_values, dtype=float)
        norms = np.linalg.norm(d, axis=1)
        unit = np.zeros_like(d)
        nz = norms > 0
        unit[nz] = d[nz] / norms[nz, None]
        b = b_values[shell_id]
        zero_dir_bad = (~nz) & (b > 0)
        if np.any(zero_dir_bad):
            i = int(np.flatnonzero(zero_dir_bad)[0])
            raise FormatError(f"point {i}: zero direction on shell with b > 0")
        q = unit * np.sqrt(b / t_d)[:, None]
        return cls(q, shell_id, t_d, b_values)


@dataclass(frozen=True, eq=False)
class SignalTable:
    """Normalized signals E = S/S(0), one row per voxel."""

    scheme: AcquisitionScheme
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.size == 0:
            v = v.reshape(0, len(self.scheme))
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != len(self.scheme):
            raise FormatError(
                f"signal rows have {v.shape[-1]} columns, scheme has {len(self.scheme)} points"
            )
        bad = ~np.isfinite(v) | (v < 0)
        if np.any(bad):
            r, c = map(int, np.argwhere(bad)[0])
            raise FormatError(f"row {r}, column {c}: invalid signal value {v[r, c]!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_voxels(self) -> int:
        return self.values.shape[0]

    def rows(self, index) -> "SignalTable":
        return SignalTable(self.scheme, self.values[np.asarray(index)])


@dataclass(frozen=True)
class Hyperparameters:
    """Kernel and noise hyperparameters.

    ``a0..a6`` weight the even Legendre polynomials of the angular part,
    ``sigma_r`` is the length-scale of the log-radial part and
    ``sigma_n2`` the noise variance. ``xi`` is the fixed origin
    regularizer of the radial part and is never optimized.
    """

    a0: float = 1.0
    a2: float = 0.5
    a4: float = 0.25
    a6: float = 0.1
    sigma_r: float = 1.0
    sigma_n2: float = 1e-3
    xi: float = 1.0

    # order of the optimized parameters in log-space vectors
    LOG_FIELDS = ("a0", "a2", "a4", "a6", "sigma_r", "sigma_n2")

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            object.__setattr__(self, f.name, v)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v}")
        if min(self.a0, self.a2, self.a4, self.a6) < 0:
            raise ValueError("angular coefficients must be nonnegative")
        if self.a0 + self.a2 + self.a4 + self.a6 <= 0:
            raise ValueError("angular coefficients must not all be zero")
        for name in ("sigma_r", "sigma_n2", "xi"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def angular(self) -> np.ndarray:
        return np.array([self.a0, self.a2, self.a4, self.a6])

    @property
    def signal_variance(self) -> float:
        return self.a0 + self.a2 + self.a4 + self.a6

    def to_log(self) -> np.ndarray:
        return np.log([getattr(self, k) for k in self.LOG_FIELDS])

    @classmethod
    def from_log(cls, theta, xi: float) -> "Hyperparameters":
        vals = np.exp(np.asarray(theta, dtype=float))
        return cls(*vals, xi=xi)

    def replace(self, **kw) -> "Hyperparameters":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return Hyperparameters(**d)


@dataclass(frozen=True, eq=False)
class GpPrediction:
    """Posterior mean and latent variance at a set of query points."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.variance, dtype=float)
        if mean.shape[-1] != var.shape[-1]:
            raise ValueError("mean and variance are not aligned")
        if np.any(var < -1e-10):
            raise ValueError(f"negative predictive variance {var.min():.3g}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", np.maximum(var, 0.0))

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def read_scheme(path, t_d: float | None = None) -> AcquisitionScheme:
    """Parse a scheme file.

    ``t_d`` overrides (or supplies) the ``t_d`` header. Explicit ``q``
    lines are assigned to the header shell with a matching b-value, or
    to a new shell appended after the listed ones.
    """
    header_td = None
    b_values: list[float] | None = None
    rows: list[tuple[int, str, list[float]]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "t_d":
                if len(tok) != 2:
                    raise ValueError("expected 't_d <seconds>'")
                header_td = float(tok[1])
            elif tok[0] == "shells":
                b_values = [float(t) for t in tok[1:]]
            elif tok[0] == "q":
                if len(tok) != 4:
                    raise ValueError("expected 'q <qx> <qy> <qz>'")
                rows.append((lineno, "q", [float(t) for t in tok[1:]]))
            else:
                if len(tok) != 4:
                    raise ValueError("expected '<shell_id> <dx> <dy> <dz>'")
                sid = int(tok[0])
                if sid < 0:
                    raise ValueError("negative shell id")
                rows.append((lineno, "d", [float(sid)] + [float(t) for t in tok[1:]]))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None

    if t_d is None:
        t_d = header_td
    if t_d is None:
        raise FormatError(f"{path}: no t_d header and no t_d given")
    if not rows:
        raise FormatError(f"{path}: no sample lines")
    bvals = list(b_values or [])

    q = np.zeros((len(rows), 3))
    sids = np.zeros(len(rows), dtype=int)
    for i, (lineno, kind, vals) in enumerate(rows):
        if kind == "d":
            sid = int(vals[0])
            d = np.array(vals[1:])
            norm = np.linalg.norm(d)
            if sid >= len(bvals):
                # an unlisted shell is only meaningful for the q-space origin
                if norm > 0 or b_values is not None:
                    raise FormatError(f"{path}:{lineno}: shell {sid} has no b-value")
                bvals.extend([0.0] * (sid + 1 - len(bvals)))
            b = bvals[sid]
            if norm == 0:
                if b > 0:
                    raise FormatError(f"{path}:{lineno}: zero direction on shell {sid}")
            else:
                q[i] = d / norm * math.sqrt(b / t_d)
            sids[i] = sid
        else:
            q[i] = vals
            b = t_d * float(np.dot(q[i], q[i]))
            match = [k for k, bk in enumerate(bvals) if abs(bk - b) <= B_RTOL * max(bk, 1e-12)]
            if match:
                sids[i] = match[0]
            else:
                bvals.append(b)
                sids[i] = len(bvals) - 1
    try:
        return AcquisitionScheme(q, sids, t_d, bvals)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_scheme(path, scheme: AcquisitionScheme) -> None:
    mags = scheme.magnitudes
    lines = [f"t_d {scheme.t_d!r}", "shells " + " ".join(repr(float(b)) for b in scheme.b_values)]
    for qi, m, sid in zip(scheme.q, mags, scheme.shell_id):
        d = qi / m if m > 0 else qi
        lines.append(f"{sid} " + " ".join(repr(float(v)) for v in d))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_signals(path, scheme: AcquisitionScheme) -> SignalTable:
    text = Path(path).read_text(encoding="utf-8")
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        cells = raw.split(",")
        if len(cells) != len(scheme):
            raise FormatError(
                f"{path}: row {lineno} has {len(cells)} values, expected {len(scheme)}"
            )
        try:
            row = [float(c) for c in cells]
        except ValueError:
            raise FormatError(f"{path}: row {lineno} is not numeric") from None
        for col, v in enumerate(row, 1):
            if not math.isfinite(v) or v < 0:
                raise FormatError(f"{path}: row {lineno}, column {col}: invalid value {cells[col - 1].strip()!r}")
        rows.append(row)
    return SignalTable(scheme, np.array(rows, dtype=float).reshape(len(rows), len(scheme)))


def write_signals(path, table: SignalTable | np.ndarray) -> None:
    values = table.values if isinstance(table, SignalTable) else np.atleast_2d(table)
    with open(path, "w", encoding="utf-8") as fh:
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_hyperparameters(path) -> Hyperparameters:
    vals = {}
    names = {f.name for f in fields(Hyperparameters)}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or key not in names:
            raise FormatError(f"{path}:{lineno}: expected '<name> = <value>' with a known name")
        try:
            vals[key] = float(value)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad number {value!r}") from None
    missing = names - vals.keys()
    if missing:
        raise FormatError(f"{path}: missing {', '.join(sorted(missing))}")
    return Hyperparameters(**vals)


def write_hyperparameters(path, h: Hyperparameters, extra: dict | None = None) -> None:
    lines = [f"{f.name} = {float(getattr(h, f.name))!r}" for f in fields(h)]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
