"""Command-line interface: ``qgp simulate | train | reconstruct | bench``.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import augment as aug
from . import bench, eap, simulate
from .baseline import linear_resample
from .core import (
    FormatError,
    Hyperparameters,
    SignalTable,
    read_hyperparameters,
    read_scheme,
    read_signals,
    write_hyperparameters,
    write_scheme,
    write_signals,
)
from .gp import ConvergenceWarning, TrainConfig, fit, train
from .kernel import default_xi
from .qp import QPError
from .sphere import directions

log = logging.getLogger("qgp")

DEFAULT_SHELLS = ",".join(f"{int(b)}:{n}" for b, n in simulate.FOUR_SHELLS)


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _shells(text):
    out = []
    for part in text.split(","):
        try:
            b, n = part.split(":")
            out.append((float(b), int(n)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"shell spec must look like b:count, got {part!r}") from None
    return out


def _fractions(text):
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        try:
            a, b, s = (float(v) for v in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad fraction range {text!r}") from None
        if s <= 0:
            raise argparse.ArgumentTypeError("fraction step must be positive")
        return list(np.round(np.arange(a, b + s / 2, s), 10))
    return _floats(text)


def _slice(text):
    if text.replace(" ", "") != "z=0":
        raise argparse.ArgumentTypeError("only --slice z=0 is supported")
    return "z=0"


def _scheme_from_flags(args):
    b, n = zip(*args.shells)
    return simulate.make_shell_scheme(b, n, args.t_d, shared_directions=args.shared_directions, seed=args.seed)


def _zero_dirs(count):
    return np.zeros((0, 3)) if count == 0 else directions(count)


def _init(args, scheme):
    if getattr(args, "init", None):
        return read_hyperparameters(args.init)
    xi = args.xi if args.xi is not None else default_xi(scheme.q)
    return Hyperparameters(xi=xi)


def _train_config(args):
    return TrainConfig(max_iter=args.max_iter, starts=args.starts, max_voxels=args.voxels, seed=args.seed)


def cmd_simulate(args):
    rng = np.random.default_rng(args.seed)
    scheme = _scheme_from_flags(args)
    if args.random is not None:
        angles = rng.uniform(0.0, 90.0, args.random)
    else:
        angles = np.asarray(args.angles)
    data = simulate.make_phantom_dataset(np.deg2rad(angles), scheme, args.noise, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scheme(out / "scheme.txt", scheme)
    write_signals(out / "signals.csv", data.noisy)
    write_signals(out / "latent.csv", data.latent)
    np.savetxt(out / "angles.csv", angles, fmt="%.17g", header="angle_deg", comments="")
    print(f"wrote {len(angles)} voxels, {scheme.n_shells} shells, {len(scheme)} samples "
          f"to {out} (seed {args.seed})")
    return 0


def cmd_train(args):
    scheme = read_scheme(args.scheme, args.t_d)
    table = read_signals(args.signals, scheme)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        model = train(scheme, table, _init(args, scheme), _train_config(args))
    write_hyperparameters(args.out, model.hyperparameters,
                          {"log_marginal": model.log_marginal, "converged": model.converged})
    print(f"log marginal likelihood {model.log_marginal:.10g} after {model.n_iter} iterations")
    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        print("warning: optimizer did not converge; wrote best point found", file=sys.stderr)
    print(f"wrote {args.out}")
    return 0


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def cmd_reconstruct(args):
    scheme = read_scheme(args.scheme, args.t_d)
    table = read_signals(args.signals, scheme)
    q_cut = aug.default_q_cut(scheme, args.q_cut_factor)
    grid = eap.make_grid(args.grid_n, q_cut)
    F = eap.idft_matrix(grid)
    zero_dirs = _zero_dirs(args.zero_dirs)
    a_scheme, a_y = aug.augment(scheme, table.values, q_cut, zero_dirs)
    outside = np.linalg.norm(grid.q, axis=1) > q_cut
    if args.method == "linear":
        means = np.atleast_2d(linear_resample(a_scheme, a_y, grid))
        means[:, outside] = 0.0
        stds = np.full_like(means, np.nan)
        preds = None
    else:
        if not args.hyper:
            raise UsageError("--hyper is required for --method qp and naive")
        model = fit(a_scheme, read_hyperparameters(args.hyper))
        pred = aug.apply_cutoff(model.predict(a_y, grid.q), grid.q, q_cut)
        means = np.atleast_2d(pred.mean)
        stds = np.broadcast_to(pred.std, means.shape)
        preds = pred

    def one(v):
        if args.method == "qp":
            p = type(preds)(means[v], preds.variance)
            rec = eap.reconstruct_qp(p, grid, F, q_cut=q_cut)
            return rec.signal, rec.eap
        if args.method == "naive":
            return means[v], eap.reconstruct_naive(means[v], grid, F)
        return means[v], eap.eap_from_signal(means[v], grid, F)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    summary = []
    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        futures = [pool.submit(one, v) for v in range(table.n_voxels)]
        for v, fut in enumerate(futures):
            try:
                signal, vol = fut.result()
            except (QPError, ValueError) as exc:
                failed += 1
                print(f"voxel {v}: {exc}", file=sys.stderr)
                summary.append((v, "failed", np.nan, np.nan))
                continue
            _write_rows(out / f"voxel{v}_signal.csv", ["qx", "qy", "qz", "mean", "std"],
                        np.column_stack([grid.q, signal, stds[v]]))
            table_rows = vol.slice_z0() if args.slice else vol.table()
            _write_rows(out / f"voxel{v}_eap.csv", ["rx", "ry", "rz", "P"], table_rows)
            summary.append((v, "ok", vol.rtop, vol.total_mass))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["voxel", "status", "rtop", "mass"])
        w.writerows(summary)
    print(f"reconstructed {table.n_voxels - failed}/{table.n_voxels} voxels with {args.method} into {out}")
    return 1 if failed else 0


def cmd_bench_rtop(args):
    rng = np.random.default_rng(args.seed)
    scheme = _scheme_from_flags(args)
    h = read_hyperparameters(args.hyper) if args.hyper else None
    cfg = _train_config(args)
    rep = bench.rtop_experiment(scheme, args.angles, args.noise, args.repeats, rng, h=h, grid_n=args.grid_n,
                                q_cut_factor=args.q_cut_factor, zero_dirs=_zero_dirs(args.zero_dirs),
                                config=cfg)
    rep.write_csv(args.out)
    for a, name, e in rep.rows():
        print(f"{a:5.0f} deg  {name:7s} {e:.4f}")
    print(f"wrote {args.out} ({rep.seconds:.1f} s)")
    return 0


def cmd_bench_subsample(args):
    rng = np.random.default_rng(args.seed)
    if args.scheme:
        if not args.signals:
            raise UsageError("--signals is required with --scheme")
        scheme = read_scheme(args.scheme, args.t_d)
        table = read_signals(args.signals, scheme)
    else:
        scheme = _scheme_from_flags(args)
        angles = rng.uniform(0, np.pi / 2, args.train + args.test)
        table = simulate.make_phantom_dataset(angles, scheme, args.noise, rng).noisy
    if args.hyper:
        h = read_hyperparameters(args.hyper)
        test = table
    else:
        n_test = min(args.test, table.n_voxels - args.train)
        if n_test < 1:
            raise UsageError(f"need more than {args.train} voxels to train and test")
        tr, test = bench.split_voxels(table, args.train, n_test, rng)
        h = train(scheme, tr, _init(args, scheme), _train_config(args)).hyperparameters
    zd = _zero_dirs(args.zero_dirs)
    known = {"gp": lambda: bench.gp_method(h, args.q_cut_factor, zd),
             "linear": lambda: bench.linear_method(args.q_cut_factor, zd)}
    unknown = [m for m in args.methods if m not in known]
    if unknown:
        raise UsageError(f"unknown method(s) {unknown}; choose from {sorted(known)}")
    methods = {m: known[m]() for m in args.methods}
    rep = bench.subsample_experiment(test, args.fractions, args.repeats, rng, methods)
    rep.write_csv(args.out)
    print(f"wrote {args.out}: {len(rep.fractions_removed)} fractions removed, "
          f"{len(rep.b_values)} shells, methods {','.join(rep.methods)}")
    return 0


def _add_scheme_flags(p):
    p.add_argument("--shells", type=_shells, default=_shells(DEFAULT_SHELLS),
                   help=f"b:count pairs (default {DEFAULT_SHELLS})")
    p.add_argument("--t-d", type=float, default=0.02, help="effective diffusion time in s (default 0.02)")
    p.add_argument("--shared-directions", action="store_true", help="reuse one direction set on every shell")


def _add_train_flags(p):
    p.add_argument("--xi", type=float, help="origin regularizer (default 1e-2 x smallest nonzero |q|)")
    p.add_argument("--starts", type=int, default=3)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--voxels", type=int, default=100_000, help="cap on training voxels")


def _add_recon_flags(p):
    p.add_argument("--grid-n", type=int, default=11, help="grid points per axis (odd)")
    p.add_argument("--q-cut-factor", type=float, default=aug.DEFAULT_CUT_FACTOR)
    p.add_argument("--zero-dirs", type=int, default=20, help="zero-shell directions (0: origin anchor only)")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qgp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="two-tensor phantom dataset")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--angles", type=_floats, default=[30.0, 60.0, 90.0], help="crossing angles in degrees")
    g.add_argument("--random", type=int, metavar="N", help="N angles uniform on [0, 90] degrees")
    p.add_argument("--noise", type=float, default=0.01, help="Rician noise sigma")
    p.add_argument("--out", default=".")
    _add_scheme_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="fit hyperparameters by marginal likelihood")
    p.add_argument("--scheme", required=True)
    p.add_argument("--signals", required=True)
    p.add_argument("--t-d", type=float)
    p.add_argument("--init", help="hyperparameter file to start from")
    p.add_argument("--out", default="hyper.txt")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", parents=[common], help="grid signal and propagator per voxel")
    p.add_argument("--scheme", required=True)
    p.add_argument("--signals", required=True)
    p.add_argument("--t-d", type=float)
    p.add_argument("--hyper")
    p.add_argument("--method", choices=["qp", "naive", "linear"], default="qp")
    p.add_argument("--slice", type=_slice, help="write only the z=0 plane of the propagator")
    p.add_argument("--out", default="recon")
    _add_recon_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("bench", help="experiments")
    bsub = p.add_subparsers(dest="experiment", required=True)
    r = bsub.add_parser("rtop", parents=[common], help="RTOP error per crossing angle")
    r.add_argument("--angles", type=_floats, default=[30.0, 60.0, 90.0])
    r.add_argument("--noise", type=float, default=0.01)
    r.add_argument("--repeats", type=int, default=10)
    r.add_argument("--hyper", help="skip training and use these hyperparameters")
    r.add_argument("--out", default="rtop.csv")
    _add_scheme_flags(r)
    _add_train_flags(r)
    _add_recon_flags(r)
    r.set_defaults(func=cmd_bench_rtop)

    s = bsub.add_parser("subsample", parents=[common], help="held-out error versus fraction removed")
    s.add_argument("--scheme", help="scheme file (default: generated phantom data)")
    s.add_argument("--signals")
    s.add_argument("--t-d", type=float, default=0.02)
    s.add_argument("--hyper")
    s.add_argument("--fractions", type=_fractions, default=list(bench.DEFAULT_FRACTIONS),
                   help="fractions removed, start:stop:step or a list (default 0.05:0.95:0.10)")
    s.add_argument("--repeats", type=int, default=10)
    s.add_argument("--methods", type=lambda t: [m for m in t.split(",") if m], default=["gp", "linear"])
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--train", type=int, default=100, help="training voxels when no --hyper is given")
    s.add_argument("--test", type=int, default=20, help="test voxels for generated data")
    s.add_argument("--out", default="subsample.csv")
    s.add_argument("--shells", type=_shells, default=_shells(DEFAULT_SHELLS))
    s.add_argument("--shared-directions", action="store_true")
    _add_train_flags(s)
    _add_recon_flags(s)
    s.set_defaults(func=cmd_bench_subsample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (FormatError, OSError, ValueError, QPError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
