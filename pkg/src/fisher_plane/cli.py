"""Command-line entry point: ``fisher-plane {train,eval,fs-plane,info-check,make-skewed,report}``.

Exit codes: 0 ok, 1 check failure, 2 configuration error, 3 numeric abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (DATA_DIR_ENV, Dataset, binarize, build_skewed_split, load_checkpoint, load_dataset_npz,
                   load_mnist, synthetic_gaussian_set, to_uint8, write_idx)
from .errors import CheckpointError, ConfigError, ContractError, NumericError, ParseError
from .estimators import fs_trace_record, iwae_nll
from .info import (DiagGaussian, gaussian_entropy_power, gaussian_fisher_trace, laplace_density, normal_density, numeric_fisher_1d,
                   numeric_variance_1d, parametric_nonparametric_check, reference_family,
                   uncertainty_product)
from .objectives import FaeConfig, MaeConfig
from .trainer import RunConfig, RunLog, TrainingAborted, compare_runs, format_comparison, model_from_checkpoint, train

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4

FS_COLUMNS = ("model", "epoch", "entropy_power", "fisher_trace", "product", "elbo", "nll")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_manifest(out: Path, command: str, args: argparse.Namespace, extra: dict | None = None) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command, "version": __version__, "args": resolved,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "python": platform.python_version(), "numpy": np.__version__,
    }
    if extra:
        manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# -- data ------------------------------------------------------------------------------

def parse_synthetic(spec: str) -> Dataset:
    """``synthetic:n=512,dim=8,components=2,seed=0``."""
    fields = {"n": 512, "dim": 8, "components": 1, "seed": 0}
    body = spec.split(":", 1)[1] if ":" in spec else ""
    for part in filter(None, body.split(",")):
        key, _, val = part.partition("=")
        if key not in fields:
            raise ConfigError(f"unknown synthetic field {key!r}")
        fields[key] = int(val)
    return synthetic_gaussian_set(fields["n"], fields["dim"], fields["components"], fields["seed"])


def load_splits(data: str | None, binarize_mode: str, seed: int) -> dict[str, Dataset]:
    """Resolve ``--data`` (IDX directory, ``.npz`` file or ``synthetic:...``) into named splits."""
    data = data or os.environ.get(DATA_DIR_ENV)
    if not data:
        raise ConfigError(f"--data is required (or set {DATA_DIR_ENV})")
    if data.startswith("synthetic"):
        ds = parse_synthetic(data)
        n_test = max(1, len(ds) // 5)
        return {"train": ds.subset(slice(n_test, None)), "test": ds.subset(slice(0, n_test))}
    path = Path(data)
    if path.suffix == ".npz":
        if not path.exists():
            raise ConfigError(f"dataset file {path} does not exist")
        splits = {"train": load_dataset_npz(path)}
    else:
        if not path.is_dir():
            raise ConfigError(f"data directory {path} does not exist")
        try:
            splits = load_mnist(path)
        except FileNotFoundError as e:
            raise ConfigError(str(e)) from e
        if binarize_mode != "none":
            splits = {k: binarize(v, binarize_mode, seed) for k, v in splits.items()}
    return splits


def _likelihood_for(splits: dict[str, Dataset], requested: str | None) -> str:
    if requested:
        return requested
    x = splits["train"].images
    return "bernoulli" if x.min() >= 0 and x.max() <= 1 else "gaussian"


# -- subcommands -----------------------------------------------------------------------------

def _replay_manifest(args) -> None:
    """Fill ``args`` from a previous run's manifest; ``--out`` still comes from the command line."""
    try:
        recorded = json.loads(Path(args.from_manifest).read_text())["args"]
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot replay manifest {args.from_manifest}: {e}") from e
    if recorded.get("command") != "train":
        raise ConfigError(f"{args.from_manifest} is not a train manifest")
    for key, val in recorded.items():
        if key not in ("out", "from_manifest", "command"):
            setattr(args, key, val)


def cmd_train(args) -> int:
    if args.from_manifest:
        _replay_manifest(args)
    if not args.objective:
        raise ConfigError("--objective is required")
    splits = load_splits(args.data, args.binarize, args.seed)
    train_ds = splits["train"]
    if args.train_size:
        train_ds = train_ds.head(args.train_size)
    held = splits.get(args.eval_split) or splits.get("test")
    likelihood = _likelihood_for(splits, args.likelihood)
    run = RunConfig(
        objective=args.objective,
        fae=FaeConfig(args.lambda_z, args.lambda_x, args.fz, args.fx, likelihood, args.samples),
        mae=MaeConfig(args.c, args.m),
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
        eval_every=args.eval_every, depth=args.depth, width=args.width, latent_dim=args.latent_dim,
        activation=args.activation, likelihood=likelihood, clip_norm=args.clip_norm,
        eval_size=args.eval_size, iwae_k=args.iwae_k, nll_size=args.nll_size, out_dir=args.out,
        checkpoint_every=args.checkpoint_every,
    )
    if args.objective == "fae" and args.lambda_x > 0 and likelihood != "gaussian":
        raise ConfigError(f"--lambda-x > 0 needs the gaussian likelihood; data uses {likelihood!r} "
                          f"(decoder Fisher information is undefined for discrete pixels)")
    run.validate()
    out = Path(args.out)
    _write_manifest(out, "train", args, {"run": run.to_dict(), "train_examples": len(train_ds)})
    t0 = time.perf_counter()
    try:
        _, runlog = train(run, train_ds, held,
                          progress=(lambda e: print(json.dumps(e), file=sys.stderr)) if args.verbose else None)
    except TrainingAborted as e:
        print(f"numeric abort: {e}; last good checkpoint kept in {out}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"trained {len(runlog.entries)} epochs in {time.perf_counter() - t0:.1f}s -> {out}")
    return EXIT_OK


def _load_ckpt_or_exit(path):
    try:
        return load_checkpoint(path)
    except CheckpointError as e:
        raise _IoFailure(str(e)) from e


class _IoFailure(Exception):
    pass


def cmd_eval(args) -> int:
    ckpt = _load_ckpt_or_exit(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    splits = load_splits(args.data, args.binarize, args.seed)
    ds = splits.get(args.split) or splits["train"]
    x = ds.images[:args.n_examples]
    est = iwae_nll(model, x, args.k, seed=args.seed)
    entry = fs_trace_record(model, ckpt.meta["epoch"], x, seed=args.seed)
    result = {"checkpoint": str(args.checkpoint), "split": args.split, "examples": int(x.shape[0]),
              "k": args.k, "nll": est.nll, "nll_std_err": est.std_err, "elbo": entry.elbo,
              "entropy_power": entry.point.entropy_power, "fisher_trace": entry.point.fisher_trace,
              "product": entry.point.product}
    print(json.dumps(result))
    if args.out:
        out = Path(args.out)
        _write_manifest(out, "eval", args)
        (out / "eval.json").write_text(json.dumps(result, indent=2) + "\n")
    return EXIT_OK


def nj_curve_rows(dim: int = 1, n_points: int = 200, lo: float = 1e-3, hi: float = 1e3) -> list[dict]:
    """Reference curve ``N * trJ / d = 1`` on a log-spaced entropy-power grid."""
    rows = []
    for n in np.geomspace(lo, hi, n_points):
        per_dim = 1.0 / n
        rows.append({"entropy_power": float(n), "fisher_trace_per_dim": float(per_dim),
                     "fisher_trace": float(per_dim * dim), "product": float(n * per_dim)})
    return rows


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def cmd_fs_plane(args) -> int:
    ckpts = [(p, _load_ckpt_or_exit(p)) for p in args.checkpoints]
    splits = load_splits(args.eval_set, args.binarize, args.seed)
    ds = splits.get(args.split) or splits["train"]
    x = ds.images[:args.n_examples]
    rows, dims = [], set()
    for path, ck in ckpts:
        model = model_from_checkpoint(ck)
        entry = fs_trace_record(model, ck.meta["epoch"], x, seed=args.seed)
        nll = iwae_nll(model, x, args.k, seed=args.seed).nll if args.k > 0 else None
        dims.add(entry.point.dim)
        rows.append({"model": Path(path).stem if args.label is None else args.label, "epoch": entry.epoch,
                     "entropy_power": entry.point.entropy_power, "fisher_trace": entry.point.fisher_trace,
                     "product": entry.point.product, "elbo": entry.elbo, "nll": nll})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plane = out / args.csv
    write_csv(plane, FS_COLUMNS, rows)
    dim = dims.pop() if len(dims) == 1 else 1
    write_csv(out / "nj_curve.csv", ("entropy_power", "fisher_trace_per_dim", "fisher_trace", "product"),
              nj_curve_rows(dim))
    _write_manifest(out, "fs-plane", args)
    print(f"wrote {len(rows)} rows to {plane}")
    return EXIT_OK


def info_check_rows(grid_step: float = 1e-3) -> list[tuple[str, float, float, float, bool]]:
    """``(name, value, expected, tolerance, passed)`` for the info-geometry oracle battery.

    Tolerances widen with the grid step: the Gaussian checks converge at
    ``O(h^2)``, the rounded Laplace cusp only at ``O(h)``.
    """
    h = grid_step
    tol_gauss = max(1e-2, 10.0 * h * h)
    tol_lap = max(5e-2, 1.0 * h)
    rows = []

    def add(name, value, expected, tol, ok=None):
        passed = abs(value - expected) <= tol if ok is None else ok
        rows.append((name, value, expected, tol, bool(passed)))

    add("gaussian N*J", uncertainty_product(normal_density(0.0, 1.0), h), 1.0, tol_gauss)
    add("gaussian(sigma=0.5) J", numeric_fisher_1d(normal_density(0.0, 0.5), h * 0.5), 4.0, 4.0 * tol_gauss)
    add("laplace N*J", uncertainty_product(laplace_density(1.0), h), 2.0 * math.e / math.pi, tol_lap)
    for sigma in (0.3, 1.0, 7.0):
        g = DiagGaussian([0.0], [sigma])
        add(f"closed-form N*J sigma={sigma}", gaussian_entropy_power(g) * gaussian_fisher_trace(g), 1.0, 1e-12)
    for f in reference_family():
        v = numeric_variance_1d(f, h) * numeric_fisher_1d(f, h)
        gaussian = f.name.startswith("normal")
        add(f"cramer-rao {f.name}", v, 1.0, tol_gauss if gaussian else tol_lap,
            ok=(abs(v - 1.0) <= tol_gauss) if gaussian else v >= 1.0 - tol_lap)
    for sigma in (1.0, 3.0, 0.2):
        a, b = parametric_nonparametric_check(sigma)
        add(f"param/nonparam sigma={sigma}", a, b, 1e-6 * abs(b))
    return rows


def cmd_info_check(args) -> int:
    rows = info_check_rows(args.grid_step)
    width = max(len(r[0]) for r in rows)
    for name, value, expected, tol, ok in rows:
        head = f"{name} = {value:.4f}"
        print(f"{head:<{width + 14}} expected {expected:.4f}  tol {tol:.1e}  {'PASS' if ok else 'FAIL'}")
    failures = [r[0] for r in rows if not r[4]]
    if args.out:
        out = Path(args.out)
        _write_manifest(out, "info-check", args, {"failures": failures})
        write_csv(out / "info_check.csv", ("check", "value", "expected", "tol", "passed"),
                  [dict(zip(("check", "value", "expected", "tol", "passed"), r)) for r in rows])
    if failures:
        print("failed: " + ", ".join(failures), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_make_skewed(args) -> int:
    from .data import load_idx, _find, MNIST_FILES

    src = Path(args.data or os.environ.get(DATA_DIR_ENV, ""))
    if not src.is_dir():
        raise ConfigError(f"--data must be an MNIST directory (or set {DATA_DIR_ENV})")
    try:
        train = load_idx(*(_find(src, f) for f in MNIST_FILES["train"]))
        test_files = [_find(src, f) for f in MNIST_FILES["test"]]
    except FileNotFoundError as e:
        raise ConfigError(str(e)) from e
    skewed = build_skewed_split(train, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte",
              to_uint8(skewed.images), skewed.labels, tuple(train.meta.get("image_shape", (28, 28))))
    for f in test_files:
        (out / f.name).write_bytes(f.read_bytes())
    _write_manifest(out, "make-skewed", args, {"histogram": skewed.histogram(), "size": len(skewed)})
    print(f"skewed split of {len(skewed)} examples -> {out} {skewed.histogram()}")
    return EXIT_OK


def cmd_report(args) -> int:
    logs, names = [], []
    for d in args.runs:
        p = Path(d)
        path = p / "runlog.jsonl" if p.is_dir() else p
        if not path.exists():
            raise _IoFailure(f"no runlog at {path}")
        logs.append(RunLog.read_jsonl(path, name=p.name if p.is_dir() else p.stem))
        names.append(p.name if p.is_dir() else p.stem)
    rows = compare_runs(logs, names)
    print(format_comparison(rows))
    if args.out:
        out = Path(args.out)
        _write_manifest(out, "report", args)
        cols = ("rank", "name", "nll", "nll_std_err", "elbo", "entropy_power", "fisher_trace", "product",
                "better_than_next", "tied_with_next")
        write_csv(out / "report.csv", cols, [{c: getattr(r, c) for c in cols} for r in rows])
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fisher-plane", description="Fisher auto-encoders and the Fisher-Shannon plane.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_flags(sp, required_name="--data"):
        sp.add_argument(required_name, default=None,
                        help=f"MNIST IDX directory, dataset .npz, or synthetic:n=..,dim=..; falls back to ${DATA_DIR_ENV}")
        sp.add_argument("--binarize", choices=("threshold", "stochastic", "none"), default="threshold")

    t = sub.add_parser("train", help="train a VAE/FAE/MAE model")
    data_flags(t)
    t.add_argument("--objective", choices=("vae", "fae", "mae"), default=None, help="required unless replaying")
    t.add_argument("--from-manifest", default=None, help="replay the flags recorded in a train manifest.json")
    t.add_argument("--out", required=True)
    t.add_argument("--fz", type=float, default=1.0)
    t.add_argument("--fx", type=float, default=1.0)
    t.add_argument("--lambda-z", type=float, default=1.0)
    t.add_argument("--lambda-x", type=float, default=0.0)
    t.add_argument("--m", type=float, default=0.0)
    t.add_argument("--c", type=float, default=1.0)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--eval-every", type=int, default=1)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--depth", type=int, default=5)
    t.add_argument("--width", type=int, default=300)
    t.add_argument("--latent-dim", type=int, default=40)
    t.add_argument("--activation", choices=("relu", "tanh", "softplus"), default="relu")
    t.add_argument("--likelihood", choices=("bernoulli", "gaussian"), default=None)
    t.add_argument("--samples", type=int, default=1, help="posterior samples per example per step")
    t.add_argument("--clip-norm", type=float, default=100.0)
    t.add_argument("--train-size", type=int, default=None)
    t.add_argument("--eval-split", default="test")
    t.add_argument("--eval-size", type=int, default=1000)
    t.add_argument("--iwae-k", type=int, default=0)
    t.add_argument("--nll-size", type=int, default=1000)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="importance-sampled NLL and FS point of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    data_flags(e)
    e.add_argument("--split", default="test")
    e.add_argument("--k", type=int, default=5000)
    e.add_argument("--n-examples", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fs-plane", help="emit Fisher-Shannon plane CSVs for checkpoints")
    f.add_argument("checkpoints", nargs="+")
    data_flags(f, "--eval-set")
    f.add_argument("--split", default="test")
    f.add_argument("--n-examples", type=int, default=1000)
    f.add_argument("--k", type=int, default=0, help="importance samples for the nll column (0: leave empty)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--label", default=None)
    f.add_argument("--out", required=True)
    f.add_argument("--csv", default="fs_plane.csv")
    f.set_defaults(func=cmd_fs_plane)

    i = sub.add_parser("info-check", help="run the Fisher/entropy oracle battery")
    i.add_argument("--grid-step", type=float, default=1e-3)
    i.add_argument("--out", default=None)
    i.set_defaults(func=cmd_info_check)

    s = sub.add_parser("make-skewed", help="write the 5800-zeros skewed training split as IDX")
    s.add_argument("--data", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_skewed)

    r = sub.add_parser("report", help="rank finished runs by held-out NLL")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (_IoFailure, CheckpointError, ParseError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
