"""Scaled training experiments: constraint satisfaction, FS-plane trajectory and NLL orderings.

Each function returns a small result dataclass; the scripts in ``scripts/`` and
the acceptance tests are thin wrappers around these.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import (MNIST_FULL_TRAIN, Dataset, binarize, build_skewed_split, load_idx, load_mnist, resolve_data_dir,
                   synthetic_gaussian_set, _find, MNIST_FILES)
from .errors import ContractError
from .estimators import bootstrap_std_err, iwae_nll, posterior_sigma
from .objectives import FaeConfig
from .trainer import RunConfig, RunLog, derived_seed, model_from_checkpoint, train


def spearman(a, b) -> float:
    rho = stats.spearmanr(a, b).statistic
    return float(rho)


# -- MNIST access ----------------------------------------------------------------------

def load_binarized_mnist(data_dir=None, need_train: int = 0, full_train: bool = False) -> dict[str, Dataset]:
    """Threshold-binarized MNIST splits; raises ``ContractError`` when the files are too small.

    ``full_train`` keeps all 60,000 training digits under ``"full_train"`` (needed by the
    skewed split); otherwise ``"train"`` must hold at least ``need_train`` examples.
    """
    splits = load_mnist(data_dir)
    if full_train and "full_train" not in splits:
        raise ContractError(f"need the full {MNIST_FULL_TRAIN}-example MNIST training file, "
                            f"found {len(splits['train'])} examples in {resolve_data_dir(data_dir)}")
    if len(splits["train"]) < need_train:
        raise ContractError(f"need {need_train} training digits, found {len(splits['train'])}")
    return {k: binarize(v) for k, v in splits.items()}


def load_raw_train(data_dir=None) -> Dataset:
    d = resolve_data_dir(data_dir)
    return load_idx(*(_find(d, f) for f in MNIST_FILES["train"]))


# -- constraint satisfaction on a synthetic Gaussian set -------------------------------------

@dataclass
class ConstraintResult:
    f_z: float
    mean_inv_var: float  # mean over examples and dims of 1/sigma^2
    mean_var: float
    per_epoch_inv_var: list[float]
    clip_count: int

    @property
    def ratio(self) -> float:
        return self.mean_inv_var / self.f_z


def constraint_satisfaction(f_values=(0.25, 1.0, 4.0), lambda_z: float = 10.0, epochs: int = 20,
                            n: int = 2000, dim: int = 8, components: int = 2, latent_dim: int = 1,
                            depth: int = 2, width: int = 64, seed: int = 0) -> list[ConstraintResult]:
    """Train FAE on a Gaussian mixture for each target ``F_z`` and measure the posterior precision."""
    ds = synthetic_gaussian_set(n, dim, components, seed)
    out = []
    for f in f_values:
        run = RunConfig(objective="fae", fae=FaeConfig(lambda_z=lambda_z, f_z=f, likelihood="gaussian"),
                        epochs=epochs, seed=seed, depth=depth, width=width, latent_dim=latent_dim,
                        likelihood="gaussian", eval_size=n)
        ckpt, log = train(run, ds)
        sigma = posterior_sigma(model_from_checkpoint(ckpt), ds.images)
        per_epoch = [e["fisher_trace"] / e["dim"] for e in log.entries]
        out.append(ConstraintResult(f, float(np.mean(1.0 / sigma ** 2)), float(np.mean(sigma ** 2)),
                                    per_epoch, log.clip_count))
    return out


# -- FS-plane trajectory ----------------------------------------------------------------------

@dataclass
class TrajectoryResult:
    epochs: list[int]
    entropy_power: list[float]
    fisher_trace: list[float]
    product: list[float]
    rho_fisher: float
    rho_entropy: float
    min_product: float
    wall_clock: float
    log: RunLog = field(repr=False)


def fs_trajectory(train_ds: Dataset, f_z: float = 20.0, lambda_z: float = 1.0, epochs: int = 30,
                  seed: int = 0, **run_kw) -> TrajectoryResult:
    run = RunConfig(objective="fae", fae=FaeConfig(lambda_z=lambda_z, f_z=f_z), epochs=epochs, seed=seed,
                    **run_kw)
    t0 = time.perf_counter()
    _, log = train(run, train_ds)
    tr = log.trace.entries
    ep = [e.epoch for e in tr]
    n_ = [e.point.entropy_power for e in tr]
    j = [e.point.fisher_trace for e in tr]
    prod = [e.point.product for e in tr]
    return TrajectoryResult(ep, n_, j, prod, spearman(ep, j), spearman(ep, n_), min(prod),
                            time.perf_counter() - t0, log)


# -- held-out NLL orderings ---------------------------------------------------------------------

@dataclass
class NllRow:
    name: str
    nll: float
    std_err: float
    train_nll: float | None = None
    train_std_err: float | None = None
    per_example: np.ndarray | None = field(default=None, repr=False)
    clip_count: int = 0


def paired_gap(a: NllRow, b: NllRow, seed: int = 0) -> tuple[float, float]:
    """Mean of ``b - a`` over shared examples and its bootstrap standard error."""
    diff = b.per_example - a.per_example
    return float(diff.mean()), bootstrap_std_err(diff, seed=seed)


def _fit_and_score(name: str, run: RunConfig, train_ds: Dataset, test_x: np.ndarray, k: int,
                   score_train: int = 0) -> NllRow:
    ckpt, log = train(run, train_ds)
    model = model_from_checkpoint(ckpt)
    est = iwae_nll(model, test_x, k, seed=derived_seed(run.seed, 7), bootstrap_seed=derived_seed(run.seed, 8))
    row = NllRow(name, est.nll, est.std_err, per_example=est.per_example, clip_count=log.clip_count)
    if score_train:
        tr = iwae_nll(model, train_ds.images[:score_train], k, seed=derived_seed(run.seed, 9),
                      bootstrap_seed=derived_seed(run.seed, 10))
        row.train_nll, row.train_std_err = tr.nll, tr.std_err
    return row


@dataclass
class Table1Result:
    rows: dict[str, NllRow]
    gap_f0_minus_f20: float
    gap_std_err: float

    @property
    def f20_best(self) -> bool:
        r = self.rows
        return r["fae_f20"].nll < r["vae"].nll and r["fae_f20"].nll < r["fae_f0"].nll

    @property
    def f20_beats_f0_significantly(self) -> bool:
        return self.gap_f0_minus_f20 >= 2.0 * self.gap_std_err


def table1_direction(train_ds: Dataset, test_x: np.ndarray, epochs: int = 30, k: int = 100,
                     lambda_z: float = 1.0, seed: int = 0, **run_kw) -> Table1Result:
    """FAE(F=20), VAE and FAE(F=0) trained with identical seeds and scored on the same draws."""
    base = RunConfig(epochs=epochs, seed=seed, **run_kw)
    configs = {
        "fae_f20": dataclasses.replace(base, objective="fae", fae=FaeConfig(lambda_z=lambda_z, f_z=20.0)),
        "vae": dataclasses.replace(base, objective="vae"),
        "fae_f0": dataclasses.replace(base, objective="fae", fae=FaeConfig(lambda_z=lambda_z, f_z=0.0)),
    }
    rows = {name: _fit_and_score(name, run, train_ds, test_x, k) for name, run in configs.items()}
    gap, se = paired_gap(rows["fae_f20"], rows["fae_f0"])
    return Table1Result(rows, gap, se)


@dataclass
class Table2Result:
    f_values: list[float]
    rows: list[NllRow]
    rho_train: float  # Spearman(F, train NLL); the expected direction is negative
    rho_test: float  # Spearman(F, test NLL); expected positive


def table2_direction(skewed: Dataset, test_x: np.ndarray, f_values=(0.1, 5.0, 20.0), epochs: int = 30,
                     k: int = 100, lambda_z: float = 1.0, train_eval: int = 1000, seed: int = 0,
                     **run_kw) -> Table2Result:
    rows = []
    for f in f_values:
        run = RunConfig(objective="fae", fae=FaeConfig(lambda_z=lambda_z, f_z=f), epochs=epochs, seed=seed,
                        **run_kw)
        rows.append(_fit_and_score(f"fae_f{f:g}", run, skewed, test_x, k, score_train=train_eval))
    fs = list(f_values)
    return Table2Result(fs, rows, spearman(fs, [r.train_nll for r in rows]),
                        spearman(fs, [r.nll for r in rows]))


def skewed_from_dir(data_dir=None, seed: int = 0) -> Dataset:
    return binarize(build_skewed_split(load_raw_train(data_dir), seed))
