"""Training loop for the VAE / FAE / MAE objectives with per-epoch evaluation hooks."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Checkpoint, Dataset, save_checkpoint
from .errors import ConfigError, ContractError, NumericError
from .estimators import FsEntry, FsTrace, fs_trace_record, iwae_nll
from .nn import DEFAULT_ACTIVATION, AdamState, LinearLayer, Mlp, adam_step, clip_grad_norm
from .objectives import FaeConfig, LossReport, MaeConfig, fae_loss, init_aux, mae_loss
from .vae import VaeModel, build_vae

log = logging.getLogger(__name__)

OBJECTIVES = ("vae", "fae", "mae")
RUNLOG_KEYS = ("epoch", "elbo", "recon", "kl", "fi_term_z", "fi_term_x", "mi_term",
               "entropy_power", "fisher_trace", "product", "nll")


@dataclass
class RunConfig:
    objective: str = "fae"
    fae: FaeConfig = field(default_factory=FaeConfig)
    mae: MaeConfig = field(default_factory=MaeConfig)
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    eval_every: int = 1
    depth: int = 5
    width: int = 300
    latent_dim: int = 40
    activation: str = DEFAULT_ACTIVATION
    likelihood: str = "bernoulli"
    clip_norm: float = 100.0
    eval_size: int = 1000
    iwae_k: int = 0
    nll_size: int = 1000
    out_dir: str | None = None
    checkpoint_every: int | None = None

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        for name in ("batch_size", "eval_every", "depth", "width", "latent_dim", "eval_size", "nll_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0 or self.iwae_k < 0 or not self.lr >= 0:
            raise ConfigError("epochs, iwae_k and lr must be nonnegative")
        if self.objective == "fae":
            self.fae.validate(self.likelihood)
        if self.objective == "mae" and not (self.mae.c >= 0 and self.mae.m >= 0):
            raise ConfigError("MAE weight c and target m must be >= 0")

    def effective_fae(self) -> FaeConfig:
        if self.objective == "vae":
            return FaeConfig(0.0, 0.0, self.fae.f_z, self.fae.f_x, self.likelihood, self.fae.n_samples)
        return dataclasses.replace(self.fae, likelihood=self.likelihood)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mae"] = {"c": self.mae.c, "m": self.mae.m, "n_samples": self.mae.n_samples}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        fae = FaeConfig(**d.pop("fae", {}))
        mae = MaeConfig(**d.pop("mae", {}))
        return cls(fae=fae, mae=mae, **d)


@dataclass
class RunLog:
    entries: list[dict] = field(default_factory=list)
    trace: FsTrace = field(default_factory=FsTrace)
    wall_clock: float = 0.0
    clamp_counts: dict = field(default_factory=dict)
    clip_count: int = 0
    name: str = ""

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=False) + "\n" for e in self.entries)

    def write_jsonl(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def read_jsonl(cls, path, name: str = "") -> "RunLog":
        from .info import InfoPoint

        entries = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        trace = FsTrace()
        for e in entries:
            if e.get("entropy_power") is not None:
                trace.append(FsEntry(e["epoch"], InfoPoint(e["entropy_power"], e["fisher_trace"],
                                                           e["product"], e.get("dim", 1)), e["elbo"]))
        return cls(entries, trace, name=name)

    def last_evaluated(self) -> dict | None:
        for e in reversed(self.entries):
            if e.get("nll") is not None:
                return e
        return None


class TrainingAborted(NumericError):
    """Raised on a numeric failure; ``checkpoint`` is the last good state."""

    def __init__(self, msg: str, checkpoint: Checkpoint | None, epoch: int):
        super().__init__(msg)
        self.checkpoint = checkpoint
        self.epoch = epoch


def derived_seed(*parts: int) -> int:
    """Stable integer seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# -- model/checkpoint plumbing ----------------------------------------------------

def _mlp_from_arrays(prefix: str, arrays: dict, dims: list[int], activation: str) -> Mlp:
    layers = []
    for i in range(len(dims) - 1):
        w = ad.Tensor(arrays[f"{prefix}.{i}.weight"], requires_grad=True)
        b = ad.Tensor(arrays[f"{prefix}.{i}.bias"], requires_grad=True)
        if w.shape != (dims[i + 1], dims[i]):
            raise ContractError(f"{prefix}.{i}.weight has shape {w.shape}, expected {(dims[i + 1], dims[i])}")
        layers.append(LinearLayer(w, b))
    return Mlp(layers, activation)


def _named(prefix: str, net: Mlp) -> dict[str, ad.Tensor]:
    out = {}
    for i, layer in enumerate(net.layers):
        out[f"{prefix}.{i}.weight"] = layer.weight
        out[f"{prefix}.{i}.bias"] = layer.bias
    return out


@dataclass
class TrainState:
    model: VaeModel
    aux: Mlp | None
    opt: AdamState
    epoch: int = 0

    def named_params(self) -> dict[str, ad.Tensor]:
        named = self.model.named_parameters()
        if self.aux is not None:
            named.update(_named("aux", self.aux))
        return named

    def params(self) -> list[ad.Tensor]:
        return list(self.named_params().values())

    def to_checkpoint(self, run: RunConfig, with_optimizer: bool = True) -> Checkpoint:
        named = self.named_params()
        arrays = {k: p.data.copy() for k, p in named.items()}
        if with_optimizer:
            for (k, _), m, v in zip(named.items(), self.opt.m, self.opt.v):
                arrays[f"adam.m.{k}"] = m.copy()
                arrays[f"adam.v.{k}"] = v.copy()
        meta = {
            "data_dim": self.model.data_dim, "latent_dim": self.model.latent_dim,
            "likelihood": self.model.likelihood, "activation": self.model.encoder.activation,
            "encoder_dims": self.model.encoder.dims, "decoder_dims": self.model.decoder.dims,
            "aux_dims": self.aux.dims if self.aux is not None else None,
            "epoch": self.epoch, "seed": run.seed, "adam_step": self.opt.step, "lr": self.opt.lr,
            "has_optimizer": with_optimizer, "run": run.to_dict(),
        }
        return Checkpoint(meta, arrays)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "TrainState":
        meta, arrays = ckpt.meta, ckpt.arrays
        act = meta["activation"]
        enc = _mlp_from_arrays("encoder", arrays, meta["encoder_dims"], act)
        dec = _mlp_from_arrays("decoder", arrays, meta["decoder_dims"], act)
        model = VaeModel(enc, dec, meta["latent_dim"], meta["likelihood"])
        aux = _mlp_from_arrays("aux", arrays, meta["aux_dims"], act) if meta.get("aux_dims") else None
        state = cls(model, aux, AdamState([], []), meta["epoch"])
        params = state.named_params()
        opt = AdamState.for_params(list(params.values()), lr=meta["lr"])
        if meta.get("has_optimizer"):
            opt.m = [arrays[f"adam.m.{k}"].copy() for k in params]
            opt.v = [arrays[f"adam.v.{k}"].copy() for k in params]
            opt.step = meta["adam_step"]
        state.opt = opt
        return state


def model_from_checkpoint(ckpt: Checkpoint) -> VaeModel:
    return TrainState.from_checkpoint(ckpt).model


def init_state(run: RunConfig, data_dim: int) -> TrainState:
    hidden = [run.width] * run.depth
    model = build_vae(data_dim, run.latent_dim, run.likelihood, hidden=hidden,
                      activation=run.activation, seed=derived_seed(run.seed, 0))
    aux = None
    if run.objective == "mae":
        aux = init_aux(model, hidden=hidden, seed=derived_seed(run.seed, 1), activation=run.activation)
    state = TrainState(model, aux, AdamState([], []))
    state.opt = AdamState.for_params(state.params(), lr=run.lr)
    return state


# -- the loop -----------------------------------------------------------------------

def _step_loss(run: RunConfig, state: TrainState, xb: np.ndarray, seed: int) -> LossReport:
    if run.objective == "mae":
        cfg = MaeConfig(run.mae.c, run.mae.m, state.aux, run.mae.n_samples)
        return mae_loss(state.model, xb, cfg, seed)
    return fae_loss(state.model, xb, run.effective_fae(), seed)


def _evaluate(run: RunConfig, state: TrainState, epoch: int, eval_x: np.ndarray,
              held_out: Dataset | None, trace: FsTrace) -> dict:
    entry = fs_trace_record(state.model, epoch, eval_x, trace, seed=derived_seed(run.seed, epoch, 2))
    out = {"entropy_power": entry.point.entropy_power, "fisher_trace": entry.point.fisher_trace,
           "product": entry.point.product, "dim": entry.point.dim, "eval_elbo": entry.elbo}
    if held_out is not None and run.iwae_k > 0:
        est = iwae_nll(state.model, held_out.images[:run.nll_size], run.iwae_k,
                       seed=derived_seed(run.seed, epoch, 3), bootstrap_seed=derived_seed(run.seed, epoch, 4))
        out["nll"] = est.nll
        out["nll_std_err"] = est.std_err
    return out


def train(run: RunConfig, data: Dataset, held_out: Dataset | None = None,
          resume: Checkpoint | None = None, progress=None) -> tuple[Checkpoint, RunLog]:
    """Optimise ``run.objective`` on ``data``; deterministic in ``run.seed``.

    ``progress`` is an optional callable receiving each per-epoch log entry.
    """
    run.validate()
    if len(data) == 0:
        raise ContractError("training data is empty")
    if run.likelihood == "bernoulli" and ((data.images < 0).any() or (data.images > 1).any()):
        raise ConfigError("bernoulli likelihood needs data in [0, 1]")
    state = TrainState.from_checkpoint(resume) if resume is not None else init_state(run, data.dim)
    if resume is not None:
        state.opt.lr = run.lr
    if state.model.data_dim != data.dim:
        raise ContractError(f"model expects D={state.model.data_dim}, data has D={data.dim}")

    out_dir = Path(run.out_dir) if run.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_every = run.checkpoint_every or run.eval_every
    runlog = RunLog()
    eval_x = data.images[:run.eval_size]
    x_all = data.images
    n = len(data)
    t0 = time.perf_counter()
    ad.reset_clamp_counts()
    last_good = state.to_checkpoint(run)

    for epoch in range(state.epoch + 1, run.epochs + 1):
        perm = np.random.default_rng(derived_seed(run.seed, epoch)).permutation(n)
        sums: dict[str, float] = {}
        clips = 0
        try:
            for b, start in enumerate(range(0, n, run.batch_size)):
                idx = perm[start:start + run.batch_size]
                xb = x_all[idx]
                params = state.params()
                with ad.Tape() as tape:
                    rep = _step_loss(run, state, xb, derived_seed(run.seed, epoch, 1, b))
                tape.backward(rep.loss)
                grads, _, clipped = clip_grad_norm([p.grad for p in params], run.clip_norm)
                clips += clipped
                adam_step(params, grads, state.opt)
                for k, v in rep.as_dict().items():
                    sums[k] = sums.get(k, 0.0) + v * len(idx)
        except NumericError as e:
            if out_dir is not None:
                save_checkpoint(out_dir / "last_good.fpck", last_good)
            raise TrainingAborted(f"epoch {epoch}: {e}", last_good, epoch) from e
        state.epoch = epoch
        runlog.clip_count += clips
        entry = {"epoch": epoch, **{k: v / n for k, v in sums.items()}}
        entry.update({"entropy_power": None, "fisher_trace": None, "product": None, "nll": None})
        if epoch % run.eval_every == 0 or epoch == run.epochs:
            entry.update(_evaluate(run, state, epoch, eval_x, held_out, runlog.trace))
        entry["clip_count"] = clips
        runlog.entries.append(entry)
        last_good = state.to_checkpoint(run)
        if out_dir is not None and (epoch % ckpt_every == 0 or epoch == run.epochs):
            save_checkpoint(out_dir / f"epoch-{epoch:04d}.fpck", state.to_checkpoint(run, with_optimizer=False))
        log.info("epoch %d: elbo %.4f fisher_z %s", epoch, entry["elbo"], entry.get("fisher_trace"))
        if progress is not None:
            progress(entry)

    runlog.wall_clock = time.perf_counter() - t0
    runlog.clamp_counts = ad.clamp_counts()
    final = state.to_checkpoint(run)
    if out_dir is not None:
        save_checkpoint(out_dir / "final.fpck", final)
        runlog.write_jsonl(out_dir / "runlog.jsonl")
    return final, runlog


# -- comparisons -----------------------------------------------------------------------

@dataclass
class ComparisonRow:
    name: str
    nll: float
    nll_std_err: float
    elbo: float
    entropy_power: float | None
    fisher_trace: float | None
    product: float | None
    rank: int = 0
    better_than_next: bool = False  # significant at 2 combined standard errors
    tied_with_next: bool = False


def compare_runs(logs: list[RunLog], names: list[str] | None = None, z: float = 2.0) -> list[ComparisonRow]:
    """Rank runs by their final held-out NLL; flag gaps larger than ``z`` combined std errs."""
    if len(logs) < 2:
        raise ContractError("compare_runs needs at least two run logs")
    rows = []
    for i, lg in enumerate(logs):
        e = lg.last_evaluated()
        if e is None:
            raise ContractError(f"run {names[i] if names else lg.name or i} has no NLL evaluation")
        rows.append(ComparisonRow(names[i] if names else (lg.name or f"run{i}"), e["nll"],
                                  e.get("nll_std_err", 0.0), e["elbo"], e.get("entropy_power"),
                                  e.get("fisher_trace"), e.get("product")))
    rows.sort(key=lambda r: r.nll)
    for i, r in enumerate(rows):
        r.rank = i + 1
        if i + 1 < len(rows):
            nxt = rows[i + 1]
            se = math.hypot(r.nll_std_err, nxt.nll_std_err)
            gap = nxt.nll - r.nll
            r.better_than_next = gap > z * se and gap > 0
            r.tied_with_next = not r.better_than_next
    return rows


def format_comparison(rows: list[ComparisonRow]) -> str:
    lines = [f"{'rank':>4}  {'model':<24} {'nll':>10} {'se':>7} {'elbo':>10} {'N':>10} {'trJ':>10}  vs-next"]
    for r in rows:
        flag = "better" if r.better_than_next else ("tie" if r.tied_with_next else "")
        fmt = lambda v: f"{v:10.4f}" if v is not None else f"{'-':>10}"  # noqa: E731
        lines.append(f"{r.rank:>4}  {r.name:<24} {r.nll:10.4f} {r.nll_std_err:7.4f} {r.elbo:10.4f} "
                     f"{fmt(r.entropy_power)} {fmt(r.fisher_trace)}  {flag}")
    return "\n".join(lines)
