"""Deterministic training loop, metric logging and the ablation harness."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autograd as ag
from . import mcdb
from .core import Modality, ParamStore, RngStream
from .data import MultimodalDataset
from .evaluation import EvalReport, build_templates, topk_accuracy
from .exceptions import InvalidConfig, NonFiniteLoss
from .loss import TERMS, LossConfig, report_from_terms, total_loss_graph
from .mcdb import BalanceConfig, ModalityWeights
from .nn import HMAVDModel, ModelConfig
from .spr import OptimConfig, SprAdam, SprConfig

MODS = tuple(m.value for m in Modality)
TARGETS = ("image", "text")

CSV_COLUMNS = (
    ["epoch", "step", "global_step"]
    + list(TERMS)
    + ["total"]
    + [f"grad_pre_{m}" for m in MODS]
    + [f"grad_post_{m}" for m in MODS]
    + [f"rho_{m}" for m in TARGETS]
    + [f"kappa_{m}" for m in MODS]
    + ["sigma"]
)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size_train: int = 1000
    batch_size_eval: int = 400
    lr: float = 2e-4
    betas: tuple = (0.5, 0.999)
    tau: float = 0.07
    val_size: int = 740
    seed: int = 0
    text_modality: bool = True
    adapter: bool = True
    mcdb: bool = True
    spr: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.epochs < 0:
            raise InvalidConfig("train.epochs must be >= 0")
        for name in ("batch_size_train", "batch_size_eval"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"train.{name} must be positive")
        if self.val_size < 0:
            raise InvalidConfig("train.val_size must be >= 0")
        if self.dtype not in ("float64", "float32"):
            raise InvalidConfig(f"train.dtype must be float64 or float32, got {self.dtype!r}")

    def toggles(self):
        return {"text_modality": self.text_modality, "adapter": self.adapter, "mcdb": self.mcdb, "spr": self.spr}


@dataclass
class StepRecord:
    epoch: int
    step: int
    global_step: int
    loss: dict
    grad_pre: dict
    grad_post: dict
    rho: dict
    kappa: dict
    sigma: float

    def row(self):
        out = {"epoch": self.epoch, "step": self.step, "global_step": self.global_step}
        out.update({k: self.loss[k] for k in list(TERMS) + ["total"]})
        out.update({f"grad_pre_{m}": self.grad_pre[m] for m in MODS})
        out.update({f"grad_post_{m}": self.grad_post[m] for m in MODS})
        out.update({f"rho_{m}": self.rho.get(m, math.nan) for m in TARGETS})
        out.update({f"kappa_{m}": self.kappa[m] for m in MODS})
        out["sigma"] = self.sigma
        return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: dict
    val_loss: float
    grad_pre: dict
    grad_post: dict
    rho: dict
    kappa: dict
    sigma: float


@dataclass
class TrainReport:
    config: dict
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float | None = None
    checkpoint: ParamStore | None = None
    model: HMAVDModel | None = None

    def best_model(self) -> HMAVDModel:
        return HMAVDModel(self.model.config, store=self.checkpoint.copy())

    def write_metrics_csv(self, path_or_buffer):
        fh = open(path_or_buffer, "w", newline="") if isinstance(path_or_buffer, str) else path_or_buffer
        try:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            w.writeheader()
            for s in self.steps:
                w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in s.row().items()})
        finally:
            if isinstance(path_or_buffer, str):
                fh.close()

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        self.write_metrics_csv(buf)
        return buf.getvalue()

    def summary(self) -> dict:
        last = self.epochs[-1] if self.epochs else None
        return {
            "config": self.config,
            "n_epochs": len(self.epochs),
            "n_steps": len(self.steps),
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "final": None if last is None else {
                "train_loss": last.train_loss,
                "val_loss": last.val_loss,
                "grad_pre": last.grad_pre,
                "rho": last.rho,
                "kappa": last.kappa,
                "sigma": last.sigma,
            },
            "val_loss_per_epoch": [e.val_loss for e in self.epochs],
        }


def gradient_norms(store: ParamStore) -> dict:
    """L2 norm over all gradient entries attributed to each modality."""
    sq = dict.fromkeys(MODS, 0.0)
    for _, p in store:
        if p.modality in sq:
            sq[p.modality] += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return {m: math.sqrt(v) for m, v in sq.items()}


@dataclass
class Experiment:
    """Every knob one training run needs, resolved against a dataset."""

    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    balance: BalanceConfig = field(default_factory=BalanceConfig)
    spr: SprConfig = field(default_factory=SprConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def resolved(self, dataset: MultimodalDataset, steps_per_epoch: int) -> "Experiment":
        t = self.train
        _, ch, tp = dataset.eeg.shape
        model = replace(
            self.model, eeg_channels=ch, eeg_timepoints=tp, embed_dim=dataset.image.shape[1],
            use_text=t.text_modality, use_adapter=t.adapter,
        )
        return Experiment(
            train=t,
            model=model,
            loss=replace(self.loss, tau=t.tau),
            balance=replace(self.balance, tau=t.tau, enabled=t.mcdb and t.text_modality),
            spr=replace(self.spr, enabled=t.spr, T=max(1, t.epochs * steps_per_epoch)),
            optim=replace(self.optim, eta=t.lr, beta1=t.betas[0], beta2=t.betas[1]),
        )

    def as_dict(self):
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}


def split_train_val(dataset: MultimodalDataset, cfg: TrainConfig, rng: RngStream):
    train = dataset.subset("train")
    val = dataset.subset("val")
    if len(val) == 0 and cfg.val_size > 0 and len(train) > 1:
        n_val = min(cfg.val_size, len(train) - 1)
        idx = rng.permutation(len(train))
        val, train = train.take(np.sort(idx[:n_val])), train.take(np.sort(idx[n_val:]))
    if len(train) == 0:
        raise InvalidConfig("dataset has no training samples")
    return train, val


def _batch_features(model, ds, idx, dtype, record=True):
    text = ds.text(ds.labels[idx]) if model.config.use_text else None
    return model.forward(ds.eeg[idx].astype(dtype, copy=False), ds.image[idx].astype(dtype, copy=False), text, record=record)


def evaluate_loss(model: HMAVDModel, ds: MultimodalDataset, loss_cfg: LossConfig, batch_size: int, dtype="float64") -> float:
    """Sample-weighted mean objective over consecutive batches of ``ds``."""
    if len(ds) == 0:
        return math.nan
    total, n = 0.0, 0
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        value, _ = total_loss_graph(_batch_features(model, ds, idx, dtype, record=False), loss_cfg)
        total += float(value.value) * len(idx)
        n += len(idx)
    return total / n


def train_step(model, optimizer, batch_feats, exp: Experiment, where=(0, 0)):
    """One forward/backward/balance/update cycle; returns a partial StepRecord dict."""
    store = model.store
    store.zero_grad()
    total, terms = total_loss_graph(batch_feats, exp.loss)
    value = float(total.value)
    if not math.isfinite(value):
        raise NonFiniteLoss(where[0], where[1], value)
    ag.backward(total)
    pre = gradient_norms(store)
    rho = {}
    weights = ModalityWeights.ones()
    if "text" in batch_feats:
        targets = {Modality.IMAGE: batch_feats["image"].value, Modality.TEXT: batch_feats["text"].value}
        rho_m, kappa = mcdb.balance(batch_feats["eeg"].value, targets, exp.balance)
        rho = {m.value: r for m, r in rho_m.items()}
        if exp.balance.enabled:
            weights = kappa
            mcdb.modulate_gradients(store, weights)
    post = gradient_norms(store) if exp.balance.enabled else dict(pre)
    sigma = optimizer.step()
    report = report_from_terms(total, terms).as_dict()
    return dict(loss=report, grad_pre=pre, grad_post=post, rho=rho,
                kappa={m.value: weights[m] for m in Modality}, sigma=sigma)


def _mean_dict(dicts, keys):
    out = {}
    for k in keys:
        vals = [d[k] for d in dicts if k in d]
        out[k] = float(np.mean(vals)) if vals else math.nan
    return out


def train(dataset: MultimodalDataset, cfg: TrainConfig | None = None, experiment: Experiment | None = None) -> TrainReport:
    """Train on the dataset's train split, keeping the lowest-validation-loss parameters."""
    exp = experiment if experiment is not None else Experiment()
    cfg = cfg if cfg is not None else exp.train
    exp = replace(exp, train=cfg)
    root = RngStream(cfg.seed)
    train_ds, val_ds = split_train_val(dataset, cfg, root.child("val"))
    bs = min(cfg.batch_size_train, len(train_ds))
    steps_per_epoch = math.ceil(len(train_ds) / bs)
    exp = exp.resolved(dataset, steps_per_epoch)
    dtype = np.dtype(cfg.dtype)

    model = HMAVDModel(exp.model, root.child("init"))
    model.store.astype(dtype)
    optimizer = SprAdam(model.store, exp.optim, exp.spr, root.child("noise"))
    order = root.child("order")
    report = TrainReport(config=exp.as_dict(), checkpoint=model.store.copy(), model=model)

    best = math.inf
    global_step = 0
    for epoch in range(cfg.epochs):
        perm = order.permutation(len(train_ds))
        epoch_steps = []
        for step, start in enumerate(range(0, len(train_ds), bs)):
            idx = perm[start:start + bs]
            feats = _batch_features(model, train_ds, idx, dtype)
            rec = StepRecord(epoch, step, global_step, **train_step(model, optimizer, feats, exp, (epoch, step)))
            report.steps.append(rec)
            epoch_steps.append(rec)
            global_step += 1
        eval_set = val_ds if len(val_ds) else train_ds
        val_loss = evaluate_loss(model, eval_set, exp.loss, cfg.batch_size_eval, dtype)
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(epoch, "validation", val_loss)
        report.epochs.append(EpochRecord(
            epoch=epoch,
            train_loss=_mean_dict([s.loss for s in epoch_steps], list(TERMS) + ["total"]),
            val_loss=val_loss,
            grad_pre=_mean_dict([s.grad_pre for s in epoch_steps], MODS),
            grad_post=_mean_dict([s.grad_post for s in epoch_steps], MODS),
            rho=_mean_dict([s.rho for s in epoch_steps], TARGETS),
            kappa=_mean_dict([s.kappa for s in epoch_steps], MODS),
            sigma=epoch_steps[-1].sigma,
        ))
        if val_loss < best:
            best = val_loss
            report.best_epoch = epoch
            report.best_val_loss = val_loss
            report.checkpoint = model.store.copy()
    return report


def evaluate_model(model: HMAVDModel, dataset: MultimodalDataset, split="test", w_text=0.5, ks=(1, 5), clamp_k=False) -> EvalReport:
    """Zero-shot top-k on ``split`` using per-class templates from the same split."""
    sub = dataset.subset(split)
    classes, img, txt = dataset.templates(split)
    bank = build_templates(classes, img, txt, model, w_text)
    if clamp_k:
        ks = sorted({min(k, len(bank)) for k in ks} | {1})
    return topk_accuracy(model.embed_eeg(sub.eeg), sub.labels, bank, ks=ks)


# Rows of the module ablation, cumulative from the EEG-image baseline.
ABLATION_ROWS = (
    ("base", dict(text_modality=False, adapter=False, mcdb=False, spr=False)),
    ("+text", dict(text_modality=True, adapter=False, mcdb=False, spr=False)),
    ("+text+adapter", dict(text_modality=True, adapter=True, mcdb=False, spr=False)),
    ("+text+mcdb+spr", dict(text_modality=True, adapter=False, mcdb=True, spr=True)),
    ("all", dict(text_modality=True, adapter=True, mcdb=True, spr=True)),
)
ABLATION_COLUMNS = ["row", "text", "adapter", "mcdb", "spr", "top1", "top5"]


@dataclass
class AblationRow:
    name: str
    toggles: dict
    top1: float
    top5: float
    best_epoch: int | None = None


def run_ablation(dataset: MultimodalDataset, base: Experiment | None = None, w_text=0.5) -> list:
    """Train and evaluate every ablation row with the same seed and data order."""
    base = base if base is not None else Experiment()
    rows = []
    for name, toggles in ABLATION_ROWS:
        exp = replace(base, train=replace(base.train, **toggles))
        report = train(dataset, experiment=exp)
        ev = evaluate_model(report.best_model(), dataset, "test", w_text, ks=(1, 5), clamp_k=True)
        top5 = ev.accuracy[max(ev.accuracy)]
        rows.append(AblationRow(name, toggles, ev.top1, top5, report.best_epoch))
    return rows


def ablation_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        t = r.toggles
        w.writerow([r.name, int(t["text_modality"]), int(t["adapter"]), int(t["mcdb"]), int(t["spr"]),
                    repr(float(r.top1)), repr(float(r.top5))])
    return buf.getvalue()


def json_safe(obj):
    """Replace NaN/inf with None so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_summary(report: TrainReport, path, extra: dict | None = None):
    doc = report.summary()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(json_safe(doc), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
