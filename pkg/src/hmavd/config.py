"""The single JSON configuration document that drives every CLI command.

Precedence, lowest to highest: dataclass defaults, the config file, then
command-line overrides (``--set section.key=value`` and ``--toggle``).
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

from .data import SyntheticConfig
from .exceptions import InvalidConfig
from .loss import LossConfig
from .mcdb import BalanceConfig
from .nn import ModelConfig
from .spr import OptimConfig, SprConfig
from .trainer import Experiment, TrainConfig

OUTPUT_ROOT_ENV = "HMAVD_OUTPUT_ROOT"

SECTIONS = {
    "data": SyntheticConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "balance": BalanceConfig,
    "spr": SprConfig,
    "optim": OptimConfig,
}


@dataclass
class EvalOptions:
    w_text: float = 0.5
    k: list = field(default_factory=lambda: [1, 5])

    def __post_init__(self):
        if not 0.0 <= self.w_text <= 1.0:
            raise InvalidConfig(f"eval.w_text must lie in [0, 1], got {self.w_text}")
        if not self.k or any(int(k) < 1 for k in self.k):
            raise InvalidConfig(f"eval.k must be a non-empty list of positive integers, got {self.k}")
        self.k = [int(k) for k in self.k]


SECTIONS["eval"] = EvalOptions
TOP_LEVEL = {"dataset_dir", "output_dir"}


@dataclass
class RunConfig:
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    balance: BalanceConfig = field(default_factory=BalanceConfig)
    spr: SprConfig = field(default_factory=SprConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    dataset_dir: str = "data"
    output_dir: str | None = None

    def experiment(self) -> Experiment:
        return Experiment(train=self.train, model=self.model, loss=self.loss, balance=self.balance,
                          spr=self.spr, optim=self.optim)

    def resolve_output(self, command: str) -> str:
        if self.output_dir:
            return self.output_dir
        return os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "runs"), command)

    def to_dict(self) -> dict:
        out = {name: asdict(getattr(self, name)) for name in SECTIONS}
        out["dataset_dir"] = self.dataset_dir
        out["output_dir"] = self.output_dir
        return out


def _build(section: str, cls, values):
    if not isinstance(values, dict):
        raise InvalidConfig(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidConfig(
            f"unknown key(s) {', '.join(f'{section}.{k}' for k in unknown)}; allowed: {', '.join(sorted(known))}"
        )
    try:
        return cls(**values)
    except TypeError as exc:
        raise InvalidConfig(f"{section}: {exc}") from None


def from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise InvalidConfig("configuration must be a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS) - TOP_LEVEL)
    if unknown:
        raise InvalidConfig(f"unknown top-level key(s) {unknown}; allowed: {sorted(set(SECTIONS) | TOP_LEVEL)}")
    kwargs = {name: _build(name, cls, doc.get(name, {})) for name, cls in SECTIONS.items()}
    for key in TOP_LEVEL:
        if key in doc:
            kwargs[key] = doc[key]
    return RunConfig(**kwargs)


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    doc = {}
    if path:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: invalid JSON ({exc})") from None
    if overrides:
        doc = merge(doc, overrides)
    return from_dict(doc)


def merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_assignment(text: str) -> dict:
    """``"train.epochs=5"`` -> ``{"train": {"epochs": 5}}``; values parse as JSON when possible."""
    if "=" not in text:
        raise InvalidConfig(f"override {text!r} must look like section.key=value")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = path.strip().split(".")
    out = value
    for k in reversed(keys):
        out = {k: out}
    return out


TOGGLES = {"text": "text_modality", "text_modality": "text_modality", "adapter": "adapter", "mcdb": "mcdb", "spr": "spr"}


def parse_toggle(text: str) -> dict:
    if "=" not in text:
        raise InvalidConfig(f"toggle {text!r} must look like name=on|off")
    name, state = (s.strip().lower() for s in text.split("=", 1))
    if name not in TOGGLES:
        raise InvalidConfig(f"unknown toggle {name!r}; choose from {sorted(set(TOGGLES))}")
    if state not in ("on", "off", "true", "false", "1", "0"):
        raise InvalidConfig(f"toggle {name} must be on or off, got {state!r}")
    return {"train": {TOGGLES[name]: state in ("on", "true", "1")}}
