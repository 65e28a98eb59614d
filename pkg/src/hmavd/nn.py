"""EEG encoder, bottleneck adapters and the tri-modal model wiring.

Row-vector convention throughout: a layer maps ``x @ W + b`` with ``W`` of
shape ``(in_dim, out_dim)``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from .core import Modality, ParamStore, RngStream, l2_normalize as _np_normalize
from .exceptions import DimensionMismatch, InvalidConfig, NonFiniteInput, ShapeMismatch

CHECKPOINT_FORMAT = "hmavd-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class LinearLayer:
    W: object
    b: object = None

    @property
    def in_dim(self):
        return np.shape(_value(self.W))[0]

    @property
    def out_dim(self):
        return np.shape(_value(self.W))[1]


@dataclass
class AdapterParams:
    down: LinearLayer
    up: LinearLayer
    alpha: float
    r: int
    has_bias: bool

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfig(f"alpha must lie in (0, 1), got {self.alpha}")
        d = self.down.in_dim
        if self.r <= 0 or d % self.r:
            raise InvalidConfig(f"compression ratio r={self.r} must divide d={d}")


@dataclass
class EegEncoderParams:
    temporal_proj: LinearLayer
    head: LinearLayer
    activation: str = "relu"


@dataclass
class FusionConfig:
    beta: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidConfig(f"beta must lie in [0, 1], got {self.beta}")


def _value(x):
    return x.value if isinstance(x, ag.Tensor) else x


def _check_cols(x, d, what):
    if np.ndim(_value(x)) != 2 or np.shape(_value(x))[1] != d:
        raise ShapeMismatch(f"{what}: expected (batch, {d}), got {np.shape(_value(x))}")


# Graph-building versions. Accept arrays or Tensors, return Tensors.

def eeg_encode_graph(x_flat, p: EegEncoderParams) -> ag.Tensor:
    if np.shape(_value(x_flat))[1] != p.temporal_proj.in_dim:
        raise ShapeMismatch(
            f"EEG input has {np.shape(_value(x_flat))[1]} features, encoder expects {p.temporal_proj.in_dim}"
        )
    h = ag.relu(ag.linear(x_flat, p.temporal_proj.W, p.temporal_proj.b))
    return ag.linear(h, p.head.W, p.head.b)


def adapter_graph(x, p: AdapterParams) -> ag.Tensor:
    _check_cols(x, p.down.in_dim, "adapter input")
    hidden = ag.relu(ag.linear(x, p.down.W, p.down.b if p.has_bias else None))
    residual = ag.scale(ag.matmul(hidden, p.up.W), p.alpha)
    out = ag.add(x, residual)
    # The output bias sits outside the residual scaling.
    if p.has_bias and p.up.b is not None:
        out = ag.add(out, p.up.b)
    return out


def fuse_graph(adapted, original, c: FusionConfig) -> ag.Tensor:
    if np.shape(_value(adapted)) != np.shape(_value(original)):
        raise ShapeMismatch(f"{np.shape(_value(adapted))} vs {np.shape(_value(original))}")
    return ag.add(ag.scale(adapted, c.beta), ag.scale(original, 1.0 - c.beta))


# Plain numpy entry points.

def _flatten_eeg(x_raw):
    x_raw = np.asarray(x_raw, dtype=np.float64)
    if x_raw.ndim != 3:
        raise ShapeMismatch(f"EEG batch must be (batch, channels, time), got {x_raw.shape}")
    return x_raw.reshape(x_raw.shape[0], -1)


def eeg_encode(x_raw, p: EegEncoderParams) -> np.ndarray:
    """Unnormalized EEG embedding of a ``(B, channels, time)`` batch."""
    return eeg_encode_graph(_flatten_eeg(x_raw), p).value


def adapter_image_forward(x, p: AdapterParams) -> np.ndarray:
    if p.has_bias:
        raise InvalidConfig("image adapter carries no bias terms")
    return adapter_graph(np.asarray(x, dtype=np.float64), p).value


def adapter_text_forward(x, p: AdapterParams) -> np.ndarray:
    if not p.has_bias:
        raise InvalidConfig("text adapter requires bias terms")
    return adapter_graph(np.asarray(x, dtype=np.float64), p).value


def fuse_text_features(adapted, original, c: FusionConfig) -> np.ndarray:
    return fuse_graph(np.asarray(adapted, dtype=np.float64), np.asarray(original, dtype=np.float64), c).value


@dataclass
class ModelConfig:
    eeg_channels: int = 8
    eeg_timepoints: int = 16
    hidden_dim: int = 64
    embed_dim: int = 16
    r_text: int = 16
    r_image: int = 8
    alpha: float = 0.7
    beta: float = 0.5
    use_text: bool = True
    use_adapter: bool = True

    def __post_init__(self):
        for name in ("eeg_channels", "eeg_timepoints", "hidden_dim", "embed_dim", "r_text", "r_image"):
            if int(getattr(self, name)) <= 0:
                raise InvalidConfig(f"model.{name} must be positive")
        for name in ("r_text", "r_image"):
            if self.embed_dim % getattr(self, name):
                raise InvalidConfig(f"model.{name}={getattr(self, name)} must divide embed_dim={self.embed_dim}")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfig(f"model.alpha must lie in (0, 1), got {self.alpha}")
        FusionConfig(self.beta)


def _uniform_init(rng: RngStream, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class HMAVDModel:
    """Trainable EEG encoder plus image/text adapters over frozen features.

    Only the parameters live here; forward passes build a fresh graph each
    call so the store can be optimized in place between calls.
    """

    def __init__(self, config: ModelConfig, rng: RngStream | None = None, store: ParamStore | None = None):
        self.config = config
        if store is None:
            store = self._init_store(config, rng if rng is not None else RngStream(0))
        self.store = store

    @staticmethod
    def _init_store(c: ModelConfig, rng: RngStream) -> ParamStore:
        s = ParamStore()
        n_in = c.eeg_channels * c.eeg_timepoints
        eeg = Modality.EEG.value
        s.add("eeg_encoder", "temporal_proj.W", _uniform_init(rng, n_in, (n_in, c.hidden_dim)), eeg)
        s.add("eeg_encoder", "temporal_proj.b", np.zeros(c.hidden_dim), eeg)
        s.add("eeg_encoder", "head.W", _uniform_init(rng, c.hidden_dim, (c.hidden_dim, c.embed_dim)), eeg)
        s.add("eeg_encoder", "head.b", np.zeros(c.embed_dim), eeg)
        if c.use_adapter:
            d = c.embed_dim
            bi = d // c.r_image
            img = Modality.IMAGE.value
            s.add("image_adapter", "down.W", _uniform_init(rng, d, (d, bi)), img)
            s.add("image_adapter", "up.W", _uniform_init(rng, bi, (bi, d)), img)
            if c.use_text:
                bt = d // c.r_text
                txt = Modality.TEXT.value
                s.add("text_adapter", "down.W", _uniform_init(rng, d, (d, bt)), txt)
                s.add("text_adapter", "down.b", np.zeros(bt), txt)
                s.add("text_adapter", "up.W", _uniform_init(rng, bt, (bt, d)), txt)
                s.add("text_adapter", "up.b", np.zeros(d), txt)
        return s

    def _get(self, component, name, record):
        p = self.store[(component, name)]
        return ag.leaf(p, f"{component}/{name}") if record else p.value

    def eeg_params(self, record=False) -> EegEncoderParams:
        g = lambda n: self._get("eeg_encoder", n, record)  # noqa: E731
        return EegEncoderParams(LinearLayer(g("temporal_proj.W"), g("temporal_proj.b")), LinearLayer(g("head.W"), g("head.b")))

    def image_adapter(self, record=False) -> AdapterParams | None:
        if ("image_adapter", "down.W") not in self.store:
            return None
        g = lambda n: self._get("image_adapter", n, record)  # noqa: E731
        return AdapterParams(LinearLayer(g("down.W")), LinearLayer(g("up.W")), self.config.alpha, self.config.r_image, False)

    def text_adapter(self, record=False) -> AdapterParams | None:
        if ("text_adapter", "down.W") not in self.store:
            return None
        g = lambda n: self._get("text_adapter", n, record)  # noqa: E731
        return AdapterParams(
            LinearLayer(g("down.W"), g("down.b")), LinearLayer(g("up.W"), g("up.b")), self.config.alpha, self.config.r_text, True
        )

    def check_inputs(self, eeg=None, image=None, text=None):
        c = self.config
        if eeg is not None and tuple(np.shape(eeg)[1:]) != (c.eeg_channels, c.eeg_timepoints):
            raise DimensionMismatch(
                f"EEG trials are {tuple(np.shape(eeg)[1:])}, model expects {(c.eeg_channels, c.eeg_timepoints)}"
            )
        for name, feats in (("image", image), ("text", text)):
            if feats is not None and np.shape(feats)[-1] != c.embed_dim:
                raise DimensionMismatch(f"{name} features have d={np.shape(feats)[-1]}, model has d={c.embed_dim}")
        for name, arr in (("EEG", eeg), ("image", image), ("text", text)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise NonFiniteInput(f"{name} input contains NaN or inf")

    def forward(self, eeg, image, text=None, record=True) -> dict:
        """Normalized shared-space features for one batch.

        Returns a dict of Tensors: ``eeg``, ``image``, ``text`` (fused,
        normalized), ``text_adapted`` and ``text_raw`` (for the consistency
        term). Text entries are absent when the text modality is off.
        """
        self.check_inputs(eeg, image, text)
        x = _flatten_eeg(eeg).astype(self.store[("eeg_encoder", "head.W")].value.dtype, copy=False)
        out = {"eeg": ag.l2_normalize(eeg_encode_graph(x, self.eeg_params(record)))}
        img = ag.constant(np.asarray(image, dtype=x.dtype))
        pa = self.image_adapter(record)
        out["image"] = ag.l2_normalize(adapter_graph(img, pa) if pa is not None else img)
        if self.config.use_text and text is not None:
            raw = ag.constant(np.asarray(text, dtype=x.dtype))
            pt = self.text_adapter(record)
            if pt is not None:
                adapted = adapter_graph(raw, pt)
                fused = fuse_graph(adapted, raw, FusionConfig(self.config.beta))
                out["text_adapted"] = adapted
            else:
                fused = raw
            out["text"] = ag.l2_normalize(fused)
            out["text_raw"] = raw
        return out

    def embed_eeg(self, eeg) -> np.ndarray:
        self.check_inputs(eeg=eeg)
        return _np_normalize(eeg_encode(eeg, self.eeg_params()))

    def embed_image(self, image) -> np.ndarray:
        self.check_inputs(image=image)
        image = np.asarray(image, dtype=np.float64)
        pa = self.image_adapter()
        return _np_normalize(adapter_image_forward(image, pa) if pa is not None else image)

    def embed_text(self, text) -> np.ndarray:
        self.check_inputs(text=text)
        text = np.asarray(text, dtype=np.float64)
        pt = self.text_adapter()
        if pt is None:
            return _np_normalize(text)
        return _np_normalize(fuse_text_features(adapter_text_forward(text, pt), text, FusionConfig(self.config.beta)))


def save_checkpoint(path, model: HMAVDModel, params: ParamStore | None = None, extra_config: dict | None = None):
    """Write parameters and config as a JSON document (see README for layout)."""
    params = params if params is not None else model.store
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": asdict(model.config),
        "config": extra_config or {},
        "params": [
            {
                "component": comp,
                "name": name,
                "modality": p.modality,
                "shape": list(p.value.shape),
                "values": [float(v) for v in np.asarray(p.value, dtype=np.float64).ravel(order="C")],
            }
            for (comp, name), p in params
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[HMAVDModel, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidConfig(f"{path} is not an hmavd checkpoint")
    known = {f.name for f in fields(ModelConfig)}
    cfg = ModelConfig(**{k: v for k, v in doc["model"].items() if k in known})
    store = ParamStore()
    for e in doc["params"]:
        store.add(e["component"], e["name"], np.array(e["values"], dtype=np.float64).reshape(e["shape"]), e["modality"])
    return HMAVDModel(cfg, store=store), doc.get("config", {})
