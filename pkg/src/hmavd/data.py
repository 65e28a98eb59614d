"""Synthetic tri-modal datasets, EEG preprocessing and the on-disk layout."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import Modality, RngStream
from .exceptions import (
    IndivisibleTrialCount,
    InvalidConfig,
    NonIntegerFactor,
    OnsetOutOfBounds,
    ShapeMismatch,
    SingularCovariance,
)

DATASET_FORMAT = "hmavd-dataset"
DATASET_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class SyntheticConfig:
    n_train_classes: int = 40
    n_test_classes: int = 10
    samples_per_class: int = 20
    latent_dim: int = 8
    eeg_channels: int = 8
    eeg_timepoints: int = 16
    feature_dim: int = 16
    snr: dict = field(default_factory=lambda: {"eeg": 1.0, "image": 1.0, "text": 1.0})
    val_size: int = 40
    seed: int = 0

    def __post_init__(self):
        for name in ("n_train_classes", "n_test_classes", "samples_per_class", "latent_dim",
                     "eeg_channels", "eeg_timepoints", "feature_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise InvalidConfig(f"data.{name} must be a positive integer, got {v!r}")
        snr = dict(self.snr)
        unknown = set(snr) - {m.value for m in Modality}
        if unknown:
            raise InvalidConfig(f"data.snr has unknown modalities {sorted(unknown)}")
        for m in Modality:
            v = snr.setdefault(m.value, 1.0)
            if not (isinstance(v, (int, float)) and v > 0):
                raise InvalidConfig(f"data.snr.{m.value} must be positive, got {v!r}")
        self.snr = {m.value: float(snr[m.value]) for m in Modality}
        if self.val_size < 0:
            raise InvalidConfig("data.val_size must be >= 0")


@dataclass
class MultimodalDataset:
    """Flat per-sample arrays plus one text feature per class.

    ``text_features[c]`` is the text embedding of global class ``c``.
    """

    eeg: np.ndarray
    image: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    text_features: np.ndarray
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    def text(self, labels=None) -> np.ndarray:
        return self.text_features[self.labels if labels is None else labels]

    def subset(self, split: str) -> "MultimodalDataset":
        idx = np.flatnonzero(self.split == split)
        return self.take(idx)

    def take(self, idx) -> "MultimodalDataset":
        return replace(self, eeg=self.eeg[idx], image=self.image[idx], labels=self.labels[idx], split=self.split[idx])

    def classes(self, split=None) -> np.ndarray:
        labels = self.labels if split is None else self.labels[self.split == split]
        return np.unique(labels)

    def templates(self, split="test"):
        """Per-class ``(class_ids, image_template, text_template)``.

        Image templates are the normalized mean image feature of the class.
        """
        classes = self.classes(split)
        mask = self.split == split
        img = np.stack([self.image[mask & (self.labels == c)].mean(axis=0) for c in classes])
        img /= np.linalg.norm(img, axis=1, keepdims=True)
        return classes, img, self.text_features[classes]


def _normalize(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def generate_synthetic(cfg: SyntheticConfig) -> MultimodalDataset:
    """Draw a latent prototype per class and render it into every modality.

    Image and text features are noisy random projections of the prototype;
    EEG is ``tanh`` of a channel projection held constant over time plus
    per-trial Gaussian noise. Noise scales are ``1 / snr``.
    """
    root = RngStream(cfg.seed)
    maps = root.child("maps")
    k, d, ch, tp = cfg.latent_dim, cfg.feature_dim, cfg.eeg_channels, cfg.eeg_timepoints
    p_img = maps.normal(size=(d, k)) / math.sqrt(k)
    p_text = maps.normal(size=(d, k)) / math.sqrt(k)
    p_eeg = maps.normal(size=(ch, k)) / math.sqrt(k)

    n_classes = cfg.n_train_classes + cfg.n_test_classes
    z = root.child("prototypes").normal(size=(n_classes, k))
    noise = root.child("noise")
    inv = {m: (0.0 if math.isinf(s) else 1.0 / s) for m, s in cfg.snr.items()}

    text = _normalize(z @ p_text.T + noise.normal(size=(n_classes, d)) * inv["text"])
    labels = np.repeat(np.arange(n_classes), cfg.samples_per_class)
    n = len(labels)
    image = _normalize(z[labels] @ p_img.T + noise.normal(size=(n, d)) * inv["image"])
    clean = np.tanh(z[labels] @ p_eeg.T)[:, :, None]
    eeg = np.broadcast_to(clean, (n, ch, tp)) + noise.normal(size=(n, ch, tp)) * inv["eeg"]

    split = np.where(labels < cfg.n_train_classes, "train", "test").astype("<U5")
    train_idx = np.flatnonzero(split == "train")
    n_val = min(cfg.val_size, len(train_idx) - 1)
    if n_val > 0:
        split[root.child("val").generator.choice(train_idx, size=n_val, replace=False)] = "val"
    return MultimodalDataset(
        eeg=np.ascontiguousarray(eeg), image=image, labels=labels, split=split,
        text_features=text, seed=cfg.seed, config=asdict(cfg),
    )


def zero_shot_disjoint(ds: MultimodalDataset) -> bool:
    train = set(ds.classes("train")) | set(ds.classes("val"))
    return not (train & set(ds.classes("test")))


# ---------------------------------------------------------------- on-disk layout

def _write_f32(path, arr):
    np.asarray(arr, dtype="<f4").tofile(path)


def save_dataset(ds: MultimodalDataset, directory) -> str:
    """Write ``manifest.json`` plus raw little-endian binaries into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "seed": int(ds.seed),
        "config": ds.config,
        "feature_dim": int(ds.image.shape[1]),
        "eeg_shape": [int(ds.eeg.shape[1]), int(ds.eeg.shape[2])],
        "text_features": {"file": "text_features.f32", "dtype": "<f4", "shape": list(ds.text_features.shape)},
        "splits": {},
    }
    _write_f32(os.path.join(directory, "text_features.f32"), ds.text_features)
    for name in SPLITS:
        sub = ds.subset(name)
        entry = {
            "n_samples": len(sub),
            "classes": [int(c) for c in sub.classes()],
            "eeg": {"file": f"{name}_eeg.f32", "dtype": "<f4", "shape": list(sub.eeg.shape)},
            "image": {"file": f"{name}_image.f32", "dtype": "<f4", "shape": list(sub.image.shape)},
            "labels": {"file": f"{name}_labels.i32", "dtype": "<i4", "shape": [len(sub)]},
        }
        _write_f32(os.path.join(directory, entry["eeg"]["file"]), sub.eeg)
        _write_f32(os.path.join(directory, entry["image"]["file"]), sub.image)
        sub.labels.astype("<i4").tofile(os.path.join(directory, entry["labels"]["file"]))
        manifest["splits"][name] = entry
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def _read(directory, spec):
    arr = np.fromfile(os.path.join(directory, spec["file"]), dtype=spec["dtype"])
    if arr.size != int(np.prod(spec["shape"])):
        raise ShapeMismatch(f"{spec['file']}: {arr.size} values, manifest shape {spec['shape']}")
    return arr.reshape(spec["shape"])


def load_dataset(directory) -> MultimodalDataset:
    path = os.path.join(directory, "manifest.json")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no dataset manifest at {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != DATASET_FORMAT:
        raise InvalidConfig(f"{path} is not an hmavd dataset manifest")
    parts = {"eeg": [], "image": [], "labels": [], "split": []}
    for name in SPLITS:
        entry = manifest["splits"].get(name)
        if not entry or entry["n_samples"] == 0:
            continue
        parts["eeg"].append(_read(directory, entry["eeg"]).astype(np.float64))
        parts["image"].append(_read(directory, entry["image"]).astype(np.float64))
        labels = _read(directory, entry["labels"]).astype(np.int64)
        parts["labels"].append(labels)
        parts["split"].append(np.full(len(labels), name, dtype="<U5"))
    return MultimodalDataset(
        eeg=np.concatenate(parts["eeg"]),
        image=np.concatenate(parts["image"]),
        labels=np.concatenate(parts["labels"]),
        split=np.concatenate(parts["split"]),
        text_features=_read(directory, manifest["text_features"]).astype(np.float64),
        seed=manifest.get("seed", 0),
        config=manifest.get("config", {}),
    )


# ---------------------------------------------------------------- preprocessing

@dataclass
class EpochedEeg:
    data: np.ndarray  # (trials, channels, time)
    sfreq: float
    tmin_ms: float = 0.0
    tmax_ms: float = 1000.0

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ShapeMismatch(f"epoched data must be (trials, channels, time), got {self.data.shape}")

    @property
    def n_trials(self):
        return self.data.shape[0]


def _ms_to_samples(ms, sfreq):
    return int(round(ms * sfreq / 1000.0))


def epoch_and_baseline(raw, onsets, sfreq: float, window_ms=1000, baseline_ms=200) -> EpochedEeg:
    """Cut ``window_ms`` after each onset and subtract the pre-onset mean.

    ``raw`` is ``(channels, samples)``; ``onsets`` are sample indices.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ShapeMismatch(f"continuous EEG must be (channels, samples), got {raw.shape}")
    win = _ms_to_samples(window_ms, sfreq)
    base = _ms_to_samples(baseline_ms, sfreq)
    trials = []
    for onset in onsets:
        onset = int(onset)
        if onset - base < 0 or onset + win > raw.shape[1]:
            raise OnsetOutOfBounds(
                f"onset {onset} needs [{onset - base}, {onset + win}) within a {raw.shape[1]}-sample recording"
            )
        baseline = raw[:, onset - base:onset].mean(axis=1, keepdims=True) if base else 0.0
        trials.append(raw[:, onset:onset + win] - baseline)
    data = np.stack(trials) if trials else np.empty((0, raw.shape[0], win))
    return EpochedEeg(data, float(sfreq), 0.0, float(window_ms))


def downsample(e: EpochedEeg, target_hz=250) -> EpochedEeg:
    """Boxcar-average non-overlapping blocks of ``sfreq / target_hz`` samples."""
    ratio = e.sfreq / target_hz
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise NonIntegerFactor(f"{e.sfreq} Hz -> {target_hz} Hz is not an integer decimation")
    if factor == 1:
        return replace(e, data=e.data.copy())
    n = e.data.shape[2] // factor
    blocks = e.data[:, :, : n * factor].reshape(e.data.shape[0], e.data.shape[1], n, factor)
    return replace(e, data=blocks.mean(axis=3), sfreq=float(target_hz))


def noise_covariance(data: np.ndarray, shrinkage=0.1) -> np.ndarray:
    """Trial covariance per timepoint, averaged over time, shrunk toward its diagonal."""
    n_trials, n_ch, n_t = data.shape
    centered = data - data.mean(axis=0, keepdims=True)
    sigma = np.einsum("ict,idt->cd", centered, centered) / ((n_trials - 1) * n_t)
    return (1.0 - shrinkage) * sigma + shrinkage * np.diag(np.diag(sigma))


def mvnn(e: EpochedEeg, shrinkage=0.1) -> EpochedEeg:
    """Whiten every trial by the inverse square root of the noise covariance."""
    if not 0.0 <= shrinkage <= 1.0:
        raise InvalidConfig(f"shrinkage must lie in [0, 1], got {shrinkage}")
    if e.n_trials < 2:
        raise InvalidConfig("multivariate noise normalization needs at least 2 trials")
    sigma = noise_covariance(e.data, shrinkage)
    evals, evecs = np.linalg.eigh(sigma)
    if evals.min() <= 1e-12 * max(evals.max(), 1e-300):
        raise SingularCovariance(f"covariance eigenvalue {evals.min():.3g}; increase shrinkage")
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return replace(e, data=np.einsum("cd,idt->ict", inv_sqrt, e.data))


def average_repeats(e: EpochedEeg, repeats_per_condition: int) -> EpochedEeg:
    r = int(repeats_per_condition)
    if r < 1 or e.n_trials % r:
        raise IndivisibleTrialCount(f"{e.n_trials} trials cannot be split into groups of {r}")
    if r == 1:
        return replace(e, data=e.data.copy())
    n, c, t = e.data.shape
    return replace(e, data=e.data.reshape(n // r, r, c, t).mean(axis=1))


def preprocess(raw, onsets, sfreq, target_hz=250, repeats=1, shrinkage=0.1, window_ms=1000, baseline_ms=200) -> EpochedEeg:
    """Epoch, baseline-correct, decimate, whiten and average repeats, in that order."""
    e = epoch_and_baseline(raw, onsets, sfreq, window_ms, baseline_ms)
    e = downsample(e, target_hz)
    e = mvnn(e, shrinkage)
    return average_repeats(e, repeats)
