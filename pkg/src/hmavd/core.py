"""Shared numeric types, seeded randomness and embedding-space primitives."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeMismatch, UnknownModalityAttribution, ZeroRowNorm

ZERO_NORM = 1e-12


class Modality(str, enum.Enum):
    """The three modalities. EEG is the anchor every other modality aligns to."""

    EEG = "eeg"
    IMAGE = "image"
    TEXT = "text"

    @classmethod
    def anchor(cls) -> "Modality":
        return cls.EEG

    @classmethod
    def targets(cls) -> tuple["Modality", "Modality"]:
        return (cls.IMAGE, cls.TEXT)


# Parameters attributed to SHARED are never rescaled by modality weights.
SHARED = "shared"
ATTRIBUTIONS = (Modality.EEG.value, Modality.IMAGE.value, Modality.TEXT.value, SHARED)


def as_matrix(x, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64) if not isinstance(x, np.ndarray) else x
    if x.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D (batch, dim), got shape {x.shape}")
    return x


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Scale every row of ``x`` to unit Euclidean norm."""
    x = as_matrix(x)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms < ZERO_NORM):
        bad = int(np.argmin(norms[:, 0]))
        raise ZeroRowNorm(f"row {bad} has norm {float(norms[bad, 0]):.3g}")
    return x / norms


def cosine_similarity_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine between matched rows of ``a`` and ``b``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    cos = np.sum(l2_normalize(a) * l2_normalize(b), axis=1)
    return np.clip(cos, -1.0, 1.0)


class RngStream:
    """Seeded random stream owned by exactly one consumer.

    Child streams are derived by name, so adding a new consumer never
    perturbs the draws seen by existing ones.
    """

    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed)
        self._key = tuple(_key)
        ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=self._key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, name: str) -> "RngStream":
        # Stable across processes: no reliance on hash().
        raw = name.encode("utf-8")
        return RngStream(self.seed, self._key + (int.from_bytes(raw, "little"), len(raw)))

    def normal(self, size=None, scale=1.0):
        return self.generator.normal(0.0, scale, size=size)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size=size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, replace=False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    modality: str


@dataclass
class ParamStore:
    """Named parameters keyed by ``(component, name)`` with gradient accumulators."""

    entries: dict = field(default_factory=dict)

    def add(self, component: str, name: str, value, modality: str) -> Param:
        if modality not in ATTRIBUTIONS:
            raise UnknownModalityAttribution(modality)
        value = np.array(value, dtype=np.float64)
        p = Param(value, np.zeros_like(value), modality)
        self.entries[(component, name)] = p
        return p

    def __getitem__(self, key) -> Param:
        return self.entries[key]

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __iter__(self):
        return iter(self.entries.items())

    def __len__(self):
        return len(self.entries)

    def keys(self):
        return list(self.entries)

    def zero_grad(self):
        for p in self.entries.values():
            p.grad[...] = 0.0

    def by_modality(self, modality: str):
        return [(k, p) for k, p in self.entries.items() if p.modality == modality]

    def astype(self, dtype) -> "ParamStore":
        for p in self.entries.values():
            p.value = p.value.astype(dtype)
            p.grad = p.grad.astype(dtype)
        return self

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: Param(p.value.copy(), p.grad.copy(), p.modality) for k, p in self.entries.items()}
        )

    def values(self) -> dict:
        return {k: p.value.copy() for k, p in self.entries.items()}

    def load_values(self, values: dict):
        for k, v in values.items():
            if k not in self.entries:
                raise KeyError(f"unknown parameter {k}")
            if self.entries[k].value.shape != np.shape(v):
                raise ShapeMismatch(f"{k}: {self.entries[k].value.shape} vs {np.shape(v)}")
            self.entries[k].value = np.array(v, dtype=self.entries[k].value.dtype)
