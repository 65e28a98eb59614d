"""Modality consistency dynamic balance.

Measures how much of the EEG anchors' similarity mass each target modality
captures, turns that into an imbalance rate, and down-weights the gradients
of a dominating modality with ``kappa = 1 - tanh(gamma * (rho - 1))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import SHARED, Modality, ParamStore
from .exceptions import InvalidConfig, ShapeMismatch, UnknownModalityAttribution

JOINT = "joint_across_modalities"
PER_ROW = "per_row_literal"


@dataclass
class BalanceConfig:
    gamma: float = 0.7
    epsilon: float = 1e-8
    tau: float = 0.07
    mode: str = JOINT
    enabled: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidConfig(f"balance.gamma must be positive, got {self.gamma}")
        if not self.epsilon > 0:
            raise InvalidConfig(f"balance.epsilon must be positive, got {self.epsilon}")
        if not self.tau > 0:
            raise InvalidConfig(f"balance.tau must be positive, got {self.tau}")
        if self.mode not in (JOINT, PER_ROW):
            raise InvalidConfig(f"balance.mode must be {JOINT!r} or {PER_ROW!r}, got {self.mode!r}")


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    pair: tuple
    normalization_mode: str


@dataclass
class ContributionVector:
    values: np.ndarray
    modality: Modality


@dataclass
class ModalityWeights:
    kappa: dict = field(default_factory=lambda: {m: 1.0 for m in Modality})

    def __post_init__(self):
        self.kappa = {Modality(m): float(k) for m, k in self.kappa.items()}
        for m in Modality:
            self.kappa.setdefault(m, 1.0)
        if self.kappa[Modality.EEG] != 1.0:
            raise InvalidConfig("the EEG anchor weight is fixed at 1")
        for m, k in self.kappa.items():
            if not 0.0 < k <= 1.0:
                raise InvalidConfig(f"kappa[{m.value}]={k} outside (0, 1]")

    def __getitem__(self, m):
        return self.kappa[Modality(m)]

    @classmethod
    def ones(cls):
        return cls()


def _softmax(logits, axis):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_modal_similarity(f_eeg, targets: dict, cfg: BalanceConfig) -> dict:
    """Softmax-normalized EEG-to-target similarity matrices.

    In joint mode each EEG row's softmax runs over the candidates of every
    target modality at once, so the modalities compete for the same mass.
    """
    f_eeg = np.asarray(f_eeg, dtype=np.float64)
    mods = [Modality(m) for m in targets]
    mats = [np.asarray(targets[m], dtype=np.float64) for m in targets]
    for m, t in zip(mods, mats):
        if t.shape != f_eeg.shape:
            raise ShapeMismatch(f"{m.value} features {t.shape} vs eeg {f_eeg.shape}")
    logits = [f_eeg @ t.T / cfg.tau for t in mats]
    if cfg.mode == JOINT:
        joint = _softmax(np.concatenate(logits, axis=1), axis=1)
        probs = np.split(joint, len(mats), axis=1)
    else:
        probs = [_softmax(lg, axis=1) for lg in logits]
    return {m: SimilarityMatrix(p, (Modality.EEG, m), cfg.mode) for m, p in zip(mods, probs)}


def contribution_vector(s) -> ContributionVector:
    values = s.values if isinstance(s, SimilarityMatrix) else np.asarray(s, dtype=np.float64)
    modality = s.pair[1] if isinstance(s, SimilarityMatrix) else None
    return ContributionVector(values.sum(axis=0), modality)


def imbalance_rate(contribs: dict, cfg: BalanceConfig) -> dict:
    """rho[m] = |s_m|_1 / (sum of the other modalities' |s_n|_1 + eps)."""
    l1 = {Modality(m): float(np.abs(c.values if isinstance(c, ContributionVector) else c).sum()) for m, c in contribs.items()}
    return {m: v / (sum(l1[n] for n in l1 if n != m) + cfg.epsilon) for m, v in l1.items()}


def modality_weight(rho: float, cfg: BalanceConfig) -> float:
    if rho > 1.0:
        return 1.0 - math.tanh(cfg.gamma * (rho - 1.0))
    return 1.0


def balance(f_eeg, targets: dict, cfg: BalanceConfig):
    """Run the whole pipeline on one batch; returns ``(rho, ModalityWeights)``."""
    sims = cross_modal_similarity(f_eeg, targets, cfg)
    rho = imbalance_rate({m: contribution_vector(s) for m, s in sims.items()}, cfg)
    kappa = {m: modality_weight(r, cfg) for m, r in rho.items()}
    # tanh saturates to exactly 1.0 in floating point for huge rho; keep kappa > 0.
    kappa = {m: (k if k > 0.0 else np.nextafter(0.0, 1.0)) for m, k in kappa.items()}
    return rho, ModalityWeights(kappa)


def modulate_gradients(store: ParamStore, weights: ModalityWeights):
    """Scale every gradient accumulator in place by its modality's kappa."""
    for key, p in store:
        if p.modality == SHARED:
            continue
        try:
            k = weights[p.modality]
        except ValueError:
            raise UnknownModalityAttribution(f"{key} is attributed to unknown modality {p.modality!r}") from None
        if k != 1.0:
            p.grad *= k
