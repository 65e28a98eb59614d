"""Tri-modal alignment objective.

The alignment loss averages four InfoNCE terms (EEG<->image, EEG<->text in
both directions) and an image-text cosine term. A text-adapter consistency
term is added on top with weight ``lambda_r``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .exceptions import InvalidConfig, ShapeMismatch

TERMS = ("ce_eeg_img", "ce_img_eeg", "ce_eeg_text", "ce_text_eeg", "cos_img_text", "adapter_consistency")


@dataclass
class LossConfig:
    tau: float = 0.07
    lambda_r: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidConfig(f"loss.tau must be positive, got {self.tau}")
        if not self.lambda_r >= 0:
            raise InvalidConfig(f"loss.lambda_r must be non-negative, got {self.lambda_r}")


@dataclass
class LossReport:
    ce_eeg_img: float
    ce_img_eeg: float
    ce_eeg_text: float
    ce_text_eeg: float
    cos_img_text: float
    adapter_consistency: float
    total: float

    def as_dict(self):
        return asdict(self)


def _arr(x):
    return np.asarray(x, dtype=np.float64)


def info_nce(anchor, target, tau: float) -> float:
    """Contrastive cross-entropy where row i of ``target`` is the positive for row i of ``anchor``."""
    return float(ag.info_nce(_arr(anchor), _arr(target), tau).value)


def cosine_alignment_loss(img, text) -> float:
    return float(ag.cosine_loss(_arr(img), _arr(text)).value)


def adapter_consistency_loss(adapted, original) -> float:
    """``1 - mean cos(adapted_i, original_i)``; zero when the adapter is the identity."""
    return float(ag.cosine_loss(_arr(adapted), _arr(original)).value)


def total_loss_graph(feats: dict, cfg: LossConfig):
    """Build the scalar objective from a model's forward-pass features.

    ``feats`` needs ``eeg`` and ``image``. With ``text`` present the full
    five-term average is used, otherwise only the two EEG-image terms.
    ``text_adapted``/``text_raw`` enable the consistency term.
    Returns ``(total, {term: Tensor or None})``.
    """
    e, i = feats["eeg"], feats["image"]
    if e.shape != i.shape:
        raise ShapeMismatch(f"eeg {e.shape} vs image {i.shape}")
    terms = dict.fromkeys(TERMS)
    terms["ce_eeg_img"] = ag.info_nce(e, i, cfg.tau)
    terms["ce_img_eeg"] = ag.info_nce(i, e, cfg.tau)
    t = feats.get("text")
    if t is not None:
        terms["ce_eeg_text"] = ag.info_nce(e, t, cfg.tau)
        terms["ce_text_eeg"] = ag.info_nce(t, e, cfg.tau)
        terms["cos_img_text"] = ag.cosine_loss(i, t)
        parts = [(0.2, terms[k]) for k in TERMS[:5]]
    else:
        parts = [(0.5, terms["ce_eeg_img"]), (0.5, terms["ce_img_eeg"])]
    if feats.get("text_adapted") is not None and cfg.lambda_r > 0:
        terms["adapter_consistency"] = ag.cosine_loss(feats["text_adapted"], feats["text_raw"])
        parts.append((cfg.lambda_r, terms["adapter_consistency"]))
    return ag.weighted_sum(parts), terms


def report_from_terms(total, terms) -> LossReport:
    vals = {k: (0.0 if v is None else float(v.value)) for k, v in terms.items()}
    return LossReport(**vals, total=float(total.value))


def total_loss(f_eeg, f_img, f_text, f_text_raw, cfg: LossConfig, f_text_adapted=None) -> LossReport:
    """Evaluate the full objective on already-normalized features.

    The consistency term compares ``f_text_adapted`` (defaulting to
    ``f_text``) with the pre-adapter ``f_text_raw``.
    """
    f_eeg, f_img, f_text, f_text_raw = map(_arr, (f_eeg, f_img, f_text, f_text_raw))
    shapes = {f_eeg.shape, f_img.shape, f_text.shape, f_text_raw.shape}
    if len(shapes) != 1:
        raise ShapeMismatch(f"feature shapes differ: {sorted(shapes)}")
    feats = {
        "eeg": ag.constant(f_eeg),
        "image": ag.constant(f_img),
        "text": ag.constant(f_text),
        "text_adapted": ag.constant(f_text if f_text_adapted is None else _arr(f_text_adapted)),
        "text_raw": ag.constant(f_text_raw),
    }
    total, terms = total_loss_graph(feats, cfg)
    if terms["adapter_consistency"] is None:
        terms["adapter_consistency"] = ag.cosine_loss(feats["text_adapted"], feats["text_raw"])
    return report_from_terms(total, terms)
