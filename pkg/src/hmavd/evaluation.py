"""Zero-shot template matching and top-k accuracy."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .core import l2_normalize
from .exceptions import InvalidConfig, KExceedsClasses, MissingModality, ShapeMismatch


@dataclass
class TemplateBank:
    class_ids: np.ndarray
    templates: np.ndarray
    w_text: float = 0.5

    def __len__(self):
        return len(self.class_ids)


@dataclass
class EvalReport:
    accuracy: dict
    n_samples: int
    per_class_hits: dict = field(default_factory=dict)
    per_class_counts: dict = field(default_factory=dict)
    confusion: dict = field(default_factory=dict)

    @property
    def top1(self):
        return self.accuracy.get(1)

    @property
    def top5(self):
        return self.accuracy.get(5)

    def to_dict(self):
        return {
            "top1": self.top1,
            "top5": self.top5,
            "accuracy": {str(k): v for k, v in sorted(self.accuracy.items())},
            "n_samples": self.n_samples,
            "per_class_hits": {str(k): v for k, v in self.per_class_hits.items()},
            "per_class_counts": {str(k): v for k, v in self.per_class_counts.items()},
            "confusion": {str(k): v for k, v in self.confusion.items()},
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def combine_templates(image_emb, text_emb, w_text: float) -> np.ndarray:
    if not 0.0 <= w_text <= 1.0:
        raise InvalidConfig(f"w_text must lie in [0, 1], got {w_text}")
    if w_text == 0.0:
        return l2_normalize(image_emb)
    if text_emb is None:
        raise MissingModality("text templates requested (w_text > 0) but no text features given")
    if w_text == 1.0:
        return l2_normalize(text_emb)
    if image_emb is None:
        raise MissingModality("image templates required for w_text < 1")
    return l2_normalize((1.0 - w_text) * l2_normalize(image_emb) + w_text * l2_normalize(text_emb))


def build_templates(class_ids, image_features, text_features, model=None, w_text=0.5) -> TemplateBank:
    """One template per unseen class from its image and text features.

    With a model, features pass through its trained adapters first. Models
    trained without text fall back to pure image templates.
    """
    if image_features is None and w_text < 1.0:
        raise MissingModality("image features are required unless w_text == 1")
    if model is not None:
        if not model.config.use_text:
            w_text = 0.0
        img = None if image_features is None else model.embed_image(image_features)
        txt = None if (text_features is None or w_text == 0.0) else model.embed_text(text_features)
    else:
        img, txt = image_features, text_features
    return TemplateBank(np.asarray(class_ids), combine_templates(img, txt, w_text), w_text)


def rank_classes(eeg_embeddings, bank: TemplateBank) -> np.ndarray:
    """Class positions ordered by descending cosine; ties go to the lower index."""
    emb = l2_normalize(eeg_embeddings)
    if emb.shape[1] != bank.templates.shape[1]:
        raise ShapeMismatch(f"embedding dim {emb.shape[1]} vs template dim {bank.templates.shape[1]}")
    scores = emb @ bank.templates.T
    return np.argsort(-scores, axis=1, kind="stable")


def topk_accuracy(eeg_embeddings, labels, bank: TemplateBank, k=5, ks=None) -> EvalReport:
    """Fraction of samples whose true class ranks within the top ``k`` templates.

    Reports every k in ``ks`` (default ``{1, k}``).
    """
    ks = sorted(set(ks) if ks is not None else {1, k})
    n_classes = len(bank)
    for kk in ks:
        if kk > n_classes or kk < 1:
            raise KExceedsClasses(f"k={kk} but the bank has {n_classes} classes")
    labels = np.asarray(labels)
    lookup = {int(c): i for i, c in enumerate(bank.class_ids)}
    try:
        true_pos = np.array([lookup[int(y)] for y in labels])
    except KeyError as exc:
        raise InvalidConfig(f"label {exc.args[0]} has no template in the bank") from None
    ranking = rank_classes(eeg_embeddings, bank)
    rank_of_true = np.argmax(ranking == true_pos[:, None], axis=1)
    accuracy = {kk: float(np.mean(rank_of_true < kk)) for kk in ks}
    hits, counts, confusion = {}, {}, {}
    top1 = bank.class_ids[ranking[:, 0]]
    for pos, c in enumerate(bank.class_ids):
        mask = true_pos == pos
        counts[int(c)] = int(mask.sum())
        hits[int(c)] = int(np.sum(rank_of_true[mask] == 0))
        wrong = top1[mask & (rank_of_true != 0)]
        if len(wrong):
            vals, cnt = np.unique(wrong, return_counts=True)
            confusion[int(c)] = int(vals[np.argmax(cnt)])
    return EvalReport(accuracy, len(labels), hits, counts, confusion)


def write_rankings(path, eeg_embeddings, labels, bank: TemplateBank, top=5):
    ranking = rank_classes(eeg_embeddings, bank)[:, :top]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "label"] + [f"rank{i + 1}" for i in range(ranking.shape[1])])
        for i, (y, row) in enumerate(zip(labels, ranking)):
            w.writerow([i, int(y)] + [int(bank.class_ids[j]) for j in row])
