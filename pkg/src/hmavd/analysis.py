"""Gradient-balance diagnostics computed from a training metrics CSV."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import LengthMismatch, MalformedCsv

MODS = ("eeg", "image", "text")
TARGETS = ("image", "text")
REQUIRED = ["epoch", "step"] + [f"grad_pre_{m}" for m in MODS] + [f"grad_post_{m}" for m in MODS] + [
    f"rho_{m}" for m in TARGETS
]


@dataclass
class TrajectorySummary:
    n_steps: int
    epochs: list
    grad_pre_by_epoch: dict
    grad_post_by_epoch: dict
    imbalance: dict  # |rho - 1| per step
    dominance: list  # max / min pre-modulation norm over active modalities, per step
    mean_grad_pre: dict
    mean_grad_post: dict
    mean_imbalance: dict
    mean_dominance: float
    active: list

    def to_dict(self):
        return _json_safe(asdict(self))


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _read_rows(source):
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, newline="") as fh:
            text = fh.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        raise MalformedCsv(f"cannot read metrics from {source!r}")
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in REQUIRED if c not in (reader.fieldnames or [])]
    if missing:
        raise MalformedCsv(f"metrics CSV lacks columns {missing}")
    rows = list(reader)
    cols = {}
    try:
        for c in REQUIRED:
            cols[c] = np.array([float(r[c]) if r[c] not in ("", None) else math.nan for r in rows])
    except (TypeError, ValueError) as exc:
        raise MalformedCsv(f"unparsable value in metrics CSV: {exc}") from None
    return cols


def summarize(source) -> TrajectorySummary:
    """Per-epoch gradient norms, per-step imbalance and dominance ratios.

    ``source`` is a CSV path or the CSV text itself.
    """
    cols = _read_rows(source)
    n = len(cols["epoch"])
    epochs = sorted({int(e) for e in cols["epoch"]})
    epoch_idx = cols["epoch"].astype(int) if n else np.array([], dtype=int)
    pre = {m: cols[f"grad_pre_{m}"] for m in MODS}
    post = {m: cols[f"grad_post_{m}"] for m in MODS}
    active = [m for m in MODS if n and np.any(pre[m] > 0)]

    def by_epoch(series):
        return {m: [float(np.mean(series[m][epoch_idx == e])) for e in epochs] for m in MODS}

    imbalance = {m: [float(v) for v in np.abs(cols[f"rho_{m}"] - 1.0)] for m in TARGETS}
    dominance = []
    for i in range(n):
        vals = [pre[m][i] for m in active]
        if not vals:
            dominance.append(1.0)
            continue
        lo = min(vals)
        dominance.append(max(vals) / lo if lo > 0 else math.inf)

    def nanmean(xs):
        xs = np.asarray(xs, dtype=float)
        xs = xs[~np.isnan(xs)]
        return float(np.mean(xs)) if xs.size else math.nan

    return TrajectorySummary(
        n_steps=n,
        epochs=epochs,
        grad_pre_by_epoch=by_epoch(pre),
        grad_post_by_epoch=by_epoch(post),
        imbalance=imbalance,
        dominance=dominance,
        mean_grad_pre={m: nanmean(pre[m]) for m in MODS},
        mean_grad_post={m: nanmean(post[m]) for m in MODS},
        mean_imbalance={m: nanmean(imbalance[m]) for m in TARGETS},
        mean_dominance=nanmean(dominance),
        active=active,
    )


def compare_runs(reference: TrajectorySummary, candidate: TrajectorySummary) -> dict:
    """Deltas ``candidate - reference``; e.g. reference unmodulated, candidate modulated."""
    if reference.n_steps != candidate.n_steps:
        raise LengthMismatch(f"runs have {reference.n_steps} and {candidate.n_steps} steps")
    out = {
        "n_steps": reference.n_steps,
        "delta_mean_grad_pre": {m: candidate.mean_grad_pre[m] - reference.mean_grad_pre[m] for m in MODS},
        "delta_mean_grad_post": {m: candidate.mean_grad_post[m] - reference.mean_grad_post[m] for m in MODS},
        "delta_mean_imbalance": {m: candidate.mean_imbalance[m] - reference.mean_imbalance[m] for m in TARGETS},
        "delta_mean_dominance": candidate.mean_dominance - reference.mean_dominance,
        "dominance_decreased": {
            m: bool(candidate.mean_imbalance[m] < reference.mean_imbalance[m]) for m in TARGETS
        },
    }
    return _json_safe(out)


def write_json(obj, path):
    if isinstance(obj, TrajectorySummary):
        obj = obj.to_dict()
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
