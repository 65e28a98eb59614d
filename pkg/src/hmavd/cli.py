"""``hmavd`` command line: gen-data, train, eval, ablate, analyze.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import analysis
from .config import load_config, merge, parse_assignment, parse_toggle
from .data import generate_synthetic, load_dataset, save_dataset
from .exceptions import DimensionMismatch, HmavdError, InvalidConfig, KExceedsClasses, NonFiniteLoss
from .nn import load_checkpoint, save_checkpoint
from .trainer import ablation_csv, evaluate_model, json_safe, run_ablation, train, write_summary

log = logging.getLogger("hmavd")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


def _overrides(args) -> dict:
    out = {}
    for text in getattr(args, "set", None) or []:
        out = merge(out, parse_assignment(text))
    for text in getattr(args, "toggle", None) or []:
        out = merge(out, parse_toggle(text))
    if getattr(args, "dataset", None):
        out["dataset_dir"] = args.dataset
    if getattr(args, "out", None):
        out["output_dir"] = args.out
    return out


def _config(args):
    return load_config(args.config, _overrides(args))


def _require_dataset(path):
    if not os.path.isfile(os.path.join(path, "manifest.json")):
        raise UsageError(f"dataset not found: {path} (run `hmavd gen-data` first)")
    return load_dataset(path)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.dataset_dir
    ds = generate_synthetic(cfg.data)
    save_dataset(ds, out)
    print(f"wrote dataset to {out} (seed {cfg.data.seed})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _require_dataset(cfg.dataset_dir)
    report = train(ds, experiment=cfg.experiment())
    out = cfg.resolve_output("train")
    os.makedirs(out, exist_ok=True)
    report.write_metrics_csv(os.path.join(out, "metrics.csv"))
    portable = {k: v for k, v in cfg.to_dict().items() if k not in ("dataset_dir", "output_dir")}
    save_checkpoint(os.path.join(out, "checkpoint.json"), report.model, report.checkpoint, extra_config=portable)
    ev = evaluate_model(report.best_model(), ds, "test", cfg.eval.w_text, ks=cfg.eval.k, clamp_k=True) if len(ds.subset("test")) else None
    write_summary(report, os.path.join(out, "summary.json"), extra={
        "run_config": cfg.to_dict(),
        "toggles": cfg.train.toggles(),
        "test": None if ev is None else ev.to_dict(),
    })
    print(f"trained {len(report.epochs)} epochs, best epoch {report.best_epoch}; outputs in {out}")
    return EXIT_OK


def _parse_ks(text):
    try:
        return [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise UsageError(f"--k expects comma-separated integers, got {text!r}") from None


def cmd_eval(args) -> int:
    if not os.path.isfile(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    model, _ = load_checkpoint(args.checkpoint)
    ds = _require_dataset(args.dataset)
    c = model.config
    if ds.image.shape[1] != c.embed_dim:
        raise DimensionMismatch(f"checkpoint embed_dim={c.embed_dim} but dataset feature_dim={ds.image.shape[1]}")
    model.check_inputs(eeg=ds.eeg[:1])
    ks = _parse_ks(args.k)
    report = evaluate_model(model, ds, args.split, args.w_text, ks=ks)
    doc = report.to_dict()
    text = json.dumps(json_safe(doc), indent=2)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    if args.rankings:
        from .evaluation import build_templates, write_rankings
        sub = ds.subset(args.split)
        classes, img, txt = ds.templates(args.split)
        bank = build_templates(classes, img, txt, model, args.w_text)
        write_rankings(args.rankings, model.embed_eeg(sub.eeg), sub.labels, bank)
    print(text)
    return EXIT_OK


def _parse_list(text, conv, flag):
    try:
        return [conv(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects a comma-separated list, got {text!r}") from None


def _ratio(text):
    t, i = text.split("/")
    return int(t), int(i)


def cmd_ablate(args) -> int:
    cfg = _config(args)
    ds = _require_dataset(cfg.dataset_dir)
    base = cfg.experiment()
    sweeps = [("", base)]
    if args.gamma:
        sweeps = [(f"_gamma-{g}", replace(base, balance=replace(base.balance, gamma=g)))
                  for g in _parse_list(args.gamma, float, "--gamma")]
    elif args.ratios:
        sweeps = [(f"_r-{rt}-{ri}", replace(base, model=replace(base.model, r_text=rt, r_image=ri)))
                  for rt, ri in _parse_list(args.ratios, _ratio, "--ratios")]
    tables = [(suffix, ablation_csv(run_ablation(ds, exp, cfg.eval.w_text))) for suffix, exp in sweeps]
    out = cfg.resolve_output("ablate")
    os.makedirs(out, exist_ok=True)
    for suffix, table in tables:
        path = os.path.join(out, f"ablation{suffix}.csv")
        with open(path, "w") as fh:
            fh.write(table)
        print(f"# {path}\n{table}", end="")
    return EXIT_OK


def cmd_analyze(args) -> int:
    summary = analysis.summarize(args.metrics)
    if args.compare:
        doc = analysis.compare_runs(summary, analysis.summarize(args.compare))
    else:
        doc = summary.to_dict()
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmavd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", "-c", help="JSON configuration document")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    with_config(g)
    g.add_argument("--out", help="dataset directory (default: dataset_dir from config)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model")
    with_config(t)
    t.add_argument("--dataset", help="dataset directory")
    t.add_argument("--out", help="run directory")
    t.add_argument("--toggle", action="append", metavar="NAME=on|off", help="text, adapter, mcdb or spr")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="zero-shot top-k accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--k", default="1,5", help="comma-separated k values")
    e.add_argument("--w-text", type=float, default=0.5, dest="w_text")
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="write the report JSON here")
    e.add_argument("--rankings", help="optional per-sample ranking CSV")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="module ablation table")
    with_config(a)
    a.add_argument("--dataset", help="dataset directory")
    a.add_argument("--out", help="output directory")
    sweep = a.add_mutually_exclusive_group()
    sweep.add_argument("--gamma", help="comma-separated sensitivity values, one table each")
    sweep.add_argument("--ratios", help="comma-separated text/image compression ratios, e.g. 16/8,8/8")
    a.set_defaults(func=cmd_ablate)

    z = sub.add_parser("analyze", help="gradient-balance summary of a metrics CSV")
    z.add_argument("metrics")
    z.add_argument("--compare", help="second metrics CSV; report deltas (second minus first)")
    z.add_argument("--out")
    z.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidConfig, DimensionMismatch, KExceedsClasses) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (HmavdError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
