"""Command-line entry point: train, evaluate, ablate, analyze."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import analyze as analyze_mod
from . import checkpoint
from .config import ConfigError, RunConfig, build_config, parse_fraction, write_config
from .data import load_dataset
from .eval import evaluate_model, export_gate_weights, pearson_case_study
from .model import VARIANTS
from .propagation import FUSION_SCHEMES
from .experts import HEAD_VARIANTS
from .train import build_model, run_training, write_report_json

log = logging.getLogger("pkef")


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text):
    return [parse_fraction(x) for x in text.split(",") if x.strip()]


def _str_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--behaviors", type=_str_list, help="behavior names, upstream first")
    p.add_argument("--seed", type=int)
    p.add_argument("--fusion", choices=[s for s in FUSION_SCHEMES if s != "none"])
    p.add_argument("--head", choices=list(HEAD_VARIANTS))
    p.add_argument("--variant", choices=list(VARIANTS))
    p.add_argument("--layers", type=_int_list, metavar="L1,L2,...")
    p.add_argument("--lambda", dest="lambdas", type=_float_list, metavar="W1,W2,...")
    p.add_argument("--gamma", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--tower", choices=["sum", "linear"])


def _config_from_args(args) -> RunConfig:
    overrides = {
        key: getattr(args, key)
        for key in (
            "data",
            "out",
            "behaviors",
            "seed",
            "fusion",
            "head",
            "variant",
            "layers",
            "lambdas",
            "gamma",
            "mu",
            "lr",
            "epochs",
            "batch",
            "k",
            "dim",
            "patience",
            "eval_every",
            "tower",
        )
        if hasattr(args, key)
    }
    return build_config(args.config, overrides)


def _setup_logging(out_dir: str | None):
    handlers = [logging.StreamHandler(sys.stderr)]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(out_dir, "run.log"), mode="a"))
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.data:
        raise ConfigError("train needs --data (or data= in the config file)")
    _setup_logging(cfg.out)
    report = run_training(cfg)
    print(
        f"final: HR@{report.k} {report.hr:.4f}  NDCG@{report.k} {report.ndcg:.4f}  "
        f"users {report.num_users} (cold {report.cold_users})"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.data:
        raise ConfigError("evaluate needs --data (or data= in the config file)")
    _setup_logging(None)
    ds = load_dataset(cfg.data, cfg.behaviors)
    model = build_model(ds, cfg)
    checkpoint.load_model(args.checkpoint, model)
    report = evaluate_model(model, ds, cfg.k)
    print(
        f"HR@{report.k} {report.hr:.6f}  NDCG@{report.k} {report.ndcg:.6f}  "
        f"users {report.num_users} (cold {report.cold_users})"
    )
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        write_report_json(report, os.path.join(cfg.out, "evaluation.json"))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.data:
        raise ConfigError("ablate needs --data (or data= in the config file)")
    _setup_logging(cfg.out)
    ds = load_dataset(cfg.data, cfg.behaviors)
    runs = []
    for variant in args.variants:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown ablation variant {variant!r}")
        fusions = args.fusions or [cfg.fusion]
        heads = args.heads or [cfg.head]
        if variant in ("base", "no-pkf"):
            fusions = ["none"]  # no parallel stream, so no fusion
        if variant in ("base", "no-pme"):
            heads = ["bilinear"]  # these variants replace the head
        for fusion in fusions:
            for head in heads:
                if (variant, fusion, head) not in runs:
                    runs.append((variant, fusion, head))

    results = []
    for variant, fusion, head in runs:
        run_cfg = RunConfig(**cfg.__dict__)
        run_cfg.variant = variant
        run_cfg.fusion = fusion
        run_cfg.head = head
        tag = f"{variant}_{fusion}_{head}"
        run_cfg.out = os.path.join(cfg.out, tag)
        report = run_training(run_cfg, ds=ds)
        results.append(
            {
                "variant": variant,
                "fusion": fusion,
                "head": head,
                "hr": report.hr,
                "ndcg": report.ndcg,
            }
        )
        log.info("ablation %s: hr %.4f ndcg %.4f", tag, report.hr, report.ndcg)

    header = f"{'variant':<8} {'fusion':<11} {'head':<9} {'HR@' + str(cfg.k):<8} NDCG@{cfg.k}"
    print(header)
    for row in results:
        print(
            f"{row['variant']:<8} {row['fusion']:<11} {row['head']:<9} "
            f"{row['hr']:<8.4f} {row['ndcg']:.4f}"
        )
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "ablation.json"), "w") as fh:
        json.dump(results, fh, indent=2)
        fh.write("\n")
    return 0


def cmd_analyze(args) -> int:
    _setup_logging(None)
    if args.analysis == "decoupling":
        report = analyze_mod.decoupling_report(args.seed or 0)
        print(
            "expert-path cross gradient (projection head): "
            f"{report['pme']['max_cross_gradient']:.3e} "
            f"(own-task gradient {report['pme']['max_own_gradient']:.3e})"
        )
        mags = report["coupled"]["task_gradient_magnitudes"]
        print(
            f"coupled-head conflict instance: per-task gradients {mags[0]:.3e} / "
            f"{mags[1]:.3e}, dot {report['coupled']['gradient_dot']:.3e} "
            f"({'opposing' if report['coupled']['opposing'] else 'aligned'})"
        )
        payload = report
        out_name = "decoupling.json"
    else:
        cfg = _config_from_args(args)
        if not cfg.data:
            raise ConfigError("this analysis needs --data")
        if not args.checkpoint:
            raise ConfigError("this analysis needs --checkpoint")
        ds = load_dataset(cfg.data, cfg.behaviors)
        model = build_model(ds, cfg)
        checkpoint.load_model(args.checkpoint, model)
        if args.analysis == "case-study":
            payload = pearson_case_study(model, ds, cfg.k)
            for group in payload["groups"]:
                rng_lo, rng_hi = group["corr_range"]
                hr = "-" if group["hr"] is None else f"{group['hr']:.4f}"
                print(
                    f"bucket {group['bucket']} corr [{rng_lo:+.3f},{rng_hi:+.3f}] "
                    f"users {group['num_users']:>5} mean-inter "
                    f"{group['mean_interactions']:.1f} HR@{cfg.k} {hr}"
                )
            out_name = "case_study.json"
        elif args.analysis == "gates":
            weights = export_gate_weights(model, ds)
            payload = {
                "head": model.head_variant,
                "mean_gate_weights": weights.tolist(),
                "experts": list(range(len(weights))),
            }
            print("mean target-behavior gate weights:", np.array2string(weights, precision=4))
            out_name = "gates.json"
        else:
            raise ConfigError(f"unknown analysis {args.analysis!r}")
    out_dir = getattr(args, "out", None)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, out_name), "w") as fh:
            json.dump(payload, fh, indent=2, default=float)
            fh.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pkef",
        description="Multi-behavior recommendation with parallel knowledge "
        "fusion and a projection-disentangling multi-expert head.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write run artifacts")
    _add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a saved checkpoint")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="train and compare model variants")
    _add_common(p_abl)
    p_abl.add_argument(
        "--variants",
        type=_str_list,
        default=["base", "no-pkf", "no-pme", "full"],
        help="comma list from {base,no-pkf,no-pme,full}",
    )
    p_abl.add_argument("--fusions", type=_str_list, help="fusion schemes to cross")
    p_abl.add_argument("--heads", type=_str_list, help="head variants to cross")
    p_abl.set_defaults(func=cmd_ablate)

    p_ana = sub.add_parser("analyze", help="decoupling probe, case study, gate export")
    _add_common(p_ana)
    p_ana.add_argument("--analysis", choices=["decoupling", "case-study", "gates"], required=True)
    p_ana.add_argument("--checkpoint")
    p_ana.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, checkpoint.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
