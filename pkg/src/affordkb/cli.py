"""Command line: synth, train, infer and eval.

Exit codes: 0 success, 1 usage/config error, 2 data or parse error,
3 model or numerical error. Errors print one line starting with "error:".
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .datasets import SynthConfig, load_candidates, load_cloud, load_manifest, synth_generate
from .errors import ConfigError, DataError, ModelError, NoFeasibleRegion
from .evaluation import (
    ablate_environment,
    dumps_report,
    evaluate,
    grasp_for,
    holdout_split,
    observe_grasps,
    point_metric,
    posterior_stats,
    posterior_stats_json,
    zero_shot_eval,
)
from .pipeline import DEFAULT_SEED, RunConfig, load_model, save_model, train_model, training_split

log = logging.getLogger("affordkb")

SEED_ENV = "AFFORD_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _depth(value: str):
    if value.lower() in ("none", "unlimited"):
        return None
    return int(value)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="affordkb", description="Grasp-action affordance reasoning and evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int)
    s.add_argument("--per-class", type=int, default=20)
    s.add_argument("--dim", type=int, default=8)
    s.add_argument("--separation", type=float, default=2.0)
    s.add_argument("--env-p", type=float, default=0.95, help="probability of the canonical environment")
    s.add_argument("--points", type=int, default=400, help="surface points per object")

    t = sub.add_parser("train", help="fit classifiers, build the KB, grow the tree")
    t.add_argument("--manifest", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--seed", type=int)
    t.add_argument("--all", action="store_true", help="train on every record instead of the training split")
    t.add_argument("--bins", type=int, default=RunConfig.bins)
    t.add_argument("--theta", type=float, default=RunConfig.theta)
    t.add_argument("--tau", type=float, default=RunConfig.tau)
    t.add_argument("--epsilon", type=float, default=RunConfig.epsilon)
    t.add_argument("--train-fraction", type=float, default=RunConfig.train_fraction)
    t.add_argument("--threshold-frac", type=float, default=RunConfig.threshold_frac)
    t.add_argument("--semi-axes", type=float, nargs=2, default=RunConfig.semi_axes, metavar=("A", "B"))
    t.add_argument("--max-depth", type=_depth, default=RunConfig.max_depth)
    t.add_argument("--min-leaf-size", type=int, default=RunConfig.min_leaf_size)
    t.add_argument("--no-environment", action="store_true", help="drop the environment layer")

    i = sub.add_parser("infer", help="reason on one object (or every object) of a manifest")
    i.add_argument("--model", required=True, type=Path)
    i.add_argument("--manifest", required=True, type=Path)
    i.add_argument("--id", help="object id; all records when omitted")
    i.add_argument("--grasp", action="store_true", help="also compute the grasp ellipse")
    i.add_argument("--out", type=Path, help="write JSON here instead of stdout")

    e = sub.add_parser("eval", help="evaluate a trained model")
    e.add_argument("--model", required=True, type=Path)
    e.add_argument("--manifest", required=True, type=Path)
    e.add_argument("--report", required=True, type=Path)
    e.add_argument("--csv", type=Path, help="also write the confusion matrix as CSV")
    e.add_argument("--split", choices=("auto", "test", "all"), default="auto",
                   help="records to evaluate (auto: test split unless the model trained on all)")
    e.add_argument("--ablate", action="store_true", help="environment ablation on the training split")
    e.add_argument("--zero-shot-holdout", metavar="CAT[,CAT]", help="retrain without these categories and score them")
    e.add_argument("--point-metric", action="store_true")
    e.add_argument("--threshold-frac", type=float, help="override the model's point-metric threshold")
    e.add_argument("--no-environment", action="store_true", help="require a 3-layer model")
    return p


def _seed(flag):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return DEFAULT_SEED


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_synth(args) -> str:
    cfg = SynthConfig(per_class=args.per_class, dim=args.dim, separation=args.separation,
                      env_p=args.env_p, seed=_seed(args.seed), points=args.points)
    manifest = synth_generate(cfg, args.out)
    return f"synth: {len(manifest)} objects written to {args.out / 'manifest.json'}"


def cmd_train(args) -> str:
    cfg = RunConfig(
        seed=_seed(args.seed), bins=args.bins, theta=args.theta, tau=args.tau, epsilon=args.epsilon,
        train_fraction=args.train_fraction, threshold_frac=args.threshold_frac,
        semi_axes=tuple(args.semi_axes), environment=not args.no_environment,
        max_depth=args.max_depth, min_leaf_size=args.min_leaf_size,
    )
    manifest = load_manifest(args.manifest)
    train = manifest if args.all else training_split(manifest, cfg)[0]
    model = replace(train_model(train.records, cfg), scope="all" if args.all else "split")
    save_model(model, args.out)
    return (f"train: {len(train)} records, {len(model.layers)} attribute layers, "
            f"tree depth {model.tree.depth()}, model written to {args.out}")


def _grasp(model, manifest, record, affordance):
    cloud = load_cloud(manifest, record)
    try:
        return grasp_for(load_candidates(manifest, record), cloud, affordance, model.config).to_json()
    except NoFeasibleRegion as exc:
        return {"error": str(exc)}


def cmd_infer(args) -> str:
    model = load_model(args.model)
    manifest = load_manifest(args.manifest)
    if args.id is not None:
        try:
            records = [manifest.by_id(args.id)]
        except KeyError:
            raise DataError(f"no object with id {args.id!r} in {args.manifest}") from None
    else:
        records = list(manifest.records)
    out = []
    for rec in records:
        res = model.infer_record(rec)
        doc = {"id": rec.id, **res.to_json()}
        if args.grasp:
            doc["grasp"] = _grasp(model, manifest, rec, res.final)
        out.append(doc)
    text = dumps_report(out[0] if args.id is not None else out)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    if args.id is not None:
        return f"infer: {args.id} -> {out[0]['final']}"
    return f"infer: {len(out)} objects"


def cmd_eval(args) -> str:
    model = load_model(args.model)
    if args.no_environment and model.config.environment:
        raise ConfigError("--no-environment given but the model has an environment layer")
    cfg = model.config
    if args.threshold_frac is not None:
        cfg = replace(cfg, threshold_frac=args.threshold_frac)
        model = replace(model, config=cfg)
    manifest = load_manifest(args.manifest)
    scope = args.split if args.split != "auto" else ("all" if model.scope == "all" else "test")
    train, test = training_split(manifest, cfg) if scope == "test" else (manifest, manifest)

    results, cm = evaluate(model, test.records)
    report = {
        "model": {"layers": [k.value for k in model.layers], "config": cfg.to_json()},
        "evaluated": scope,
        "objects": len(test),
        "confusion": cm.to_json(),
        "posterior_stats": posterior_stats_json(posterior_stats(results)),
        "predictions": [
            {"id": r.id, "true": r.affordance.value, "predicted": res.final.value,
             "tree": res.tree_prediction.value, "path": res.path.affordance.value,
             "leaf_purity": res.leaf_purity, "winning_score": res.winning_score}
            for r, res in zip(test.records, results)
        ],
    }
    summary = [f"diagonal accuracy {cm.diagonal_accuracy:.4f} on {len(test)} objects"]

    if args.point_metric:
        obs = observe_grasps(model, test, {r.id: res for r, res in zip(test.records, results)})
        pm = point_metric(obs, cfg.threshold_frac)
        report["point_metric"] = pm.to_json()
        summary.append(f"point-metric match {pm.percentage:.2f}%")
    if args.ablate:
        if scope != "test":
            train, test = training_split(manifest, cfg)
        ab = ablate_environment(train, test, replace(cfg, environment=True))
        report["ablation"] = ab.to_json()
        summary.append(f"ablation delta {ab.delta:+.4f}")
    if args.zero_shot_holdout:
        cats = [c.strip() for c in args.zero_shot_holdout.split(",") if c.strip()]
        seen, _ = holdout_split(manifest, cats)
        zmodel = train_model(seen.records, cfg)
        zs = zero_shot_eval(zmodel, manifest, cats)
        report["zero_shot"] = zs.to_json()
        summary.append(f"zero-shot accuracy {zs.accuracy:.4f}")

    _write(args.report, dumps_report(report))
    if args.csv:
        _write(args.csv, cm.to_csv())
    return "eval: " + ", ".join(summary)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval}


def _fail(code: int, exc) -> int:
    msg = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"error: {msg}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(1, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(1, exc)
    except (DataError, OSError) as exc:
        return _fail(2, exc)
    except (ModelError, FloatingPointError, ValueError) as exc:
        return _fail(3, exc)
    print(summary)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
