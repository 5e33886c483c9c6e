"""Command-line surface: synth, train, rerank, eval.

Every command echoes its resolved configuration into the output directory
(``<command>_config.json``) for provenance, writes CSV/text outputs only
(plots are external tooling's job), and uses partitioned exit codes so
benchmark scripts can branch without parsing text:

    0 success   2 config error   3 data/generation error
    4 solver failure   5 model/layout mismatch   6 undefined metrics
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import data, metrics, model as model_mod, train as train_mod
from .errors import DataFormatError, InvalidArgumentError, SolverFailureError, SynthesisError
from .features import FeatureConfig, extract_all
from .metrics import DIFFICULTY_PRESETS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4
EXIT_MODEL = 5
EXIT_METRIC = 6


def _echo_config(out_dir: str, command: str, args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    data.atomic_write_text(
        os.path.join(out_dir, f"{command}_config.json"),
        json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n",
    )


def _resolve_class_id(manifest: data.SceneManifest, class_name: str) -> int:
    if class_name not in manifest.class_map:
        raise InvalidArgumentError(
            f"class {class_name!r} not in manifest class map {sorted(manifest.class_map)}"
        )
    return manifest.class_map[class_name]


def _feature_config(manifest: data.SceneManifest, args) -> FeatureConfig:
    if "road" not in manifest.class_map:
        raise InvalidArgumentError("manifest class map must include a 'road' class")
    return FeatureConfig(
        road_class_id=manifest.class_map["road"],
        tau=args.tau,
        context_height_ratio=args.context_ratio,
    )


def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    config = data.SynthConfig(
        seed=args.seed,
        n_scenes=args.scenes,
        proposals_per_scene=args.proposals,
    )
    try:
        scenes, key = data.generate_synthetic(config)
    except SynthesisError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_DATA
    class_map = {"road": config.road_class_id}
    for cid in config.class_ids:
        class_map[f"class{cid}"] = cid
    data.save_dataset(scenes, key, class_map, args.out)
    _echo_config(args.out, "synth", args)
    print(f"wrote {len(scenes)} scenes and {len(key)} planted proposals to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    manifest, scenes = data.load_dataset(args.manifest)
    class_id = _resolve_class_id(manifest, args.class_name)
    fconf = _feature_config(manifest, args)
    tconf = train_mod.TrainConfig(C=args.C, loss_mode=args.loss_mode.replace("-", "_"))
    examples, stats = train_mod.build_examples(scenes, class_id, fconf, tconf.loss_mode)
    _echo_config(args.out, "train", args)

    model_path = os.path.join(args.out, f"model_{args.class_name}.txt")
    trace_path = os.path.join(args.out, f"train_trace_{args.class_name}.csv")
    if not examples:
        # no ground truth of this class anywhere: emit the zero model
        zero = model_mod.ScoringModel(class_id=class_id, weights=np.zeros(7),
                                      loss_mode=tconf.loss_mode, C=tconf.C)
        model_mod.save_model(zero, model_path)
        _write_trace(trace_path, [])
        print(f"warning: no training examples for class {args.class_name}; wrote zero model")
        return EXIT_OK

    try:
        trained, report = train_mod.train(examples, tconf, class_id=class_id)
    except SolverFailureError as exc:
        data.atomic_write_text(
            os.path.join(args.out, "solver_failure.txt"),
            f"{exc}\nlast theta: {exc.theta}\nresidual: {exc.residual}\n",
        )
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    model_mod.save_model(trained, model_path)
    _write_trace(trace_path, report.trace)
    if report.all_vacuous:
        print("warning: every candidate constraint was vacuous; model is zero")
    print(
        f"trained {args.class_name}: {len(examples)} examples "
        f"({stats.scenes_skipped_no_proposals} scenes skipped), "
        f"rounds={report.rounds_used}, objective={report.objective:.6g}, "
        f"max violation={report.max_violation:.3g}"
    )
    return EXIT_OK


def _write_trace(path: str, trace) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["round", "working_set_size", "max_violation", "objective"])
    for round_no, ws, viol, obj in trace:
        writer.writerow([round_no, ws, repr(viol), repr(obj)])
    data.atomic_write_text(path, buf.getvalue())


def cmd_rerank(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    manifest, scenes = data.load_dataset(args.manifest)
    class_id = _resolve_class_id(manifest, args.class_name)
    fconf = _feature_config(manifest, args)
    scorer = model_mod.load_model(args.model)
    if scorer.class_id != class_id:
        print(
            f"model is for class id {scorer.class_id}, requested {class_id}",
            file=sys.stderr,
        )
        return EXIT_MODEL
    _echo_config(args.out, "rerank", args)
    for scene in scenes:
        feats = extract_all(scene, class_id, fconf)
        order, scores = model_mod.rerank(scorer, feats)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x1", "y1", "x2", "y2", "score", "objectness", "rerank_score"])
        for i in order:
            p = scene.proposals[i]
            writer.writerow(
                [repr(p.box.x1), repr(p.box.y1), repr(p.box.x2), repr(p.box.y2),
                 repr(p.generator_score), repr(p.objectness), repr(float(scores[i]))]
            )
        data.atomic_write_text(os.path.join(args.out, f"{scene.id}_reranked.csv"), buf.getvalue())
        _write_order(os.path.join(args.out, f"{scene.id}_order.csv"), order)
    print(f"re-ranked {len(scenes)} scenes into {args.out}")
    return EXIT_OK


def _write_order(path: str, order) -> None:
    data.atomic_write_text(path, "\n".join(str(i) for i in order) + ("\n" if len(order) else ""))


def _read_order(path: str) -> list[int]:
    with open(path, "r", encoding="utf-8") as fh:
        return [int(line) for line in fh if line.strip()]


def cmd_eval(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    manifest, scenes = data.load_dataset(args.manifest)
    class_id = _resolve_class_id(manifest, args.class_name)
    filt = DIFFICULTY_PRESETS[args.difficulty]

    rankings = None
    if args.oracle:
        rankings = metrics.oracle_rankings(scenes, class_id, filt)
    elif args.rankings:
        rankings = {}
        for scene in scenes:
            order_path = os.path.join(args.rankings, f"{scene.id}_order.csv")
            if os.path.exists(order_path):
                rankings[scene.id] = _read_order(order_path)

    budgets = [int(b) for b in args.budgets.split(",")]
    _echo_config(args.out, "eval", args)

    curve_k = metrics.recall_vs_k(scenes, class_id, args.iou, budgets, filt, rankings)
    curve_iou = metrics.recall_vs_iou(scenes, class_id, args.at_k, filt=filt, rankings=rankings)
    ar_points = []
    for k in budgets:
        ar = metrics.average_recall(scenes, class_id, k, filt, rankings)
        total = curve_k.points[0].total
        ar_points.append(
            metrics.RecallPoint(axis_value=k, recall=ar, matched=0, total=total)
        )
    ar_curve = metrics.RecallCurve(axis="k", points=tuple(ar_points))

    metrics.write_curve_csv(curve_k, os.path.join(args.out, "recall_vs_k.csv"))
    metrics.write_curve_csv(curve_iou, os.path.join(args.out, "recall_vs_iou.csv"))
    metrics.write_curve_csv(ar_curve, os.path.join(args.out, "ar_vs_k.csv"))

    if all(p.recall is None for p in curve_k.points):
        print("no ground truth survived the difficulty filter; recall undefined", file=sys.stderr)
        return EXIT_METRIC
    print(f"wrote recall curves to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rerankkit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--scenes", type=int, default=10)
    p_synth.add_argument("--proposals", type=int, default=200)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    def add_feature_flags(p):
        p.add_argument("--manifest", required=True)
        p.add_argument("--class", dest="class_name", required=True)
        p.add_argument("--tau", type=float, default=2.5)
        p.add_argument("--context-ratio", type=float, default=1.0 / 3.0)
        p.add_argument("--out", required=True)

    p_train = sub.add_parser("train", help="learn class-specific weights")
    add_feature_flags(p_train)
    p_train.add_argument("--C", type=float, default=1.0)
    p_train.add_argument("--loss-mode", choices=["one-minus-iou", "iou-as-printed"],
                         default="one-minus-iou")
    p_train.set_defaults(func=cmd_train)

    p_rerank = sub.add_parser("rerank", help="score and re-order proposals with a trained model")
    add_feature_flags(p_rerank)
    p_rerank.add_argument("--model", required=True)
    p_rerank.set_defaults(func=cmd_rerank)

    p_eval = sub.add_parser("eval", help="emit recall and average-recall curves")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--class", dest="class_name", required=True)
    p_eval.add_argument("--iou", type=float, default=0.7,
                        help="IoU threshold for the recall-vs-K curve")
    p_eval.add_argument("--at-k", type=int, default=500,
                        help="proposal budget for the recall-vs-IoU curve")
    p_eval.add_argument("--budgets", default=",".join(str(b) for b in metrics.DEFAULT_BUDGETS))
    p_eval.add_argument("--difficulty", choices=sorted(DIFFICULTY_PRESETS), default="none")
    p_eval.add_argument("--rankings", default=None,
                        help="directory of <scene>_order.csv files from `rerank`")
    p_eval.add_argument("--oracle", action="store_true",
                        help="rank by true IoU for upper-bound curves")
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SynthesisError as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverFailureError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
