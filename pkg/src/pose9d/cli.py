"""Command-line entry point.

Exit codes: 0 success, 2 schema/parse error, 3 invariant violation,
4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config, load_config
from .errors import InvariantError, Pose9DError, SchemaError
from .losses import TERMS, prediction_from_pose, total_loss
from .matching import (
    Assignment,
    MatchCandidate,
    MatchTarget,
    build_cost_matrix,
    cost_terms,
    solve_assignment,
)
from .metrics import dumps_report, evaluate_scene_set, format_report
from .scene_io import SceneRecord, derive_boxes, generate_synthetic, load_scenes, save_scenes

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_INVARIANT = 3
EXIT_INTERNAL = 4

log = logging.getLogger("pose9d")


def _threads(args, cfg: RunConfig) -> int:
    if args.threads is not None:
        return args.threads
    return cfg.threads or os.cpu_count() or 1


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _map(fn, items, threads: int) -> list:
    # pool.map preserves input order, so results never depend on thread count
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _with_boxes(scenes: list[SceneRecord]) -> list[SceneRecord]:
    """Project missing boxes; anything still missing is an invariant error."""
    scenes, failures = derive_boxes(scenes)
    if failures:
        f = failures[0]
        raise InvariantError(
            f"{f.kind} {f.index} has no 2D box and none can be derived ({f.reason})",
            path=f"scene {f.scene_id}",
        )
    return scenes


def _scene_match(scene: SceneRecord, cfg: RunConfig):
    """Match one scene; returns (assignment, cost, terms) or None if a side is empty."""
    cats = list(cfg.eval.categories)
    for kind, insts in (("gts", scene.gts), ("preds", scene.preds)):
        for k, inst in enumerate(insts):
            if inst.category not in cats:
                raise InvariantError(
                    f"category {inst.category!r} not in the configured categories",
                    path=f"scene {scene.scene_id}.{kind}[{k}]",
                )
    if not scene.preds or not scene.gts:
        return None
    preds = []
    for p in scene.preds:
        probs = np.zeros(len(cats))
        probs[cats.index(p.category)] = p.confidence
        preds.append(MatchCandidate(probs, p.box, p.pose))
    gts = [MatchTarget(cats.index(g.category), g.box, g.pose) for g in scene.gts]
    sym = {i: cfg.eval.symmetry[c] for i, c in enumerate(cats) if c in cfg.eval.symmetry}
    cost = build_cost_matrix(preds, gts, cfg.cost_weights, sym)
    if cost.shape[0] >= cost.shape[1]:
        assignment = solve_assignment(cost)
    else:
        # more ground truths than predictions: every prediction gets matched
        flipped = solve_assignment(cost.T)
        assignment = Assignment(tuple(sorted((i, j) for j, i in flipped.pairs)), ())
    terms = {
        (i, j): cost_terms(preds[i], gts[j], sym.get(gts[j].category))
        for i, j in assignment.pairs
    }
    return assignment, cost, terms


# --------------------------------------------------------------------------
# Commands


def cmd_evaluate(args, cfg: RunConfig) -> int:
    scenes = load_scenes(args.scenes, cfg.eval.categories)
    result = evaluate_scene_set(scenes, cfg.eval, threads=_threads(args, cfg))
    table, record = format_report(result)
    record["config"] = cfg.to_dict()
    record["scene_count"] = len(scenes)
    sys.stdout.write(table)
    if args.out is not None:
        out = Path(args.out)
        out.write_text(dumps_report(record), encoding="utf-8")
        out.with_name(out.name + ".txt").write_text(table, encoding="utf-8")
    return EXIT_OK


def cmd_match(args, cfg: RunConfig) -> int:
    scenes = _with_boxes(load_scenes(args.scenes, cfg.eval.categories))
    w = cfg.cost_weights.to_dict()
    keys = ("cls", "bbox", "iou", "trans", "rot")

    def one(scene):
        res = _scene_match(scene, cfg)
        if res is None:
            return {
                "scene_id": scene.scene_id,
                "pairs": [],
                "unmatched_predictions": list(range(len(scene.preds))),
                "unmatched_ground_truths": list(range(len(scene.gts))),
                "total": 0.0,
            }
        assignment, cost, terms = res
        pairs = []
        for i, j in assignment.pairs:
            t = terms[(i, j)]
            pairs.append(
                {
                    "pred": i,
                    "gt": j,
                    "terms": {k: t[k] for k in keys},
                    "weighted": {k: w[f"lambda_{k}"] * t[k] for k in keys},
                    "cost": float(cost[i, j]),
                }
            )
        matched_gt = {j for _, j in assignment.pairs}
        matched_pred = {i for i, _ in assignment.pairs}
        return {
            "scene_id": scene.scene_id,
            "pairs": pairs,
            "unmatched_predictions": [i for i in range(len(scene.preds)) if i not in matched_pred],
            "unmatched_ground_truths": [j for j in range(len(scene.gts)) if j not in matched_gt],
            "total": assignment.total(cost),
        }

    per_scene = _map(one, scenes, _threads(args, cfg))
    total = 0.0
    for s in per_scene:
        total += s["total"]
    doc = {"config": cfg.to_dict(), "scenes": per_scene, "total": total}
    _emit(_dump_json(doc), args.out)
    return EXIT_OK


def cmd_losses(args, cfg: RunConfig) -> int:
    scenes = _with_boxes(load_scenes(args.scenes, cfg.eval.categories))
    cats = list(cfg.eval.categories)
    rot_sym = dict(cfg.eval.symmetry) if cfg.loss.symmetric_rotation else None

    def one(scene):
        res = _scene_match(scene, cfg)
        if res is None:
            return {"scene_id": scene.scene_id, "n_pairs": 0, "terms": None, "total": None}
        assignment, _, _ = res
        raws = [
            prediction_from_pose(p, cats.index(p.category), len(cats), scene.intrinsics)
            for p in scene.preds
        ]
        lb = total_loss(
            assignment.pairs,
            raws,
            scene.gts,
            scene.intrinsics,
            cfg.loss_weights,
            categories=cats,
            rot_symmetry=rot_sym,
            alpha=cfg.loss.focal_alpha,
            gamma=cfg.loss.focal_gamma,
        )
        return {
            "scene_id": scene.scene_id,
            "n_pairs": lb.n_pairs,
            "n_unmatched": lb.n_unmatched,
            "terms": dict(lb.terms),
            "weighted": lb.weighted(),
            "total": lb.total,
        }

    per_scene = _map(one, scenes, _threads(args, cfg))
    agg_terms = dict.fromkeys(TERMS, 0.0)
    agg_total = 0.0
    counted = 0
    for s in per_scene:
        if s["terms"] is None:
            continue
        counted += 1
        for k in TERMS:
            agg_terms[k] += s["terms"][k]
        agg_total += s["total"]
    doc = {
        "config": cfg.to_dict(),
        "scenes": per_scene,
        "aggregate": {"scenes": counted, "terms": agg_terms, "total": agg_total},
    }
    _emit(_dump_json(doc), args.out)
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    noise = cfg.noise_profile(args.profile, seed=cfg.seed)
    scenes = generate_synthetic(
        args.count,
        cfg.synth.objects,
        cfg.synth.intrinsics,
        noise,
        cfg.eval.categories,
    )
    save_scenes(scenes, args.out)
    log.info("wrote %d scenes to %s", len(scenes), args.out)
    return EXIT_OK


def cmd_derive_boxes(args, cfg: RunConfig) -> int:
    scenes = load_scenes(args.scenes, cfg.eval.categories)
    scenes, failures = derive_boxes(scenes, overwrite=args.overwrite_boxes)
    for f in failures:
        log.warning("scene %s: %s %d: %s", f.scene_id, f.kind, f.index, f.reason)
    save_scenes(scenes, args.out)
    return EXIT_OK


def cmd_default_config(args, cfg: RunConfig) -> int:
    _emit(dump_config(cfg), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML/JSON run config (default: packaged)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads (default: config or all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pose9d", description="9-DoF pose matching and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="mAP report for a scene file")
    p.add_argument("--scenes", type=Path, required=True)
    p.add_argument("--out", type=Path, help="JSON report path; the table also goes to OUT.txt")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("match", parents=[common], help="per-scene assignment with cost breakdown")
    p.add_argument("--scenes", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("losses", parents=[common], help="per-scene and aggregate loss terms")
    p.add_argument("--scenes", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_losses)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic scene file")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--profile", default="default", help="noise profile name from the config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("derive-boxes", parents=[common], help="fill 2D boxes from cuboid projection")
    p.add_argument("--scenes", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--overwrite-boxes", action="store_true", help="replace boxes already present")
    p.set_defaults(func=cmd_derive_boxes)

    p = sub.add_parser("default-config", parents=[common], help="print the effective config")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_default_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.threads is not None and args.threads < 1:
            raise InvariantError("--threads must be >= 1")
        if getattr(args, "count", 0) < 0:
            raise InvariantError("--count must be >= 0")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        return args.func(args, cfg)
    except SchemaError as exc:
        print(f"pose9d: schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"pose9d: cannot read input: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (InvariantError, Pose9DError, ValueError) as exc:
        print(f"pose9d: invariant error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"pose9d: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
