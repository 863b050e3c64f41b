"""Command-line interface.

Subcommands mirror the pipeline stages (ingest, synth, project, relabel,
verify, evaluate) plus the orchestrated modes (run, serve).  A config file
supplies defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .detection import (
    door_scene_spec,
    generate_synthetic,
    ingest_detections,
    load_ground_truth,
    load_synthetic_spec,
    pick_exemplars,
    write_detections,
    write_ground_truth,
)
from .errors import AffkitError, SchemaError
from .evaluation import evaluate, save_report, write_report_csv
from .jsonio import dump_json
from .pipeline import PipelineConfig, load_config, run_batch
from .projection import TsneParams, save_layout, tsne_project
from .relabeler import (
    build_store,
    load_assignments,
    read_relabeled,
    relabel_set,
    save_assignments,
    write_relabeled,
)
from .spatial import filter_kept, load_rule, save_verdicts, verify
from .service import serve


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except AffkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affkit",
        description="Refine coarse detections into actionable labels.",
    )
    parser.add_argument("--config", type=Path, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, help="override the random seed")
    parser.add_argument("--output", type=Path, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and summarize a detections file")
    p.add_argument("--detections", type=Path)
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", type=Path, help="synthetic spec JSON (default: door scene)")
    p.add_argument(
        "--exemplar",
        action="append",
        default=[],
        metavar="CLASS=N",
        help="also write a labels file with N exemplars of CLASS (repeatable)",
    )
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("project", help="project embeddings to 2D")
    p.add_argument("--detections", type=Path)
    p.set_defaults(handler=_cmd_project)

    p = sub.add_parser("relabel", help="relabel detections from a labels file")
    p.add_argument("--detections", type=Path)
    p.add_argument("--labels", type=Path)
    p.set_defaults(handler=_cmd_relabel)

    p = sub.add_parser("verify", help="apply the spatial rule to relabeled output")
    p.add_argument("--relabeled", type=Path)
    p.add_argument("--rule", type=Path)
    p.set_defaults(handler=_cmd_verify)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--predictions", type=Path)
    p.add_argument("--ground-truth", type=Path)
    p.add_argument("--iou", type=float, default=None)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("run", help="run every stage in batch mode")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("serve", help="start the labeling session service")
    p.set_defaults(handler=_cmd_serve)

    return parser


def _load_config_if_any(args) -> PipelineConfig | None:
    if args.config is None:
        return None
    return load_config(args.config)


def _require(value, flag: str):
    if value is None:
        raise SchemaError(f"missing {flag} (pass the flag or provide it via --config)")
    return value


def _effective_tsne(config: PipelineConfig | None, seed: int | None) -> TsneParams:
    params = config.tsne if config is not None else TsneParams()
    if seed is not None:
        params = replace(params, seed=seed)
    return params


def _out_dir(args, config: PipelineConfig | None) -> Path:
    out = args.output
    if out is None and config is not None:
        out = config.output_dir
    out = _require(out, "--output")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_ingest(args) -> int:
    config = _load_config_if_any(args)
    path = args.detections or (config.detections_path if config else None)
    detections = ingest_detections(_require(path, "--detections"))
    frames = {obj.frame_id for obj in detections.objects}
    print(
        json.dumps(
            {
                "objects": len(detections),
                "frames": len(frames),
                "dimension": detections.dimension,
                "label_set": list(detections.label_set),
            },
            indent=2,
        )
    )
    return 0


def _parse_exemplar_counts(raw: list[str]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for entry in raw:
        name, _, value = entry.rpartition("=")
        if not name or not value.isdigit():
            raise SchemaError(f"bad --exemplar entry {entry!r}, expected CLASS=N")
        counts[name] = counts.get(name, 0) + int(value)
    return counts


def _cmd_synth(args) -> int:
    out = _out_dir(args, _load_config_if_any(args))
    spec = load_synthetic_spec(args.spec) if args.spec else door_scene_spec()
    seed = args.seed if args.seed is not None else 0
    detections, ground_truth = generate_synthetic(spec, seed)
    write_detections(detections, out / "detections.jsonl")
    write_ground_truth(ground_truth, out / "ground_truth.json")
    written = {"detections": str(out / "detections.jsonl"),
               "ground_truth": str(out / "ground_truth.json")}
    if args.exemplar:
        counts = _parse_exemplar_counts(args.exemplar)
        assignments = pick_exemplars(detections, ground_truth, counts)
        save_assignments(assignments, out / "labels.json")
        written["labels"] = str(out / "labels.json")
    print(json.dumps({"objects": len(detections), "seed": seed, "written": written},
                     indent=2))
    return 0


def _cmd_project(args) -> int:
    config = _load_config_if_any(args)
    path = args.detections or (config.detections_path if config else None)
    detections = ingest_detections(_require(path, "--detections"))
    out = _out_dir(args, config)
    layout = tsne_project(
        detections.embedding_matrix(),
        _effective_tsne(config, args.seed),
        object_ids=detections.object_ids(),
    )
    save_layout(layout, out / "layout.json")
    print(json.dumps({"points": len(layout.object_ids), "final_kl": layout.final_kl,
                      "written": str(out / 'layout.json')}, indent=2))
    return 0


def _cmd_relabel(args) -> int:
    config = _load_config_if_any(args)
    det_path = args.detections or (config.detections_path if config else None)
    labels_path = args.labels or (config.labels_path if config else None)
    detections = ingest_detections(_require(det_path, "--detections"))
    assignments = load_assignments(_require(labels_path, "--labels"))
    out = _out_dir(args, config)
    store = build_store(detections, assignments)
    relabeled = relabel_set(detections, store)
    write_relabeled(relabeled, detections.dimension, out / "relabeled.jsonl")
    changed = sum(1 for r in relabeled if r.new_label != r.original_label)
    print(json.dumps({"objects": len(relabeled), "exemplars": len(store),
                      "labels_changed": changed,
                      "written": str(out / 'relabeled.jsonl')}, indent=2))
    return 0


def _cmd_verify(args) -> int:
    config = _load_config_if_any(args)
    rule_path = args.rule or (config.spatial_rule_path if config else None)
    rule = load_rule(_require(rule_path, "--rule"))
    relabeled = read_relabeled(_require(args.relabeled, "--relabeled"))
    out = _out_dir(args, config)
    verdicts = verify(relabeled, rule)
    kept = filter_kept(relabeled, verdicts, rule)
    dimension = len(relabeled[0].embedding) if relabeled else 0
    save_verdicts(verdicts, out / "verdicts.json")
    write_relabeled(kept, dimension, out / "kept.jsonl")
    print(json.dumps({"openers_checked": len(verdicts),
                      "suppressed": sum(1 for v in verdicts if not v.kept),
                      "kept_objects": len(kept)}, indent=2))
    return 0


def _read_predictions(path: Path):
    try:
        return read_relabeled(path)
    except SchemaError:
        return ingest_detections(path).objects


def _cmd_evaluate(args) -> int:
    config = _load_config_if_any(args)
    gt_path = args.ground_truth or (config.ground_truth_path if config else None)
    predictions = _read_predictions(_require(args.predictions, "--predictions"))
    ground_truth = load_ground_truth(_require(gt_path, "--ground-truth"))
    iou_threshold = args.iou
    if iou_threshold is None:
        iou_threshold = config.iou_threshold if config else 0.5
    report = evaluate(predictions, ground_truth, iou_threshold)
    out = _out_dir(args, config)
    save_report(report, out / "report.json")
    write_report_csv(report, out / "report_per_class.csv")
    print(json.dumps(report.to_json_dict(), indent=2))
    return 0


def _cmd_run(args) -> int:
    config = _require(_load_config_if_any(args), "--config")
    if args.seed is not None:
        config = replace(config, tsne=replace(config.tsne, seed=args.seed))
    if args.output is not None:
        config = replace(config, output_dir=args.output)
    report = run_batch(config)
    print(json.dumps(report.to_json_dict(), indent=2))
    return 0


def _cmd_serve(args) -> int:
    config = _require(_load_config_if_any(args), "--config")
    if args.seed is not None:
        config = replace(config, tsne=replace(config.tsne, seed=args.seed))
    if args.output is not None:
        config = replace(config, output_dir=args.output)
    serve(config)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
