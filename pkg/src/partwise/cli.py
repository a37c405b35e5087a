"""Command-line interface: partwise synth|train|classify|explain|evaluate|sweep."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .classify import load_tree_spec, predict_softmax
from .core import (
    PartwiseError,
    Scene,
    VehicleCategory,
    default_catalog,
    load_catalog,
    load_scenes,
    save_scenes,
)
from .explain import explain_softmax, render_report
from .geometry import homography_for_scene, load_calibration, rectify_scene
from .harness import (
    ModelBundle,
    PipelineConfig,
    evaluate_pipeline,
    load_model,
    robustness_sweep,
    save_model,
    train_bundle,
)
from .spatial import part_scores
from .synth import (
    NoiseConfig,
    default_mix,
    default_templates,
    generate_dataset,
    load_templates,
)


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _noise_from(args) -> NoiseConfig:
    if args.noise:
        return NoiseConfig.from_obj(_load_json(args.noise))
    return NoiseConfig.none()


def _pipeline_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = PipelineConfig.from_obj(_load_json(args.config))
    else:
        cfg = PipelineConfig()
    if getattr(args, "folds", None):
        cfg = replace(cfg, folds=args.folds)
    return cfg


def _rectify_if_needed(scenes: list[Scene], calib_path) -> list[Scene]:
    if all(s.rectified for s in scenes):
        return scenes
    if calib_path is None:
        raise PartwiseError(
            "input scenes are not rectified; pass --calib with correspondence pairs"
        )
    calib = load_calibration(calib_path)
    out = []
    for scene in scenes:
        if scene.rectified:
            out.append(scene)
        else:
            out.append(rectify_scene(homography_for_scene(calib, scene.id), scene))
    return out


def _emit(text: str, out_path):
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_synth(args) -> int:
    templates = load_templates(args.templates) if args.templates else default_templates()
    noise = _noise_from(args)
    if args.mix:
        raw = _load_json(args.mix)
        mix = {VehicleCategory.from_label(k): int(v) for k, v in raw.items()}
    else:
        mix = default_mix(args.total)
    catalog = load_catalog(args.catalog) if args.catalog else default_catalog()
    dataset = generate_dataset(mix, templates, noise, args.seed, catalog=catalog)
    save_scenes(dataset.scenes, args.out)
    print(f"wrote {len(dataset.scenes)} scenes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    catalog = load_catalog(args.catalog) if args.catalog else default_catalog()
    scenes = _rectify_if_needed(load_scenes(args.scenes), args.calib)
    cfg = _pipeline_config(args)
    bundle = train_bundle(scenes, catalog, cfg, args.seed)
    if args.tree_spec:
        bundle.tree_spec = load_tree_spec(args.tree_spec)
    save_model(args.out, bundle)
    skipped = len(bundle.coverage.skipped) if bundle.coverage else 0
    print(f"trained on {len(scenes)} scenes; {skipped} features without spatial map; wrote {args.out}")
    return 0


def _cmd_classify(args) -> int:
    bundle = load_model(args.model)
    scenes = _rectify_if_needed(load_scenes(args.scenes), args.calib)
    results = []
    for scene in scenes:
        if args.pipeline == "softmax":
            scores = part_scores(bundle.require("spatial"), bundle.catalog, scene)
            category, probs = predict_softmax(bundle.require("softmax"), scores)
            results.append(
                {
                    "id": scene.id,
                    "label": None if scene.label is None else scene.label.label,
                    "predicted": category.label,
                    "probability": float(probs[int(category)]),
                }
            )
        else:
            from .harness import predict_scene

            category, trace = predict_scene(bundle, scene, "tree")
            results.append(
                {
                    "id": scene.id,
                    "label": None if scene.label is None else scene.label.label,
                    "predicted": category.label,
                    "trace": [{"node": n, "outcome": o} for n, o in trace],
                }
            )
    _emit(json.dumps(results, indent=1) + "\n", args.out)
    return 0


def _cmd_explain(args) -> int:
    bundle = load_model(args.model)
    scenes = _rectify_if_needed(load_scenes(args.scene), args.calib)
    if args.scene_id:
        matches = [s for s in scenes if s.id == args.scene_id]
        if not matches:
            raise PartwiseError(f"no scene with id {args.scene_id!r}")
        scene = matches[0]
    else:
        scene = scenes[0]
    scores = part_scores(bundle.require("spatial"), bundle.catalog, scene)
    category = VehicleCategory.from_label(args.category) if args.category else None
    report = explain_softmax(bundle.require("softmax"), bundle.catalog, scores, category)
    payload = render_report(report, args.format)
    if args.out:
        Path(args.out).write_bytes(payload)
    else:
        sys.stdout.write(payload.decode())
    return 0


def _cmd_evaluate(args) -> int:
    from .core import Dataset

    catalog = load_catalog(args.catalog) if args.catalog else default_catalog()
    scenes = _rectify_if_needed(load_scenes(args.scenes), args.calib)
    dataset = Dataset(scenes=tuple(scenes), catalog=catalog)
    cfg = _pipeline_config(args)
    report = evaluate_pipeline(dataset, args.pipeline, cfg, args.seed)
    if args.format == "json":
        _emit(json.dumps(report.to_obj(), indent=1) + "\n", args.out)
    elif args.format == "csv":
        _emit(report.to_csv(), args.out)
    else:
        _emit(report.to_text(), args.out)
    if args.assert_overall is not None and report.overall[0] < args.assert_overall:
        print(
            f"ASSERTION FAILED: overall accuracy {report.overall[0]:.4f} "
            f"< {args.assert_overall}",
            file=sys.stderr,
        )
        return 1
    return 0


def _cmd_sweep(args) -> int:
    from .core import Dataset

    catalog = load_catalog(args.catalog) if args.catalog else default_catalog()
    scenes = _rectify_if_needed(load_scenes(args.scenes), args.calib)
    dataset = Dataset(scenes=tuple(scenes), catalog=catalog)
    cfg = _pipeline_config(args)
    noise = _noise_from(args)
    thresholds = [float(t) for t in args.thresholds.split(",")]
    report = robustness_sweep(dataset, thresholds, noise, cfg, args.seed)
    if args.format == "json":
        _emit(json.dumps(report.to_obj(), indent=1) + "\n", args.out)
    elif args.format == "csv":
        _emit(report.to_csv(), args.out)
    else:
        _emit(report.to_text(), args.out)

    failed = []
    base = report.rows[0]
    last = report.rows[-1]
    if args.assert_retained_span is not None:
        span = max(r[2] for r in report.rows) - min(r[2] for r in report.rows)
        if span > args.assert_retained_span:
            failed.append(f"retained accuracy span {span:.4f} > {args.assert_retained_span}")
    if args.assert_tree_drop is not None:
        drop = base[1] - last[1]
        if drop < args.assert_tree_drop:
            failed.append(f"tree accuracy drop {drop:.4f} < {args.assert_tree_drop}")
    if args.assert_adapted_drop is not None:
        drop = base[3] - last[3]
        if drop > args.assert_adapted_drop:
            failed.append(f"adapted accuracy drop {drop:.4f} > {args.assert_adapted_drop}")
    for message in failed:
        print(f"ASSERTION FAILED: {message}", file=sys.stderr)
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partwise",
        description="Part-based, spatially aware vehicle classification pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate labeled synthetic scenes")
    p.add_argument("--mix", help="JSON file mapping category label -> scene count")
    p.add_argument("--total", type=int, default=500, help="scene count for the default mix")
    p.add_argument("--noise", help="noise config JSON (default: no noise)")
    p.add_argument("--templates", help="layout template JSON (default: built-in)")
    p.add_argument("--catalog", help="catalog override JSON")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train spatial maps, softmax head and SVMs")
    p.add_argument("--scenes", required=True)
    p.add_argument("--catalog")
    p.add_argument("--calib", help="calibration sidecar for unrectified scenes")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--tree-spec", help="tree spec JSON replacing the default")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("classify", help="classify scenes with a trained bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--pipeline", choices=["softmax", "tree"], default="softmax")
    p.add_argument("--calib")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("explain", help="explain one softmax prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--scene", required=True, help="detections file")
    p.add_argument("--scene-id", help="scene id within the file (default: first)")
    p.add_argument("--category", help="explain this category instead of the argmax")
    p.add_argument("--format", choices=["text", "json", "svg"], default="text")
    p.add_argument("--calib")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("evaluate", help="k-fold cross-validation of one arm")
    p.add_argument("--scenes", required=True)
    p.add_argument("--pipeline", choices=["softmax", "tree"], required=True)
    p.add_argument("--catalog")
    p.add_argument("--calib")
    p.add_argument("--config")
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--format", choices=["text", "json", "csv"], default="text")
    p.add_argument("--out")
    p.add_argument("--assert-overall", type=float, help="exit nonzero when overall mean accuracy is below this")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="detection-threshold robustness sweep")
    p.add_argument("--scenes", required=True)
    p.add_argument("--noise", help="noise config JSON governing fp injection")
    p.add_argument("--thresholds", default="0.5,0.1,0.01,0.001")
    p.add_argument("--catalog")
    p.add_argument("--calib")
    p.add_argument("--config")
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--format", choices=["text", "json", "csv"], default="text")
    p.add_argument("--out")
    p.add_argument("--assert-retained-span", type=float)
    p.add_argument("--assert-tree-drop", type=float)
    p.add_argument("--assert-adapted-drop", type=float)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PartwiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
