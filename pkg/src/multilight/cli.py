"""Command-line interface.

Exit codes: 0 success, 2 I/O error, 3 parse error, 4 validation error.
Failures print a single ``error: <kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import io
import os
import sys
import tempfile
from typing import Callable, Dict, List, Optional, Sequence

from . import __version__
from .dataset import (
    STRATEGIES,
    FormatError,
    SelectionSpec,
    attach_detections,
    detections_of,
    dumps_manifest,
    load_manifest,
    load_split,
    read_detections,
    save_split,
    select_images,
    split_objectwise,
    write_detections,
)
from .fusion import FusionParams, fuse_regions
from .metrics import DEFAULT_PR_GRID
from .model import Modality, ModelError
from .plotting import curve_points, render_png, render_svg, write_pr_csv
from .report import read_scored, render_table, report_curves, write_csv, write_scored
from .simulator import (
    ConfigError,
    SimulationConfig,
    dump_simulation_config,
    generate_dataset,
    load_simulation_config,
    simulate_detections,
)
from .study import (
    SimulatedSource,
    StudyConfig,
    evaluate_images,
    evaluation_images,
    run_study,
    fuse_images,
)

EXIT_IO = 2
EXIT_PARSE = 3
EXIT_VALIDATION = 4


class CLIError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        self.code = code
        self.kind = kind
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(EXIT_VALIDATION, "usage", f"{self.prog}: {message}")


# -- file helpers ------------------------------------------------------------------


def _read_text(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _parse(path: str, loader: Callable):
    text = _read_text(path)
    try:
        return loader(io.StringIO(text))
    except FormatError as exc:
        raise CLIError(EXIT_PARSE, "parse", f"{path}: {exc}") from None
    except ConfigError as exc:
        raise CLIError(EXIT_PARSE, "parse", f"{path}: {exc}") from None


def atomic_write(path: str, data, binary: bool = False) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb" if binary else "w", **({} if binary else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_png(points, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".png", dir=directory)
    os.close(fd)
    try:
        render_png(points, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _text(writer, *args) -> str:
    buf = io.StringIO()
    writer(*args, buf)
    return buf.getvalue()


def _load_config(path: Optional[str]) -> SimulationConfig:
    if path is None:
        return SimulationConfig()
    return _parse(path, load_simulation_config)


def _threshold_list(values: Optional[Sequence[float]]):
    grid = tuple(values) if values else DEFAULT_PR_GRID
    if any(not 0.0 <= t <= 1.0 for t in grid):
        raise CLIError(EXIT_VALIDATION, "validation", "thresholds must lie in [0, 1]")
    if list(grid) != sorted(grid):
        raise CLIError(EXIT_VALIDATION, "validation", "thresholds must be sorted ascending")
    return grid


def _manifest_with_detections(args):
    manifest = _parse(args.manifest, load_manifest)
    if getattr(args, "detections", None):
        dets = _parse(args.detections, read_detections)
        manifest = attach_detections(manifest, dets)
    return manifest


# -- commands ------------------------------------------------------------------------


def cmd_defaults(args) -> None:
    sys.stdout.write(dump_simulation_config(SimulationConfig()))


def cmd_generate(args) -> None:
    config = _load_config(args.config)
    scene = config.scene
    if args.regions is not None:
        from dataclasses import replace

        scene = replace(scene, region_count=args.regions)
    manifest = generate_dataset(scene, args.seed, workers=args.threads)
    atomic_write(args.out, dumps_manifest(manifest))


def cmd_simulate(args) -> None:
    config = _load_config(args.config)
    manifest = _parse(args.manifest, load_manifest)
    noise = config.detector_for(args.train)
    result = simulate_detections(manifest, noise, args.seed, workers=args.threads)
    atomic_write(args.out, _text(write_detections, detections_of(result)))


def cmd_import(args) -> None:
    manifest = _manifest_with_detections(args)
    atomic_write(args.out, dumps_manifest(manifest))


def cmd_split(args) -> None:
    manifest = _parse(args.manifest, load_manifest)
    split = split_objectwise(manifest, tuple(args.ratios), args.seed)
    atomic_write(args.out, _text(save_split, split))


def cmd_select(args) -> None:
    manifest = _parse(args.manifest, load_manifest)
    split = _parse(args.split, load_split) if args.split else None
    modality = Modality.parse(args.modality) if args.modality else None
    spec = SelectionSpec(args.strategy, modality=modality, seed=args.seed, per_region_exposure=args.per_region_exposure)
    images = select_images(manifest, spec, split, args.partition if split else None)
    lines = ["region_id,image_id,modality,exposure"]
    lines += [f"{r.region_id},{r.image_id},{r.condition.modality.name},{r.condition.exposure.name}" for r in images]
    atomic_write(args.out, "\n".join(lines) + "\n")
    regions = len({r.region_id for r in images})
    print(f"selected {len(images)} images from {regions} regions", file=sys.stderr)


def cmd_fuse(args) -> None:
    manifest = _manifest_with_detections(args)
    params = FusionParams(args.theta)
    fused = fuse_regions(manifest.regions, params, workers=args.threads)
    atomic_write(args.out, _text(write_detections, detections_of(manifest.with_regions(fused))))


def _study_config(args, study_id: int) -> StudyConfig:
    return StudyConfig(
        study_id=study_id,
        seed=args.seed,
        confidence_cutoff=args.cutoff,
        iou_threshold=args.iou,
        fusion=FusionParams(args.theta),
        trials=getattr(args, "trials", 1),
        partition=args.partition,
        ap_mode=args.ap_mode,
        ap_grid=_threshold_list(args.ap_grid),
        aggregation=args.aggregation,
        per_region_exposure=getattr(args, "per_region_exposure", False),
    )


def cmd_evaluate(args) -> None:
    manifest = _manifest_with_detections(args)
    split = _parse(args.split, load_split) if args.split else None
    config = _study_config(argparse.Namespace(**{**vars(args), "seed": 0}), 4)
    modality = Modality.parse(args.modality) if args.modality else None
    images = evaluation_images(manifest, split, config, modality)
    missing = [r.image_id for r in images if r.detections is None]
    if missing:
        from .study import MissingDetectionsError

        raise MissingDetectionsError(missing)
    if args.fuse:
        images = fuse_images(images, config.fusion, config.aggregation)
    ev = evaluate_images(images, config.confidence_cutoff, config.iou_threshold)
    row = ev.metrics(config.ap_thresholds)
    label = args.label or ("fused" if args.fuse else "unfused")
    lines = [
        "label,tp,fp,fn,gt_count,image_count,precision,recall,f1,ap,confidence_cutoff,iou_threshold,ap_mode,fused,fusion_theta",
        ",".join(
            str(v)
            for v in (
                label, ev.counts.tp, ev.counts.fp, ev.counts.fn, ev.gt_count, ev.image_count,
                repr(row.precision), repr(row.recall), repr(row.f1), repr(row.ap),
                config.confidence_cutoff, config.iou_threshold, config.ap_mode, int(args.fuse), config.fusion.theta,
            )
        ),
    ]
    atomic_write(args.out, "\n".join(lines) + "\n")
    if args.scored:
        atomic_write(args.scored, _text(write_scored, [(label, list(ev.scored), ev.gt_count)]))


def cmd_study(args) -> None:
    config = _study_config(args, args.id)
    if args.detections and args.simulate:
        raise CLIError(EXIT_VALIDATION, "validation", "use either --detections or --simulate")
    if not args.detections and not args.simulate:
        raise CLIError(EXIT_VALIDATION, "validation", "one of --detections or --simulate is required")
    manifest = _parse(args.manifest, load_manifest)
    split = _parse(args.split, load_split) if args.split else None
    if args.detections:
        source = _parse(args.detections, read_detections)
    else:
        source = SimulatedSource(_load_config(args.simulate))
    report = run_study(manifest, source, config, split)

    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.join(args.out_dir, f"study{args.id}")
    curves = report_curves(report)
    atomic_write(stem + ".txt", render_table(report))
    atomic_write(stem + ".csv", _text(write_csv, report))
    atomic_write(stem + "_scored.jsonl", _text(write_scored, curves))
    if args.id == 4:
        points = curve_points(curves, _threshold_list(args.thresholds))
        atomic_write(stem + "_pr.csv", _text(write_pr_csv, points))
        atomic_write(stem + "_pr.svg", render_svg(points))
        if not args.no_png:
            _atomic_png(points, stem + "_pr.png")
    sys.stdout.write(render_table(report))


def cmd_plot(args) -> None:
    curves = []
    for path in args.scored:
        curves.extend(_parse(path, read_scored))
    if not curves:
        raise CLIError(EXIT_VALIDATION, "validation", "no scored curves in input")
    points = curve_points(curves, _threshold_list(args.thresholds))
    atomic_write(args.out_csv, _text(write_pr_csv, points))
    if args.out_svg:
        atomic_write(args.out_svg, render_svg(points))
    if args.out_png:
        _atomic_png(points, args.out_png)


# -- parser ----------------------------------------------------------------------------


def _add_threads(p):
    p.add_argument("--threads", type=int, default=1, help="worker threads; output does not depend on it (default 1)")


def _add_eval_flags(p):
    p.add_argument("--cutoff", type=float, default=0.7, help="confidence cutoff for P/R/F1 (default 0.7)")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold for a true positive (default 0.5)")
    p.add_argument("--theta", type=float, default=0.5, help="NMS IoU threshold for late fusion (default 0.5)")
    p.add_argument("--ap-mode", choices=("distinct", "grid"), default="distinct",
                   help="AP over distinct confidences or over --ap-grid (default distinct)")
    p.add_argument("--ap-grid", type=float, nargs="+", metavar="T", help="AP grid (default 0.1 ... 0.9)")
    p.add_argument("--aggregation", choices=("image", "region"), default="image",
                   help="score fused sets on every image or once per region (default image)")
    p.add_argument("--split", help="split file; restricts evaluation to --partition")
    p.add_argument("--partition", choices=("train", "val", "test"), default="test",
                   help="partition evaluated when --split is given (default test)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multilight", description="Multi-illumination defect detection toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("defaults", help="print the default simulation config (YAML)")
    p.set_defaults(func=cmd_defaults)

    p = sub.add_parser("generate", help="generate a synthetic dataset manifest")
    p.add_argument("--config", help="simulation config (YAML); defaults if omitted")
    p.add_argument("--regions", type=int, help="override scene.region_count")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--out", required=True, help="output manifest (.jsonl)")
    _add_threads(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("simulate-detections", help="run the simulated detector over a manifest")
    p.add_argument("--manifest", required=True, help="input manifest")
    p.add_argument("--config", help="simulation config (YAML); defaults if omitted")
    p.add_argument("--train", help="pick the detector_by_train entry with this key")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--out", required=True, help="output detections file (.csv)")
    _add_threads(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("import", help="attach an external detections file to a manifest")
    p.add_argument("--manifest", required=True, help="input manifest")
    p.add_argument("--detections", required=True, help="detections file (.csv)")
    p.add_argument("--out", required=True, help="output manifest with detections")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("split", help="object-wise train/val/test split")
    p.add_argument("--manifest", required=True, help="input manifest")
    p.add_argument("--ratios", type=float, nargs=3, default=[0.70, 0.15, 0.15], metavar=("TRAIN", "VAL", "TEST"),
                   help="split ratios (default 0.70 0.15 0.15)")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--out", required=True, help="output split file (.jsonl)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("select", help="list the images kept by a selection strategy")
    p.add_argument("--manifest", required=True, help="input manifest")
    p.add_argument("--split", help="split file; restricts selection to --partition")
    p.add_argument("--partition", choices=("train", "val", "test"), default="train",
                   help="partition selected from when --split is given (default train)")
    p.add_argument("--strategy", choices=STRATEGIES, required=True, help="selection strategy")
    p.add_argument("--modality", choices=[m.name for m in Modality], help="modality for single_modality")
    p.add_argument("--seed", type=int, help="random seed (required by randomized strategies)")
    p.add_argument("--per-region-exposure", action="store_true",
                   help="random_modalities: one exposure per region instead of one per image")
    p.add_argument("--out", required=True, help="output image list (.csv)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("fuse", help="late fusion: NMS over each region's 12 images")
    p.add_argument("--manifest", required=True, help="input manifest")
    p.add_argument("--detections", help="detections file; otherwise those stored in the manifest")
    p.add_argument("--theta", type=float, default=0.5, help="NMS IoU threshold (default 0.5)")
    p.add_argument("--out", required=True, help="output detections file (.csv)")
    _add_threads(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="precision/recall/F1/AP of detections against annotations")
    p.add_argument("--manifest", required=True, help="input manifest")
    p.add_argument("--detections", help="detections file; otherwise those stored in the manifest")
    p.add_argument("--modality", choices=[m.name for m in Modality], help="evaluate one modality only")
    p.add_argument("--fuse", action="store_true", help="apply late fusion before scoring")
    p.add_argument("--label", help="curve label written to --scored")
    p.add_argument("--out", required=True, help="output metrics (.csv)")
    p.add_argument("--scored", help="also write scored detections (.jsonl) for plot")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study", help="run Study 1, 2, 3 or 4 and write its report")
    p.add_argument("--id", type=int, required=True, help="study number (1-4)")
    p.add_argument("--manifest", required=True, help="input manifest")
    p.add_argument("--detections", help="detections file used for every experiment")
    p.add_argument("--simulate", metavar="CONFIG", help="use the simulated detector with this config")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--trials", type=int, default=5, help="trials per randomized strategy (default 5)")
    p.add_argument("--per-region-exposure", action="store_true",
                   help="Study 2: one exposure per region instead of one per image")
    p.add_argument("--thresholds", type=float, nargs="+", metavar="T", help="PR-curve grid (default 0.1 ... 0.9)")
    p.add_argument("--no-png", action="store_true", help="skip the matplotlib PNG figure")
    p.add_argument("--out-dir", required=True, help="directory for report files")
    _add_eval_flags(p)
    _add_threads(p)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("plot", help="PR curve over confidence thresholds: CSV, SVG, PNG")
    p.add_argument("--scored", nargs="+", required=True, help="scored detection files (.jsonl)")
    p.add_argument("--thresholds", type=float, nargs="+", metavar="T", help="grid (default 0.1 ... 0.9)")
    p.add_argument("--out-csv", required=True, help="output CSV")
    p.add_argument("--out-svg", help="output SVG")
    p.add_argument("--out-png", help="output PNG (matplotlib)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise CLIError(EXIT_VALIDATION, "validation", "--threads must be >= 1")
        args.func(args)
    except CLIError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except (FormatError, ConfigError) as exc:
        return _fail(EXIT_PARSE, "parse", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", f"{exc.strerror or exc}: {exc.filename or ''}".rstrip(": "))
    except (ValueError, ModelError) as exc:
        return _fail(EXIT_VALIDATION, "validation", str(exc))
    return 0


def _fail(code: int, kind: str, message: str) -> int:
    message = " ".join(message.split())
    print(f"error: {kind}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
