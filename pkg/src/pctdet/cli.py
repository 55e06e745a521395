"""Command-line front end.

Subcommands: ``train``, ``detect``, ``eval``, ``noise-sweep``,
``synth-data``, ``info``.  Every command prints a ``#``-prefixed config
header (seed included) from which the run can be reproduced.  Exit codes:
0 success, 2 usage or missing input, 3 image/input data failure,
4 training abort, 5 model format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import cascade as casc
from . import dataset, evaluation, model_io
from .cluster import FinalDetection
from .detector import CascadeDetector
from .errors import AnnotationError, ImageFormatError, ModelFormatError, \
    PctError, TrainingError
from .image import OrientationTable, load_image
from .scanner import ScanParams, build_rotated_cascades

_IMAGE_EXTS = (".pgm", ".raw", ".gray")


def _config_header(cmd: str, args, keys) -> str:
    parts = [f"seed={getattr(args, 'seed', 0)}"]
    parts += [f"{k.replace('_', '-')}={getattr(args, k)}" for k in keys]
    return f"# pctdet {cmd} " + " ".join(parts)


def _list_images(path) -> list[str]:
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path)
                       if n.lower().endswith(_IMAGE_EXTS))
        return [os.path.join(path, n) for n in names]
    return [path]


def _scan_params(args) -> ScanParams:
    return ScanParams(min_size=args.min_size, max_size=args.max_size,
                      scale_factor=args.scale, stride_factor=args.stride,
                      n_orientations=args.orientations)


def _add_scan_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-size", type=int, default=24)
    p.add_argument("--max-size", type=int, default=None)
    p.add_argument("--scale", type=float, default=1.2)
    p.add_argument("--stride", type=float, default=0.1)
    p.add_argument("--orientations", type=int, default=1,
                   help="scan orientations (1 = upright only)")
    p.add_argument("--cluster", type=float, default=0.3,
                   help="overlap threshold for merging raw detections")
    p.add_argument("--threads", type=int, default=1)


def cmd_train(args) -> int:
    print(_config_header("train", args, ["depth", "candidates", "augment",
                                         "pos_jitter", "scale_jitter"]))
    pairs, _ = dataset.load_corpus(args.annotations, args.images_dir)
    backgrounds = [load_image(p) for p in _list_images(args.backgrounds)]
    if args.schedule is not None:
        with open(args.schedule, "r", encoding="utf-8") as f:
            schedule = casc.parse_schedule(f.read())
    else:
        schedule = casc.default_schedule()

    det = CascadeDetector(
        depth=args.depth, n_candidates=args.candidates, schedule=schedule,
        n_augment=args.augment, pos_jitter=args.pos_jitter,
        scale_jitter=args.scale_jitter, draw_budget=args.draw_budget,
        random_state=args.seed)
    images = [img for img, _ in pairs] + backgrounds
    boxes = [[a] for _, a in pairs] + [[] for _ in backgrounds]

    def progress(r):
        print(f"# stage {r.stage}: trees={r.n_trees} "
              f"tpr={r.tpr_achieved:.4f} (target {r.tpr_target:g}) "
              f"fpr~{r.fpr_estimate:.4f} "
              f"pos={r.n_positives} neg={r.n_negatives}")
        sys.stdout.flush()

    det.fit(images, boxes, progress=progress)
    print(casc.format_report(det.reports_))
    blob = model_io.serialize(det.cascade_)
    with open(args.out, "wb") as f:
        f.write(blob)
    print(f"# wrote {args.out}: {len(blob)} bytes, "
          f"{len(det.cascade_.stages)} stages, {det.cascade_.n_trees} trees")
    return 0


def _format_detection(path: str, d: FinalDetection, fmt: str):
    if fmt == "csv":
        return (f"{path},{d.row:.2f},{d.col:.2f},{d.size:.2f},"
                f"{d.score:.4f},{d.count},{d.orientation}")
    if fmt == "jsonl":
        return json.dumps({"path": path, "row": round(d.row, 2),
                           "col": round(d.col, 2), "size": round(d.size, 2),
                           "score": round(d.score, 4), "count": d.count,
                           "orientation": d.orientation})
    return (f"{path} {d.row:.2f} {d.col:.2f} {d.size:.2f} "
            f"{d.score:.4f} {d.count} {d.orientation}")


def _detect_many(cascade, paths, params, cluster_threshold, threads):
    """Detect over many images, tolerating unreadable files.

    Returns (results, n_failed); results are (path, detections) in input
    order with unreadable images skipped.
    """
    if params.n_orientations == 1:
        rotated = [cascade]
    else:
        rotated = build_rotated_cascades(
            cascade, OrientationTable.build(params.n_orientations))

    def one(path):
        img = load_image(path)
        return evaluation.detect_image(cascade, img, params,
                                       cluster_threshold, rotated)

    results = []
    failed = 0
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [(p, pool.submit(one, p)) for p in paths]
            for path, fut in futures:
                try:
                    results.append((path, fut.result()))
                except (OSError, ImageFormatError) as e:
                    print(f"warning: {path}: {e}", file=sys.stderr)
                    failed += 1
    else:
        for path in paths:
            try:
                results.append((path, one(path)))
            except (OSError, ImageFormatError) as e:
                print(f"warning: {path}: {e}", file=sys.stderr)
                failed += 1
    return results, failed


def cmd_detect(args) -> int:
    cascade = model_io.load_model(args.model)
    paths = [p for spec in args.images for p in _list_images(spec)]
    params = _scan_params(args)
    header = _config_header("detect", args,
                            ["model", "min_size", "max_size", "scale",
                             "stride", "orientations", "cluster", "format"])
    if args.format == "jsonl":
        print(json.dumps({"config": header[2:]}))
    elif args.format == "csv":
        print(header)
        print("path,row,col,size,score,count,orientation")
    else:
        print(header)
    results, failed = _detect_many(cascade, paths, params, args.cluster,
                                   args.threads)
    for path, dets in results:
        for d in dets:
            print(_format_detection(path, d, args.format))
    if paths and failed == len(paths):
        return 3
    return 0


def _load_eval_corpus(args):
    pairs, _ = dataset.load_corpus(args.annotations, args.images_dir)
    by_image: dict[int, list] = {}
    images = []
    truths = []
    for img, anno in pairs:
        key = id(img)
        if key not in by_image:
            by_image[key] = []
            images.append(img)
            truths.append(by_image[key])
        by_image[key].append(anno)
    return images, truths


def _parse_detections_csv(path):
    per_path: dict[str, list] = {}
    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#") or line.startswith("path,"):
                continue
            p, row, col, size, score, count, orient = line.split(",")
            per_path.setdefault(p, []).append(FinalDetection(
                float(row), float(col), float(size), float(score),
                int(count), int(orient)))
    return per_path


def cmd_eval(args) -> int:
    out_lines = [_config_header("eval", args, ["model", "min_overlap"])]
    if args.detections is not None:
        per_path = _parse_detections_csv(args.detections)
        annos = dataset.load_annotations(args.annotations)
        truths_by_path: dict[str, list] = {}
        for a in annos:
            truths_by_path.setdefault(a.path, []).append(a)
        keys = sorted(set(per_path) | set(truths_by_path))
        dets = [per_path.get(k, []) for k in keys]
        truths = [truths_by_path.get(k, []) for k in keys]
    else:
        if args.model is None:
            raise AnnotationError("need --model or --detections")
        cascade = model_io.load_model(args.model)
        images, truths = _load_eval_corpus(args)
        params = _scan_params(args)
        rotated = [cascade] if params.n_orientations == 1 else \
            build_rotated_cascades(
                cascade, OrientationTable.build(params.n_orientations))

        def one(img):
            return evaluation.detect_image(cascade, img, params,
                                           args.cluster, rotated)

        if args.threads > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                dets = list(pool.map(one, images))
        else:
            dets = [one(img) for img in images]
    points = evaluation.roc_curve(dets, truths, args.min_overlap)
    out = out_lines[0] + "\n" + evaluation.roc_csv(points)
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(out)
    else:
        sys.stdout.write(out)
    return 0


def cmd_noise_sweep(args) -> int:
    cascade = model_io.load_model(args.model)
    sigmas = [float(s) for s in args.sigmas.split(",")]
    images, truths = _load_eval_corpus(args)
    params = _scan_params(args)
    rates = evaluation.noise_sweep(cascade, list(zip(images, truths)),
                                   sigmas, params, seed=args.seed,
                                   cluster_threshold=args.cluster,
                                   min_overlap=args.min_overlap)
    out = (_config_header("noise-sweep", args, ["model", "sigmas"]) + "\n"
           + evaluation.sweep_csv(rates))
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(out)
    else:
        sys.stdout.write(out)
    return 0


def cmd_synth_data(args) -> int:
    print(_config_header("synth-data", args,
                         ["count", "width", "height", "objects",
                          "min_size", "max_size", "rotation_safe"]))
    spec = dataset.SynthSpec(
        width=args.width, height=args.height,
        objects_per_image=args.objects,
        size_range=(args.min_size, args.max_size),
        contrast_range=(args.min_contrast, args.max_contrast),
        rotation_safe=args.rotation_safe)
    corpus = dataset.generate_synthetic(spec, args.count, seed=args.seed)
    anno_path = dataset.write_corpus(corpus, args.out)
    print(f"# wrote {args.count} images to {args.out} "
          f"({sum(1 for c in corpus if c.annotation is not None)} annotated, "
          f"index {anno_path})")
    return 0


def cmd_info(args) -> int:
    with open(args.model, "rb") as f:
        blob = f.read()
    cascade = model_io.deserialize(blob)
    print(_config_header("info", args, ["model"]))
    print(f"format version {model_io.VERSION}")
    print(f"depth {cascade.depth}")
    print(f"stages {len(cascade.stages)}")
    print(f"trees {cascade.n_trees}")
    print(f"bytes {len(blob)}")
    for i, stage in enumerate(cascade.stages):
        print(f"stage {i}: trees={len(stage.trees)} "
              f"threshold={stage.threshold:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pctdet",
        description="Cascaded comparison-tree object detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a cascade")
    p.add_argument("--annotations", required=True)
    p.add_argument("--images-dir", default=None)
    p.add_argument("--backgrounds", required=True,
                   help="directory of object-free images for mining")
    p.add_argument("--schedule", default=None,
                   help="stage schedule file; defaults to the stock "
                        "20-stage schedule")
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=casc.DEFAULT_DEPTH)
    p.add_argument("--candidates", type=int, default=casc.DEFAULT_CANDIDATES)
    p.add_argument("--augment", type=int, default=15)
    p.add_argument("--pos-jitter", type=float, default=0.05)
    p.add_argument("--scale-jitter", type=float, default=0.10)
    p.add_argument("--draw-budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run a model over images")
    p.add_argument("--model", required=True)
    p.add_argument("images", nargs="+", help="image files or directories")
    _add_scan_flags(p)
    p.add_argument("--format", choices=("text", "csv", "jsonl"),
                   default="text")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="ROC sweep against ground truth")
    p.add_argument("--model", default=None)
    p.add_argument("--detections", default=None,
                   help="CSV from 'detect --format csv' instead of a model")
    p.add_argument("--annotations", required=True)
    p.add_argument("--images-dir", default=None)
    _add_scan_flags(p)
    p.add_argument("--min-overlap", type=float, default=0.3)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise-sweep", help="detection rate vs noise level")
    p.add_argument("--model", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--images-dir", default=None)
    p.add_argument("--sigmas", default="0,8,16,32")
    _add_scan_flags(p)
    p.add_argument("--min-overlap", type=float, default=0.3)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--objects", type=int, default=1, choices=(0, 1))
    p.add_argument("--min-size", type=int, default=28)
    p.add_argument("--max-size", type=int, default=72)
    p.add_argument("--min-contrast", type=float, default=40.0)
    p.add_argument("--max-contrast", type=float, default=110.0)
    p.add_argument("--rotation-safe", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("info", help="describe a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    except TrainingError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except ImageFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (AnnotationError, FileNotFoundError, IsADirectoryError,
            NotADirectoryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PctError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
