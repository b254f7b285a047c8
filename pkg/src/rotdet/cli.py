"""``rotdet`` command line: tile, eval, nms, selfcheck, bench.

Exit codes: 0 success, 1 self-check failure, 2 I/O error, 3 data-contract
error (bad config, unknown category, malformed inputs).
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import dota, geometry, postprocess
from .config import Config, ConfigError, load_config

EXIT_OK, EXIT_CHECK, EXIT_IO, EXIT_DATA = 0, 1, 2, 3
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _err(msg: str):
    print(f"error: {msg}", file=sys.stderr)


def _warn(msg: str):
    print(f"warning: {msg}", file=sys.stderr)


def _require_dir(path: Path, what: str):
    if not path.is_dir():
        raise CliError(f"{what} not found: {path}", EXIT_IO)


# --- tile -------------------------------------------------------------------


def _tile_spec(args, cfg: Config) -> dota.TileSpec:
    base = dota.PRESETS[args.preset or cfg.tile.preset]
    if args.patch_size is None and args.overlap is None and args.scales is None:
        return base
    try:
        return dota.TileSpec(
            args.patch_size if args.patch_size is not None else base.patch_size,
            args.overlap if args.overlap is not None else base.overlap,
            tuple(args.scales) if args.scales is not None else base.scales,
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def _crop(image, tile: dota.Tile, out_path: Path):
    from PIL import Image

    if tile.scale != 1.0:
        size = (dota.scaled_size(image.width, tile.scale), dota.scaled_size(image.height, tile.scale))
        image = image.resize(size, Image.BILINEAR)
    s = tile.patch_size
    patch = Image.new(image.mode, (s, s))
    patch.paste(image.crop((tile.x0, tile.y0, min(tile.x0 + s, image.width), min(tile.y0 + s, image.height))))
    patch.save(out_path)


def cmd_tile(args, cfg: Config) -> int:
    from PIL import Image

    images_dir, annos_dir, out_dir = Path(args.images_dir), Path(args.annos_dir), Path(args.out_dir)
    _require_dir(images_dir, "image directory")
    _require_dir(annos_dir, "annotation directory")
    spec = _tile_spec(args, cfg)
    keep_frac = args.keep_frac if args.keep_frac is not None else cfg.tile.keep_frac

    images = sorted(p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise CliError(f"no images found in {images_dir}", EXIT_IO)
    jobs = []
    for img in images:
        anno = annos_dir / f"{img.stem}.txt"
        if not anno.is_file():
            raise CliError(f"missing annotation file: {anno}", EXIT_IO)
        jobs.append((img, anno))

    try:
        (out_dir / "labelTxt").mkdir(parents=True, exist_ok=True)
        if args.crop_images:
            (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out_dir}: {exc}", EXIT_IO) from exc

    manifest = []
    total = 0
    for img, anno in jobs:
        annos, errors = dota.parse_dota(anno.read_text(encoding="utf-8"))
        for e in errors:
            _warn(f"{anno}: {e}")
        with Image.open(img) as im:
            width, height = im.size
            tiles = dota.plan_tiles(width, height, spec)
            for t in tiles:
                name = dota.tile_name(img.stem, t)
                kept = dota.clip_annotations_to_tile(annos, t, keep_frac)
                (out_dir / "labelTxt" / f"{name}.txt").write_text(dota.format_dota(kept))
                if args.crop_images:
                    _crop(im, t, out_dir / "images" / f"{name}.png")
                manifest.append((img.name, t))
        print(f"{img.stem}: {len(tiles)} tiles")
        total += len(tiles)
    dota.write_manifest(out_dir / "manifest.csv", manifest)
    print(f"total: {total} tiles from {len(jobs)} images -> {out_dir / 'manifest.csv'}")
    return EXIT_OK


# --- eval -------------------------------------------------------------------


def load_ground_truth(gt_dir: Path) -> dict[str, list[dota.DotaAnnotation]]:
    gts = {}
    for path in sorted(gt_dir.glob("*.txt")):
        annos, errors = dota.parse_dota(path.read_text(encoding="utf-8"))
        for e in errors:
            _warn(f"{path}: {e}")
        gts[path.stem] = annos
    return gts


def cmd_eval(args, cfg: Config) -> int:
    gt_dir, det_dir = Path(args.gt_dir), Path(args.det_dir)
    _require_dir(gt_dir, "ground-truth directory")
    _require_dir(det_dir, "detection directory")
    iou = args.iou if args.iou is not None else cfg.eval.iou_threshold
    try:
        gts = load_ground_truth(gt_dir)
        dets, problems = dota.read_task1(det_dir)
        for p in problems:
            _warn(p)
        report = dota.evaluate_map(gts, dets, iou, use_07_metric=cfg.eval.use_07_metric)
    except dota.CategoryError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc

    table = report.table()
    print(table, end="")
    if args.report:
        path = Path(args.report)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(table)
            path.with_suffix(".kv").write_text(report.key_values())
        except OSError as exc:
            raise CliError(f"cannot write report {path}: {exc}", EXIT_IO) from exc
        print(f"report: {path} and {path.with_suffix('.kv')}")
    return EXIT_OK


# --- nms --------------------------------------------------------------------


def cmd_nms(args, cfg: Config) -> int:
    det_dir, out_dir = Path(args.det_dir), Path(args.out_dir)
    _require_dir(det_dir, "detection directory")
    iou = args.iou if args.iou is not None else cfg.nms.iou_threshold
    class_aware = cfg.nms.class_aware and not args.class_agnostic
    try:
        raw, problems = dota.read_task1(det_dir)
    except dota.CategoryError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    for p in problems:
        _warn(p)
    kept = {}
    before = after = 0
    for image_id in sorted(raw):
        dets = []
        for d in raw[image_id]:
            try:
                dets.append(postprocess.Detection(dota.quad_to_rbox(d.quad), d.score, d.class_id))
            except geometry.InvalidBoxError as exc:
                _warn(f"{image_id}: skipping degenerate detection ({exc})")
        kept[image_id] = postprocess.rotated_nms(dets, iou, class_aware)
        before += len(dets)
        after += len(kept[image_id])
    try:
        dota.write_task1(out_dir, kept)
    except OSError as exc:
        raise CliError(f"cannot write to {out_dir}: {exc}", EXIT_IO) from exc
    print(f"nms: {before} -> {after} detections over {len(raw)} images (iou={iou}, class_aware={class_aware})")
    return EXIT_OK


# --- selfcheck / bench ------------------------------------------------------


def cmd_selfcheck(args, cfg: Config) -> int:
    from .selfcheck import run_all

    start = time.perf_counter()
    results = run_all(args.seed, echo=print)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - start:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


def _digest(values) -> str:
    flat = np.concatenate([np.ravel(np.asarray(v, dtype=np.float64)) for v in values])
    return hashlib.sha1(flat.tobytes()).hexdigest()[:12]


def cmd_bench(args, cfg: Config) -> int:
    from . import gaussian, oracles
    from .sampling import random_pair, random_scene

    if args.n < 1:
        raise CliError("--n must be >= 1", EXIT_DATA)
    rng = np.random.default_rng(args.seed)
    n = args.n
    if args.kernel == "skew_iou":
        pairs = [random_pair(rng) for _ in range(n)]
        digest = _digest([b.as_array() for p in pairs for b in p])
        start = time.perf_counter()
        total = sum(geometry.skew_iou(a, b) for a, b in pairs)
        elapsed = time.perf_counter() - start
        unit = "pairs"
        summary = f"mean_iou={total / n:.6f}"
    elif args.kernel == "probiou":
        pairs = [random_pair(rng) for _ in range(n)]
        digest = _digest([b.as_array() for p in pairs for b in p])
        start = time.perf_counter()
        total = sum(gaussian.probiou_loss(a, b).value for a, b in pairs)
        elapsed = time.perf_counter() - start
        unit = "pairs"
        summary = f"mean_loss={total / n:.6f}"
    else:
        boxes, scores, classes = random_scene(rng, n, extent=20.0 * np.sqrt(n))
        digest = _digest([b.as_array() for b in boxes] + [scores, classes])
        dets = [postprocess.Detection(b, float(s), int(c)) for b, s, c in zip(boxes, scores, classes)]
        iou = cfg.nms.iou_threshold
        start = time.perf_counter()
        kept = postprocess.rotated_nms(dets, iou, cfg.nms.class_aware)
        elapsed = time.perf_counter() - start
        unit = "boxes"
        summary = f"kept={len(kept)}"
        if args.verify:
            ref = oracles.brute_force_nms(boxes, scores, classes, iou, cfg.nms.class_aware)
            ok = len(ref) == len(kept)
            summary += f" oracle_kept={len(ref)} verify={'ok' if ok else 'MISMATCH'}"
            if not ok:
                print(f"{args.kernel}: n={n} seed={args.seed} inputs={digest} {summary}")
                return EXIT_CHECK
    rate = n / elapsed if elapsed > 0 else float("inf")
    print(f"{args.kernel}: n={n} seed={args.seed} inputs={digest} {summary} time={elapsed:.3f}s {unit}/sec={rate:,.0f}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; command-line flags take precedence")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")

    parser = argparse.ArgumentParser(prog="rotdet", description="Rotated-box detection tooling: tiling, evaluation, NMS, self-checks and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tile", parents=[common], help="plan tiles and crop DOTA annotations")
    p.add_argument("images_dir")
    p.add_argument("annos_dir")
    p.add_argument("out_dir")
    p.add_argument("--preset", choices=sorted(dota.PRESETS))
    p.add_argument("--patch-size", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--scales", type=float, nargs="+")
    p.add_argument("--keep-frac", type=float)
    p.add_argument("--crop-images", action="store_true", help="also write cropped image patches")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("eval", parents=[common], help="rotated mAP of task-1 results")
    p.add_argument("gt_dir")
    p.add_argument("det_dir")
    p.add_argument("--iou", type=float)
    p.add_argument("--report", help="table output path; key=value metrics go next to it with a .kv suffix")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("nms", parents=[common], help="rotated NMS over task-1 result files")
    p.add_argument("det_dir")
    p.add_argument("out_dir")
    p.add_argument("--iou", type=float)
    p.add_argument("--class-agnostic", action="store_true")
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("selfcheck", parents=[common], help="run the numerical self-checks")
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("bench", parents=[common], help="kernel throughput")
    p.add_argument("kernel", choices=["skew_iou", "probiou", "nms"])
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--verify", action="store_true", help="compare nms against the brute-force oracle")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if getattr(args, "iou", None) is not None:
            section = "eval" if args.command == "eval" else "nms"
            cfg = cfg.override(section, iou_threshold=args.iou)
        if getattr(args, "keep_frac", None) is not None:
            cfg = cfg.override("tile", keep_frac=args.keep_frac)
        return args.func(args, cfg)
    except FileNotFoundError as exc:
        _err(f"cannot read {exc.filename}")
        return EXIT_IO
    except ConfigError as exc:
        _err(f"config: {exc}")
        return EXIT_DATA
    except CliError as exc:
        _err(str(exc))
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
