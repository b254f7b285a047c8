"""DOTA annotations, image tiling and rotated VOC-style mAP evaluation."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import (
    InvalidBoxError,
    Quad,
    RotatedBox,
    canonicalize,
    clip_convex,
    polygon_area,
    polygon_iou,
    rbox_to_corners,
)
from .postprocess import Detection, rotated_nms

DOTA_CLASSES = (
    "plane",
    "baseball-diamond",
    "bridge",
    "ground-track-field",
    "small-vehicle",
    "large-vehicle",
    "ship",
    "tennis-court",
    "basketball-court",
    "storage-tank",
    "soccer-ball-field",
    "roundabout",
    "harbor",
    "swimming-pool",
    "helicopter",
)
DOTA_ABBREV = dict(
    zip(DOTA_CLASSES, "PL BD BR GTF SV LV SH TC BC ST SBF RA HA SP HC".split())
)


class CategoryError(ValueError):
    """A category name or id outside the evaluation vocabulary."""


@dataclass(frozen=True)
class DotaAnnotation:
    quad: Quad
    category: str
    difficulty: int = 0


@dataclass(frozen=True)
class LineError:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def parse_dota(text: str) -> tuple[list[DotaAnnotation], list[LineError]]:
    """Parse DOTA ``x1 y1 ... x4 y4 category difficulty`` lines.

    Lines whose first token is not numeric (``imagesource:``, ``gsd:``) are
    headers and skipped. Malformed lines are collected as errors rather
    than aborting the parse.
    """
    annos: list[DotaAnnotation] = []
    errors: list[LineError] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = raw.split()
        if not toks or not _is_number(toks[0]):
            continue
        if len(toks) != 10:
            errors.append(LineError(lineno, f"expected 10 tokens, got {len(toks)}"))
            continue
        try:
            coords = [float(t) for t in toks[:8]]
        except ValueError:
            errors.append(LineError(lineno, "non-numeric coordinate"))
            continue
        try:
            difficulty = int(toks[9])
        except ValueError:
            errors.append(LineError(lineno, f"bad difficulty {toks[9]!r}"))
            continue
        if difficulty not in (0, 1):
            errors.append(LineError(lineno, f"difficulty must be 0 or 1, got {difficulty}"))
            continue
        try:
            quad = Quad.from_points(coords)
        except InvalidBoxError as exc:
            errors.append(LineError(lineno, str(exc)))
            continue
        annos.append(DotaAnnotation(quad, toks[8], difficulty))
    return annos, errors


def format_dota(annos: Iterable[DotaAnnotation]) -> str:
    lines = []
    for a in annos:
        coords = " ".join(f"{v:.2f}" for v in a.quad.flat())
        lines.append(f"{coords} {a.category} {a.difficulty}")
    return "\n".join(lines) + ("\n" if lines else "")


def quad_to_rbox(quad: Quad | np.ndarray) -> RotatedBox:
    """Minimum-area rotated rectangle enclosing a convex polygon.

    Rotating calipers: the optimal rectangle has one side collinear with a
    hull edge, so every edge direction is tried.
    """
    pts = quad.vertices if isinstance(quad, Quad) else np.asarray(quad, dtype=np.float64)
    best = None
    n = len(pts)
    for i in range(n):
        edge = pts[(i + 1) % n] - pts[i]
        length = math.hypot(edge[0], edge[1])
        if length == 0:
            continue
        u = edge / length
        v = np.array([-u[1], u[0]])
        pu, pv = pts @ u, pts @ v
        w, h = pu.max() - pu.min(), pv.max() - pv.min()
        area = w * h
        if best is None or area < best[0]:
            mu, mv = 0.5 * (pu.max() + pu.min()), 0.5 * (pv.max() + pv.min())
            center = mu * u + mv * v
            best = (area, center, w, h, math.atan2(u[1], u[0]))
    scale = max(1.0, float(np.abs(pts).max()))
    if best is None or best[2] <= 1e-9 * scale or best[3] <= 1e-9 * scale:
        raise InvalidBoxError("degenerate polygon has zero extent")
    _, center, w, h, theta = best
    return canonicalize(RotatedBox(float(center[0]), float(center[1]), float(w), float(h), theta))


# --- tiling -----------------------------------------------------------------


@dataclass(frozen=True)
class TileSpec:
    patch_size: int = 1024
    overlap: int = 256
    scales: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if not 0 <= self.overlap < self.patch_size:
            raise ValueError("overlap must satisfy 0 <= overlap < patch_size")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be non-empty and positive")

    @property
    def stride(self) -> int:
        return self.patch_size - self.overlap


PRESETS = {
    "dota-ss": TileSpec(1024, 256, (1.0,)),
    "dota-ms": TileSpec(1024, 500, (0.5, 1.0, 1.5)),
}


@dataclass(frozen=True)
class Tile:
    scale: float
    x0: int
    y0: int
    patch_size: int

    def polygon(self) -> np.ndarray:
        x0, y0, s = self.x0, self.y0, self.patch_size
        return np.array([[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]], dtype=np.float64)


def scaled_size(size: int, scale: float) -> int:
    return int(math.floor(size * scale + 0.5))


def axis_offsets(size: int, patch: int, stride: int) -> list[int]:
    """Window offsets along one axis; the last window is clamped to the edge."""
    offsets = []
    off = 0
    while True:
        if off + patch >= size:
            offsets.append(max(size - patch, 0))
            return offsets
        offsets.append(off)
        off += stride


def plan_tiles(image_w: int, image_h: int, spec: TileSpec) -> list[Tile]:
    """Tiles per scale, row-major; offsets refer to the rescaled image."""
    tiles = []
    for scale in spec.scales:
        sw, sh = scaled_size(image_w, scale), scaled_size(image_h, scale)
        xs = axis_offsets(sw, spec.patch_size, spec.stride)
        ys = axis_offsets(sh, spec.patch_size, spec.stride)
        tiles.extend(Tile(scale, x, y, spec.patch_size) for y in ys for x in xs)
    return tiles


def clip_annotations_to_tile(
    annos: Sequence[DotaAnnotation], tile: Tile, keep_frac: float = 0.5
) -> list[DotaAnnotation]:
    """Annotations covering at least ``keep_frac`` of their area inside the tile.

    Kept quads are scaled by the tile scale and translated into tile
    coordinates; they are not cut at the tile border.
    """
    window = tile.polygon()
    out = []
    for a in annos:
        pts = a.quad.vertices * tile.scale
        area = polygon_area(pts)
        if area <= 0:
            continue
        inter = polygon_area(clip_convex(pts, window))
        if inter <= 0 or inter / area < keep_frac:
            continue
        moved = pts - np.array([tile.x0, tile.y0], dtype=np.float64)
        out.append(DotaAnnotation(Quad(moved), a.category, a.difficulty))
    return out


def tile_to_image(det: Detection, tile: Tile) -> Detection:
    b = det.box
    s = tile.scale
    box = RotatedBox((b.cx + tile.x0) / s, (b.cy + tile.y0) / s, b.w / s, b.h / s, b.theta)
    return Detection(box, det.score, det.class_id)


def merge_tile_detections(
    per_tile: Iterable[tuple[Tile, Sequence[Detection]]], iou_threshold: float = 0.1
) -> list[Detection]:
    """Map tile detections back to the source image and run class-aware NMS."""
    dets = [tile_to_image(d, tile) for tile, ds in per_tile for d in ds]
    return rotated_nms(dets, iou_threshold, class_aware=True)


def write_manifest(path: Path, rows: Iterable[tuple[str, Tile]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image", "scale", "x0", "y0", "patch_size"])
        for image, t in rows:
            writer.writerow([image, f"{t.scale:g}", t.x0, t.y0, t.patch_size])


def read_manifest(path: Path) -> list[tuple[str, Tile]]:
    with open(path, newline="") as f:
        return [
            (r["image"], Tile(float(r["scale"]), int(r["x0"]), int(r["y0"]), int(r["patch_size"])))
            for r in csv.DictReader(f)
        ]


def tile_name(image: str, tile: Tile) -> str:
    return f"{image}__{tile.scale:g}__{tile.x0}___{tile.y0}"


# --- task-1 result files ----------------------------------------------------


def format_task1_line(image_id: str, score: float, quad_xy: Sequence[float]) -> str:
    coords = " ".join(f"{v:.2f}" for v in quad_xy)
    return f"{image_id} {score:.4f} {coords}"


def write_task1(out_dir: Path, dets: Mapping[str, Sequence[Detection]], classes=DOTA_CLASSES) -> list[Path]:
    """Write one ``Task1_<class>.txt`` per class, images in sorted order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines: dict[int, list[str]] = defaultdict(list)
    for image_id in sorted(dets):
        for d in dets[image_id]:
            if not 0 <= d.class_id < len(classes):
                raise CategoryError(f"class id {d.class_id} outside vocabulary")
            corners = rbox_to_corners(d.box).reshape(-1)
            lines[d.class_id].append(format_task1_line(image_id, d.score, corners))
    paths = []
    for cid, name in enumerate(classes):
        path = out_dir / f"Task1_{name}.txt"
        body = "\n".join(lines.get(cid, []))
        path.write_text(body + ("\n" if body else ""))
        paths.append(path)
    return paths


@dataclass(frozen=True)
class QuadDetection:
    """A task-1 style detection: polygon, score and class."""

    quad: np.ndarray
    score: float
    class_id: int


def read_task1(det_dir: Path, classes=DOTA_CLASSES) -> tuple[dict[str, list[QuadDetection]], list[str]]:
    """Read ``Task1_<class>.txt`` files.

    Returns detections per image and a list of problems. A result file for
    a category outside ``classes`` raises :class:`CategoryError`.
    """
    det_dir = Path(det_dir)
    index = {c: i for i, c in enumerate(classes)}
    out: dict[str, list[QuadDetection]] = defaultdict(list)
    problems = []
    for path in sorted(det_dir.glob("Task1_*.txt")):
        name = path.stem[len("Task1_"):]
        if name not in index:
            raise CategoryError(f"{path}: category {name!r} not in vocabulary")
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            toks = raw.split()
            if not toks:
                continue
            if len(toks) != 10:
                problems.append(f"{path}:{lineno}: expected 10 tokens, got {len(toks)}")
                continue
            try:
                score = float(toks[1])
                quad = Quad.from_points([float(t) for t in toks[2:]]).vertices
            except (ValueError, InvalidBoxError) as exc:
                problems.append(f"{path}:{lineno}: {exc}")
                continue
            out[toks[0]].append(QuadDetection(quad, score, index[name]))
    return dict(out), problems


# --- evaluation -------------------------------------------------------------


@dataclass
class EvalReport:
    classes: tuple[str, ...]
    ap: dict[str, float]  # nan for classes without ground truth
    num_gt: dict[str, int]
    precision: dict[str, np.ndarray] = field(default_factory=dict)
    recall: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def mAP(self) -> float:
        vals = [self.ap[c] for c in self.classes if self.num_gt[c] > 0]
        return float(np.mean(vals)) if vals else 0.0

    def table(self, abbreviate: bool = True) -> str:
        names = [DOTA_ABBREV.get(c, c) if abbreviate else c for c in self.classes]
        cells = [
            "-" if self.num_gt[c] == 0 else f"{100 * self.ap[c]:.2f}" for c in self.classes
        ]
        widths = [max(len(n), len(v)) for n, v in zip(names, cells)]
        head = " | ".join(n.rjust(w) for n, w in zip(names, widths)) + " | mAP"
        row = " | ".join(v.rjust(w) for v, w in zip(cells, widths)) + f" | {100 * self.mAP:.2f}"
        return head + "\n" + row + "\n"

    def key_values(self) -> str:
        lines = [f"{c}={self.ap[c]:.6f}" for c in self.classes if self.num_gt[c] > 0]
        lines.append(f"mAP={self.mAP:.6f}")
        return "\n".join(lines) + "\n"


def voc_ap(recall: np.ndarray, precision: np.ndarray, use_07_metric: bool = False) -> float:
    """Area under the PR curve, all-points interpolated (or VOC07 11-point)."""
    if use_07_metric:
        ap = 0.0
        for t in np.arange(0.0, 1.1, 0.1):
            p = precision[recall >= t]
            ap += (p.max() if p.size else 0.0) / 11.0
        return float(ap)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    i = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def _det_polygon(d) -> np.ndarray:
    if isinstance(d, QuadDetection):
        return d.quad
    return rbox_to_corners(d.box)


def evaluate_map(
    gts: Mapping[str, Sequence[DotaAnnotation]],
    dets: Mapping[str, Sequence[Detection | QuadDetection]],
    iou_threshold: float = 0.5,
    classes: Sequence[str] = DOTA_CLASSES,
    use_07_metric: bool = False,
) -> EvalReport:
    """Rotated VOC-style AP per class and their mean.

    Detections of a class are visited by descending score (ties by image id
    then input position). Each takes the unmatched ground truth of its image
    with the highest polygon IoU; at or above ``iou_threshold`` it is a true
    positive, unless that ground truth is difficult, in which case the
    detection is ignored. Difficult ground truths do not count towards
    recall.
    """
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    for image_id, annos in gts.items():
        for a in annos:
            if a.category not in index:
                raise CategoryError(f"ground truth category {a.category!r} in {image_id} not in vocabulary")
    for image_id, ds in dets.items():
        for d in ds:
            if not 0 <= d.class_id < len(classes):
                raise CategoryError(f"detection class id {d.class_id} in {image_id} not in vocabulary")

    report = EvalReport(classes, {}, {})
    for cid, cname in enumerate(classes):
        gt_polys: dict[str, list[np.ndarray]] = {}
        gt_diff: dict[str, list[bool]] = {}
        npos = 0
        for image_id, annos in gts.items():
            mine = [a for a in annos if a.category == cname]
            gt_polys[image_id] = [a.quad.vertices for a in mine]
            gt_diff[image_id] = [a.difficulty == 1 for a in mine]
            npos += sum(1 for a in mine if a.difficulty != 1)
        report.num_gt[cname] = npos

        cands = [
            (-d.score, image_id, k, d)
            for image_id, ds in dets.items()
            for k, d in enumerate(ds)
            if d.class_id == cid
        ]
        cands.sort(key=lambda c: c[:3])
        matched = {image_id: [False] * len(p) for image_id, p in gt_polys.items()}
        tp, fp = [], []
        for _, image_id, _, d in cands:
            polys = gt_polys.get(image_id, [])
            best, best_j = -1.0, -1
            poly = _det_polygon(d)
            for j, g in enumerate(polys):
                if matched[image_id][j]:
                    continue
                iou = polygon_iou(poly, g)
                if iou > best:
                    best, best_j = iou, j
            if best_j >= 0 and best >= iou_threshold:
                if gt_diff[image_id][best_j]:
                    continue
                matched[image_id][best_j] = True
                tp.append(1.0)
                fp.append(0.0)
            else:
                tp.append(0.0)
                fp.append(1.0)
        ctp, cfp = np.cumsum(tp), np.cumsum(fp)
        rec = ctp / npos if npos > 0 else np.zeros_like(ctp)
        prec = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).eps)
        report.precision[cname] = prec
        report.recall[cname] = rec
        report.ap[cname] = voc_ap(rec, prec, use_07_metric) if npos > 0 else math.nan
    return report
