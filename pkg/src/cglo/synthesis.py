"""Mixed background/foreground synthesis for detection scenes.

A background crop is inverted under the background label, regenerated under
the foreground label, optionally rotated/mirrored, and written back to the
same site in the scene together with a new annotation box.
"""

from __future__ import annotations

import csv
import io
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .generator import GeneratorParams, check_condition, forward
from .trainer import invert

log = logging.getLogger(__name__)

FOREGROUND_LABEL = "foreground"
MAX_CONSECUTIVE_REJECTIONS = 1000
REPORT_HEADER = ["scene_id", "box_index", "x", "y", "side", "inversion_loss", "status"]


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int
    label: str = FOREGROUND_LABEL

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def is_square(self) -> bool:
        return self.w == self.h

    def inside(self, height: int, width: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height


@dataclass
class SceneImage:
    pixels: np.ndarray
    source_id: str = ""

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class AugmentPlan:
    target_count: int = 4
    min_side: int = 16
    max_side: int = 32
    max_overlap_iou: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.target_count < 0:
            raise ValueError("target_count must be >= 0")
        if not 0 < self.min_side <= self.max_side:
            raise ValueError(f"need 0 < min_side <= max_side, got {self.min_side}, {self.max_side}")
        if not 0 <= self.max_overlap_iou < 1:
            raise ValueError(f"max_overlap_iou must lie in [0, 1), got {self.max_overlap_iou}")


@dataclass(frozen=True)
class InvertConfig:
    steps: int = 500
    lr_z: float = 1.0
    geometric: bool = True
    feather: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.lr_z <= 0 or self.feather < 0:
            raise ValueError("invalid inversion settings")


@dataclass
class BoxRecord:
    scene_id: str
    box_index: int
    box: BoundingBox
    inversion_loss: float
    status: str


@dataclass
class AugmentReport:
    scene_id: str
    records: list[BoxRecord] = field(default_factory=list)
    rejection_limited: bool = False

    @property
    def placed(self) -> int:
        return sum(r.status == "ok" for r in self.records)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    return inter / (a.area + b.area - inter)


# ---------------------------------------------------------------------------
# pixel operations
# ---------------------------------------------------------------------------

def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row i holds the linear weights for output sample i (half-pixel centres, edge clamp)."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    c, h, w = img.shape
    if (h, w) == (height, width):
        return img.copy()
    ry, rx = _interp_matrix(height, h), _interp_matrix(width, w)
    return np.einsum("ij,cjk,lk->cil", ry, img, rx)


def _check_box(scene: SceneImage, box: BoundingBox):
    if not box.is_square:
        raise ValueError(f"box {box} is not square")
    if not box.inside(scene.height, scene.width):
        raise ValueError(f"box {box} lies outside the {scene.width}x{scene.height} scene")


def crop_patch(scene: SceneImage, box: BoundingBox, size: int) -> np.ndarray:
    """Copy the square under ``box``, resized to ``size`` if the sides differ."""
    _check_box(scene, box)
    region = scene.pixels[:, box.y:box.y + box.h, box.x:box.x + box.w]
    return region.copy() if box.w == size else resize_bilinear(region, size, size)


def feather_mask(side: int, width: int) -> np.ndarray:
    if width <= 0:
        return np.ones((side, side))
    d = np.arange(side)
    edge = np.minimum(d, side - 1 - d)
    ramp = np.minimum(1.0, (edge + 1) / (width + 1))
    return np.minimum.outer(ramp, ramp)


def paste_patch(scene: SceneImage, patch: np.ndarray, box: BoundingBox, feather: int = 0) -> SceneImage:
    """Return a new scene with ``patch`` written under ``box``; other pixels are copied untouched."""
    _check_box(scene, box)
    if patch.shape[0] != scene.pixels.shape[0]:
        raise ValueError(f"patch has {patch.shape[0]} channels, scene has {scene.pixels.shape[0]}")
    patch = resize_bilinear(patch, box.h, box.w) if patch.shape[1:] != (box.h, box.w) else patch
    out = scene.pixels.copy()
    sl = (slice(None), slice(box.y, box.y + box.h), slice(box.x, box.x + box.w))
    if feather > 0:
        alpha = feather_mask(box.w, feather)
        out[sl] = alpha * patch + (1 - alpha) * out[sl]
    else:
        out[sl] = patch
    return SceneImage(out, scene.source_id)


def geometric_augment(patch: np.ndarray, rot_quarter: int = 0, flip_h: bool = False, flip_v: bool = False) -> np.ndarray:
    """Rotate by ``rot_quarter`` x 90 degrees, then mirror left-right and/or top-bottom."""
    if patch.shape[1] != patch.shape[2]:
        raise ValueError(f"patch must be square, got {patch.shape}")
    out = np.rot90(patch, k=rot_quarter % 4, axes=(1, 2))
    if flip_h:
        out = out[:, :, ::-1]
    if flip_v:
        out = out[:, ::-1, :]
    return np.ascontiguousarray(out)


def switch_condition(params: GeneratorParams, z, from_c, to_c) -> np.ndarray:
    """Regenerate the patch for code ``z`` under label ``to_c`` (weights and code untouched)."""
    check_condition(from_c)
    return forward(params, np.array(z, dtype=np.float64), check_condition(to_c))


# ---------------------------------------------------------------------------
# placement and the scene pipeline
# ---------------------------------------------------------------------------

def scene_seed(seed: int, scene_id: str) -> list[int]:
    return [seed, zlib.crc32(scene_id.encode())]


def plan_placements(scene: SceneImage, existing: list[BoundingBox], plan: AugmentPlan, rng=None):
    """Propose square boxes until the scene holds ``plan.target_count`` of them.

    Returns ``(boxes, rejection_limited)``; the flag is set when sampling
    gave up after too many consecutive rejections.
    """
    if plan.min_side > min(scene.height, scene.width):
        raise ValueError(f"min_side {plan.min_side} exceeds the {scene.width}x{scene.height} scene")
    rng = np.random.default_rng(scene_seed(plan.seed, scene.source_id)) if rng is None else rng
    wanted = max(0, plan.target_count - len(existing))
    taken = list(existing)
    accepted: list[BoundingBox] = []
    max_side = min(plan.max_side, scene.height, scene.width)
    misses = 0
    while len(accepted) < wanted:
        side = int(rng.integers(plan.min_side, max_side + 1))
        x = int(rng.integers(0, scene.width - side + 1))
        y = int(rng.integers(0, scene.height - side + 1))
        box = BoundingBox(x, y, side, side, FOREGROUND_LABEL)
        if all(iou(box, other) <= plan.max_overlap_iou for other in taken):
            accepted.append(box)
            taken.append(box)
            misses = 0
        else:
            misses += 1
            if misses >= MAX_CONSECUTIVE_REJECTIONS:
                log.warning("scene %s: placement stopped after %d consecutive rejections",
                            scene.source_id, misses)
                return accepted, True
    return accepted, False


def augment_scene(params: GeneratorParams, scene: SceneImage, existing_boxes: list[BoundingBox],
                  plan: AugmentPlan, invert_cfg: InvertConfig = InvertConfig()):
    """Plant synthetic foreground objects until the scene reaches the target count.

    Returns ``(new_scene, boxes, report)`` where ``boxes`` lists the existing
    boxes followed by one box per successful placement.
    """
    size = params.config.output_size
    root = np.random.default_rng(scene_seed(plan.seed, scene.source_id))
    place_rng, geo_rng = root.spawn(2)
    placements, limited = plan_placements(scene, existing_boxes, plan, rng=place_rng)

    report = AugmentReport(scene.source_id, rejection_limited=limited)
    boxes = list(existing_boxes)
    for k, box in enumerate(placements):
        rot, fh, fv = (int(v) for v in geo_rng.integers(0, [4, 2, 2]))
        crop = crop_patch(scene, box, size)
        z, loss = invert(params, crop, 0.0, invert_cfg.steps, invert_cfg.lr_z,
                         seed=scene_seed(plan.seed, scene.source_id) + [k])
        if not np.isfinite(loss):
            report.records.append(BoxRecord(scene.source_id, k, box, loss, "skipped_nonfinite"))
            continue
        patch = switch_condition(params, z, 0.0, 1.0)
        if invert_cfg.geometric:
            patch = geometric_augment(patch, rot, bool(fh), bool(fv))
        scene = paste_patch(scene, patch, box, invert_cfg.feather)
        boxes.append(box)
        report.records.append(BoxRecord(scene.source_id, k, box, loss, "ok"))
    return scene, boxes, report


def reports_to_csv(reports: list[AugmentReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for rep in reports:
        for r in rep.records:
            w.writerow([r.scene_id, r.box_index, r.box.x, r.box.y, r.box.w, repr(float(r.inversion_loss)), r.status])
    return buf.getvalue()
