"""Synthetic stand-in for aerial sea-surface data.

Backgrounds are separable sinusoid products with amplitude 0.35; foreground
patches add a dark ellipse (intensity -0.8, clamped) near the middle. Scenes
are larger canvases of the same periodic field with a few embedded,
annotated ellipses.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import PatchDatasetManifest, SceneRecord, encode_image, save_annotations
from .synthesis import FOREGROUND_LABEL, BoundingBox, SceneImage, iou

AMPLITUDE = 0.35
ELLIPSE_INTENSITY = -0.8
FREQUENCIES = (1, 2, 3)
SEMI_AXIS_RANGE = (0.2, 0.35)
MAX_REDRAWS = 100


def center_mask(size: int) -> np.ndarray:
    """Central square covering a quarter of the patch area."""
    m = np.zeros((size, size), dtype=bool)
    m[size // 4:size - size // 4, size // 4:size - size // 4] = True
    return m


def border_mask(size: int) -> np.ndarray:
    """Frame whose width is 10% of the side (at least one pixel)."""
    w = max(1, int(round(0.1 * size)))
    m = np.ones((size, size), dtype=bool)
    m[w:size - w, w:size - w] = False
    return m


def region_means(patch: np.ndarray) -> tuple[float, float]:
    size = patch.shape[-1]
    return float(patch[..., center_mask(size)].mean()), float(patch[..., border_mask(size)].mean())


def _field(rng, period: int, height: int, width: int) -> np.ndarray:
    f1, f2 = rng.choice(FREQUENCIES, size=2)
    p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
    x = np.arange(width)
    y = np.arange(height)
    return AMPLITUDE * np.outer(np.sin(2 * np.pi * f2 * y / period + p2), np.sin(2 * np.pi * f1 * x / period + p1))


def _ellipse(rng, size: int) -> np.ndarray:
    cx, cy = rng.uniform(size / 3, 2 * size / 3, size=2)
    a, b = rng.uniform(*SEMI_AXIS_RANGE, size=2) * size
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _stack(plane: np.ndarray, channels: int) -> np.ndarray:
    return np.repeat(plane[None], channels, axis=0)


def background_patch(rng, size: int, channels: int = 1) -> np.ndarray:
    return _stack(_field(rng, size, size, size), channels)


def add_ellipse(plane: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.clip(plane + ELLIPSE_INTENSITY * mask, -1.0, 1.0)


def foreground_patch(rng, size: int, channels: int = 1) -> np.ndarray:
    """Background plus a central dark ellipse.

    Draws are repeated until the centre region is darker than the border
    frame, so every foreground patch is separable by that statistic.
    """
    for _ in range(MAX_REDRAWS):
        plane = add_ellipse(_field(rng, size, size, size), _ellipse(rng, size))
        centre, border = region_means(plane)
        if centre < border:
            return _stack(plane, channels)
    raise RuntimeError("could not draw a separable foreground patch")


def make_patches(n_patches: int, size: int, seed, channels: int = 1, fg_fraction: float = 0.5):
    """Return ``(patches, labels)``; labels alternate so the classes stay balanced."""
    rng = np.random.default_rng(seed)
    n_fg = int(round(n_patches * fg_fraction))
    labels = np.zeros(n_patches)
    labels[np.linspace(0, n_patches, n_fg, endpoint=False).astype(int)] = 1.0
    patches = np.stack([
        foreground_patch(rng, size, channels) if c else background_patch(rng, size, channels)
        for c in labels
    ])
    return patches, labels


def make_scene(rng, scene_id: str, scene_size: int, size: int, n_objects: int, channels: int = 1):
    """A periodic background canvas with ``n_objects`` disjoint annotated ellipses."""
    canvas = _field(rng, size, scene_size, scene_size)
    boxes: list[BoundingBox] = []
    while len(boxes) < n_objects:
        x, y = (int(v) for v in rng.integers(0, scene_size - size + 1, size=2))
        box = BoundingBox(x, y, size, size, FOREGROUND_LABEL)
        if any(iou(box, b) > 0 for b in boxes):
            continue
        region = canvas[y:y + size, x:x + size]
        canvas[y:y + size, x:x + size] = add_ellipse(region, _ellipse(rng, size))
        boxes.append(box)
    return SceneImage(_stack(canvas, channels), scene_id), boxes


def make_scenes(n_scenes: int, scene_size: int, size: int, seed, channels: int = 1, max_existing: int = 3):
    rng = np.random.default_rng([seed, 7])
    return [make_scene(rng, f"scene_{i:03d}", scene_size, size, i % (max_existing + 1), channels)
            for i in range(n_scenes)]


def make_fixture(out_dir, n_patches: int = 64, size: int = 16, seed: int = 0, channels: int = 1,
                 n_scenes: int = 8, scene_size: int = 128, fg_fraction: float = 0.5):
    """Write patches, a manifest, scenes and their annotations under ``out_dir``.

    Returns ``(manifest, scene_records)``.
    """
    out = Path(out_dir)
    patches, labels = make_patches(n_patches, size, seed, channels, fg_fraction)
    manifest = PatchDatasetManifest(out, size)
    for i, (p, c) in enumerate(zip(patches, labels)):
        rel = f"patches/{'fg' if c else 'bg'}_{i:04d}.png"
        encode_image(p, out / rel)
        manifest.entries.append((rel, int(c)))
    manifest.save(out / "manifest.json")

    records = []
    for scene, boxes in make_scenes(n_scenes, scene_size, size, seed, channels):
        rel = f"scenes/{scene.source_id}.png"
        encode_image(scene.pixels, out / rel)
        records.append(SceneRecord(rel, scene.width, scene.height, boxes))
    save_annotations(records, out / "annotations.json")
    return manifest, records
