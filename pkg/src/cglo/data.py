"""PNG images, patch manifests and scene annotations on disk."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .synthesis import BoundingBox, SceneImage


class DataError(ValueError):
    pass


def to_pixels(t: np.ndarray) -> np.ndarray:
    """Map values in [-1, 1] to uint8, rounding half away from zero."""
    u = (np.clip(np.asarray(t, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    # u >= 0 here, so floor(u + 0.5) rounds halves away from zero
    return np.floor(u + 0.5).astype(np.uint8)


def from_pixels(u: np.ndarray) -> np.ndarray:
    return 2.0 * np.asarray(u, dtype=np.float64) / 255.0 - 1.0


def decode_image(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG as a ``C x H x W`` float64 tensor in [-1, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("L", "RGB"):
                arr = np.asarray(img)
            elif mode == "P":
                arr = np.asarray(img.convert("RGB"))
            else:
                raise DataError(f"{path}: unsupported image mode {mode!r} (need 8-bit L or RGB)")
    except DataError:
        raise
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc
    arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    return from_pixels(arr)


def encode_image(t: np.ndarray, path) -> Path:
    t = np.asarray(t)
    if t.ndim != 3 or t.shape[0] not in (1, 3):
        raise DataError(f"expected a 1xHxW or 3xHxW tensor, got {t.shape}")
    u = to_pixels(t)
    img = Image.fromarray(u[0], mode="L") if u.shape[0] == 1 else Image.fromarray(u.transpose(1, 2, 0), mode="RGB")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
    return path


# ---------------------------------------------------------------------------
# patch manifest
# ---------------------------------------------------------------------------

@dataclass
class PatchDatasetManifest:
    root: Path
    size: int
    entries: list[tuple[str, int]] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {"size": self.size, "patches": [{"path": p, "label": c} for p, c in self.entries]}
        return json.dumps(doc, indent=1) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "PatchDatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
            entries = [(str(e["path"]), e["label"]) for e in doc["patches"]]
            size = int(doc["size"])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from exc
        for p, c in entries:
            if c not in (0, 1):
                raise DataError(f"{path}: label for {p} must be 0 or 1, got {c!r}")
        return cls(path.parent, size, entries)

    def load_patches(self):
        """Decode every patch; returns ``(ids, patches, labels)``."""
        patches = []
        for rel, _ in self.entries:
            img = decode_image(self.root / rel)
            if img.shape[1:] != (self.size, self.size):
                raise DataError(f"{rel}: size {img.shape[1:]} but manifest declares {self.size}")
            patches.append(img)
        if len({p.shape for p in patches}) > 1:
            raise DataError("patches have mixed channel counts")
        ids = [Path(rel).stem for rel, _ in self.entries]
        return ids, np.stack(patches), np.array([c for _, c in self.entries], dtype=np.float64)


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------

@dataclass
class SceneRecord:
    image: str
    width: int
    height: int
    boxes: list[BoundingBox] = field(default_factory=list)

    @property
    def scene_id(self) -> str:
        return Path(self.image).stem


def annotations_to_json(records: list[SceneRecord]) -> str:
    doc = [
        {
            "image": r.image,
            "width": r.width,
            "height": r.height,
            "boxes": [{"x": b.x, "y": b.y, "w": b.w, "h": b.h, "label": b.label} for b in r.boxes],
        }
        for r in records
    ]
    return json.dumps(doc, indent=1) + "\n"


def annotations_from_json(text: str) -> list[SceneRecord]:
    try:
        doc = json.loads(text)
        records = [
            SceneRecord(
                str(s["image"]), int(s["width"]), int(s["height"]),
                [BoundingBox(int(b["x"]), int(b["y"]), int(b["w"]), int(b["h"]), str(b["label"])) for b in s["boxes"]],
            )
            for s in doc
        ]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"malformed annotation document ({exc})") from exc
    for r in records:
        for b in r.boxes:
            if not b.inside(r.height, r.width):
                raise DataError(f"{r.image}: box {b} lies outside the {r.width}x{r.height} image")
    return records


def load_annotations(path) -> list[SceneRecord]:
    return annotations_from_json(Path(path).read_text())


def save_annotations(records: list[SceneRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(annotations_to_json(records))
    return path


def load_scene(root, record: SceneRecord) -> SceneImage:
    pixels = decode_image(Path(root) / record.image)
    if pixels.shape[1:] != (record.height, record.width):
        raise DataError(f"{record.image}: decoded size {pixels.shape[1:]} does not match annotation")
    return SceneImage(pixels, record.scene_id)
