"""Synthetic training/evaluation instances: colored shapes over a textured
background, with the ground-truth mask of one designated target shape.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from .pue import ImagePlane

MANIFEST_NAME = "manifest.json"
MIN_FOREGROUND = 16


class CorruptionError(IOError):
    pass


@dataclass
class InstanceSample:
    image: ImagePlane
    gt: np.ndarray
    meta: dict

    @property
    def id(self) -> str:
        return str(self.meta.get("seed", "?"))


def _draw_shape(draw: ImageDraw.ImageDraw, rng: np.random.Generator,
                size: int, color: tuple[int, int, int]) -> None:
    kind = rng.choice(["ellipse", "rectangle", "polygon"])
    margin = max(2, size // 8)
    r_lo = max(2, size // 12)
    r_hi = max(r_lo + 1, size // 3)
    cx, cy = rng.integers(margin, size - margin, size=2)
    rx = int(rng.integers(r_lo, r_hi))
    ry = int(rng.integers(r_lo, r_hi))
    if kind == "ellipse":
        draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=color)
    elif kind == "rectangle":
        draw.rectangle([cx - rx, cy - ry, cx + rx, cy + ry], fill=color)
    else:
        n = int(rng.integers(3, 7))
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        pts = [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in angles]
        draw.polygon(pts, fill=color)


def _shape_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    _draw_shape(draw, rng, size, 255)
    return np.asarray(canvas) > 127


def generate_instance(seed: int, size: int = 64) -> InstanceSample:
    """Deterministic sample: textured background, 1-3 shapes, one target."""
    rng = np.random.default_rng(seed)
    # low-frequency textured background
    coarse = rng.uniform(0.1, 0.9, size=(size // 8, size // 8, 3))
    bg = np.asarray(Image.fromarray((coarse * 255).astype(np.uint8)).resize(
        (size, size), Image.BILINEAR), dtype=np.float64) / 255.0
    noise = rng.uniform(-0.05, 0.05, size=(size, size, 3))
    img = np.clip(bg + noise, 0.0, 1.0)

    n_shapes = int(rng.integers(1, 4))
    target_idx = int(rng.integers(n_shapes))
    target_mask = None
    retries = 0
    masks = []
    while len(masks) < n_shapes:
        mask = _shape_mask(rng, size)
        if len(masks) == target_idx and mask.sum() < MIN_FOREGROUND:
            retries += 1
            if retries > 50:
                # fall back to a guaranteed-visible ellipse
                canvas = Image.new("L", (size, size), 0)
                ImageDraw.Draw(canvas).ellipse(
                    [size // 4, size // 4, 3 * size // 4, 3 * size // 4], fill=255)
                mask = np.asarray(canvas) > 127
            else:
                continue
        masks.append(mask)
    colors = rng.uniform(0.0, 1.0, size=(n_shapes, 3))
    # later (non-target) shapes may partially occlude earlier ones
    for i, (mask, color) in enumerate(zip(masks, colors)):
        img[mask] = np.clip(color + rng.uniform(-0.05, 0.05, 3), 0, 1)
        if i == target_idx:
            target_mask = mask.copy()
        elif target_mask is not None:
            target_mask &= ~mask
    if target_mask.sum() < MIN_FOREGROUND:
        # occlusion ate the target; redraw it on top
        target_mask = masks[target_idx]
        img[target_mask] = np.clip(colors[target_idx], 0, 1)
    img = np.round(img * 255.0) / 255.0  # snap to the 8-bit grid: PNG round trips exactly
    meta = {"seed": int(seed), "size": size, "shapes": n_shapes,
            "target": target_idx}
    return InstanceSample(image=ImagePlane(img), gt=target_mask.astype(bool),
                          meta=meta)


def _sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def image_to_png(image: ImagePlane, path: str) -> None:
    arr = np.round(image.data * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def mask_to_png(mask: np.ndarray, path: str) -> None:
    Image.fromarray((np.asarray(mask, dtype=np.uint8)) * 255).save(path, format="PNG")


def png_to_image(path: str) -> ImagePlane:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return ImagePlane(arr)


def png_to_mask(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


def write_dataset(out_dir: str, count: int, seed: int, split: str = "train",
                  size: int = 64) -> dict:
    """Write PNG pairs plus a digest-carrying manifest; per-instance seed is
    global seed + index."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(count):
        inst_seed = seed + i
        sample = generate_instance(inst_seed, size=size)
        img_name = f"img_{i:05d}.png"
        mask_name = f"mask_{i:05d}.png"
        image_to_png(sample.image, os.path.join(out_dir, img_name))
        mask_to_png(sample.gt, os.path.join(out_dir, mask_name))
        entries.append({
            "image": img_name, "mask": mask_name, "seed": inst_seed,
            "image_sha256": _sha256(os.path.join(out_dir, img_name)),
            "mask_sha256": _sha256(os.path.join(out_dir, mask_name)),
        })
    manifest = {"version": 1, "split": split, "seed": seed, "size": size,
                "entries": entries}
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def read_dataset(data_dir: str) -> list[InstanceSample]:
    with open(os.path.join(data_dir, MANIFEST_NAME)) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != 1:
        raise CorruptionError("unsupported manifest version")
    samples = []
    for entry in manifest["entries"]:
        img_path = os.path.join(data_dir, entry["image"])
        mask_path = os.path.join(data_dir, entry["mask"])
        if _sha256(img_path) != entry["image_sha256"]:
            raise CorruptionError(f"digest mismatch for {entry['image']}")
        if _sha256(mask_path) != entry["mask_sha256"]:
            raise CorruptionError(f"digest mismatch for {entry['mask']}")
        samples.append(InstanceSample(
            image=png_to_image(img_path),
            gt=png_to_mask(mask_path),
            meta={"seed": entry["seed"], "size": manifest.get("size", 64)},
        ))
    return samples
