"""Affine augmentation (translate, rotate, zoom, horizontal flip) and resizing."""

import logging
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from hieronst import kernels
from hieronst.curation import DatasetManifest, derive_seed
from hieronst.imageio import load_image, save_image, validate_image

log = logging.getLogger(__name__)

# sources rendered on white paper get a white border; photographs repeat edges
WHITE_SOURCES = ("font", "nst")


@dataclass(frozen=True)
class AffineParams:
    max_translate_frac: float = 0.1
    max_rotation_deg: float = 10.0
    zoom_range: tuple = (0.95, 1.05)
    allow_hflip: bool = True
    fill_value: float | str = 1.0  # a pixel value, or "edge"

    def __post_init__(self):
        lo, hi = self.zoom_range
        if not 0.0 <= self.max_translate_frac < 1.0:
            raise ValueError(f"max_translate_frac must be in [0, 1), got {self.max_translate_frac}")
        if self.max_rotation_deg < 0:
            raise ValueError("max_rotation_deg must be >= 0")
        if not 0.0 < lo <= hi:
            raise ValueError(f"zoom_range must satisfy 0 < low <= high, got {self.zoom_range}")
        if self.fill_value != "edge" and not 0.0 <= float(self.fill_value) <= 1.0:
            raise ValueError(f"fill_value must be 'edge' or within [0, 1], got {self.fill_value}")

    @classmethod
    def identity(cls):
        return cls(0.0, 0.0, (1.0, 1.0), False)


class AffineSample(NamedTuple):
    tx: float  # fraction of width
    ty: float  # fraction of height
    rotation_deg: float
    zoom: float
    hflip: bool


def sample_affine(params, rng):
    """Draw one transform from ``params`` using a ``random.Random``."""
    t = params.max_translate_frac
    lo, hi = params.zoom_range
    return AffineSample(
        tx=rng.uniform(-t, t) if t else 0.0,
        ty=rng.uniform(-t, t) if t else 0.0,
        rotation_deg=rng.uniform(-params.max_rotation_deg, params.max_rotation_deg)
        if params.max_rotation_deg else 0.0,
        zoom=rng.uniform(lo, hi) if hi > lo else lo,
        hflip=params.allow_hflip and rng.random() < 0.5,
    )


def inverse_matrix(sample, height, width):
    """2x3 matrix mapping output pixel (x, y) back to the source image.

    The forward transform zooms and rotates about the image centre and then
    translates.
    """
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    a = math.radians(sample.rotation_deg)
    cos, sin = math.cos(a) / sample.zoom, math.sin(a) / sample.zoom
    dx, dy = sample.tx * width, sample.ty * height
    # source = R^-1 / zoom * (out - centre - shift) + centre
    return np.array([
        [cos, sin, cx - cos * (cx + dx) - sin * (cy + dy)],
        [-sin, cos, cy + sin * (cx + dx) - cos * (cy + dy)],
    ])


def apply_affine(image, sample, fill_value=1.0):
    img = validate_image(image)
    h, w, _ = img.shape
    if sample.tx or sample.ty or sample.rotation_deg or sample.zoom != 1.0:
        edge = fill_value == "edge"
        img = kernels.warp_affine(img, inverse_matrix(sample, h, w), 0.0 if edge else float(fill_value), edge)
        img = np.clip(img, 0.0, 1.0)
    else:
        img = img.copy()
    if sample.hflip:
        img = np.ascontiguousarray(img[:, ::-1])
    return img


def affine_augment(image, params, seed):
    """Randomly transformed copy of ``image``; same size, deterministic per seed."""
    sample = sample_affine(params, random.Random(seed))
    return apply_affine(image, sample, params.fill_value)


def resize(image, target):
    """Bilinear resize to ``target`` = (height, width)."""
    h, w = (int(v) for v in target)
    if h < 1 or w < 1:
        raise ValueError(f"target size must be >= 1, got {target}")
    img = validate_image(image)
    if img.shape[:2] == (h, w):
        return img.copy()
    return np.clip(kernels.resize_bilinear(img, h, w), 0.0, 1.0)


def double_dataset(manifest, params, seed, out_dir=None, tag="aug"):
    """Return ``manifest`` plus one augmented copy of every record.

    Augmented images are written next to their originals (or below
    ``out_dir``) as ``<stem>_<tag>_<index>.png``. Font and NST records are
    filled with ``params.fill_value``; photographs use edge replication.
    """
    if len(manifest) == 0:
        raise ValueError("cannot augment an empty manifest")
    out = list(manifest.records)
    for i, r in enumerate(manifest.records):
        src = Path(r.path)
        dest_dir = Path(out_dir) / r.gardiner.superclass / str(r.gardiner) if out_dir else src.parent
        dest = dest_dir / f"{src.stem}_{tag}_{i:05d}.png"
        fill = params.fill_value if r.source in WHITE_SOURCES else "edge"
        img = affine_augment(load_image(src), replace(params, fill_value=fill), derive_seed(seed, tag, i, r.path))
        try:
            save_image(dest, img)
        except OSError as exc:
            raise OSError(f"cannot write augmented image {dest}: {exc}") from exc
        out.append(replace(r, path=str(dest)))
    return DatasetManifest(out)
