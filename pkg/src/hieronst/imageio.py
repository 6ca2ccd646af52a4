"""Raster image helpers.

Images are float32 numpy arrays shaped (H, W, C) with C in {1, 3} and values
in [0, 1]. PNG files are 8-bit per channel and converted by value / 255.
"""

from pathlib import Path

import numpy as np
from PIL import Image


class ImageError(ValueError):
    pass


def validate_image(image):
    """Return ``image`` as a float32 HWC array, raising ImageError if invalid."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ImageError(f"expected an HxWxC image, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1 or c not in (1, 3):
        raise ImageError(f"invalid image shape {arr.shape}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ImageError("pixel values must be finite and within [0, 1]")
    return arr


def as_rgb(image):
    img = validate_image(image)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return img


def to_uint8(image):
    img = validate_image(image)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def load_image(path, rgb=False):
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "I;16", "I", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float32)[:, :, None]
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise ImageError(f"cannot decode image {path}: {exc}") from exc
    arr = arr / 255.0
    return as_rgb(arr) if rgb else arr


def save_image(path, image):
    data = to_uint8(image)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "L" if data.shape[2] == 1 else "RGB"
    Image.fromarray(data[:, :, 0] if mode == "L" else data, mode=mode).save(path, format="PNG")
    return path


def luminance(image):
    img = validate_image(image)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
