"""Pure numpy implementations of the raster kernels.

These mirror ``_ckernels.pyx`` one for one and are used whenever the compiled
extension is unavailable (or disabled with ``HIERONST_PURE_PYTHON=1``).
All image arguments are float32 arrays shaped (H, W, C).
"""

import numpy as np


def _axis_coords(n_in, n_out):
    # half-pixel centres, clamped to the valid sample range
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(image, out_h, out_w):
    img = np.ascontiguousarray(image, dtype=np.float32)
    h, w, _ = img.shape
    y0, y1, fy = _axis_coords(h, out_h)
    x0, x1, fx = _axis_coords(w, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1.0 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1.0 - fx) + img[y1][:, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return out.astype(np.float32)


def warp_affine(image, inverse, fill, edge):
    """Bilinear backward warp. ``inverse`` maps output (x, y) to source (x, y)."""
    img = np.ascontiguousarray(image, dtype=np.float32)
    h, w, c = img.shape
    m = np.asarray(inverse, dtype=np.float64)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    if edge:
        sx = np.clip(sx, 0.0, w - 1)
        sy = np.clip(sy, 0.0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]

    def tap(yy, xx):
        inside = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(inside[..., None], vals, np.float32(fill))

    out = (
        tap(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + tap(y0, x0 + 1) * fx * (1.0 - fy)
        + tap(y0 + 1, x0) * (1.0 - fx) * fy
        + tap(y0 + 1, x0 + 1) * fx * fy
    )
    return out.astype(np.float32)


def confusion_counts(true_idx, pred_idx, k):
    t = np.asarray(true_idx, dtype=np.int64)
    p = np.asarray(pred_idx, dtype=np.int64)
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= k):
        raise IndexError("class index out of range")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return counts
