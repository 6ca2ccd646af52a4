"""Procedural stand-ins for typeface glyphs and stone photographs.

Used to build small, fully reproducible corpora for smoke runs and the
desk-scale experiment when the real typeface renders and photographs are not
at hand. Glyphs are black silhouettes on white; "photographs" are carved
relief renderings of a glyph on a coloured stone texture.
"""

import hashlib
import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from hieronst import kernels
from hieronst.imageio import save_image

_CANVAS = 256

PALETTES = [
    ((0.80, 0.68, 0.50), (0.55, 0.42, 0.28)),  # sandstone
    ((0.86, 0.83, 0.76), (0.62, 0.60, 0.55)),  # limestone
    ((0.45, 0.45, 0.47), (0.22, 0.22, 0.24)),  # grey granite
    ((0.62, 0.38, 0.32), (0.35, 0.18, 0.15)),  # red granite
    ((0.88, 0.74, 0.38), (0.20, 0.33, 0.60)),  # painted ochre / blue
    ((0.72, 0.70, 0.62), (0.30, 0.45, 0.35)),  # painted green
    ((0.30, 0.26, 0.22), (0.75, 0.62, 0.40)),  # dark stone, gilded
    ((0.93, 0.90, 0.84), (0.55, 0.20, 0.15)),  # plaster, red paint
]


def _seed(*parts):
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _owl(d):
    d.ellipse((80, 70, 176, 210), fill=0)          # body
    d.ellipse((92, 30, 164, 100), fill=0)          # head
    d.polygon([(120, 80), (136, 80), (128, 100)], fill=255)  # beak notch
    d.polygon([(150, 180), (205, 228), (150, 220)], fill=0)  # tail
    d.rectangle((100, 205, 112, 235), fill=0)       # legs
    d.rectangle((140, 205, 152, 235), fill=0)


def _city(d):
    d.ellipse((40, 40, 216, 216), outline=0, width=22)
    d.line((78, 78, 178, 178), fill=0, width=22)
    d.line((178, 78, 78, 178), fill=0, width=22)


def _oar(d):
    d.line((60, 220, 190, 40), fill=0, width=14)
    d.polygon([(170, 30), (215, 45), (190, 110), (155, 85)], fill=0)
    d.rectangle((40, 210, 80, 230), fill=0)


def _water(d):
    pts = [(30 + 28 * i, 110 if i % 2 == 0 else 146) for i in range(8)]
    d.line(pts, fill=0, width=14, joint="curve")


def _mouth(d):
    d.chord((36, 80, 220, 200), 180, 360, fill=0)
    d.chord((36, 60, 220, 180), 0, 180, fill=0)


def _chick(d):
    d.ellipse((70, 90, 180, 190), fill=0)
    d.ellipse((150, 60, 200, 110), fill=0)
    d.polygon([(195, 80), (225, 88), (195, 96)], fill=0)
    d.rectangle((100, 185, 112, 230), fill=0)
    d.rectangle((135, 185, 147, 230), fill=0)


def _bread(d):
    d.pieslice((50, 90, 206, 246), 180, 360, fill=0)


def _reed(d):
    d.line((128, 230, 128, 60), fill=0, width=12)
    d.polygon([(128, 60), (168, 30), (175, 110), (128, 130)], fill=0)
    d.line((128, 150, 90, 120), fill=0, width=10)


def _stool(d):
    d.rectangle((60, 60, 196, 196), fill=0)
    d.rectangle((90, 90, 166, 166), fill=255)


def _viper(d):
    d.line([(40, 190), (90, 150), (140, 170), (190, 130), (215, 160)], fill=0,
           width=16, joint="curve")
    d.ellipse((190, 120, 230, 160), fill=0)
    d.line((205, 125, 200, 100), fill=0, width=6)


DESIGNS = {
    "G17": _owl, "O49": _city, "P8": _oar, "N35": _water, "D21": _mouth,
    "G43": _chick, "X1": _bread, "M17": _reed, "Q3": _stool, "I9": _viper,
}


def _random_design(code):
    rng = np.random.default_rng(_seed("glyph", code))

    def draw(d):
        for _ in range(3):
            pts = [tuple(int(v) for v in rng.integers(40, 216, size=2)) for _ in range(4)]
            d.line(pts, fill=0, width=int(rng.integers(10, 22)), joint="curve")
        x, y = rng.integers(60, 150, size=2)
        r = int(rng.integers(20, 50))
        d.ellipse((int(x), int(y), int(x) + r, int(y) + r), fill=0)

    return draw


def glyph_mask(code, size=128):
    """Silhouette of ``code`` as a float array in [0, 1], 1 = ink."""
    im = Image.new("L", (_CANVAS, _CANVAS), 255)
    DESIGNS.get(str(code), _random_design(str(code)))(ImageDraw.Draw(im))
    im = im.resize((size, size), Image.Resampling.LANCZOS)
    return 1.0 - np.asarray(im, dtype=np.float32) / 255.0


def render_glyph(code, size=128):
    """Typeface-like rendering: black glyph on white, RGB."""
    ink = glyph_mask(code, size)
    return np.repeat((1.0 - ink)[:, :, None], 3, axis=2).astype(np.float32)


def stone_texture(seed, size=128):
    """Multi-octave value noise tinted with a stone palette, RGB in [0, 1]."""
    rng = np.random.default_rng(seed)
    field = np.zeros((size, size, 1), dtype=np.float32)
    amp = 1.0
    for cells in (4, 8, 16, 32, 64):
        grid = rng.random((cells, cells, 1), dtype=np.float32)
        field += amp * kernels.resize_bilinear(grid, size, size)
        amp *= 0.55
    field = (field - field.min()) / max(float(field.max() - field.min()), 1e-6)
    grain = rng.random((size, size, 1), dtype=np.float32) * 0.15
    base, dark = (np.asarray(c, dtype=np.float32) for c in PALETTES[rng.integers(len(PALETTES))])
    tint = base * (0.75 + 0.25 * field) + grain - 0.075
    # dark veins
    vein = np.clip(1.0 - np.abs(field - 0.5) * 12.0, 0.0, 1.0) * 0.3
    tint = tint * (1.0 - vein) + dark * vein
    return np.clip(tint, 0.0, 1.0).astype(np.float32)


def _jitter_mask(mask, rng, strength):
    size = mask.shape[0]
    angle = math.radians(rng.uniform(-12, 12) * strength)
    zoom = 1.0 + rng.uniform(-0.12, 0.08) * strength
    tx, ty = rng.uniform(-0.08, 0.08, size=2) * size * strength
    c = (size - 1) / 2.0
    cos, sin = math.cos(angle) / zoom, math.sin(angle) / zoom
    inv = np.array([
        [cos, sin, c - cos * (c + tx) - sin * (c + ty)],
        [-sin, cos, c + sin * (c + tx) - cos * (c + ty)],
    ])
    return kernels.warp_affine(mask[:, :, None], inv, 0.0, False)[:, :, 0]


def carved_photo(code, seed, size=128, jitter=1.0, gray=False):
    """A carved-relief 'photograph' of ``code`` on a random stone texture."""
    rng = np.random.default_rng(seed)
    mask = _jitter_mask(glyph_mask(code, size), rng, jitter)
    stone = stone_texture(int(rng.integers(2**31)), size)
    blur = np.asarray(
        Image.fromarray((mask * 255).astype(np.uint8)).filter(ImageFilter.GaussianBlur(2.0)),
        dtype=np.float32,
    ) / 255.0
    gy, gx = np.gradient(blur)
    theta = rng.uniform(0, 2 * math.pi)
    shade = (gx * math.cos(theta) + gy * math.sin(theta)) * 6.0
    fill = np.asarray(PALETTES[rng.integers(len(PALETTES))][1], dtype=np.float32)
    depth = rng.uniform(0.35, 0.8)
    img = stone * (1.0 - depth * mask[:, :, None]) + fill * (depth * mask[:, :, None])
    img = img + shade[:, :, None]
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    if gray:
        img = (img @ np.array([0.299, 0.587, 0.114], dtype=np.float32))[:, :, None]
    return img


def write_corpus(root, classes, n_styles=10, photos_per_class=0, unas_per_class=0,
                 style_class="G17", size=128, seed=0):
    """Write a toy corpus below ``root`` and return the directory map.

    Layout::

        font/<code>.png            one typeface-like glyph per class
        styles/style_XXX.png       carved photographs of ``style_class``
        photos/<code>/*.png        held-out colour photographs per class
        unas/<code>/*.png          small grey photographs (75x50) per class
    """
    root = Path(root)
    dirs = {name: root / name for name in ("font", "styles", "photos", "unas")}
    for code in classes:
        save_image(dirs["font"] / f"{code}.png", render_glyph(code, size))
    for i in range(n_styles):
        img = carved_photo(style_class, _seed(seed, "style", i), size, jitter=0.6)
        save_image(dirs["styles"] / f"style_{i:03d}.png", img)
    for code in classes:
        for i in range(photos_per_class):
            img = carved_photo(code, _seed(seed, "photo", code, i), size)
            save_image(dirs["photos"] / code / f"photo_{code}_{i:03d}.png", img)
        for i in range(unas_per_class):
            img = carved_photo(code, _seed(seed, "unas", code, i), 96, jitter=0.7, gray=True)
            img = kernels.resize_bilinear(img, 75, 50)
            save_image(dirs["unas"] / code / f"{i:06d}_{code}.png", img)
    return dirs
