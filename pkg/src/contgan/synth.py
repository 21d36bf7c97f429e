"""Font-rendered digit corpus written as standard IDX files.

This sandbox has no route to the original handwritten-digit archives, so
the experiments run on a locally rendered stand-in: digits 0-9 drawn with
the TTF fonts bundled with matplotlib, randomly perturbed (font choice,
size, offset, rotation), and saved in the exact IDX layout the ingestion
code expects. Everything downstream is agnostic to the source.
"""

from __future__ import annotations

import glob
import os
import struct

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import ConfigurationError

_FONT_NAMES = [
    "DejaVuSans.ttf",
    "DejaVuSans-Bold.ttf",
    "DejaVuSans-Oblique.ttf",
    "DejaVuSans-BoldOblique.ttf",
    "DejaVuSerif.ttf",
    "DejaVuSerif-Bold.ttf",
    "DejaVuSerif-Italic.ttf",
    "DejaVuSerif-BoldItalic.ttf",
    "DejaVuSansMono.ttf",
    "DejaVuSansMono-Bold.ttf",
    "DejaVuSansMono-Oblique.ttf",
    "DejaVuSansMono-BoldOblique.ttf",
    "STIXGeneral.ttf",
    "STIXGeneralBol.ttf",
    "STIXGeneralItalic.ttf",
    "cmr10.ttf",
    "cmb10.ttf",
    "cmss10.ttf",
    "cmtt10.ttf",
]


def _font_dir() -> str:
    import matplotlib

    return os.path.join(os.path.dirname(matplotlib.__file__), "mpl-data", "fonts", "ttf")


def _load_fonts() -> list[str]:
    d = _font_dir()
    paths = [os.path.join(d, n) for n in _FONT_NAMES if os.path.exists(os.path.join(d, n))]
    if not paths:
        paths = sorted(glob.glob(os.path.join(d, "DejaVu*.ttf")))
    if not paths:
        raise ConfigurationError("no TTF fonts found for digit rendering")
    return paths


def render_digit(digit: int, rng: np.random.Generator, font_paths: list[str]) -> np.ndarray:
    """One 28x28 uint8 digit image with random font and placement."""
    size = int(rng.integers(30, 44))
    font = ImageFont.truetype(font_paths[int(rng.integers(len(font_paths)))], size)
    canvas = Image.new("L", (56, 56), 0)
    draw = ImageDraw.Draw(canvas)
    left, top, right, bottom = draw.textbbox((0, 0), str(digit), font=font)
    x = (56 - (right - left)) / 2 - left + float(rng.uniform(-4, 4))
    y = (56 - (bottom - top)) / 2 - top + float(rng.uniform(-4, 4))
    draw.text((x, y), str(digit), fill=255, font=font)
    angle = float(rng.uniform(-18, 18))
    canvas = canvas.rotate(angle, resample=Image.BILINEAR, fillcolor=0)
    small = canvas.resize((28, 28), Image.BILINEAR)
    arr = np.asarray(small, dtype=np.uint8)
    # Re-threshold so downstream binarization at midpoint is crisp.
    return np.where(arr > 96, 255, 0).astype(np.uint8)


def _write_idx_images(path: str, images: np.ndarray) -> None:
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", 0x00000803, n, h, w))
        f.write(images.tobytes())


def _write_idx_labels(path: str, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def generate_dataset(
    out_dir: str,
    train_per_class: int = 800,
    test_per_class: int = 200,
    seed: int = 0,
) -> None:
    """Render a balanced digit corpus and write the four IDX files."""
    if train_per_class < 1 or test_per_class < 1:
        raise ConfigurationError("per-class counts must be positive")
    os.makedirs(out_dir, exist_ok=True)
    fonts = _load_fonts()
    rng = np.random.default_rng(seed)
    for prefix, per_class in (("train", train_per_class), ("t10k", test_per_class)):
        images = np.zeros((per_class * 10, 28, 28), dtype=np.uint8)
        labels = np.zeros(per_class * 10, dtype=np.uint8)
        k = 0
        for digit in range(10):
            for _ in range(per_class):
                images[k] = render_digit(digit, rng, fonts)
                labels[k] = digit
                k += 1
        order = rng.permutation(len(labels))
        _write_idx_images(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), images[order])
        _write_idx_labels(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), labels[order])


def ensure_dataset(data_dir: str, train_per_class: int = 800, test_per_class: int = 200, seed: int = 0) -> str:
    """Generate the corpus only if the IDX files are not already present."""
    needed = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    if not all(os.path.exists(os.path.join(data_dir, n)) for n in needed):
        generate_dataset(data_dir, train_per_class, test_per_class, seed)
    return data_dir
