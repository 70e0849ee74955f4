"""Rendered MNIST-style handwritten-digit stand-ins.

Used when no real MNIST IDX files are available. Each image is a digit glyph
drawn with a random Hershey font, stroke width, rotation, shear and elastic
warp, then fitted into a 20x20 box centred by mass on a 28x28 canvas, the
same normalisation MNIST applies.
"""

from __future__ import annotations

import cv2
import numpy as np

FONTS = (
    cv2.FONT_HERSHEY_SIMPLEX,
    cv2.FONT_HERSHEY_DUPLEX,
    cv2.FONT_HERSHEY_COMPLEX,
    cv2.FONT_HERSHEY_TRIPLEX,
    cv2.FONT_HERSHEY_SCRIPT_SIMPLEX,
    cv2.FONT_HERSHEY_SCRIPT_COMPLEX,
    cv2.FONT_HERSHEY_PLAIN,
)

SIDE = 28
CANVAS = 64


def _glyph(digit: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((CANVAS, CANVAS), np.uint8)
    font = FONTS[rng.integers(len(FONTS))]
    if rng.random() < 0.3:
        font |= cv2.FONT_ITALIC
    scale = 1.6 if font & 0xF == cv2.FONT_HERSHEY_PLAIN else 1.2
    thickness = int(rng.integers(2, 6))
    (w, h), _ = cv2.getTextSize(str(digit), font, scale, thickness)
    org = ((CANVAS - w) // 2, (CANVAS + h) // 2)
    cv2.putText(img, str(digit), org, font, scale, 255, thickness, cv2.LINE_AA)

    angle = rng.normal(0.0, 10.0)
    shear = rng.normal(0.0, 0.15)
    M = cv2.getRotationMatrix2D((CANVAS / 2, CANVAS / 2), angle, rng.uniform(0.85, 1.1))
    M[0, 1] += shear
    img = cv2.warpAffine(img, M, (CANVAS, CANVAS), flags=cv2.INTER_LINEAR)

    # smooth random displacement field
    dx = cv2.GaussianBlur(rng.uniform(-1, 1, (CANVAS, CANVAS)).astype(np.float32), (0, 0), 6) * 80
    dy = cv2.GaussianBlur(rng.uniform(-1, 1, (CANVAS, CANVAS)).astype(np.float32), (0, 0), 6) * 80
    gx, gy = np.meshgrid(np.arange(CANVAS, dtype=np.float32), np.arange(CANVAS, dtype=np.float32))
    return cv2.remap(img, gx + dx, gy + dy, cv2.INTER_LINEAR)


def _normalise(img: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(img > 10)
    if len(ys) == 0:
        return np.zeros((SIDE, SIDE), np.uint8)
    crop = img[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
    h, w = crop.shape
    s = 20.0 / max(h, w)
    crop = cv2.resize(crop, (max(1, round(w * s)), max(1, round(h * s))), interpolation=cv2.INTER_AREA)
    out = np.zeros((SIDE, SIDE), np.float64)
    h, w = crop.shape
    total = crop.sum()
    cy = (np.arange(h)[:, None] * crop).sum() / total
    cx = (np.arange(w)[None, :] * crop).sum() / total
    top = int(np.clip(round(SIDE / 2 - cy), 0, SIDE - h))
    left = int(np.clip(round(SIDE / 2 - cx), 0, SIDE - w))
    out[top : top + h, left : left + w] = crop
    return np.clip(out, 0, 255).astype(np.uint8)


def render_digits(n_per_class: int, seed: int = 0, classes=range(10)):
    """Return ``(images, labels)``: uint8 ``(n, 28, 28)`` and int labels, shuffled."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for digit in classes:
        for _ in range(n_per_class):
            images.append(_normalise(_glyph(digit, rng)))
            labels.append(digit)
    order = rng.permutation(len(labels))
    return np.stack(images)[order], np.array(labels, dtype=np.int64)[order]
