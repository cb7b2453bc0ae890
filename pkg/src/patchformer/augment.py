"""CutMix augmentation: paste a box from one image into another and mix the
labels by realized pixel area.

The mixing ratio comes from a Beta(alpha, alpha) draw; the box center is
uniform over the image and its nominal extent is (W * sqrt(1 - lambda),
H * sqrt(1 - lambda)). Because the box is clipped to the image, the label
weight is recomputed from the clipped integer area so the label mix always
matches the pixel mix exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .images import ImageBuffer

__all__ = [
    "LabeledImage",
    "CutMixBox",
    "CutMixConfig",
    "sample_lambda",
    "get_box",
    "cutmix",
]

LABEL_SUM_TOL = 1e-9


@dataclass
class LabeledImage:
    """Image plus a probability vector over classes (one-hot for raw data)."""

    image: ImageBuffer
    label: np.ndarray

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=np.float64)
        if self.label.ndim != 1:
            raise ValueError(f"label must be a vector, got shape {self.label.shape}")
        if (self.label < 0).any() or abs(self.label.sum() - 1.0) > LABEL_SUM_TOL:
            raise ValueError("label must be a probability vector summing to 1")


@dataclass(frozen=True)
class CutMixBox:
    """Sampled box: real-valued center and extent, plus the clipped pixel rect
    [x1, x2) x [y1, y2) actually pasted."""

    center_x: float
    center_y: float
    extent_w: float
    extent_h: float
    x1: int
    y1: int
    x2: int
    y2: int

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class CutMixConfig:
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def sample_lambda(cfg: CutMixConfig, rng: np.random.Generator) -> float:
    """Draw lambda ~ Beta(alpha, alpha) via two Gamma(alpha, 1) draws."""
    g1 = rng.gamma(cfg.alpha)
    g2 = rng.gamma(cfg.alpha)
    total = g1 + g2
    if total == 0.0:
        return 0.5
    return float(g1 / total)


def get_box(lam: float, height: int, width: int, rng: np.random.Generator) -> CutMixBox:
    """Sample the cut box for a given lambda: center uniform over the image,
    extent (W * sqrt(1 - lambda), H * sqrt(1 - lambda)), clipped to bounds."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    cx = float(rng.uniform(0.0, width))
    cy = float(rng.uniform(0.0, height))
    ratio = np.sqrt(1.0 - lam)
    rw = width * ratio
    rh = height * ratio
    x1 = int(np.clip(round(cx - rw / 2.0), 0, width))
    x2 = int(np.clip(round(cx + rw / 2.0), 0, width))
    y1 = int(np.clip(round(cy - rh / 2.0), 0, height))
    y2 = int(np.clip(round(cy + rh / 2.0), 0, height))
    return CutMixBox(cx, cy, rw, rh, x1, y1, x2, y2)


def cutmix(
    a: LabeledImage,
    b: LabeledImage,
    cfg: CutMixConfig,
    rng: np.random.Generator,
) -> tuple[LabeledImage, float]:
    """Mix image b into image a inside a sampled box.

    Returns the mixed example and the realized mixing weight
    lambda_adj = 1 - box_area / (W * H); pixels outside the clipped box come
    from a, pixels inside come from b, and the label is the matching convex
    combination lambda_adj * a.label + (1 - lambda_adj) * b.label.
    """
    if a.image.pixels.shape != b.image.pixels.shape:
        raise ValueError(
            f"cutmix inputs must share a shape, got {a.image.pixels.shape} "
            f"vs {b.image.pixels.shape}"
        )
    if a.label.shape != b.label.shape:
        raise ValueError(
            f"cutmix labels must share a length, got {a.label.shape} vs {b.label.shape}"
        )
    h, w = a.image.height, a.image.width
    lam = sample_lambda(cfg, rng)
    box = get_box(lam, h, w, rng)

    mixed = a.image.pixels.copy()
    mixed[box.y1 : box.y2, box.x1 : box.x2, :] = b.image.pixels[
        box.y1 : box.y2, box.x1 : box.x2, :
    ]
    lam_adj = 1.0 - box.area / float(w * h)
    label = lam_adj * a.label + (1.0 - lam_adj) * b.label
    return LabeledImage(ImageBuffer(mixed), label), lam_adj
