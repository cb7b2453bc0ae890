"""Image buffers and file IO (PNG via Pillow, binary PGM/PPM natively).

Pixels are floating-point in [0, 1], H x W x C row-major. Values are clamped
to [0, 1] only on write-out, so intermediate processing (e.g. resampling
ringing) is preserved in memory.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["ImageBuffer", "ImageFormatError", "load_image", "save_image"]


class ImageFormatError(ValueError):
    """Raised for unreadable or unsupported image files."""


@dataclass
class ImageBuffer:
    """H x W x C floating-point image."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3:
            raise ImageFormatError(
                f"image must be H x W x C, got shape {self.pixels.shape}"
            )
        if self.pixels.dtype.kind != "f":
            self.pixels = self.pixels.astype(np.float32)
        if not np.all(np.isfinite(self.pixels)):
            raise ImageFormatError("image contains non-finite pixel values")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def to_rgb(self) -> "ImageBuffer":
        """Expand grayscale to three identical channels; pass RGB through."""
        if self.channels == 3:
            return self
        if self.channels == 1:
            return ImageBuffer(np.repeat(self.pixels, 3, axis=2))
        raise ImageFormatError(f"cannot expand {self.channels}-channel image to RGB")


def _to_bytes(pixels: np.ndarray) -> np.ndarray:
    clamped = np.clip(pixels, 0.0, 1.0)
    return (clamped * 255.0 + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# PGM / PPM (binary P5 / P6)

_PNM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*(\S+)")


def _read_pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read whitespace/comment-separated header tokens; return them plus the
    offset of the byte after the single whitespace that ends the header."""
    tokens = []
    pos = 0
    for _ in range(count):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError("truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos + 1  # exactly one whitespace byte after maxval


def _load_pnm(path: Path) -> ImageBuffer:
    data = path.read_bytes()
    if data[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: not a binary PGM/PPM file")
    channels = 1 if data[:2] == b"P5" else 3
    tokens, offset = _read_pnm_tokens(data, 4)
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval <= 0 or maxval > 65535:
        raise ImageFormatError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * channels
    if len(data) - offset < count * dtype.itemsize:
        raise ImageFormatError(f"{path}: truncated pixel data")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    pixels = raw.astype(np.float32).reshape(height, width, channels) / maxval
    return ImageBuffer(pixels)


def _save_pnm(path: Path, img: ImageBuffer) -> None:
    if img.channels == 1:
        magic = b"P5"
    elif img.channels == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"PNM supports 1 or 3 channels, got {img.channels}")
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    path.write_bytes(header + _to_bytes(img.pixels).tobytes())


# ---------------------------------------------------------------------------
# PNG (Pillow)


def _load_png(path: Path) -> ImageBuffer:
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            im = im.convert("L")
            arr = np.asarray(im, dtype=np.float32)[:, :, None] / 255.0
        else:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    return ImageBuffer(arr)


def _save_png(path: Path, img: ImageBuffer) -> None:
    data = _to_bytes(img.pixels)
    if img.channels == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path, format="PNG")
    elif img.channels == 3:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")
    else:
        raise ImageFormatError(f"PNG writer supports 1 or 3 channels, got {img.channels}")


# ---------------------------------------------------------------------------
# Dispatch

_LOADERS = {".png": _load_png, ".pgm": _load_pnm, ".ppm": _load_pnm, ".pnm": _load_pnm}
_SAVERS = {".png": _save_png, ".pgm": _save_pnm, ".ppm": _save_pnm, ".pnm": _save_pnm}


def load_image(path) -> ImageBuffer:
    path = Path(path)
    if not path.exists():
        raise ImageFormatError(f"image file not found: {path}")
    loader = _LOADERS.get(path.suffix.lower())
    if loader is None:
        raise ImageFormatError(f"{path}: unknown image extension {path.suffix!r}")
    return loader(path)


def save_image(path, img: ImageBuffer) -> None:
    path = Path(path)
    saver = _SAVERS.get(path.suffix.lower())
    if saver is None:
        raise ImageFormatError(f"{path}: unknown image extension {path.suffix!r}")
    saver(path, img)
