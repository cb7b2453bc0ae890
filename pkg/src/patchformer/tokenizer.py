"""Image-to-token conversion.

Vanilla mode splits the image into non-overlapping P x P patches in raster
order, flattens each (row-major spatial, channel-fastest) and linearly
projects it. Shifted mode first concatenates four half-patch diagonal shifts
of the image along channels (left-up, right-up, left-down, right-down, each
cropped back to H x W with clamp-to-edge fill), then patchifies, layer-norms
and projects. A learnable class token may be prepended, and one of several
positional encodings is added.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .images import ImageBuffer
from .tensor import Tensor

__all__ = [
    "PatchGrid",
    "TokenBatch",
    "POS_ENCODING_KINDS",
    "num_patches",
    "vanilla_patchify",
    "unpatchify",
    "spt_concat",
    "embed",
    "sinusoidal_encoding",
    "positional_encoding",
    "Tokenizer",
]

POS_ENCODING_KINDS = (
    "learnable_1d",
    "learnable_2d_concat",
    "sinusoidal_10000",
    "sinusoidal_1000",
    "none",
)

SPT_SHIFT_COPIES = 5  # original + four diagonal shifts


def num_patches(image_size: int, patch_size: int) -> int:
    """Patch count for a square image: (image_size / patch_size) ** 2."""
    if patch_size < 1 or image_size < 1:
        raise ValueError(f"sizes must be positive, got {image_size}, {patch_size}")
    if image_size % patch_size != 0:
        raise ValueError(
            f"image size {image_size} is not divisible by patch size {patch_size}"
        )
    side = image_size // patch_size
    return side * side


@dataclass(frozen=True)
class PatchGrid:
    """Square patch layout over an image."""

    image_size: int
    patch_size: int
    channels: int

    def __post_init__(self):
        num_patches(self.image_size, self.patch_size)  # validates divisibility
        if self.channels < 1:
            raise ValueError(f"channels must be positive, got {self.channels}")

    @property
    def side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n(self) -> int:
        return self.side * self.side

    @property
    def elements_per_patch(self) -> int:
        return self.patch_size * self.patch_size * self.channels


def _patchify_batch(pixels: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, H, W, C) -> (B, N, P*P*C), raster patch order."""
    b, h, w, c = pixels.shape
    gh, gw = h // patch_size, w // patch_size
    out = pixels.reshape(b, gh, patch_size, gw, patch_size, c)
    out = out.transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(out.reshape(b, gh * gw, patch_size * patch_size * c))


def vanilla_patchify(img: ImageBuffer, grid: PatchGrid) -> Tensor:
    """Flatten the image into N x (P*P*C) patch rows."""
    if (img.height, img.width, img.channels) != (
        grid.image_size,
        grid.image_size,
        grid.channels,
    ):
        raise ValueError(
            f"image shape {img.pixels.shape} does not match grid "
            f"({grid.image_size}, {grid.image_size}, {grid.channels})"
        )
    return Tensor(_patchify_batch(img.pixels[None], grid.patch_size)[0])


def unpatchify(patches: Tensor, grid: PatchGrid) -> ImageBuffer:
    """Inverse of vanilla_patchify (exact round-trip)."""
    p, side = grid.patch_size, grid.side
    data = patches.data.reshape(side, side, p, p, grid.channels)
    data = data.transpose(0, 2, 1, 3, 4)
    return ImageBuffer(data.reshape(grid.image_size, grid.image_size, grid.channels))


def _shift_clamped(pixels: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift content by (-dy, -dx) with clamp-to-edge fill: output(r, c) =
    input(clip(r + dy), clip(c + dx))."""
    h, w = pixels.shape[:2]
    rows = np.clip(np.arange(h) + dy, 0, h - 1)
    cols = np.clip(np.arange(w) + dx, 0, w - 1)
    return pixels[np.ix_(rows, cols)]


def spt_concat(img: ImageBuffer, patch_size: int) -> ImageBuffer:
    """Concatenate the image with its four half-patch diagonal shifts along
    channels: [original; left-up; right-up; left-down; right-down]."""
    if patch_size % 2 != 0:
        raise ValueError(
            f"shifted tokenization needs an even patch size, got {patch_size}"
        )
    s = patch_size // 2
    px = img.pixels
    shifted = [
        px,
        _shift_clamped(px, +s, +s),  # content moves left-up
        _shift_clamped(px, +s, -s),  # right-up
        _shift_clamped(px, -s, +s),  # left-down
        _shift_clamped(px, -s, -s),  # right-down
    ]
    return ImageBuffer(np.concatenate(shifted, axis=2))


def embed(
    patches: Tensor,
    weight: Tensor,
    bias: Tensor,
    use_layer_norm: bool = False,
    gamma: Tensor | None = None,
    beta: Tensor | None = None,
    eps: float = 1e-6,
) -> Tensor:
    """Project flattened patches to the model dimension, optionally applying
    layer normalization first (the shifted-tokenization step order)."""
    if patches.shape[-1] != weight.shape[0]:
        raise T.ShapeError(
            f"patch width {patches.shape[-1]} does not match projection "
            f"input {weight.shape[0]}"
        )
    x = patches
    if use_layer_norm:
        if gamma is None or beta is None:
            raise ValueError("layer-normalized embedding needs gamma and beta")
        x = T.layer_norm(x, gamma, beta, eps)
    return T.add(T.matmul(x, weight), bias)


def sinusoidal_encoding(length: int, dim: int, base: float) -> np.ndarray:
    """Interleaved sine/cosine table: row pos, pair k holds
    (sin(pos * w_k), cos(pos * w_k)) with w_k = base ** (-2k / dim)."""
    if dim % 2 != 0:
        raise ValueError(f"sinusoidal encoding needs an even dimension, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    k = np.arange(dim // 2, dtype=np.float64)[None, :]
    w = base ** (-2.0 * k / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * w)
    table[:, 1::2] = np.cos(pos * w)
    return table


def positional_encoding(
    kind: str,
    length: int,
    dim: int,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Build a (length x dim) positional table.

    Sinusoidal kinds are fixed; learnable kinds return freshly initialized
    parameters (normal(0, 0.02)). The 2d-concat kind is assembled from its
    coordinate tables by the Tokenizer, which owns them.
    """
    dtype = T.get_default_dtype()
    if kind == "none":
        return Tensor(np.zeros((length, dim), dtype=dtype))
    if kind == "sinusoidal_10000":
        return Tensor(sinusoidal_encoding(length, dim, 10000.0).astype(dtype))
    if kind == "sinusoidal_1000":
        return Tensor(sinusoidal_encoding(length, dim, 1000.0).astype(dtype))
    if kind == "learnable_1d":
        if rng is None:
            raise ValueError("learnable encodings need an rng for initialization")
        return T.param(rng.normal(0.0, 0.02, size=(length, dim)))
    raise ValueError(f"unknown positional encoding kind {kind!r}")


@dataclass
class TokenBatch:
    """B x (N + cls) x d token embeddings; class token sits at index 0."""

    tokens: Tensor
    num_patches: int
    has_class_token: bool

    @property
    def batch(self) -> int:
        return self.tokens.shape[0]

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[1]

    @property
    def dim(self) -> int:
        return self.tokens.shape[2]


class Tokenizer:
    """Owns the trainable tokenization parameters and turns image batches
    into token batches."""

    def __init__(
        self,
        grid: PatchGrid,
        dim: int,
        mode: str = "vanilla",
        pe_kind: str = "learnable_1d",
        use_class_token: bool = True,
        ln_eps: float = 1e-6,
        rng: np.random.Generator | None = None,
    ):
        if mode not in ("vanilla", "spt"):
            raise ValueError(f"unknown patch mode {mode!r}")
        if pe_kind not in POS_ENCODING_KINDS:
            raise ValueError(f"unknown positional encoding kind {pe_kind!r}")
        if mode == "spt" and grid.patch_size % 2 != 0:
            raise ValueError(
                f"shifted tokenization needs an even patch size, got {grid.patch_size}"
            )
        if pe_kind in ("learnable_2d_concat", "sinusoidal_10000", "sinusoidal_1000"):
            if dim % 2 != 0:
                raise ValueError(f"{pe_kind} needs an even dimension, got {dim}")
        rng = rng if rng is not None else np.random.default_rng(0)

        self.grid = grid
        self.dim = dim
        self.mode = mode
        self.pe_kind = pe_kind
        self.use_class_token = use_class_token
        self.ln_eps = ln_eps

        e = grid.elements_per_patch * (SPT_SHIFT_COPIES if mode == "spt" else 1)
        self.elements_per_patch = e
        self.proj_w = T.param(rng.normal(0.0, 0.02, size=(e, dim)))
        self.proj_b = T.param(np.zeros(dim))
        if mode == "spt":
            self.ln_gamma = T.param(np.ones(e))
            self.ln_beta = T.param(np.zeros(e))
        if use_class_token:
            self.cls_token = T.param(np.zeros(dim))

        n_tokens = grid.n + (1 if use_class_token else 0)
        if pe_kind == "learnable_2d_concat":
            half = dim // 2
            self.pe_x = T.param(rng.normal(0.0, 0.02, size=(grid.side, half)))
            self.pe_y = T.param(rng.normal(0.0, 0.02, size=(grid.side, half)))
            if use_class_token:
                self.pe_cls = T.param(rng.normal(0.0, 0.02, size=(dim,)))
        elif pe_kind != "none":
            self.pe_table = positional_encoding(pe_kind, n_tokens, dim, rng)

    def parameters(self) -> list[tuple[str, Tensor]]:
        named: list[tuple[str, Tensor]] = [
            ("tokenizer.proj_w", self.proj_w),
            ("tokenizer.proj_b", self.proj_b),
        ]
        if self.mode == "spt":
            named += [
                ("tokenizer.ln_gamma", self.ln_gamma),
                ("tokenizer.ln_beta", self.ln_beta),
            ]
        if self.use_class_token:
            named.append(("tokenizer.cls_token", self.cls_token))
        if self.pe_kind == "learnable_2d_concat":
            named += [("tokenizer.pe_x", self.pe_x), ("tokenizer.pe_y", self.pe_y)]
            if self.use_class_token:
                named.append(("tokenizer.pe_cls", self.pe_cls))
        elif self.pe_kind == "learnable_1d":
            named.append(("tokenizer.pe_table", self.pe_table))
        return named

    def _positional_table(self) -> Tensor | None:
        if self.pe_kind == "none":
            return None
        if self.pe_kind != "learnable_2d_concat":
            return self.pe_table
        side = self.grid.side
        cells = np.arange(self.grid.n)
        rows = cells // side
        cols = cells % side
        patch_pe = T.concat([self.pe_x[cols], self.pe_y[rows]], axis=-1)
        if not self.use_class_token:
            return patch_pe
        cls_pe = T.reshape(self.pe_cls, (1, self.dim))
        return T.concat([cls_pe, patch_pe], axis=0)

    def tokenize(self, images: np.ndarray) -> TokenBatch:
        """(B, H, W, C) image batch in [0, 1] -> token batch."""
        images = np.asarray(images, dtype=T.get_default_dtype())
        if images.ndim != 4:
            raise ValueError(f"expected a 4D image batch, got shape {images.shape}")
        b, h, w, c = images.shape
        if (h, w, c) != (self.grid.image_size, self.grid.image_size, self.grid.channels):
            raise ValueError(
                f"image batch shape {images.shape[1:]} does not match grid "
                f"({self.grid.image_size}, {self.grid.image_size}, {self.grid.channels})"
            )
        if self.mode == "spt":
            stack = [spt_concat(ImageBuffer(img), self.grid.patch_size).pixels
                     for img in images]
            images = np.stack(stack, axis=0)
        patches = Tensor(_patchify_batch(images, self.grid.patch_size))

        if self.mode == "spt":
            x = embed(
                patches,
                self.proj_w,
                self.proj_b,
                use_layer_norm=True,
                gamma=self.ln_gamma,
                beta=self.ln_beta,
                eps=self.ln_eps,
            )
        else:
            x = embed(patches, self.proj_w, self.proj_b)

        if self.use_class_token:
            cls = T.broadcast_to(T.reshape(self.cls_token, (1, 1, self.dim)),
                                 (b, 1, self.dim))
            x = T.concat([cls, x], axis=1)
        pe = self._positional_table()
        if pe is not None:
            x = T.add(x, pe)
        return TokenBatch(x, self.grid.n, self.use_class_token)
