"""Transformer encoder classifier over patch tokens.

Scaled dot-product attention with a configurable temperature (tau = c * sqrt(d_k)),
multi-head self-attention without projection biases, pre-LN encoder blocks with
residuals, a final layer norm, and an MLP head. Includes parameter/FLOP
accounting and a small versioned binary checkpoint format.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tokenizer import PatchGrid, TokenBatch, Tokenizer, POS_ENCODING_KINDS

__all__ = [
    "ModelConfig",
    "AttentionWeights",
    "EncoderBlockParams",
    "PatchClassifier",
    "CheckpointError",
    "scaled_dot_attention",
    "mhsa",
    "encoder_block",
    "count_params",
    "estimate_flops",
    "flops_formula",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
]

READOUT_KINDS = ("class_token", "flatten")
CHECKPOINT_MAGIC = b"PFV1"


@dataclass(frozen=True)
class ModelConfig:
    image_size: int
    patch_size: int
    num_classes: int
    channels: int = 3
    dim: int = 64
    heads: int = 4
    layers: int = 8
    mlp_head_units: tuple[int, ...] = (2048, 1024)
    encoder_mlp_ratio: float = 2.0
    temperature_multiplier: float = 1.0
    ln_eps: float = 1e-6
    readout: str = "class_token"
    pe_kind: str = "learnable_1d"
    patch_mode: str = "vanilla"
    dropout: float = 0.1

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(
                f"dim {self.dim} is not divisible by heads {self.heads}"
            )
        for name in ("num_classes", "heads", "layers", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.temperature_multiplier <= 0:
            raise ValueError(
                f"temperature multiplier must be positive, got "
                f"{self.temperature_multiplier}"
            )
        if self.encoder_mlp_ratio <= 0:
            raise ValueError("encoder_mlp_ratio must be positive")
        if self.readout not in READOUT_KINDS:
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.pe_kind not in POS_ENCODING_KINDS:
            raise ValueError(f"unknown positional encoding kind {self.pe_kind!r}")
        if self.patch_mode not in ("vanilla", "spt"):
            raise ValueError(f"unknown patch mode {self.patch_mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def encoder_hidden(self) -> int:
        return int(round(self.encoder_mlp_ratio * self.dim))

    def grid(self) -> PatchGrid:
        return PatchGrid(self.image_size, self.patch_size, self.channels)


def scaled_dot_attention(
    q: Tensor, k: Tensor, v: Tensor, tau: float
) -> tuple[Tensor, Tensor]:
    """Attention(Q, K, V) = softmax(Q Kᵀ / tau) V, returned with the weights."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    scores = T.matmul(q, T.transpose(k)) * (1.0 / tau)
    weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, v), weights


@dataclass
class AttentionWeights:
    """Per-head query/key/value projections (no biases) plus the output map."""

    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor

    @classmethod
    def init(cls, dim: int, heads: int, rng: np.random.Generator) -> "AttentionWeights":
        dk = dim // heads
        def w(rows, cols):
            return T.param(rng.normal(0.0, 0.02, size=(rows, cols)))
        return cls(
            wq=[w(dim, dk) for _ in range(heads)],
            wk=[w(dim, dk) for _ in range(heads)],
            wv=[w(dim, dk) for _ in range(heads)],
            wo=w(dim, dim),
        )

    @property
    def heads(self) -> int:
        return len(self.wq)

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for i in range(self.heads):
            out += [
                (f"{prefix}.h{i}.wq", self.wq[i]),
                (f"{prefix}.h{i}.wk", self.wk[i]),
                (f"{prefix}.h{i}.wv", self.wv[i]),
            ]
        out.append((f"{prefix}.wo", self.wo))
        return out


def mhsa(x: Tensor, w: AttentionWeights, tau_multiplier: float = 1.0) -> Tensor:
    """Multi-head self-attention: per-head attention at tau = c * sqrt(d_k),
    heads concatenated and passed through the output projection."""
    dk = w.wq[0].shape[-1]
    tau = tau_multiplier * math.sqrt(dk)
    heads = []
    for i in range(w.heads):
        out, _ = scaled_dot_attention(
            T.matmul(x, w.wq[i]), T.matmul(x, w.wk[i]), T.matmul(x, w.wv[i]), tau
        )
        heads.append(out)
    stacked = heads[0] if len(heads) == 1 else T.concat(heads, axis=-1)
    return T.matmul(stacked, w.wo)


@dataclass
class EncoderBlockParams:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    attn: AttentionWeights
    ln2_gamma: Tensor
    ln2_beta: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "EncoderBlockParams":
        d, hidden = cfg.dim, cfg.encoder_hidden
        return cls(
            ln1_gamma=T.param(np.ones(d)),
            ln1_beta=T.param(np.zeros(d)),
            attn=AttentionWeights.init(d, cfg.heads, rng),
            ln2_gamma=T.param(np.ones(d)),
            ln2_beta=T.param(np.zeros(d)),
            mlp_w1=T.param(rng.normal(0.0, 0.02, size=(d, hidden))),
            mlp_b1=T.param(np.zeros(hidden)),
            mlp_w2=T.param(rng.normal(0.0, 0.02, size=(hidden, d))),
            mlp_b2=T.param(np.zeros(d)),
        )

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = [
            (f"{prefix}.ln1_gamma", self.ln1_gamma),
            (f"{prefix}.ln1_beta", self.ln1_beta),
        ]
        out += self.attn.named(f"{prefix}.attn")
        out += [
            (f"{prefix}.ln2_gamma", self.ln2_gamma),
            (f"{prefix}.ln2_beta", self.ln2_beta),
            (f"{prefix}.mlp_w1", self.mlp_w1),
            (f"{prefix}.mlp_b1", self.mlp_b1),
            (f"{prefix}.mlp_w2", self.mlp_w2),
            (f"{prefix}.mlp_b2", self.mlp_b2),
        ]
        return out


def encoder_block(
    x: Tensor,
    params: EncoderBlockParams,
    tau_multiplier: float = 1.0,
    ln_eps: float = 1e-6,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Pre-LN block: y = x + MHSA(LN(x)); z = y + MLP(LN(y))."""
    y = x + mhsa(
        T.layer_norm(x, params.ln1_gamma, params.ln1_beta, ln_eps),
        params.attn,
        tau_multiplier,
    )
    h = T.layer_norm(y, params.ln2_gamma, params.ln2_beta, ln_eps)
    h = T.gelu(T.matmul(h, params.mlp_w1) + params.mlp_b1)
    if dropout_rate > 0.0 and rng is not None:
        h = T.dropout(h, dropout_rate, rng)
    h = T.matmul(h, params.mlp_w2) + params.mlp_b2
    return y + h


class PatchClassifier:
    """Tokenizer -> L pre-LN encoder blocks -> final LN -> readout -> MLP head."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        grid = cfg.grid()
        self.tokenizer = Tokenizer(
            grid,
            cfg.dim,
            mode=cfg.patch_mode,
            pe_kind=cfg.pe_kind,
            use_class_token=True,
            ln_eps=cfg.ln_eps,
            rng=rng,
        )
        self.blocks = [EncoderBlockParams.init(cfg, rng) for _ in range(cfg.layers)]
        self.final_gamma = T.param(np.ones(cfg.dim))
        self.final_beta = T.param(np.zeros(cfg.dim))

        n_tokens = grid.n + 1
        in_dim = cfg.dim if cfg.readout == "class_token" else n_tokens * cfg.dim
        self.head: list[tuple[Tensor, Tensor]] = []
        widths = list(cfg.mlp_head_units) + [cfg.num_classes]
        for width in widths:
            w = T.param(rng.normal(0.0, 0.02, size=(in_dim, width)))
            b = T.param(np.zeros(width))
            self.head.append((w, b))
            in_dim = width

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = list(self.tokenizer.parameters())
        for i, blk in enumerate(self.blocks):
            named += blk.named(f"block{i}")
        named += [
            ("final_ln.gamma", self.final_gamma),
            ("final_ln.beta", self.final_beta),
        ]
        for i, (w, b) in enumerate(self.head):
            named += [(f"head.w{i}", w), (f"head.b{i}", b)]
        return named

    def forward(
        self,
        tokens: TokenBatch,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        cfg = self.cfg
        drop = cfg.dropout if training else 0.0
        x = tokens.tokens
        for blk in self.blocks:
            x = encoder_block(
                x, blk, cfg.temperature_multiplier, cfg.ln_eps, drop, rng
            )
        x = T.layer_norm(x, self.final_gamma, self.final_beta, cfg.ln_eps)
        if cfg.readout == "class_token":
            h = x[:, 0, :]
        else:
            b = x.shape[0]
            h = T.reshape(x, (b, x.shape[1] * x.shape[2]))
        last = len(self.head) - 1
        for i, (w, bias) in enumerate(self.head):
            h = T.matmul(h, w) + bias
            if i < last:
                h = T.gelu(h)
                if drop > 0.0 and rng is not None:
                    h = T.dropout(h, drop, rng)
        return h

    def forward_images(
        self,
        images: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        return self.forward(self.tokenizer.tokenize(images), training, rng)

    def predict(self, logits: Tensor) -> Tensor:
        """Class probabilities: softmax over the last axis."""
        return T.softmax(logits, axis=-1)


def count_params(model: PatchClassifier) -> int:
    """Exact trainable scalar count."""
    return sum(int(p.data.size) for _, p in model.parameters())


def _head_macs(cfg: ModelConfig, n_tokens: int) -> int:
    in_dim = cfg.dim if cfg.readout == "class_token" else n_tokens * cfg.dim
    macs = 0
    for width in list(cfg.mlp_head_units) + [cfg.num_classes]:
        macs += in_dim * width
        in_dim = width
    return macs


def estimate_flops(model: PatchClassifier, tokens_n: int | None = None) -> int:
    """FLOPs for one forward pass of one image, counting every matrix
    multiply as 2 FLOPs per multiply-add. See flops_formula for the terms."""
    cfg = model.cfg
    grid = cfg.grid()
    n = tokens_n if tokens_n is not None else grid.n + 1
    e = model.tokenizer.elements_per_patch
    proj = grid.n * e * cfg.dim
    d, hidden = cfg.dim, cfg.encoder_hidden
    per_block = 4 * n * d * d + 2 * n * n * d + 2 * n * d * hidden
    macs = proj + cfg.layers * per_block + _head_macs(cfg, n)
    return 2 * macs


def flops_formula(model: PatchClassifier) -> str:
    cfg = model.cfg
    grid = cfg.grid()
    e = model.tokenizer.elements_per_patch
    return (
        "flops = 2 * macs; "
        f"macs = N*E*d + L*(4*n*d^2 + 2*n^2*d + 2*n*d*m) + head "
        f"with N={grid.n} patches, E={e} patch elements, n=N+1={grid.n + 1} "
        f"tokens, d={cfg.dim}, L={cfg.layers} blocks, m={cfg.encoder_hidden} "
        f"encoder MLP width, head = chain over {list(cfg.mlp_head_units)} "
        f"units to {cfg.num_classes} classes"
    )


class CheckpointError(ValueError):
    """Raised for malformed or truncated checkpoint files."""


def _config_to_text(cfg: ModelConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def _config_from_text(text: str) -> ModelConfig:
    raw: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    kwargs: dict = {}
    for f in fields(ModelConfig):
        if f.name not in raw:
            continue
        value = raw[f.name]
        if f.name == "mlp_head_units":
            kwargs[f.name] = tuple(int(v) for v in value.split(",") if v)
        elif f.type in ("int",):
            kwargs[f.name] = int(value)
        elif f.type in ("float",):
            kwargs[f.name] = float(value)
        else:
            kwargs[f.name] = value
    return ModelConfig(**kwargs)


def save_checkpoint(path, model: PatchClassifier) -> None:
    """Versioned binary dump: magic, length-prefixed config text, then each
    tensor as (name length, name, rank, dims, float32 little-endian data)."""
    named = model.parameters()
    config_text = _config_to_text(model.cfg).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(config_text)))
        fh.write(config_text)
        fh.write(struct.pack("<I", len(named)))
        for name, p in named:
            blob = name.encode("utf-8")
            arr = np.ascontiguousarray(p.data, dtype="<f4")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def load_checkpoint(path) -> tuple[ModelConfig, list[tuple[str, np.ndarray]]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(
                f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}"
            )
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4))
        cfg = _config_from_text(_read_exact(fh, cfg_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: list[tuple[str, np.ndarray]] = []
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            size = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(fh, 4 * size), dtype="<f4")
            tensors.append((name, data.reshape(dims).copy()))
    return cfg, tensors


def model_from_checkpoint(path) -> PatchClassifier:
    """Rebuild a classifier with the stored config and exact stored weights."""
    cfg, tensors = load_checkpoint(path)
    model = PatchClassifier(cfg, np.random.default_rng(0))
    named = dict(model.parameters())
    stored = dict(tensors)
    if set(named) != set(stored):
        missing = sorted(set(named) ^ set(stored))
        raise CheckpointError(f"parameter names do not match checkpoint: {missing}")
    for name, p in named.items():
        arr = stored[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {arr.shape}, "
                f"model {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype)
    return model
