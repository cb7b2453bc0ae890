"""Patch-based attention image classifier toolkit.

Self-contained pipeline: Lanczos-family image resampling, CutMix
augmentation, vanilla and shifted patch tokenization, a transformer encoder
classifier with temperature-configurable attention on a small reverse-mode
autodiff core, AdamW training with warmup, ROC/AUC evaluation, and a CLI.
"""

from .augment import CutMixBox, CutMixConfig, LabeledImage, cutmix, get_box, sample_lambda
from .images import ImageBuffer, ImageFormatError, load_image, save_image
from .metrics import RocCurve, multiclass_roc, roc_curve, topk_accuracy
from .model import (
    AttentionWeights,
    ModelConfig,
    PatchClassifier,
    count_params,
    encoder_block,
    estimate_flops,
    load_checkpoint,
    mhsa,
    model_from_checkpoint,
    save_checkpoint,
    scaled_dot_attention,
)
from .resample import KernelSpec, compare_kernels, lanczos_kernel, psnr, resample
from .tensor import Graph, Tensor, backward, grad_check
from .tokenizer import (
    PatchGrid,
    TokenBatch,
    Tokenizer,
    num_patches,
    positional_encoding,
    spt_concat,
    unpatchify,
    vanilla_patchify,
)
from .training import TrainConfig, cross_entropy_soft, evaluate, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "CutMixBox",
    "CutMixConfig",
    "LabeledImage",
    "cutmix",
    "get_box",
    "sample_lambda",
    "ImageBuffer",
    "ImageFormatError",
    "load_image",
    "save_image",
    "RocCurve",
    "multiclass_roc",
    "roc_curve",
    "topk_accuracy",
    "AttentionWeights",
    "ModelConfig",
    "PatchClassifier",
    "count_params",
    "encoder_block",
    "estimate_flops",
    "load_checkpoint",
    "mhsa",
    "model_from_checkpoint",
    "save_checkpoint",
    "scaled_dot_attention",
    "KernelSpec",
    "compare_kernels",
    "lanczos_kernel",
    "psnr",
    "resample",
    "Graph",
    "Tensor",
    "backward",
    "grad_check",
    "PatchGrid",
    "TokenBatch",
    "Tokenizer",
    "num_patches",
    "positional_encoding",
    "spt_concat",
    "unpatchify",
    "vanilla_patchify",
    "TrainConfig",
    "cross_entropy_soft",
    "evaluate",
    "lr_at",
    "train",
    "__version__",
]
