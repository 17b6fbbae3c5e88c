"""Deterministic numerical core: tensors with reverse-mode autodiff, layers,
sequence losses, Adam, and finite-difference gradient verification."""

from .checkpoint import CorruptCheckpoint, load_checkpoint, save_checkpoint
from .gradcheck import NonFiniteLoss, gradcheck
from .layers import (Conv1d, DepthwiseConv1d, Embedding, LayerNorm, Linear,
                     sinusoidal_positions)
from .losses import (IndexOutOfRange, TargetTooLong, ctc_loss,
                     ctc_required_length, label_smoothed_ce)
from .optim import (LrSchedule, Parameter, adam_step, clip_grad_norm, lr_at,
                    zero_grads)
from .tensor import (DimMismatch, Tensor, add, affine, conv1d,
                     depthwise_conv1d, dropout, embedding, layer_norm,
                     log_softmax, matmul, mul, multi_head_attention, narrow,
                     no_grad, relu, reshape, segment_mean, sigmoid, silu,
                     softmax, tmean, transpose, tsum)

__all__ = [
    "CorruptCheckpoint", "load_checkpoint", "save_checkpoint",
    "NonFiniteLoss", "gradcheck",
    "Conv1d", "DepthwiseConv1d", "Embedding", "LayerNorm", "Linear",
    "sinusoidal_positions",
    "IndexOutOfRange", "TargetTooLong", "ctc_loss", "ctc_required_length",
    "label_smoothed_ce",
    "LrSchedule", "Parameter", "adam_step", "clip_grad_norm", "lr_at",
    "zero_grads",
    "DimMismatch", "Tensor", "add", "affine", "conv1d", "depthwise_conv1d",
    "dropout", "embedding", "layer_norm", "log_softmax", "matmul", "mul",
    "multi_head_attention", "narrow", "no_grad", "relu", "reshape",
    "segment_mean", "sigmoid", "silu", "softmax", "tmean", "transpose",
    "tsum",
]
