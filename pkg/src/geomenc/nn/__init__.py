"""Minimal numpy training stack: convolutions, activations, MAE, Adam, checkpoints."""

from .checkpoint import CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .layers import (
    DTYPE, Conv, ConvSpec, LeakyReLU, ShapeError,
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward,
    leaky_relu_backward, leaky_relu_forward, mae_loss,
)
from .optim import AdamState, NonFiniteGradientError, PlateauSchedule, adam_step
