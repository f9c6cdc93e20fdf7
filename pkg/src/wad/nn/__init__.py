"""Minimal numpy neural-network engine: layers, DAG networks, Adam, gradient checks, checkpoints."""

from .checkpoint import (Checkpoint, content_hash, decode_checkpoint, load_checkpoint, net_tensors, restore,
                         save_checkpoint)
from .errors import (CheckpointCorruptError, CheckpointError, CheckpointVersionError, MissingCacheError, NNError,
                     NonFiniteError, ShapeError, UnknownParameterError)
from .gradcheck import check_gradients, grad_check, relative_error, squared_error_loss
from .layers import ACTIVATIONS, Conv2d, ConvTranspose2d, Dense, activate, activation_grad
from .network import Network, mlp
from .optim import Adam, AdamState, adam_step

__all__ = [
    "ACTIVATIONS", "Adam", "AdamState", "Checkpoint", "CheckpointCorruptError", "CheckpointError",
    "CheckpointVersionError", "Conv2d", "ConvTranspose2d", "Dense", "MissingCacheError", "NNError", "Network",
    "NonFiniteError", "ShapeError", "UnknownParameterError", "activate", "activation_grad", "adam_step",
    "check_gradients", "content_hash", "decode_checkpoint", "grad_check", "load_checkpoint", "mlp", "net_tensors",
    "relative_error", "restore", "save_checkpoint", "squared_error_loss",
]
