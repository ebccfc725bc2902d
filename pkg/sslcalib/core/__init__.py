from .tensor import (
    Tensor, ShapeError, NonFiniteError, no_grad,
    add, sub, mul, matmul, scale, shift, neg, square, relu, sigmoid, exp, log,
    softmax, log_softmax, tsum, mean, concat, reshape, dropout, cross_entropy, one_hot,
    backward, sgd_step, zero_grad,
)
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError
from .seeding import SeedStreams, stream_rng

__all__ = [
    "Tensor", "ShapeError", "NonFiniteError", "no_grad",
    "add", "sub", "mul", "matmul", "scale", "shift", "neg", "square", "relu", "sigmoid", "exp", "log",
    "softmax", "log_softmax", "tsum", "mean", "concat", "reshape", "dropout", "cross_entropy", "one_hot",
    "backward", "sgd_step", "zero_grad",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
    "SeedStreams", "stream_rng",
]
