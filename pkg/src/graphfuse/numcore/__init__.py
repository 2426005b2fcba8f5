from .tensor import (Tape, Tensor, add, as_tensor, concat, div, exp, expand_dims, getitem,
                     grad_enabled, log, lstm_scan, matmul, mean, mul, neg, power, relu, reshape,
                     set_debug, sigmoid, softmax_rows, sqrt, stack, sub, swapaxes, tanh,
                     tensor, transpose, tsum, where)
from .layers import (VARIANCE_FLOOR, BatchNormState, ParamStore, batch_norm, dropout,
                     fully_connected, glorot)
from .optim import RMSprop, RmspropState, rmsprop_step
from .gradcheck import finite_difference_check, relative_error

__all__ = [
    "Tape", "Tensor", "add", "as_tensor", "concat", "div", "exp", "expand_dims", "getitem",
    "grad_enabled", "log", "lstm_scan", "matmul", "mean", "mul", "neg", "power", "relu", "reshape",
    "set_debug", "sigmoid", "softmax_rows", "sqrt", "stack", "sub", "swapaxes", "tanh",
    "tensor", "transpose", "tsum", "where",
    "VARIANCE_FLOOR", "BatchNormState", "ParamStore", "batch_norm", "dropout",
    "fully_connected", "glorot",
    "RMSprop", "RmspropState", "rmsprop_step",
    "finite_difference_check", "relative_error",
]
