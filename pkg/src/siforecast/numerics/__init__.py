from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numerical_grad, relative_error
from .layers import (
    Dense,
    FieldNet,
    FieldNetSpec,
    RnnEncoder,
    RnnEncoderSpec,
    dense_forward,
    lstm_encode,
    time_embed,
)
from .optim import ParamStore, adam_step, train_loop
from .tensor import Tensor, as_tensor, concat, no_grad

__all__ = [
    "Dense",
    "FieldNet",
    "FieldNetSpec",
    "ParamStore",
    "RnnEncoder",
    "RnnEncoderSpec",
    "Tensor",
    "adam_step",
    "as_tensor",
    "check_gradients",
    "concat",
    "dense_forward",
    "load_checkpoint",
    "lstm_encode",
    "no_grad",
    "numerical_grad",
    "relative_error",
    "save_checkpoint",
    "time_embed",
    "train_loop",
]
