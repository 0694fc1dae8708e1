from .tape import Node, Tape, gradient
from .nets import (
    MlpModel,
    bind_params,
    copy_params,
    evaluate,
    expected_param_count,
    forward_on_tape,
    init_mlp,
    param_distance,
    params_close,
    residual_mlp,
    zero_mlp,
)
from .optim import AdamState, adam_init, adam_step
from .checkpoint import load_model, load_params, save_model, save_params

__all__ = [
    "Node", "Tape", "gradient",
    "MlpModel", "bind_params", "copy_params", "evaluate", "expected_param_count",
    "forward_on_tape", "init_mlp", "param_distance", "params_close", "residual_mlp", "zero_mlp",
    "AdamState", "adam_init", "adam_step",
    "load_model", "load_params", "save_model", "save_params",
]
