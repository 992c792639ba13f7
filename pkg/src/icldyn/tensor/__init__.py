from . import container
from .ops import (
    backward,
    concat,
    conv1d,
    downsample1d,
    embedding_lookup,
    film,
    gelu,
    group_norm,
    layer_norm,
    linear,
    matmul,
    mish,
    multi_head_attention,
    sinusoidal_embedding,
    slice_,
    softmax,
    upsample1d,
)
from .optim import adam_step, lr_at, make_adam

__all__ = [
    "adam_step", "backward", "concat", "container", "conv1d", "downsample1d", "embedding_lookup",
    "film", "gelu", "group_norm", "layer_norm", "linear", "lr_at", "make_adam", "matmul", "mish",
    "multi_head_attention", "sinusoidal_embedding", "slice_", "softmax", "upsample1d",
]
