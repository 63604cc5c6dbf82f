from __future__ import annotations

from .grad_check import grad_check, grad_check_tensors  # noqa: F401
from .ops import (  # noqa: F401
    add,
    assert_finite,
    attention,
    concat,
    cross_entropy,
    embedding_lookup,
    gelu,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    scale,
    slice_columns,
    softmax,
)
from .precision import dtype_for, get_dtype, get_precision, precision, set_precision  # noqa: F401

__all__ = [
    "add",
    "assert_finite",
    "attention",
    "concat",
    "cross_entropy",
    "embedding_lookup",
    "gelu",
    "grad_check",
    "grad_check_tensors",
    "layer_norm",
    "linear",
    "log_softmax",
    "matmul",
    "scale",
    "slice_columns",
    "softmax",
    "dtype_for",
    "get_dtype",
    "get_precision",
    "precision",
    "set_precision",
]
