from __future__ import annotations

"""precision.py

実行全体で共有する精度モード。``float64`` は検証用 (テスト・grad_check)、
``float32`` は学習速度用。1 回の実行の途中で切り替えない。
"""

from contextlib import contextmanager
from typing import Iterator, Literal

import torch

PrecisionMode = Literal["float32", "float64"]

_DTYPES: dict[str, torch.dtype] = {"float32": torch.float32, "float64": torch.float64}
_current: PrecisionMode = "float32"


def set_precision(mode: PrecisionMode) -> None:
    """精度モードを設定し、torch の既定 dtype も合わせる。"""
    global _current
    if mode not in _DTYPES:
        raise ValueError(f"未知の精度モード: {mode!r} (float32 / float64)")
    _current = mode
    torch.set_default_dtype(_DTYPES[mode])


def get_precision() -> PrecisionMode:
    return _current


def get_dtype() -> torch.dtype:
    return _DTYPES[_current]


def dtype_for(mode: str) -> torch.dtype:
    try:
        return _DTYPES[mode]
    except KeyError as e:
        raise ValueError(f"未知の精度モード: {mode!r}") from e


@contextmanager
def precision(mode: PrecisionMode) -> Iterator[None]:
    """テスト用: ブロック内だけ精度モードを切り替える。"""
    previous = _current
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)
