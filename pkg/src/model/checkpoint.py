from __future__ import annotations

"""checkpoint.py

パラメータチェックポイントのバイナリ形式。

    magic      8 bytes  b"TCFCKPT1"
    version    u32
    header_len u32
    header     UTF-8 JSON (ModelConfig, precision, seed, step, extra)
    tensors    ModelParams の宣言順に
               u16 name_len | name | u8 ndim | u32 dims... | little-endian 値 (f4 / f8)

保存 → 読み込みでビット単位に一致すること。
"""

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from ..diffcore import dtype_for
from ..errors import ArtifactMissingError, CheckpointFormatError, ConfigMismatchError
from .config import ModelConfig
from .tcf import TCFModel

MAGIC = b"TCFCKPT1"
FORMAT_VERSION = 1

_NP_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict[str, torch.Tensor]
    precision: str
    seed: int
    step: int
    extra: dict[str, Any] = field(default_factory=dict)

    def to_model(self) -> TCFModel:
        """チェックポイントの値を持つ TCFModel を構築する。"""
        model = TCFModel(self.config)
        model.to(dtype_for(self.precision))
        expected = [name for name, _ in model.named_parameters()]
        if expected != list(self.state):
            raise ConfigMismatchError("チェックポイントのテンソル一覧がモデル構成と一致しません")
        with torch.no_grad():
            for name, p in model.named_parameters():
                p.copy_(self.state[name])
        return model


def state_of(model: TCFModel) -> dict[str, torch.Tensor]:
    """宣言順のパラメータ辞書 (切り離したコピー)。"""
    return {name: p.detach().clone() for name, p in model.named_parameters()}


def from_model(model: TCFModel, *, seed: int, step: int, extra: dict[str, Any] | None = None) -> Checkpoint:
    dtype = next(model.parameters()).dtype
    precision = "float64" if dtype == torch.float64 else "float32"
    return Checkpoint(model.config, state_of(model), precision, int(seed), int(step), dict(extra or {}))


# ------------------------------------------------------------
# 書き出し
# ------------------------------------------------------------


def write_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np_dtype = _NP_DTYPES[ckpt.precision]
    header = {
        "config": ckpt.config.model_dump(),
        "precision": ckpt.precision,
        "seed": ckpt.seed,
        "step": ckpt.step,
        "extra": ckpt.extra,
        "tensors": list(ckpt.state),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for name, tensor in ckpt.state.items():
            raw_name = name.encode("utf-8")
            arr = tensor.detach().cpu().numpy().astype(np_dtype, copy=False)
            fh.write(struct.pack("<H", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())
    os.replace(tmp, path)
    return path


def save_checkpoint(
    path: str | Path,
    model: TCFModel,
    *,
    seed: int,
    step: int,
    extra: dict[str, Any] | None = None,
) -> Path:
    return write_checkpoint(path, from_model(model, seed=seed, step=step, extra=extra))


# ------------------------------------------------------------
# 読み込み
# ------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"{self.path}: ファイルが途中で切れています")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissingError(path, "checkpoint")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError(f"{path}: マジックバイトが一致しません")
    version, header_len = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: 未対応の形式バージョン {version}")
    header = json.loads(reader.take(header_len).decode("utf-8"))
    np_dtype = _NP_DTYPES[header["precision"]]

    state: dict[str, torch.Tensor] = {}
    for expected_name in header["tensors"]:
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        if name != expected_name:
            raise CheckpointFormatError(f"{path}: テンソル順序が宣言と異なります ({name} ≠ {expected_name})")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        raw = reader.take(count * np_dtype.itemsize)
        arr = np.frombuffer(raw, dtype=np_dtype).reshape(shape).copy()
        state[name] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("=")))
    if reader.pos != len(reader.data):
        raise CheckpointFormatError(f"{path}: 末尾に余分なバイトがあります")

    return Checkpoint(
        config=ModelConfig(**header["config"]),
        state=state,
        precision=header["precision"],
        seed=int(header["seed"]),
        step=int(header["step"]),
        extra=dict(header.get("extra", {})),
    )


def load_model(path: str | Path) -> TCFModel:
    return load_checkpoint(path).to_model()
