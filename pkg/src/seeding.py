from __future__ import annotations

"""seeding.py

ルートシードから名前付きサブストリームを派生させる。
ストリーム名ごとに独立なので、あるコンポーネントの乱数消費が他へ波及しない。
"""

import hashlib

import numpy as np
import torch

# 既定のストリーム名
INIT = "init"
DELTA_INIT = "delta-init"
SHUFFLE = "shuffle"


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(root_seed: int, name: str) -> int:
    """(root_seed, name) から 63bit の子シードを決定的に導出する。"""
    ss = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFFFFFFFFFF, _name_key(name)])
    return int(ss.generate_state(1, dtype=np.uint64)[0]) & ((1 << 63) - 1)


def numpy_rng(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, name))


def torch_generator(root_seed: int, name: str) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(root_seed, name))
    return gen
