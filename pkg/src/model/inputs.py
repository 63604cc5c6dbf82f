from __future__ import annotations

"""inputs.py

(Q, O, I) 三つ組の入力型と、パディング付きバッチへの整形 (collate)。

系列配置: [CLS] q_1..q_|Q| [SEP] o_1..o_|O| [SEP] i_1..i_|I| [PAD]...
テキスト区間 = 先頭 3+|Q|+|O| 列 (セグメント 0)、画像区間 = 続く |I| 列 (セグメント 1)。
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..errors import ShapeMismatchError
from .config import BOX_DIM, NUM_SPECIAL, ModelConfig

# 特殊トークン ID (語彙の先頭 3 つに固定)
PAD_ID = 0
CLS_ID = 1
SEP_ID = 2

TEXT_SEGMENT = 0
IMAGE_SEGMENT = 1


@dataclass(frozen=True)
class RegionFeature:
    """1 領域分の視覚統計量 (d_vis) と正規化ボックス 6 値。"""

    stats: np.ndarray
    box: np.ndarray

    def __post_init__(self) -> None:
        stats = np.asarray(self.stats, dtype=np.float64).reshape(-1)
        box = np.asarray(self.box, dtype=np.float64).reshape(-1)
        if box.shape[0] != BOX_DIM:
            raise ShapeMismatchError(f"box は {BOX_DIM} 値である必要があります (got {box.shape[0]})")
        if np.any(box < 0.0) or np.any(box > 1.0):
            raise ShapeMismatchError(f"box は [0, 1] に正規化されている必要があります: {box.tolist()}")
        object.__setattr__(self, "stats", stats)
        object.__setattr__(self, "box", box)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.stats, self.box])


@dataclass(frozen=True)
class FusionInput:
    question_tokens: tuple[int, ...]
    object_tags: tuple[int, ...]
    regions: tuple[RegionFeature, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "question_tokens", tuple(int(t) for t in self.question_tokens))
        object.__setattr__(self, "object_tags", tuple(int(t) for t in self.object_tags))
        object.__setattr__(self, "regions", tuple(self.regions))
        if len(self.question_tokens) < 1:
            raise ShapeMismatchError("質問トークンは 1 つ以上必要です")
        if len(self.regions) < 1:
            raise ShapeMismatchError("領域は 1 つ以上必要です")

    @property
    def text_len(self) -> int:
        return NUM_SPECIAL + len(self.question_tokens) + len(self.object_tags)

    @property
    def seq_len(self) -> int:
        return self.text_len + len(self.regions)

    def validate(self, config: ModelConfig) -> None:
        """構成の最大長・語彙・視覚次元と整合するか確認する。"""
        limits = (
            ("|Q|", len(self.question_tokens), config.max_question_len),
            ("|O|", len(self.object_tags), config.max_tag_len),
            ("|I|", len(self.regions), config.max_region_len),
        )
        for label, n, limit in limits:
            if n > limit:
                raise ShapeMismatchError(f"{label}={n} が最大長 {limit} を超えています")
        for tok in (*self.question_tokens, *self.object_tags):
            if not 0 <= tok < config.vocab_size:
                raise ShapeMismatchError(f"トークン ID {tok} は語彙 (サイズ {config.vocab_size}) の外です")
        for r in self.regions:
            if r.stats.shape[0] != config.d_vis:
                raise ShapeMismatchError(f"領域統計量の次元 {r.stats.shape[0]} ≠ d_vis {config.d_vis}")


@dataclass(frozen=True)
class SpanMap:
    """系列中の各区間の位置 ([start, stop) の半開区間)。"""

    question: tuple[int, int]
    tags: tuple[int, int]
    image: tuple[int, int]

    @property
    def text(self) -> tuple[int, int]:
        return (0, self.image[0])

    @property
    def text_len(self) -> int:
        return self.image[0]

    @property
    def seq_len(self) -> int:
        return self.image[1]

    @classmethod
    def for_input(cls, x: FusionInput) -> "SpanMap":
        nq, no, ni = len(x.question_tokens), len(x.object_tags), len(x.regions)
        q = (1, 1 + nq)
        o = (q[1] + 1, q[1] + 1 + no)
        img = (o[1] + 1, o[1] + 1 + ni)
        return cls(question=q, tags=o, image=img)


@dataclass
class FusionBatch:
    """右詰めパディングされた B 例分の入力。"""

    token_ids: torch.Tensor  # (B, S) long
    segment_ids: torch.Tensor  # (B, S) long
    region_inputs: torch.Tensor  # (B, S, d_vis+6)
    image_mask: torch.Tensor  # (B, S) bool
    text_mask: torch.Tensor  # (B, S) bool
    valid_mask: torch.Tensor  # (B, S) bool
    spans: list[SpanMap] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.token_ids.shape[0])

    @property
    def seq_len(self) -> int:
        return int(self.token_ids.shape[1])


def collate(
    inputs: Sequence[FusionInput],
    config: ModelConfig,
    dtype: torch.dtype | None = None,
) -> FusionBatch:
    """FusionInput の列を 1 つの FusionBatch にまとめる。"""
    if not inputs:
        raise ShapeMismatchError("空のバッチは整形できません")
    dtype = dtype or torch.get_default_dtype()
    for x in inputs:
        x.validate(config)

    spans = [SpanMap.for_input(x) for x in inputs]
    b = len(inputs)
    s = max(sp.seq_len for sp in spans)

    token_ids = np.full((b, s), PAD_ID, dtype=np.int64)
    segment_ids = np.zeros((b, s), dtype=np.int64)
    region_inputs = np.zeros((b, s, config.region_input_dim), dtype=np.float64)
    image_mask = np.zeros((b, s), dtype=bool)
    text_mask = np.zeros((b, s), dtype=bool)
    valid_mask = np.zeros((b, s), dtype=bool)

    for row, (x, sp) in enumerate(zip(inputs, spans)):
        q0, q1 = sp.question
        o0, o1 = sp.tags
        i0, i1 = sp.image
        token_ids[row, 0] = CLS_ID
        token_ids[row, q0:q1] = x.question_tokens
        token_ids[row, q1] = SEP_ID
        token_ids[row, o0:o1] = x.object_tags
        token_ids[row, o1] = SEP_ID
        for j, region in enumerate(x.regions):
            region_inputs[row, i0 + j] = region.vector()
        segment_ids[row, i0:i1] = IMAGE_SEGMENT
        image_mask[row, i0:i1] = True
        text_mask[row, 0:i0] = True
        valid_mask[row, 0:i1] = True

    return FusionBatch(
        token_ids=torch.from_numpy(token_ids),
        segment_ids=torch.from_numpy(segment_ids),
        region_inputs=torch.from_numpy(region_inputs).to(dtype),
        image_mask=torch.from_numpy(image_mask),
        text_mask=torch.from_numpy(text_mask),
        valid_mask=torch.from_numpy(valid_mask),
        spans=spans,
    )
