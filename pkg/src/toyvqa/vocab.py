from __future__ import annotations

"""vocab.py

合成 VQA タスクの固定語彙と解答語彙。特殊トークンはモデル側の ID (PAD=0, CLS=1, SEP=2) に合わせる。
"""

from dataclasses import dataclass
from typing import Iterable, List

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue")
PLURALS = {"circle": "circles", "square": "squares", "triangle": "triangles"}

SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")

_WORDS = (
    "what", "which", "color", "shape", "is", "are", "the", "a", "an", "of",
    "how", "many", "there", "any", "in", "image", "scene", "object", "objects",
    "leftmost", "rightmost", "does", "contain", "?",
)  # fmt: skip

TOKENS: tuple[str, ...] = (
    SPECIAL_TOKENS + _WORDS + SHAPES + tuple(PLURALS[s] for s in SHAPES) + COLORS
)


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...] = TOKENS

    def __post_init__(self) -> None:
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("語彙に重複があります")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def encode(self, words: Iterable[str]) -> List[int]:
        idx = self.index
        unk = idx["[UNK]"]
        return [idx.get(w, unk) for w in words]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.tokens[i] for i in ids]


def answer_vocabulary(max_regions: int) -> tuple[str, ...]:
    """3 色 + 3 形状 + 個数 0..R_max + yes/no。"""
    return COLORS + SHAPES + tuple(str(n) for n in range(max_regions + 1)) + ("yes", "no")
