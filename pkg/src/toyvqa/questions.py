from __future__ import annotations

"""questions.py

テンプレートから質問を作り、シーンの属性・幾何から解答を厳密に計算する。
曖昧な具体化 (例: 色の違う円が 2 つある状態で「円の色は?」) は棄却して引き直す。
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .config import TEMPLATES, ToyVQAConfig
from .scene import Scene
from .vocab import COLORS, PLURALS, SHAPES

# leftmost 判定で同着とみなす x_min の差
_TIE_TOL = 1e-6


class NoValidQuestion(Exception):
    """指定回数引き直しても有効な質問が作れなかった。"""


@dataclass(frozen=True)
class Question:
    template_id: str
    args: Dict[str, str]
    tokens: Tuple[str, ...]
    answer: str


def question_tokens(template_id: str, args: Dict[str, str]) -> List[str]:
    if template_id == "color-of-shape":
        return ["what", "color", "is", "the", args["shape"], "?"]
    if template_id == "count-of-shape":
        return ["how", "many", PLURALS[args["shape"]], "are", "there", "?"]
    if template_id == "shape-exists":
        return ["is", "there", "a", args["color"], args["shape"], "?"]
    if template_id == "leftmost-shape":
        return ["what", "shape", "is", "the", "leftmost", "object", "?"]
    raise ValueError(f"未知のテンプレート: {template_id}")


def answer_for(scene: Scene, template_id: str, args: Dict[str, str]) -> Optional[str]:
    """解答を返す。答えが一意に定まらない場合は None。"""
    objs = scene.objects
    if template_id == "color-of-shape":
        colors = {o.color for o in objs if o.shape == args["shape"]}
        return colors.pop() if len(colors) == 1 else None
    if template_id == "count-of-shape":
        return str(sum(1 for o in objs if o.shape == args["shape"]))
    if template_id == "shape-exists":
        hit = any(o.shape == args["shape"] and o.color == args["color"] for o in objs)
        return "yes" if hit else "no"
    if template_id == "leftmost-shape":
        ordered = sorted(objs, key=lambda o: o.box[0])
        if len(ordered) > 1 and ordered[1].box[0] - ordered[0].box[0] < _TIE_TOL:
            return None
        return ordered[0].shape
    raise ValueError(f"未知のテンプレート: {template_id}")


def _sample_args(scene: Scene, template_id: str, rng: np.random.Generator) -> Dict[str, str]:
    if template_id in ("color-of-shape", "count-of-shape"):
        return {"shape": SHAPES[int(rng.integers(len(SHAPES)))]}
    if template_id == "shape-exists":
        # 半分はシーン中の実在物から選び、yes/no の偏りを抑える
        if rng.random() < 0.5:
            obj = scene.objects[int(rng.integers(len(scene.objects)))]
            return {"shape": obj.shape, "color": obj.color}
        return {
            "shape": SHAPES[int(rng.integers(len(SHAPES)))],
            "color": COLORS[int(rng.integers(len(COLORS)))],
        }
    return {}


def pose_question(
    scene: Scene,
    template_id: str,
    rng: np.random.Generator,
    cfg: ToyVQAConfig | None = None,
) -> Question:
    """テンプレートを具体化して (質問トークン, 解答) を返す。"""
    if template_id not in TEMPLATES:
        raise ValueError(f"未知のテンプレート: {template_id} (候補: {TEMPLATES})")
    cfg = cfg or ToyVQAConfig()
    for _ in range(cfg.max_resamples):
        args = _sample_args(scene, template_id, rng)
        answer = answer_for(scene, template_id, args)
        if answer is not None:
            return Question(template_id, args, tuple(question_tokens(template_id, args)), answer)
        if not args:
            # 引数のないテンプレートは引き直しても結果が変わらない
            break
    raise NoValidQuestion(f"{template_id}: {cfg.max_resamples} 回以内に有効な質問を作れませんでした")


def describe(question: Question) -> Dict[str, Any]:
    return {"template_id": question.template_id, "args": dict(question.args)}
