from __future__ import annotations

"""scene.py

合成シーン: 1..R_max 個の図形 (形状 × 色 × ボックス) をキャンバス上に置く。
"""

from dataclasses import dataclass
from typing import Any, Dict, List

import numpy as np

from .config import ToyVQAConfig
from .vocab import COLORS, SHAPES


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    box: tuple[float, float, float, float]  # (x_min, y_min, x_max, y_max)

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"未知の形状: {self.shape}")
        if self.color not in COLORS:
            raise ValueError(f"未知の色: {self.color}")
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"退化したボックスです: {self.box}")

    def to_dict(self) -> Dict[str, Any]:
        return {"shape": self.shape, "color": self.color, "box": list(self.box)}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SceneObject":
        return cls(shape=d["shape"], color=d["color"], box=tuple(float(v) for v in d["box"]))  # type: ignore[arg-type]


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    width: float
    height: float

    def __post_init__(self) -> None:
        if not self.objects:
            raise ValueError("シーンには 1 つ以上の図形が必要です")
        for obj in self.objects:
            x0, y0, x1, y1 = obj.box
            if x0 < 0 or y0 < 0 or x1 > self.width or y1 > self.height:
                raise ValueError(f"ボックスがキャンバス外にはみ出しています: {obj.box}")

    def to_dict(self) -> Dict[str, Any]:
        return {"width": self.width, "height": self.height, "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Scene":
        return cls(
            objects=tuple(SceneObject.from_dict(o) for o in d["objects"]),
            width=float(d["width"]),
            height=float(d["height"]),
        )


def _round9(x: float) -> float:
    """有効数字 9 桁に丸める (シリアライズ形式と一致させる)。"""
    return float(f"{x:.9g}")


def generate_scene(rng: np.random.Generator, cfg: ToyVQAConfig | None = None) -> Scene:
    """R ~ U{1..R_max}、形状・色は一様、辺長は U(min_box, max_box)、位置はキャンバス内で一様。"""
    cfg = cfg or ToyVQAConfig()
    w_canvas, h_canvas = cfg.canvas_width, cfg.canvas_height
    count = int(rng.integers(1, cfg.max_regions + 1))
    objects: List[SceneObject] = []
    for _ in range(count):
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        color = COLORS[int(rng.integers(len(COLORS)))]
        w = float(rng.uniform(cfg.min_box, cfg.max_box))
        h = float(rng.uniform(cfg.min_box, cfg.max_box))
        x0 = _round9(float(rng.uniform(0.0, w_canvas - w)))
        y0 = _round9(float(rng.uniform(0.0, h_canvas - h)))
        x1 = min(_round9(x0 + w), w_canvas)
        y1 = min(_round9(y0 + h), h_canvas)
        objects.append(SceneObject(shape=shape, color=color, box=(x0, y0, x1, y1)))
    return Scene(objects=tuple(objects), width=w_canvas, height=h_canvas)
