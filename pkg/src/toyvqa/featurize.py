from __future__ import annotations

"""featurize.py

物体検出器の代用。領域ごとに
  stats = P · onehot(形状, 色) + N(0, σ_f²)   (P は固定シードの d_vis × 9 ランダム射影)
  box   = (x_min/W, y_min/H, x_max/W, y_max/H, w/W, h/H)
と、形状名のタグ (確率 p_tagnoise で誤った形状に置換) を作る。
色は領域特徴にしか現れない。
"""

from functools import lru_cache
from typing import List, Tuple

import numpy as np

from ..model.inputs import RegionFeature
from .config import ToyVQAConfig
from .scene import Scene, SceneObject, _round9
from .vocab import COLORS, SHAPES


@lru_cache(maxsize=8)
def attribute_projection(d_vis: int, seed: int) -> np.ndarray:
    """(d_vis, 9) の固定射影。列 = (形状, 色) の組。"""
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((d_vis, len(SHAPES) * len(COLORS)))
    proj.setflags(write=False)
    return proj


def attribute_index(shape: str, color: str) -> int:
    return SHAPES.index(shape) * len(COLORS) + COLORS.index(color)


def normalized_box(obj: SceneObject, scene: Scene) -> np.ndarray:
    x0, y0, x1, y1 = obj.box
    w, h = scene.width, scene.height
    box = np.array([x0 / w, y0 / h, x1 / w, y1 / h, (x1 - x0) / w, (y1 - y0) / h])
    return np.clip(box, 0.0, 1.0)


def featurize(
    scene: Scene,
    rng: np.random.Generator,
    cfg: ToyVQAConfig | None = None,
) -> Tuple[List[RegionFeature], List[str]]:
    """(領域特徴のリスト, 物体タグのリスト) をシーンの図形順に返す。"""
    cfg = cfg or ToyVQAConfig()
    proj = attribute_projection(cfg.d_vis, cfg.projection_seed)
    regions: List[RegionFeature] = []
    tags: List[str] = []
    for obj in scene.objects:
        stats = proj[:, attribute_index(obj.shape, obj.color)].copy()
        if cfg.feature_noise > 0:
            stats = stats + rng.normal(0.0, cfg.feature_noise, cfg.d_vis)
        stats = np.array([_round9(float(v)) for v in stats])
        box = np.array([_round9(float(v)) for v in normalized_box(obj, scene)])
        regions.append(RegionFeature(stats=stats, box=box))

        tag = obj.shape
        if cfg.tag_noise > 0 and rng.random() < cfg.tag_noise:
            wrong = [s for s in SHAPES if s != obj.shape]
            tag = wrong[int(rng.integers(len(wrong)))]
        tags.append(tag)
    return regions, tags
