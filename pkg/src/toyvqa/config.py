from __future__ import annotations

"""config.py

合成データ生成器の設定。マニフェストに丸ごと記録され、同じ (設定, シード) で
全例がビット単位に再生成できる。
"""

import hashlib
import json

from pydantic import BaseModel, Field, model_validator

TEMPLATES = ("color-of-shape", "count-of-shape", "shape-exists", "leftmost-shape")
FORMAT_VERSION = 1


class ToyVQAConfig(BaseModel):  # pylint: disable=too-few-public-methods
    train_size: int = Field(8000, ge=1)
    val_size: int = Field(1000, ge=1)
    test_size: int = Field(1000, ge=1)
    max_regions: int = Field(5, ge=1, description="1 シーンの最大領域数 R_max")
    canvas_width: float = Field(100.0, gt=0)
    canvas_height: float = Field(100.0, gt=0)
    min_box: float = Field(8.0, gt=0, description="ボックス辺長の下限")
    max_box: float = Field(30.0, gt=0, description="ボックス辺長の上限")
    d_vis: int = Field(32, ge=1)
    feature_noise: float = Field(0.1, ge=0, description="領域統計量のガウスノイズ σ_f")
    tag_noise: float = Field(0.1, ge=0, le=1, description="タグを誤った形状に置き換える確率")
    projection_seed: int = Field(7, description="属性 → 統計量のランダム射影を決めるシード")
    max_resamples: int = Field(100, ge=1)
    format_version: int = FORMAT_VERSION

    model_config = {"frozen": True, "extra": "forbid"}

    @model_validator(mode="after")
    def _check_box(self) -> "ToyVQAConfig":
        if self.min_box > self.max_box:
            raise ValueError("min_box は max_box 以下にしてください")
        if self.max_box >= min(self.canvas_width, self.canvas_height):
            raise ValueError("max_box はキャンバスより小さくしてください")
        return self

    @property
    def split_sizes(self) -> dict[str, int]:
        return {"train": self.train_size, "val": self.val_size, "test": self.test_size}

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()
