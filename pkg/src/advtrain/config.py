from __future__ import annotations

"""config.py

埋め込み空間の敵対的学習 (min_θ max_δ) の設定。
"""

from pydantic import BaseModel, Field, model_validator


class AdvConfig(BaseModel):  # pylint: disable=too-few-public-methods
    alpha: float = Field(1.0, ge=0.0, description="R_JSD の重み α")
    epsilon: float = Field(0.5, gt=0.0, description="δ の列ごと L2 ノルム上限 ε")
    ascent_steps: int = Field(3, ge=1, description="内側最大化のステップ数 K")
    ascent_lr: float = Field(0.1, gt=0.0, description="内側最大化の歩幅 η_δ")
    init_scale: float = Field(0.05, ge=0.0, description="δ_0 の一様初期化半径")
    max_backtracks: int = Field(3, ge=0, description="目的関数が下がった例の歩幅半減の最大回数")

    model_config = {"frozen": True, "extra": "forbid"}

    @model_validator(mode="after")
    def _check_init_scale(self) -> "AdvConfig":
        if self.init_scale > self.epsilon:
            raise ValueError(f"init_scale ({self.init_scale}) は epsilon ({self.epsilon}) 以下にしてください")
        return self
