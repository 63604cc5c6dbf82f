from __future__ import annotations

"""run_config.py

学習・評価の実行設定 (フラットな key-value)。JSON ファイル + ``--set key=value`` の上書きで組み立て、
実行開始時に ``<run_dir>/config.json`` へそのまま書き出す。
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, Literal, Optional

from pydantic import BaseModel, Field

from .advtrain import AdvConfig
from .model import ModelConfig
from .toyvqa import DatasetManifest

CONFIG_NAME = "config.json"


class RunConfig(BaseModel):  # pylint: disable=too-few-public-methods
    # パス
    data_dir: str = "data"
    run_dir: str = "runs/default"
    init_from: Optional[str] = Field(None, description="初期値にするチェックポイント (2 段階学習の後段)")

    # スケジュール
    mode: Literal["vanilla", "adversarial"] = "vanilla"
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)

    # モデル (語彙・解答数・領域数はデータセットのマニフェストから決まる)
    embed_dim: int = Field(64, ge=1)
    num_layers: int = Field(2, ge=0)
    num_heads: int = Field(4, ge=1)
    ffn_dim: Optional[int] = Field(None, ge=1)
    layer_norm_eps: float = Field(1e-12, gt=0)
    init_std: float = Field(0.02, gt=0)
    max_question_len: int = Field(12, ge=1)

    # 敵対的学習
    alpha: float = Field(1.0, ge=0)
    epsilon: float = Field(0.5, gt=0)
    ascent_steps: int = Field(3, ge=1)
    ascent_lr: float = Field(0.1, gt=0)
    init_scale: float = Field(0.05, ge=0)
    max_backtracks: int = Field(3, ge=0)

    # 実行環境
    seed: int = 0
    precision: Literal["float32", "float64"] = "float32"
    snapshot_capacity: int = Field(20, ge=1)
    threads: int = Field(1, ge=1)
    eval_batch_size: int = Field(256, ge=1)
    record_wall_clock: bool = False

    model_config = {"extra": "forbid"}

    # ------------------------------------------------------------
    # 構築
    # ------------------------------------------------------------

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Iterable[str] = ()) -> "RunConfig":
        """JSON ファイル (任意) を読み、``key=value`` の上書きを適用する。値の型変換は pydantic に任せる。"""
        values: Dict[str, Any] = {}
        if path is not None:
            values.update(json.loads(Path(path).read_text(encoding="utf-8")))
        values.update(parse_overrides(overrides))
        return cls(**values)

    def model_config_for(self, manifest: DatasetManifest) -> ModelConfig:
        toy = manifest.toy_config()
        return ModelConfig(
            embed_dim=self.embed_dim,
            hidden_dim=self.embed_dim,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            d_vis=toy.d_vis,
            answer_count=len(manifest.answers),
            vocab_size=len(manifest.tokens),
            max_question_len=self.max_question_len,
            max_tag_len=toy.max_regions,
            max_region_len=toy.max_regions,
            ffn_dim=self.ffn_dim,
            layer_norm_eps=self.layer_norm_eps,
            init_std=self.init_std,
        )

    def adv_config(self) -> AdvConfig:
        return AdvConfig(
            alpha=self.alpha,
            epsilon=self.epsilon,
            ascent_steps=self.ascent_steps,
            ascent_lr=self.ascent_lr,
            init_scale=self.init_scale,
            max_backtracks=self.max_backtracks,
        )

    def write(self, run_dir: str | Path | None = None) -> Path:
        path = Path(run_dir or self.run_dir) / CONFIG_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path


def parse_overrides(pairs: Iterable[str]) -> Dict[str, Any]:
    """``key=value`` の列を辞書にする。値は JSON として解釈できればその型、できなければ文字列。"""
    out: Dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--set は key=value 形式で指定してください: {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out
