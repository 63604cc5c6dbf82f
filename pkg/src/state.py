from __future__ import annotations

"""state.py

``pipeline`` サブコマンドの LangGraph state と、その実行設定。
"""

from typing import Any, Dict, List, Literal, TypedDict

from pydantic import BaseModel, Field, field_validator

from .toyvqa import SPLITS


class PipelineSettings(BaseModel):  # pylint: disable=too-few-public-methods
    """2 段階学習 (vanilla → adversarial) から集計までの一連の設定。"""

    work_dir: str = "work"
    data_seed: int = 42
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    vanilla_epochs: int = Field(20, ge=1)
    adversarial_epochs: int = Field(20, ge=1)
    avg_ks: List[int] = Field(default_factory=lambda: [5, 10, 15, 20])
    ensemble_pool: Literal["avg", "final", "both"] = "avg"
    ensemble_k: int = Field(15, ge=1, description="ensemble_pool=avg で使う平均化数 (リング長で頭打ち)")
    eval_splits: List[str] = Field(default_factory=lambda: ["val", "test"])
    attack_splits: List[str] = Field(default_factory=lambda: ["val"])
    overwrite: bool = False
    run: Dict[str, Any] = Field(default_factory=dict, description="RunConfig の共通値")
    data: Dict[str, Any] = Field(default_factory=dict, description="ToyVQAConfig の値")

    @field_validator("avg_ks")
    @classmethod
    def _check_ks(cls, v: List[int]) -> List[int]:
        if any(k < 1 for k in v):
            raise ValueError("avg_ks は 1 以上にしてください")
        return sorted(set(v))

    @field_validator("eval_splits", "attack_splits")
    @classmethod
    def _check_splits(cls, v: List[str]) -> List[str]:
        unknown = [s for s in v if s not in SPLITS]
        if unknown:
            raise ValueError(f"未知の分割: {unknown}")
        return v


class PipelineState(TypedDict, total=False):
    # 入力
    settings: Dict[str, Any]

    # 生成したデータセット
    data_dir: str

    # seed -> 学習結果 (run_dir, final_checkpoint, ...)
    vanilla_runs: Dict[str, Dict[str, Any]]
    adversarial_runs: Dict[str, Dict[str, Any]]

    # 平均化チェックポイント (phase, seed, k, path)
    averaged: List[Dict[str, Any]]

    # 評価結果レコード
    results: List[Dict[str, Any]]

    # レポート出力パス
    report: Dict[str, Any]

    # プランナー決定
    plan_next: str

    # 実行済みノード
    _executed_tools: List[str]
