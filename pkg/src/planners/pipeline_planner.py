from __future__ import annotations

"""pipeline_planner.py

パイプライン用の Planner 生成ユーティリティ。
与えられたステージ名リストだけを候補として、未実行のステージを順番に state["plan_next"] に入れ、
すべて終われば '__end__' を返す callable を作る。
"""

import logging
from typing import Any, Callable, Dict, Sequence

logger = logging.getLogger(__name__)

END_MARKER = "__end__"


def make_pipeline_planner(stages: Sequence[str]) -> Callable[[Dict[str, Any]], Dict[str, Any]]:
    if not stages:
        raise ValueError("ステージが 1 つ以上必要です")
    order = list(stages)

    def _planner(state: Dict[str, Any]) -> Dict[str, Any]:
        if state.get("plan_next") == END_MARKER:
            return state
        executed = set(state.get("_executed_tools", []))
        remaining = [s for s in order if s not in executed]
        state["plan_next"] = remaining[0] if remaining else END_MARKER
        logger.debug("planner: next=%s (残り %d)", state["plan_next"], len(remaining))
        return state

    return _planner
