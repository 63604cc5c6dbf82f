from __future__ import annotations

"""workflow.py

データ生成 → vanilla 学習 → 敵対的学習 → 平均化 → 評価・攻撃評価 → アンサンブル → レポート
を LangGraph の StateGraph として組み立てて実行する。
"""

from typing import Any, Dict

from langgraph.graph import END, StateGraph

from .nodes import (
    attack_evaluate,
    average_snapshots,
    ensemble,
    evaluate,
    generate_data,
    train_adversarial,
    train_vanilla,
    write_report,
)
from .planners.pipeline_planner import END_MARKER, make_pipeline_planner
from .state import PipelineSettings, PipelineState

STAGES = {
    "generate_data": generate_data,
    "train_vanilla": train_vanilla,
    "train_adversarial": train_adversarial,
    "average_snapshots": average_snapshots,
    "evaluate": evaluate,
    "attack_evaluate": attack_evaluate,
    "ensemble": ensemble,
    "write_report": write_report,
}


# -----------------------------
# Graph Construction
# -----------------------------

def build_graph() -> Any:
    """LangGraphのStateGraphを構築して返す。"""
    sg: StateGraph = StateGraph(PipelineState)

    sg.add_node("planner", make_pipeline_planner(list(STAGES)))
    for name, fn in STAGES.items():
        sg.add_node(name, fn)

    # エントリーポイントをプランナーに設定
    sg.set_entry_point("planner")

    def _edge_selector(state: PipelineState) -> str:
        return state.get("plan_next", END_MARKER)

    routes: Dict[str, Any] = {name: name for name in STAGES}
    routes[END_MARKER] = END
    sg.add_conditional_edges("planner", _edge_selector, routes)

    # 各ノード完了後は planner へ戻す
    for name in STAGES:
        sg.add_edge(name, "planner")

    return sg.compile()


# -----------------------------
# Entrypoint
# -----------------------------

def run_pipeline(settings: PipelineSettings) -> PipelineState:
    """パイプラインを実行し、最終stateを返す。"""
    app = build_graph()
    initial_state: PipelineState = {"settings": settings.model_dump(), "_executed_tools": []}
    # planner とステージが交互に動くので 2 倍 + 余裕
    return app.invoke(initial_state, config={"recursion_limit": 2 * len(STAGES) + 5})
