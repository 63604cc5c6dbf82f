from __future__ import annotations

"""nodes.py

パイプラインの各ステージ。各ノードは commands.py の関数を呼び、結果を state に積んで返す。
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple

from .commands import cmd_attack_eval, cmd_average, cmd_ensemble, cmd_eval, cmd_generate, cmd_report, cmd_train
from .modelops import SnapshotRing
from .run_config import RunConfig
from .state import PipelineSettings, PipelineState
from .toyvqa import ToyVQAConfig

logger = logging.getLogger(__name__)

VANILLA = "vanilla"
ADVERSARIAL = "adversarial"

# 表の行順
_ORDER = {VANILLA: 10, ADVERSARIAL: 50}


# -----------------------------
# Helpers
# -----------------------------


def _mark_executed(state: PipelineState, node_name: str) -> None:
    executed = state.setdefault("_executed_tools", [])
    if node_name not in executed:
        executed.append(node_name)


def _settings(state: PipelineState) -> PipelineSettings:
    return PipelineSettings(**state["settings"])


def _work(settings: PipelineSettings, *parts: str) -> Path:
    return Path(settings.work_dir).joinpath(*parts)


def _method(phase: str, k: int | None = None) -> str:
    base = "TCF" if phase == VANILLA else "TCF + AT"
    return base if k is None else f"{base} + Avg. with {k} models"


def _run_config(settings: PipelineSettings, state: PipelineState, phase: str, seed: int, **extra: Any) -> RunConfig:
    values = dict(settings.run)
    values.update(
        data_dir=state["data_dir"],
        run_dir=str(_work(settings, "runs", f"{phase}-seed{seed}")),
        mode=phase,
        seed=seed,
        epochs=settings.vanilla_epochs if phase == VANILLA else settings.adversarial_epochs,
        **extra,
    )
    return RunConfig(**values)


def _effective_ks(settings: PipelineSettings, ring_len: int, phase: str) -> List[int]:
    wanted = list(settings.avg_ks)
    if phase == ADVERSARIAL and settings.ensemble_pool in ("avg", "both"):
        wanted.append(settings.ensemble_k)
    return sorted({min(k, ring_len) for k in wanted if ring_len > 0})


def _checkpoints_to_eval(state: PipelineState) -> List[Tuple[str, str, int, str]]:
    """(label, method, order, checkpoint) の一覧。"""
    out: List[Tuple[str, str, int, str]] = []
    for phase, runs in ((VANILLA, state.get("vanilla_runs", {})), (ADVERSARIAL, state.get("adversarial_runs", {}))):
        for seed, run in runs.items():
            out.append((f"{phase}-seed{seed}", _method(phase), _ORDER[phase], run["final_checkpoint"]))
    for avg in state.get("averaged", []):
        # ensemble_k のためだけに作った平均は表に出さない
        if not avg.get("reported", True):
            continue
        out.append((avg["label"], _method(avg["phase"], avg["k"]), _ORDER[avg["phase"]] + avg["k"], avg["path"]))
    return out


# -----------------------------
# Node Implementations
# -----------------------------


def generate_data(state: PipelineState) -> PipelineState:
    logger.info("---NODE: generate_data---")
    _mark_executed(state, "generate_data")
    settings = _settings(state)
    data_dir = _work(settings, "data")
    cmd_generate(ToyVQAConfig(**settings.data), settings.data_seed, data_dir, overwrite=settings.overwrite)
    state["data_dir"] = str(data_dir)
    return state


def train_vanilla(state: PipelineState) -> PipelineState:
    logger.info("---NODE: train_vanilla---")
    _mark_executed(state, "train_vanilla")
    settings = _settings(state)
    runs: Dict[str, Dict[str, Any]] = {}
    for seed in settings.seeds:
        runs[str(seed)] = cmd_train(_run_config(settings, state, VANILLA, seed), overwrite=settings.overwrite)
    state["vanilla_runs"] = runs
    return state


def train_adversarial(state: PipelineState) -> PipelineState:
    """各シードの vanilla 最終チェックポイントから敵対的学習を続ける。"""
    logger.info("---NODE: train_adversarial---")
    _mark_executed(state, "train_adversarial")
    settings = _settings(state)
    runs: Dict[str, Dict[str, Any]] = {}
    for seed in settings.seeds:
        init_from = state["vanilla_runs"][str(seed)]["final_checkpoint"]
        cfg = _run_config(settings, state, ADVERSARIAL, seed, init_from=init_from)
        runs[str(seed)] = cmd_train(cfg, overwrite=settings.overwrite)
    state["adversarial_runs"] = runs
    return state


def average_snapshots(state: PipelineState) -> PipelineState:
    logger.info("---NODE: average_snapshots---")
    _mark_executed(state, "average_snapshots")
    settings = _settings(state)
    averaged: List[Dict[str, Any]] = []
    for phase, runs in ((VANILLA, state["vanilla_runs"]), (ADVERSARIAL, state["adversarial_runs"])):
        for seed, run in runs.items():
            ring = SnapshotRing.open(Path(run["run_dir"]) / "snapshots")
            reported = {min(k, len(ring)) for k in settings.avg_ks}
            for k in _effective_ks(settings, len(ring), phase):
                label = f"{phase}-seed{seed}-avg{k}"
                out = _work(settings, "checkpoints", f"{label}.tcf")
                cmd_average(run["run_dir"], k, out, overwrite=settings.overwrite)
                averaged.append(
                    {"label": label, "phase": phase, "seed": int(seed), "k": k, "path": str(out), "reported": k in reported}
                )
    state["averaged"] = averaged
    return state


def evaluate(state: PipelineState) -> PipelineState:
    logger.info("---NODE: evaluate---")
    _mark_executed(state, "evaluate")
    settings = _settings(state)
    run = RunConfig(**settings.run)
    results = state.setdefault("results", [])
    for label, method, order, ckpt in _checkpoints_to_eval(state):
        for split in settings.eval_splits:
            results.append(
                cmd_eval(
                    ckpt,
                    state["data_dir"],
                    split,
                    label=label,
                    method=method,
                    order=order,
                    results_dir=_work(settings, "results"),
                    batch_size=run.eval_batch_size,
                    threads=run.threads,
                    overwrite=settings.overwrite,
                )
            )
    return state


def attack_evaluate(state: PipelineState) -> PipelineState:
    logger.info("---NODE: attack_evaluate---")
    _mark_executed(state, "attack_evaluate")
    settings = _settings(state)
    run = RunConfig(**settings.run)
    adv_cfg = run.adv_config()
    results = state.setdefault("results", [])
    for phase, runs in ((VANILLA, state["vanilla_runs"]), (ADVERSARIAL, state["adversarial_runs"])):
        for seed, info in runs.items():
            for split in settings.attack_splits:
                results.append(
                    cmd_attack_eval(
                        info["final_checkpoint"],
                        state["data_dir"],
                        split,
                        adv_cfg,
                        label=f"{phase}-seed{seed}-attack",
                        method=f"{_method(phase)} (attacked, eps={adv_cfg.epsilon:g})",
                        order=100 + _ORDER[phase],
                        seed=int(seed),
                        results_dir=_work(settings, "results"),
                        overwrite=settings.overwrite,
                    )
                )
    return state


def ensemble(state: PipelineState) -> PipelineState:
    """既定では AT 各シードの k=ensemble_k 平均チェックポイントで多数決する。"""
    logger.info("---NODE: ensemble---")
    _mark_executed(state, "ensemble")
    settings = _settings(state)
    run = RunConfig(**settings.run)
    pool: List[str] = []
    if settings.ensemble_pool in ("final", "both"):
        pool.extend(r["final_checkpoint"] for r in state["adversarial_runs"].values())
    if settings.ensemble_pool in ("avg", "both"):
        for seed in state["adversarial_runs"]:
            candidates = [
                a for a in state.get("averaged", [])
                if a["phase"] == ADVERSARIAL and str(a["seed"]) == seed and a["k"] <= settings.ensemble_k
            ]
            if candidates:
                pool.append(max(candidates, key=lambda a: a["k"])["path"])
    results = state.setdefault("results", [])
    for split in settings.eval_splits:
        results.append(
            cmd_ensemble(
                state["data_dir"],
                split,
                checkpoints=pool,
                label="ensemble",
                method="Ensemble",
                order=200,
                results_dir=_work(settings, "results"),
                batch_size=run.eval_batch_size,
                threads=run.threads,
                overwrite=settings.overwrite,
            )
        )
    return state


def write_report(state: PipelineState) -> PipelineState:
    logger.info("---NODE: write_report---")
    _mark_executed(state, "write_report")
    settings = _settings(state)
    run_dirs = [r["run_dir"] for r in state["vanilla_runs"].values()]
    run_dirs += [r["run_dir"] for r in state["adversarial_runs"].values()]
    state["report"] = cmd_report(
        _work(settings, "results"), _work(settings, "report"), run_dirs=run_dirs, overwrite=settings.overwrite
    )
    return state
