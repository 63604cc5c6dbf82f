from __future__ import annotations

"""commands.py

CLI サブコマンドの本体。引数解析とは切り離した純粋な関数で、
``cli.py`` とパイプライン (``nodes.py``) の両方から呼ばれる。
各関数は書き出した成果物の情報を dict で返す。
"""

import logging
import re
import shutil
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .advtrain import AdvConfig, Trainer, attack_eval, make_optimizer
from .diffcore import get_dtype, set_precision
from .errors import ArtifactMissingError, ConfigMismatchError, OutputExistsError, ShapeMismatchError
from .model import TCFModel, accuracy, load_checkpoint, predict_proba, save_checkpoint, write_checkpoint
from .modelops import (
    ModelPredictor,
    PredictionMatrix,
    SnapshotRing,
    average,
    collect_predictions,
    evaluate_matrix,
    prediction_dump_rows,
    snapshot,
)
from .run_config import RunConfig
from .seeding import DELTA_INIT, INIT, SHUFFLE, torch_generator, numpy_rng
from .tools.csv_reader import csv_frame_reader
from .tools.csv_writer import csv_writer
from .tools.metrics_log import MetricsLog, list_json, read_json, read_metrics_log, write_json
from .toyvqa import SPLITS, ToyVQAConfig, generate_dataset, load_manifest, load_split, to_inputs

logger = logging.getLogger(__name__)

FINAL_CHECKPOINT = "final.tcf"
METRICS_NAME = "metrics.jsonl"
SNAPSHOT_DIR = "snapshots"
ATTACK_STREAM = "attack"


# ------------------------------------------------------------
# Helpers
# ------------------------------------------------------------


def _refuse_existing(paths: Sequence[Path], overwrite: bool) -> None:
    if overwrite:
        return
    for p in paths:
        if p.exists():
            raise OutputExistsError(p)


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ArtifactMissingError(p, what)
    return p


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", label).strip("-") or "run"


def _split_inputs(data_dir: str | Path, split: str):
    if split not in SPLITS:
        raise ValueError(f"未知の分割: {split!r} ({', '.join(SPLITS)})")
    load_manifest(data_dir)
    return to_inputs(load_split(data_dir, split))


def _load_for_eval(checkpoint: str | Path) -> TCFModel:
    ckpt = load_checkpoint(_require(checkpoint, "checkpoint"))
    set_precision(ckpt.precision)
    return ckpt.to_model()


def result_path(results_dir: str | Path, label: str, split: str) -> Path:
    return Path(results_dir) / f"{_slug(label)}__{split}.json"


def _write_result(results_dir: str | Path, record: Dict[str, Any], overwrite: bool) -> Path:
    path = result_path(results_dir, record["label"], record["split"])
    _refuse_existing([path], overwrite)
    write_json(path, record)
    return path


# ------------------------------------------------------------
# generate
# ------------------------------------------------------------


def cmd_generate(cfg: ToyVQAConfig, seed: int, out_dir: str | Path, *, overwrite: bool = False, threads: int = 1) -> Dict[str, Any]:
    manifest = generate_dataset(cfg, seed, out_dir, overwrite=overwrite, threads=threads)
    return {"out_dir": str(out_dir), "config_hash": manifest.config_hash, "split_sizes": manifest.split_sizes}


# ------------------------------------------------------------
# train
# ------------------------------------------------------------


def cmd_train(cfg: RunConfig, *, overwrite: bool = False) -> Dict[str, Any]:
    """設定どおりのモードで学習し、エポックごとのスナップショットと final.tcf を書き出す。"""
    manifest = load_manifest(cfg.data_dir)
    train_inputs, train_labels = to_inputs(load_split(cfg.data_dir, "train"))
    val_inputs, val_labels = to_inputs(load_split(cfg.data_dir, "val"))

    run_dir = Path(cfg.run_dir)
    _refuse_existing([run_dir / FINAL_CHECKPOINT, run_dir / METRICS_NAME, run_dir / SNAPSHOT_DIR], overwrite)
    if overwrite:
        (run_dir / METRICS_NAME).unlink(missing_ok=True)
        shutil.rmtree(run_dir / SNAPSHOT_DIR, ignore_errors=True)

    set_precision(cfg.precision)
    cfg.write(run_dir)
    model_cfg = cfg.model_config_for(manifest)

    start_step = 0
    if cfg.init_from:
        ckpt = load_checkpoint(_require(cfg.init_from, "init-from checkpoint"))
        if ckpt.config != model_cfg:
            raise ConfigMismatchError(f"--init-from のモデル構成が実行設定と一致しません: {cfg.init_from}")
        model = ckpt.to_model().to(get_dtype())
        start_step = ckpt.step
        logger.info("%s から初期化しました (step=%d)", cfg.init_from, start_step)
    else:
        model = TCFModel(model_cfg, generator=torch_generator(cfg.seed, INIT))

    optimizer = make_optimizer(
        model, cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps
    )
    trainer = Trainer(
        model,
        mode=cfg.mode,
        adv_cfg=cfg.adv_config(),
        optimizer=optimizer,
        batch_size=cfg.batch_size,
        shuffle_rng=numpy_rng(cfg.seed, SHUFFLE),
        delta_generator=torch_generator(cfg.seed, DELTA_INIT),
        metrics_log=MetricsLog(run_dir / METRICS_NAME),
        record_wall_clock=cfg.record_wall_clock,
        start_step=start_step,
    )

    ring = SnapshotRing(directory=str(run_dir / SNAPSHOT_DIR), capacity=cfg.snapshot_capacity)
    val_history: List[float] = []

    def _on_epoch_end(epoch: int, step: int, mean_loss: float) -> None:
        nonlocal ring
        ring = snapshot(model, step, ring, seed=cfg.seed, extra={"epoch": epoch, "mode": cfg.mode})
        probs = predict_proba(model, val_inputs, batch_size=cfg.eval_batch_size, threads=cfg.threads)
        val_acc = accuracy(probs.argmax(axis=1), val_labels)
        val_history.append(val_acc)
        logger.info("[%s] epoch %d: val_accuracy=%.4f", cfg.mode, epoch, val_acc)

    history = trainer.fit(train_inputs, train_labels, cfg.epochs, on_epoch_end=_on_epoch_end)
    final_path = save_checkpoint(
        run_dir / FINAL_CHECKPOINT, model, seed=cfg.seed, step=trainer.step, extra={"mode": cfg.mode, "epochs": cfg.epochs}
    )
    return {
        "run_dir": str(run_dir),
        "final_checkpoint": str(final_path),
        "final_step": trainer.step,
        "final_loss": history[-1],
        "val_accuracy": val_history[-1] if val_history else None,
        "snapshots": ring.steps,
    }


# ------------------------------------------------------------
# eval / attack-eval
# ------------------------------------------------------------


def cmd_eval(
    checkpoint: str | Path,
    data_dir: str | Path,
    split: str,
    *,
    label: str,
    results_dir: str | Path,
    method: Optional[str] = None,
    order: int = 0,
    dump_path: Optional[str | Path] = None,
    batch_size: int = 256,
    threads: int = 1,
    overwrite: bool = False,
) -> Dict[str, Any]:
    """チェックポイントを 1 分割で評価し、結果 JSON と (任意で) 予測ダンプを書く。"""
    inputs, labels = _split_inputs(data_dir, split)
    model = _load_for_eval(checkpoint)
    if dump_path is not None:
        _refuse_existing([Path(dump_path)], overwrite)

    probs = predict_proba(model, inputs, batch_size=batch_size, threads=threads)
    acc = accuracy(probs.argmax(axis=1), labels)
    if dump_path is not None:
        csv_writer(prediction_dump_rows(label, probs, labels), str(dump_path))

    record = {
        "kind": "eval",
        "label": label,
        "method": method or label,
        "order": order,
        "split": split,
        "checkpoint": str(checkpoint),
        "accuracy": acc,
        "num_examples": len(labels),
    }
    record["path"] = str(_write_result(results_dir, record, overwrite))
    logger.info("eval %s [%s]: accuracy=%.4f", label, split, acc)
    return record


def cmd_attack_eval(
    checkpoint: str | Path,
    data_dir: str | Path,
    split: str,
    adv_cfg: AdvConfig,
    *,
    label: str,
    results_dir: str | Path,
    seed: int = 0,
    method: Optional[str] = None,
    order: int = 0,
    batch_size: int = 128,
    overwrite: bool = False,
) -> Dict[str, Any]:
    """CE のみを目的とした内側最大化で攻撃し、clean / attacked 精度を記録する。"""
    inputs, labels = _split_inputs(data_dir, split)
    model = _load_for_eval(checkpoint)
    result = attack_eval(model, inputs, labels, adv_cfg, torch_generator(seed, ATTACK_STREAM), batch_size=batch_size)
    record = {
        "kind": "attack",
        "label": label,
        "method": method or label,
        "order": order,
        "split": split,
        "checkpoint": str(checkpoint),
        "accuracy": result.attacked_accuracy,
        "clean_accuracy": result.clean_accuracy,
        "attacked_accuracy": result.attacked_accuracy,
        "raw_attacked_accuracy": result.raw_attacked_accuracy,
        "epsilon": adv_cfg.epsilon,
        "num_examples": result.num_examples,
    }
    record["path"] = str(_write_result(results_dir, record, overwrite))
    return record


# ------------------------------------------------------------
# average
# ------------------------------------------------------------


def cmd_average(run_dir: str | Path, k: int, out: str | Path, *, overwrite: bool = False) -> Dict[str, Any]:
    """run_dir のスナップショットリングの直近 k 個を平均したチェックポイントを書く。"""
    snap_dir = Path(run_dir) / SNAPSHOT_DIR
    _require(snap_dir / "ring.json", "snapshot ring")
    _refuse_existing([Path(out)], overwrite)
    ring = SnapshotRing.open(snap_dir)
    ckpt = average(ring, k)
    write_checkpoint(out, ckpt)
    logger.info("%s の直近 %d 個を平均しました -> %s", run_dir, k, out)
    return {"out": str(out), "k": k, "averaged_steps": ckpt.extra.get("averaged_steps", [ckpt.step])}


# ------------------------------------------------------------
# ensemble
# ------------------------------------------------------------


def _stack(matrices: Sequence[PredictionMatrix]) -> PredictionMatrix:
    counts = {m.answer_count for m in matrices}
    if len(counts) != 1:
        raise ConfigMismatchError(f"予測の解答語彙サイズが一致しません: {sorted(counts)}")
    sizes = {m.num_examples for m in matrices}
    if len(sizes) != 1:
        raise ShapeMismatchError(f"予測の例数が一致しません: {sorted(sizes)}")
    with_probs = all(m.probabilities is not None for m in matrices)
    ids: List[str] = []
    for i, m in enumerate(matrices):
        ids.extend(m.model_ids or [f"model-{i}-{j}" for j in range(m.num_models)])
    return PredictionMatrix(
        votes=np.concatenate([m.votes for m in matrices]),
        probabilities=np.concatenate([m.probabilities for m in matrices]) if with_probs else None,
        answer_count=counts.pop(),
        model_ids=ids,
    )


def cmd_ensemble(
    data_dir: str | Path,
    split: str,
    *,
    checkpoints: Sequence[str | Path] = (),
    dumps: Sequence[str | Path] = (),
    label: str,
    results_dir: str | Path,
    method: Optional[str] = None,
    order: int = 0,
    batch_size: int = 256,
    threads: int = 1,
    overwrite: bool = False,
) -> Dict[str, Any]:
    """チェックポイントと予測ダンプを 1 つの投票プールにまとめて多数決する。"""
    if not checkpoints and not dumps:
        raise ValueError("--checkpoint か --dump を 1 つ以上指定してください")
    inputs, labels = _split_inputs(data_dir, split)

    matrices: List[PredictionMatrix] = []
    if checkpoints:
        predictors = [
            ModelPredictor(_load_for_eval(p), model_id=str(p), batch_size=batch_size, threads=threads)
            for p in checkpoints
        ]
        matrices.append(collect_predictions(predictors, inputs))
    if dumps:
        frame = csv_frame_reader([str(_require(p, "prediction dump")) for p in dumps])
        matrices.append(PredictionMatrix.from_dump(frame))
    preds = _stack(matrices)
    if preds.num_examples != len(labels):
        raise ShapeMismatchError(f"予測の例数 {preds.num_examples} と {split} の例数 {len(labels)} が一致しません")

    result = evaluate_matrix(preds, labels)
    record = {
        "kind": "ensemble",
        "label": label,
        "method": method or label,
        "order": order,
        "split": split,
        "accuracy": result.accuracy,
        "per_model": result.per_model,
        "num_models": preds.num_models,
        "num_examples": len(labels),
    }
    record["path"] = str(_write_result(results_dir, record, overwrite))
    logger.info("ensemble %s [%s]: accuracy=%.4f (%d models)", label, split, result.accuracy, preds.num_models)
    return record


# ------------------------------------------------------------
# report
# ------------------------------------------------------------


def report_frame(records: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """手法 × 分割の精度 (%) 表。同じ手法の複数シードは平均する。"""
    if not records:
        return pd.DataFrame()
    df = pd.DataFrame(records)
    if "order" not in df.columns:
        df["order"] = 0
    df["order"] = df["order"].fillna(0)
    row_order = (
        df.groupby("method", sort=False)["order"].min().reset_index().sort_values(["order", "method"], kind="stable")
    )
    table = df.pivot_table(index="method", columns="split", values="accuracy", aggfunc="mean") * 100.0
    columns = [s for s in SPLITS if s in table.columns]
    return table.reindex(index=list(row_order["method"]), columns=columns)


def cmd_report(
    results_dir: str | Path,
    out_dir: str | Path,
    *,
    run_dirs: Sequence[str | Path] = (),
    overwrite: bool = False,
) -> Dict[str, Any]:
    """結果 JSON とメトリクスログを集計して report.txt / report.json を書く。"""
    results = _require(results_dir, "results directory")
    records = [read_json(p) for p in list_json(results)]
    if not records:
        raise ArtifactMissingError(results, "result records")
    out = Path(out_dir)
    _refuse_existing([out / "report.txt", out / "report.json"], overwrite)

    table = report_frame(records)
    losses: Dict[str, Any] = {}
    for rd in run_dirs:
        metrics = read_metrics_log(_require(Path(rd) / METRICS_NAME, "metrics log"))
        if metrics.empty:
            continue
        last = metrics.iloc[-1]
        losses[Path(rd).name] = {
            "mode": str(last["mode"]),
            "step": int(last["step"]),
            "l_con": float(last["l_con"]),
            "combined": float(last["combined"]),
        }

    out.mkdir(parents=True, exist_ok=True)
    text = "Accuracy (%)\n" + table.to_string(float_format=lambda v: f"{v:.2f}", na_rep="-") + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    rows = {
        method: {split: (None if pd.isna(v) else round(float(v), 6)) for split, v in row.items()}
        for method, row in table.iterrows()
    }
    write_json(out / "report.json", {"accuracy_percent": rows, "final_losses": losses})
    logger.info("レポートを書き出しました: %s", out)
    return {"report_txt": str(out / "report.txt"), "report_json": str(out / "report.json"), "rows": list(rows)}
