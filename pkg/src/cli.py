from __future__ import annotations

"""cli.py

単一のコマンドライン入口。``python -m src.cli <subcommand> ...``

終了コード: 0 成功 / 1 使い方・設定の誤り / 2 実行時の中断 (非有限損失・成果物欠落など)。
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import torch

from .commands import cmd_attack_eval, cmd_average, cmd_ensemble, cmd_eval, cmd_generate, cmd_report, cmd_train
from .errors import ArtifactMissingError, CheckpointFormatError, NonFiniteLossError, OutputExistsError
from .logging_setup import configure_logging
from .run_config import RunConfig, parse_overrides
from .state import PipelineSettings
from .toyvqa import ToyVQAConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    """引数解析の失敗。"""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------
# 設定の組み立て
# ------------------------------------------------------------


def _json_file(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ArtifactMissingError(p, "config file")
    return json.loads(p.read_text(encoding="utf-8"))


def _flag_overrides(args: argparse.Namespace, names: Sequence[str]) -> List[str]:
    """明示されたフラグを ``key=value`` に変換する (--set より優先)。"""
    out: List[str] = []
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            out.append(f"{name}={json.dumps(value)}")
    return out


def _run_config(args: argparse.Namespace, flag_names: Sequence[str] = ()) -> RunConfig:
    return RunConfig.load(args.config, [*args.set, *_flag_overrides(args, flag_names)])


def _nested_overrides(pairs: Sequence[str]) -> Dict[str, Any]:
    """``run.epochs=2`` のようなドット区切りキーを入れ子の辞書にする。"""
    out: Dict[str, Any] = {}
    for key, value in parse_overrides(pairs).items():
        head, _, tail = key.partition(".")
        if tail:
            out.setdefault(head, {})[tail] = value
        else:
            out[key] = value
    return out


def _pipeline_settings(args: argparse.Namespace) -> PipelineSettings:
    values = _json_file(args.config)
    for key, value in _nested_overrides(args.set).items():
        if isinstance(value, dict):
            values.setdefault(key, {}).update(value)
        else:
            values[key] = value
    if args.work_dir is not None:
        values["work_dir"] = args.work_dir
    if args.seeds is not None:
        values["seeds"] = args.seeds
    if args.overwrite:
        values["overwrite"] = True
    if args.threads is not None:
        values.setdefault("run", {})["threads"] = args.threads
    return PipelineSettings(**values)


# ------------------------------------------------------------
# サブコマンド
# ------------------------------------------------------------


def _do_generate(args: argparse.Namespace) -> Dict[str, Any]:
    values = _json_file(args.config)
    values.update(parse_overrides(args.set))
    return cmd_generate(ToyVQAConfig(**values), args.seed, args.out, overwrite=args.overwrite, threads=args.threads or 1)


def _do_train(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = _run_config(args, ("mode", "init_from", "data_dir", "run_dir", "seed", "epochs", "precision", "threads"))
    return cmd_train(cfg, overwrite=args.overwrite)


def _do_eval(args: argparse.Namespace) -> Dict[str, Any]:
    return cmd_eval(
        args.checkpoint,
        args.data_dir,
        args.split,
        label=args.label or Path(args.checkpoint).stem,
        method=args.method,
        results_dir=args.results_dir,
        dump_path=args.dump,
        batch_size=args.batch_size,
        threads=args.threads or 1,
        overwrite=args.overwrite,
    )


def _do_attack_eval(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = _run_config(args, ("epsilon", "ascent_steps", "ascent_lr", "init_scale", "max_backtracks", "seed"))
    return cmd_attack_eval(
        args.checkpoint,
        args.data_dir,
        args.split,
        cfg.adv_config(),
        label=args.label or f"{Path(args.checkpoint).stem}-attack",
        method=args.method,
        results_dir=args.results_dir,
        seed=cfg.seed,
        batch_size=args.batch_size,
        overwrite=args.overwrite,
    )


def _do_average(args: argparse.Namespace) -> Dict[str, Any]:
    return cmd_average(args.run_dir, args.k, args.out, overwrite=args.overwrite)


def _do_ensemble(args: argparse.Namespace) -> Dict[str, Any]:
    return cmd_ensemble(
        args.data_dir,
        args.split,
        checkpoints=args.checkpoint,
        dumps=args.dump,
        label=args.label,
        method=args.method,
        results_dir=args.results_dir,
        batch_size=args.batch_size,
        threads=args.threads or 1,
        overwrite=args.overwrite,
    )


def _do_report(args: argparse.Namespace) -> Dict[str, Any]:
    return cmd_report(args.results_dir, args.out, run_dirs=args.run_dir, overwrite=args.overwrite)


def _do_pipeline(args: argparse.Namespace) -> Dict[str, Any]:
    from .workflow import run_pipeline

    final_state = run_pipeline(_pipeline_settings(args))
    return {"executed": final_state.get("_executed_tools", []), "report": final_state.get("report", {})}


# ------------------------------------------------------------
# Parser
# ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tcf", description="TCF model with embedding-level adversarial training on a synthetic VQA task")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def _common(p: argparse.ArgumentParser, *, config: bool = True) -> None:
        if config:
            p.add_argument("--config", help="flat JSON config file")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override (repeatable)")
        p.add_argument("--overwrite", action="store_true", help="overwrite existing outputs")
        p.add_argument("--threads", type=int, default=None, help="evaluation worker threads")

    p = sub.add_parser("generate", help="generate the synthetic dataset")
    _common(p)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_do_generate)

    p = sub.add_parser("train", help="vanilla or adversarial training")
    _common(p)
    p.add_argument("--mode", choices=["vanilla", "adversarial"])
    p.add_argument("--init-from", dest="init_from")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--run-dir", dest="run_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--precision", choices=["float32", "float64"])
    p.set_defaults(func=_do_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    _common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", dest="data_dir", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--label")
    p.add_argument("--method", help="report row name (defaults to the label)")
    p.add_argument("--results-dir", dest="results_dir", default="results")
    p.add_argument("--dump", help="write a prediction dump CSV")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=256)
    p.set_defaults(func=_do_eval)

    p = sub.add_parser("attack-eval", help="clean vs attacked accuracy under the embedding attack")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", dest="data_dir", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--label")
    p.add_argument("--method")
    p.add_argument("--results-dir", dest="results_dir", default="results")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--ascent-steps", dest="ascent_steps", type=int)
    p.add_argument("--ascent-lr", dest="ascent_lr", type=float)
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--max-backtracks", dest="max_backtracks", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=128)
    p.set_defaults(func=_do_attack_eval)

    p = sub.add_parser("average", help="average the last k snapshots of a run")
    _common(p, config=False)
    p.add_argument("--run-dir", dest="run_dir", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_do_average)

    p = sub.add_parser("ensemble", help="majority vote over checkpoints and/or prediction dumps")
    _common(p, config=False)
    p.add_argument("--checkpoint", action="append", default=[])
    p.add_argument("--dump", action="append", default=[])
    p.add_argument("--data-dir", dest="data_dir", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--label", default="ensemble")
    p.add_argument("--method")
    p.add_argument("--results-dir", dest="results_dir", default="results")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=256)
    p.set_defaults(func=_do_ensemble)

    p = sub.add_parser("report", help="render the accuracy table")
    _common(p, config=False)
    p.add_argument("--results-dir", dest="results_dir", default="results")
    p.add_argument("--run-dir", dest="run_dir", action="append", default=[], help="run whose final losses are reported")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_do_report)

    p = sub.add_parser("pipeline", help="generate → train x seeds → average → evaluate → ensemble → report")
    _common(p)
    p.add_argument("--work-dir", dest="work_dir")
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=_do_pipeline)

    return parser


# ------------------------------------------------------------
# Entrypoint
# ------------------------------------------------------------


def exit_code_for(exc: BaseException) -> int:
    # 実行時の中断 (RuntimeError 系) を先に判定する
    if isinstance(exc, (NonFiniteLossError, ArtifactMissingError, CheckpointFormatError)):
        return EXIT_RUNTIME
    if isinstance(exc, (UsageError, OutputExistsError, ValueError)):
        return EXIT_USAGE
    return EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE

    configure_logging(args.log_level)
    # 既定はシングルスレッド (並列化は --threads の評価チャンクのみ)
    torch.set_num_threads(1)
    try:
        summary = args.func(args)
    except Exception as e:  # pylint: disable=broad-except
        code = exit_code_for(e)
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return code
    print(json.dumps(summary, ensure_ascii=False, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
