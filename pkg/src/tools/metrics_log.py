from __future__ import annotations

"""metrics_log.py

学習メトリクスの追記専用ログ (1 step = 1 行の JSON) と、成果物 JSON の読み書き。
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

METRICS_FIELDS = ["step", "epoch", "mode", "l_con", "r_ce", "r_jsd", "combined", "wall_clock"]


class MetricsLog:
    """1 行 1 レコードで追記する。既存ファイルがあれば末尾に続ける。"""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: Dict[str, Any]) -> None:
        row = {k: record.get(k) for k in METRICS_FIELDS}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_metrics_log(path: str | Path) -> pd.DataFrame:
    """メトリクスログを DataFrame で返す。空ファイルなら列だけの DataFrame。"""
    p = Path(path)
    if not p.exists() or p.stat().st_size == 0:
        return pd.DataFrame(columns=METRICS_FIELDS)
    return pd.read_json(p, lines=True)


def write_json(path: str | Path, obj: Any) -> str:
    """キー順固定・インデント付きで JSON を書き出す。"""
    os.makedirs(os.path.dirname(str(path)) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    return str(path)


def read_json(path: str | Path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def list_json(directory: str | Path, pattern: str = "*.json") -> List[Path]:
    return sorted(Path(directory).glob(pattern))
