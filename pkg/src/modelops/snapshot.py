from __future__ import annotations

"""snapshot.py

学習中のパラメータスナップショットを容量付きリングで管理する。
リングの状態は ring.json に書き出されるので、プロセス再起動後も順序が復元できる。
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List

from pydantic import BaseModel, Field, model_validator

from ..model import TCFModel, save_checkpoint

logger = logging.getLogger(__name__)

RING_INDEX = "ring.json"


class SnapshotEntry(BaseModel):  # pylint: disable=too-few-public-methods
    step: int
    path: str


class SnapshotRing(BaseModel):
    directory: str
    capacity: int = Field(20, ge=1)
    entries: List[SnapshotEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_order(self) -> "SnapshotRing":
        steps = [e.step for e in self.entries]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"スナップショットの step は狭義単調増加である必要があります: {steps}")
        if len(steps) > self.capacity:
            raise ValueError(f"スナップショット数 {len(steps)} が容量 {self.capacity} を超えています")
        return self

    @property
    def steps(self) -> List[int]:
        return [e.step for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def latest(self, k: int) -> List[SnapshotEntry]:
        return self.entries[-k:]

    def save(self) -> Path:
        path = Path(self.directory) / RING_INDEX
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def open(cls, directory: str | Path, capacity: int = 20) -> "SnapshotRing":
        """既存の ring.json があれば読み込み、なければ空のリングを作る。

        ring.json に記録されたディレクトリは使わず、渡された directory を基準にする
        (実行ディレクトリの移動や作業ディレクトリの違いに追従する)。
        """
        path = Path(directory) / RING_INDEX
        if path.exists():
            data = json.loads(path.read_text(encoding="utf-8"))
            data["directory"] = str(directory)
            return cls(**data)
        return cls(directory=str(directory), capacity=capacity)


def snapshot(
    model: TCFModel,
    step: int,
    ring: SnapshotRing,
    *,
    seed: int,
    extra: Dict[str, Any] | None = None,
) -> SnapshotRing:
    """チェックポイントを書き出してリングに追加し、容量超過分は古い順に削除する。

    書き出しの失敗はそのまま送出する (学習は呼び出し側で止まる)。
    """
    if ring.entries and step <= ring.entries[-1].step:
        raise ValueError(f"step {step} は直前のスナップショット {ring.entries[-1].step} より大きくしてください")
    path = Path(ring.directory) / f"step-{step:08d}.tcf"
    save_checkpoint(path, model, seed=seed, step=step, extra=extra)

    entries = [*ring.entries, SnapshotEntry(step=step, path=path.name)]
    evicted = entries[: max(0, len(entries) - ring.capacity)]
    kept = entries[len(evicted) :]
    for e in evicted:
        (Path(ring.directory) / e.path).unlink(missing_ok=True)
        logger.debug("スナップショットを破棄: step=%d", e.step)

    updated = SnapshotRing(directory=ring.directory, capacity=ring.capacity, entries=kept)
    updated.save()
    return updated
