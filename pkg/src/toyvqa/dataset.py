from __future__ import annotations

"""dataset.py

合成データセットの生成・保存・読み込み。

出力: <out>/train.jsonl, val.jsonl, test.jsonl (1 行 1 例, キー順固定の JSON) と
最後に manifest.json。バイト列は (設定, シード) の純関数。
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..errors import ArtifactMissingError, OutputExistsError
from ..model.inputs import FusionInput, RegionFeature
from ..seeding import derive_seed
from .config import FORMAT_VERSION, TEMPLATES, ToyVQAConfig
from .featurize import featurize
from .questions import NoValidQuestion, describe, pose_question
from .scene import Scene, generate_scene
from .vocab import TOKENS, Vocabulary, answer_vocabulary

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.json"


# ------------------------------------------------------------
# 例の型
# ------------------------------------------------------------


@dataclass(frozen=True)
class Example:
    example_id: str
    scene_id: str
    rng_seed: int
    template_id: str
    template_args: Dict[str, str]
    question_tokens: Tuple[str, ...]
    object_tags: Tuple[str, ...]
    region_features: Tuple[RegionFeature, ...]
    answer: int
    answer_text: str
    scene: Scene

    def to_record(self) -> Dict[str, Any]:
        return {
            "example_id": self.example_id,
            "scene_id": self.scene_id,
            "rng_seed": self.rng_seed,
            "template_id": self.template_id,
            "template_args": dict(self.template_args),
            "question_tokens": list(self.question_tokens),
            "object_tags": list(self.object_tags),
            "region_stats": [r.stats.tolist() for r in self.region_features],
            "region_boxes": [r.box.tolist() for r in self.region_features],
            "answer": self.answer,
            "answer_text": self.answer_text,
            "scene": self.scene.to_dict(),
        }

    @classmethod
    def from_record(cls, rec: Dict[str, Any]) -> "Example":
        regions = tuple(
            RegionFeature(stats=np.asarray(s, dtype=np.float64), box=np.asarray(b, dtype=np.float64))
            for s, b in zip(rec["region_stats"], rec["region_boxes"])
        )
        return cls(
            example_id=rec["example_id"],
            scene_id=rec["scene_id"],
            rng_seed=int(rec["rng_seed"]),
            template_id=rec["template_id"],
            template_args=dict(rec.get("template_args", {})),
            question_tokens=tuple(rec["question_tokens"]),
            object_tags=tuple(rec["object_tags"]),
            region_features=regions,
            answer=int(rec["answer"]),
            answer_text=rec["answer_text"],
            scene=Scene.from_dict(rec["scene"]),
        )

    def to_fusion_input(self, vocab: Vocabulary | None = None) -> FusionInput:
        vocab = vocab or Vocabulary()
        return FusionInput(
            question_tokens=tuple(vocab.encode(self.question_tokens)),
            object_tags=tuple(vocab.encode(self.object_tags)),
            regions=self.region_features,
        )


class DatasetManifest(BaseModel):  # pylint: disable=too-few-public-methods
    format_version: int = FORMAT_VERSION
    seed: int
    config: Dict[str, Any]
    config_hash: str
    split_sizes: Dict[str, int]
    files: Dict[str, Dict[str, str]] = Field(default_factory=dict)
    tokens: List[str]
    answers: List[str]
    skipped_scenes: Dict[str, int] = Field(default_factory=dict)

    def toy_config(self) -> ToyVQAConfig:
        return ToyVQAConfig(**self.config)


# ------------------------------------------------------------
# 生成
# ------------------------------------------------------------


def make_example(
    example_id: str,
    rng_seed: int,
    cfg: ToyVQAConfig,
    answers: Sequence[str],
) -> Example:
    """1 例分のシーン・質問・特徴を rng_seed だけから決定的に作る。"""
    rng = np.random.default_rng(rng_seed)
    scene = generate_scene(rng, cfg)
    template_id = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
    question = pose_question(scene, template_id, rng, cfg)
    regions, tags = featurize(scene, rng, cfg)
    return Example(
        example_id=example_id,
        scene_id=f"scene-{rng_seed:016x}",
        rng_seed=rng_seed,
        template_id=template_id,
        template_args=describe(question)["args"],
        question_tokens=question.tokens,
        object_tags=tuple(tags),
        region_features=tuple(regions),
        answer=answers.index(question.answer),
        answer_text=question.answer,
        scene=scene,
    )


def generate_split(split: str, size: int, seed: int, cfg: ToyVQAConfig) -> Tuple[List[Example], int]:
    """1 分割分の例を生成する。戻り値は (例のリスト, 棄却したシーン数)。"""
    answers = answer_vocabulary(cfg.max_regions)
    split_rng = np.random.default_rng(derive_seed(seed, f"split:{split}"))
    examples: List[Example] = []
    skipped = 0
    while len(examples) < size:
        rng_seed = int(split_rng.integers(0, 2**63 - 1))
        try:
            examples.append(make_example(f"{split}-{len(examples):06d}", rng_seed, cfg, answers))
        except NoValidQuestion as e:
            skipped += 1
            logger.warning("シーンをスキップしました (split=%s, seed=%d): %s", split, rng_seed, e)
    return examples, skipped


def _serialize(examples: Sequence[Example]) -> bytes:
    lines = [json.dumps(ex.to_record(), sort_keys=True, separators=(",", ":")) for ex in examples]
    return ("\n".join(lines) + "\n").encode("utf-8")


def generate_dataset(
    cfg: ToyVQAConfig,
    seed: int,
    out_dir: str | Path,
    *,
    overwrite: bool = False,
    threads: int = 1,
) -> DatasetManifest:
    """3 分割を生成して書き出し、最後にマニフェストを書く。"""
    out = Path(out_dir)
    targets = [out / f"{s}.jsonl" for s in SPLITS] + [out / MANIFEST_NAME]
    existing = [p for p in targets if p.exists()]
    if existing and not overwrite:
        raise OutputExistsError(existing[0])
    out.mkdir(parents=True, exist_ok=True)

    sizes = cfg.split_sizes

    def _one(split: str) -> Tuple[str, List[Example], int]:
        examples, skipped = generate_split(split, sizes[split], seed, cfg)
        return split, examples, skipped

    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(SPLITS))) as pool:
            results = list(pool.map(_one, SPLITS))
    else:
        results = [_one(s) for s in SPLITS]

    files: Dict[str, Dict[str, str]] = {}
    skipped_counts: Dict[str, int] = {}
    for split, examples, skipped in results:
        data = _serialize(examples)
        path = out / f"{split}.jsonl"
        path.write_bytes(data)
        files[split] = {"path": path.name, "sha256": hashlib.sha256(data).hexdigest()}
        skipped_counts[split] = skipped
        logger.info("%s: %d 例を書き出しました (%s)", split, len(examples), path)

    manifest = DatasetManifest(
        seed=seed,
        config=cfg.model_dump(),
        config_hash=cfg.config_hash(),
        split_sizes=sizes,
        files=files,
        tokens=list(TOKENS),
        answers=list(answer_vocabulary(cfg.max_regions)),
        skipped_scenes=skipped_counts,
    )
    (out / MANIFEST_NAME).write_text(
        json.dumps(manifest.model_dump(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


# ------------------------------------------------------------
# 読み込み
# ------------------------------------------------------------


def load_manifest(data_dir: str | Path) -> DatasetManifest:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.exists():
        raise ArtifactMissingError(path, "dataset manifest")
    return DatasetManifest(**json.loads(path.read_text(encoding="utf-8")))


def load_split(data_dir: str | Path, split: str) -> List[Example]:
    path = Path(data_dir) / f"{split}.jsonl"
    if not path.exists():
        raise ArtifactMissingError(path, f"{split} split")
    with open(path, "r", encoding="utf-8") as fh:
        return [Example.from_record(json.loads(line)) for line in fh if line.strip()]


def to_inputs(examples: Sequence[Example], vocab: Vocabulary | None = None) -> Tuple[List[FusionInput], List[int]]:
    """モデル入力とラベルの組に変換する。"""
    vocab = vocab or Vocabulary()
    return [ex.to_fusion_input(vocab) for ex in examples], [ex.answer for ex in examples]


def answer_histogram(examples: Sequence[Example]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for ex in examples:
        counts[ex.answer_text] = counts.get(ex.answer_text, 0) + 1
    return dict(sorted(counts.items()))
