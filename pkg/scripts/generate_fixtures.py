"""tests/fixtures/ のゴールデンファイルを生成する。

    python scripts/generate_fixtures.py

生成物を変えるコード変更を入れたときだけ再生成してコミットする。
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))

from src.commands import cmd_attack_eval, cmd_generate, cmd_train  # noqa: E402
from src.run_config import RunConfig  # noqa: E402
from src.state import PipelineSettings  # noqa: E402
from src.toyvqa import SPLITS, ToyVQAConfig, answer_for, answer_histogram, featurize, generate_scene  # noqa: E402
from src.toyvqa.dataset import generate_split  # noqa: E402

FIXTURES = PROJECT_ROOT / "tests" / "fixtures"
GOLDEN_SEED = 42

SMOKE_DATA = {"train_size": 30, "val_size": 10, "test_size": 10}
SMOKE_RUN = {
    "embed_dim": 8,
    "num_heads": 2,
    "num_layers": 1,
    "batch_size": 10,
    "ascent_steps": 1,
    "precision": "float64",
}


def reference_settings(work_dir: str) -> PipelineSettings:
    return PipelineSettings(
        work_dir=work_dir,
        seeds=[0, 1, 2],
        vanilla_epochs=2,
        adversarial_epochs=2,
        avg_ks=[1, 2],
        ensemble_k=2,
        data=SMOKE_DATA,
        run=SMOKE_RUN,
    )


def golden_scene_and_features():
    """シード 42 の 1 つの乱数列からシーンを作り、続けて同じ乱数列で特徴量化する。"""
    rng = np.random.default_rng(GOLDEN_SEED)
    scene = generate_scene(rng)
    regions, tags = featurize(scene, rng)
    return scene, regions, tags


def features_record(regions, tags):
    return {
        "stats": [r.stats.tolist() for r in regions],
        "boxes": [r.box.tolist() for r in regions],
        "tags": list(tags),
    }


def attack_record(record):
    return {k: record[k] for k in ("clean_accuracy", "attacked_accuracy", "raw_attacked_accuracy", "num_examples")}


def ensemble_record(results):
    """pool のパスは一時ディレクトリ依存なので、モデル別精度は値だけを昇順で残す。"""
    return {
        r["split"]: {"accuracy": r["accuracy"], "per_model": sorted(r["per_model"].values())}
        for r in results
        if r.get("kind") == "ensemble"
    }


def _dump(name: str, obj) -> None:
    path = FIXTURES / name
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"[generate_fixtures] {path.relative_to(PROJECT_ROOT)}")


def main():
    from src.workflow import run_pipeline

    FIXTURES.mkdir(parents=True, exist_ok=True)
    cfg = ToyVQAConfig()

    scene, regions, tags = golden_scene_and_features()
    _dump("golden_scene.json", {"scene": scene.to_dict(), "leftmost": answer_for(scene, "leftmost-shape", {})})
    _dump("golden_features.json", features_record(regions, tags))

    first, _ = generate_split("train", 1, GOLDEN_SEED, cfg)
    _dump("golden_example.json", first[0].to_record())

    histograms = {}
    for split in SPLITS:
        examples, _ = generate_split(split, cfg.split_sizes[split], GOLDEN_SEED, cfg)
        histograms[split] = answer_histogram(examples)
    _dump("answer_histogram.json", histograms)
    _dump("manifest_hash.json", {"config_hash": cfg.config_hash()})

    with tempfile.TemporaryDirectory() as tmp:
        data_dir = Path(tmp) / "data"
        cmd_generate(ToyVQAConfig(**SMOKE_DATA), GOLDEN_SEED, data_dir)
        run_cfg = RunConfig(data_dir=str(data_dir), run_dir=str(Path(tmp) / "run"), epochs=2, **SMOKE_RUN)
        run = cmd_train(run_cfg)
        _dump("smoke_run.json", {"final_loss": run["final_loss"], "final_step": run["final_step"]})

        attack = cmd_attack_eval(
            run["final_checkpoint"], data_dir, "val", run_cfg.adv_config(),
            label="golden", results_dir=Path(tmp) / "results", seed=0,
        )
        _dump("golden_attack.json", attack_record(attack))

        final_state = run_pipeline(reference_settings(str(Path(tmp) / "work")))
        report = json.loads(Path(final_state["report"]["report_json"]).read_text(encoding="utf-8"))
        _dump("reference_report.json", report["accuracy_percent"])
        _dump("reference_ensemble.json", ensemble_record(final_state["results"]))


if __name__ == "__main__":
    main()
