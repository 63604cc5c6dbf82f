import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pytest  # type: ignore

PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))

from src.errors import ArtifactMissingError, OutputExistsError  # noqa: E402
from src.toyvqa import (  # noqa: E402
    COLORS,
    SHAPES,
    SPLITS,
    TEMPLATES,
    TOKENS,
    Scene,
    SceneObject,
    ToyVQAConfig,
    Vocabulary,
    answer_for,
    answer_vocabulary,
    attribute_projection,
    featurize,
    generate_dataset,
    generate_scene,
    load_manifest,
    load_split,
    normalized_box,
    pose_question,
    to_inputs,
)
from src.toyvqa.featurize import attribute_index  # noqa: E402

SMALL = ToyVQAConfig(train_size=40, val_size=12, test_size=12)


def _scene(*objs):
    return Scene(objects=tuple(SceneObject(s, c, b) for s, c, b in objs), width=100.0, height=100.0)


# ------------------------------------------------------------
# シーン・特徴
# ------------------------------------------------------------


def test_scene_boxes_stay_on_canvas():
    cfg = ToyVQAConfig()
    rng = np.random.default_rng(0)
    for _ in range(300):
        scene = generate_scene(rng, cfg)
        assert 1 <= len(scene.objects) <= cfg.max_regions
        for obj in scene.objects:
            x0, y0, x1, y1 = obj.box
            assert 0.0 <= x0 < x1 <= cfg.canvas_width
            assert 0.0 <= y0 < y1 <= cfg.canvas_height


def test_single_region_config():
    cfg = ToyVQAConfig(max_regions=1)
    rng = np.random.default_rng(1)
    assert all(len(generate_scene(rng, cfg).objects) == 1 for _ in range(50))
    assert answer_vocabulary(1) == COLORS + SHAPES + ("0", "1", "yes", "no")


def test_default_answer_and_token_vocabulary():
    answers = answer_vocabulary(5)
    assert len(answers) == 14 and len(set(answers)) == 14
    assert len(TOKENS) == 37
    assert TOKENS[:3] == ("[PAD]", "[CLS]", "[SEP]")
    vocab = Vocabulary()
    assert vocab.decode(vocab.encode(["what", "color", "is", "the", "circle", "?"])) == [
        "what", "color", "is", "the", "circle", "?"
    ]
    assert vocab.encode(["zebra"]) == [vocab.index["[UNK]"]]


def test_full_canvas_box_normalization():
    scene = _scene(("circle", "red", (0.0, 0.0, 100.0, 100.0)))
    assert normalized_box(scene.objects[0], scene).tolist() == [0.0, 0.0, 1.0, 1.0, 1.0, 1.0]


def test_noiseless_features_are_injective():
    cfg = ToyVQAConfig(feature_noise=0.0, tag_noise=0.0)
    seen = {}
    for shape in SHAPES:
        for color in COLORS:
            scene = _scene((shape, color, (10.0, 10.0, 30.0, 30.0)))
            regions, tags = featurize(scene, np.random.default_rng(0), cfg)
            assert tags == [shape]
            key = tuple(np.round(regions[0].stats, 6))
            assert key not in seen
            seen[key] = (shape, color)
            np.testing.assert_allclose(
                regions[0].stats, attribute_projection(cfg.d_vis, cfg.projection_seed)[:, attribute_index(shape, color)], atol=1e-8
            )
    assert len(seen) == 9


def test_tag_noise_only_swaps_shapes():
    cfg = ToyVQAConfig(tag_noise=1.0)
    scene = _scene(("circle", "red", (0.0, 0.0, 20.0, 20.0)), ("square", "blue", (40.0, 40.0, 60.0, 60.0)))
    _, tags = featurize(scene, np.random.default_rng(3), cfg)
    assert tags[0] in ("square", "triangle") and tags[1] in ("circle", "triangle")


# ------------------------------------------------------------
# 質問と解答
# ------------------------------------------------------------


def test_count_answers():
    scene = _scene(("square", "red", (0.0, 0.0, 20.0, 20.0)), ("circle", "blue", (40.0, 40.0, 60.0, 60.0)))
    assert answer_for(scene, "count-of-shape", {"shape": "triangle"}) == "0"
    assert answer_for(scene, "count-of-shape", {"shape": "circle"}) == "1"


def test_ambiguous_or_absent_color_has_no_answer():
    scene = _scene(("square", "red", (0.0, 0.0, 20.0, 20.0)), ("square", "blue", (40.0, 40.0, 60.0, 60.0)))
    assert answer_for(scene, "color-of-shape", {"shape": "square"}) is None
    assert answer_for(scene, "color-of-shape", {"shape": "circle"}) is None
    single = _scene(("square", "green", (0.0, 0.0, 20.0, 20.0)))
    assert answer_for(single, "color-of-shape", {"shape": "square"}) == "green"


def test_leftmost_tie_has_no_answer():
    tied = _scene(("square", "red", (5.0, 0.0, 20.0, 20.0)), ("circle", "blue", (5.0, 40.0, 25.0, 60.0)))
    assert answer_for(tied, "leftmost-shape", {}) is None
    clear = _scene(("square", "red", (30.0, 0.0, 50.0, 20.0)), ("circle", "blue", (5.0, 40.0, 25.0, 60.0)))
    assert answer_for(clear, "leftmost-shape", {}) == "circle"


@pytest.mark.parametrize("template_id", TEMPLATES)
def test_pose_question_answer_is_consistent(template_id):
    rng = np.random.default_rng(5)
    scene = _scene(("triangle", "red", (1.0, 0.0, 20.0, 20.0)), ("circle", "blue", (40.0, 40.0, 60.0, 60.0)))
    q = pose_question(scene, template_id, rng)
    assert q.answer == answer_for(scene, template_id, q.args)
    assert q.tokens[-1] == "?"


# ------------------------------------------------------------
# データセット
# ------------------------------------------------------------


def _oracle(ex):
    """シーンから解答を直接数え直す独立実装。"""
    objs = ex.scene.objects
    args = ex.template_args
    if ex.template_id == "count-of-shape":
        return str(len([o for o in objs if o.shape == args["shape"]]))
    if ex.template_id == "color-of-shape":
        colors = sorted({o.color for o in objs if o.shape == args["shape"]})
        assert len(colors) == 1
        return colors[0]
    if ex.template_id == "shape-exists":
        return "yes" if [o for o in objs if (o.shape, o.color) == (args["shape"], args["color"])] else "no"
    xs = sorted(o.box[0] for o in objs)
    assert len(xs) == 1 or xs[1] - xs[0] >= 1e-6
    return min(objs, key=lambda o: o.box[0]).shape


def test_generated_dataset_contract(tmp_path):
    manifest = generate_dataset(SMALL, 42, tmp_path)
    answers = answer_vocabulary(SMALL.max_regions)
    scene_ids = {}
    for split in SPLITS:
        examples = load_split(tmp_path, split)
        assert len(examples) == SMALL.split_sizes[split]
        for ex in examples:
            assert answers[ex.answer] == ex.answer_text == _oracle(ex)
            assert len(ex.region_features) == len(ex.scene.objects) == len(ex.object_tags)
            assert all(r.stats.shape == (SMALL.d_vis,) for r in ex.region_features)
        scene_ids[split] = {ex.scene_id for ex in examples}
        data = (tmp_path / f"{split}.jsonl").read_bytes()
        assert manifest.files[split]["sha256"] == hashlib.sha256(data).hexdigest()
    assert not scene_ids["train"] & scene_ids["val"]
    assert not scene_ids["train"] & scene_ids["test"]
    assert not scene_ids["val"] & scene_ids["test"]
    assert load_manifest(tmp_path).config_hash == SMALL.config_hash()


def test_generation_is_byte_deterministic(tmp_path):
    generate_dataset(SMALL, 7, tmp_path / "a")
    generate_dataset(SMALL, 7, tmp_path / "b", threads=3)
    for name in [f"{s}.jsonl" for s in SPLITS] + ["manifest.json"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    generate_dataset(SMALL, 8, tmp_path / "c")
    assert (tmp_path / "a" / "train.jsonl").read_bytes() != (tmp_path / "c" / "train.jsonl").read_bytes()


def test_existing_output_is_refused(tmp_path):
    generate_dataset(SMALL, 1, tmp_path)
    with pytest.raises(OutputExistsError):
        generate_dataset(SMALL, 1, tmp_path)
    generate_dataset(SMALL, 2, tmp_path, overwrite=True)
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 2


def test_missing_dataset(tmp_path):
    with pytest.raises(ArtifactMissingError):
        load_manifest(tmp_path)
    with pytest.raises(ArtifactMissingError):
        load_split(tmp_path, "train")


def test_examples_convert_to_model_inputs(tmp_path):
    generate_dataset(SMALL, 3, tmp_path)
    inputs, labels = to_inputs(load_split(tmp_path, "val"))
    assert len(inputs) == len(labels) == SMALL.val_size
    for x in inputs:
        assert 1 <= len(x.regions) <= SMALL.max_regions
        assert all(0 <= t < len(TOKENS) for t in x.question_tokens + x.object_tags)
