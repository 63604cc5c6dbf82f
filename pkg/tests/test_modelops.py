import shutil
import sys
from collections import Counter
from pathlib import Path

import numpy as np
import pandas as pd
import pytest  # type: ignore
import torch

PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))

from src import diffcore as dc  # noqa: E402
from src.errors import ConfigMismatchError, TieBreakError  # noqa: E402
from src.model import FusionInput, RegionFeature, TCFModel, load_checkpoint, tiny_config  # noqa: E402
from src.model.checkpoint import from_model  # noqa: E402
from src.modelops import (  # noqa: E402
    ModelPredictor,
    PredictionMatrix,
    SnapshotRing,
    average,
    average_checkpoints,
    ensemble_eval,
    majority_vote,
    prediction_dump_rows,
    snapshot,
)


def _random_model(seed, cfg=None):
    model = TCFModel(cfg or tiny_config(), generator=torch.Generator().manual_seed(seed))
    gen = torch.Generator().manual_seed(1000 + seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return model


def _inputs(cfg, n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        regions = []
        for _ in range(int(rng.integers(1, cfg.max_region_len + 1))):
            x0, y0 = rng.uniform(0, 0.5, 2)
            w, h = rng.uniform(0.1, 0.4, 2)
            regions.append(RegionFeature(stats=rng.standard_normal(cfg.d_vis), box=[x0, y0, x0 + w, y0 + h, w, h]))
        nq = int(rng.integers(1, cfg.max_question_len + 1))
        out.append(
            FusionInput(
                question_tokens=tuple(int(t) for t in rng.integers(3, cfg.vocab_size, nq)),
                object_tags=(),
                regions=tuple(regions),
            )
        )
    return out, [int(v) for v in rng.integers(0, cfg.answer_count, n)]


def _filled_ring(directory, n, capacity=20, seed_offset=0):
    ring = SnapshotRing(directory=str(directory), capacity=capacity)
    for step in range(1, n + 1):
        ring = snapshot(_random_model(step + seed_offset), step, ring, seed=0)
    return ring


# ------------------------------------------------------------
# スナップショット
# ------------------------------------------------------------


def test_ring_keeps_latest_capacity(tmp_path):
    with dc.precision("float64"):
        ring = _filled_ring(tmp_path, 25)
    assert ring.steps == list(range(6, 26))
    assert sorted(p.name for p in tmp_path.glob("*.tcf")) == [f"step-{s:08d}.tcf" for s in range(6, 26)]


def test_ring_survives_restart(tmp_path):
    with dc.precision("float64"):
        ring = _filled_ring(tmp_path, 7, capacity=5)
    reopened = SnapshotRing.open(tmp_path)
    assert reopened.steps == ring.steps == [3, 4, 5, 6, 7]
    assert reopened.capacity == 5


def test_ring_follows_moved_directory(tmp_path):
    with dc.precision("float64"):
        _filled_ring(tmp_path / "before", 4)
        moved = tmp_path / "after"
        shutil.move(str(tmp_path / "before"), str(moved))
        reopened = SnapshotRing.open(moved)
        averaged = average(reopened, 3)
    assert reopened.directory == str(moved)
    assert reopened.steps == [1, 2, 3, 4]
    assert averaged.step == 4


def test_snapshot_round_trip_and_step_order(tmp_path):
    with dc.precision("float64"):
        model = _random_model(3)
        ring = snapshot(model, 10, SnapshotRing(directory=str(tmp_path)), seed=0)
        restored = load_checkpoint(tmp_path / ring.entries[-1].path).to_model()
        for p, q in zip(model.parameters(), restored.parameters()):
            assert torch.equal(p, q)
        with pytest.raises(ValueError):
            snapshot(model, 10, ring, seed=0)


# ------------------------------------------------------------
# 平均化
# ------------------------------------------------------------


def _naive_mean(states):
    out = {}
    for name in states[0]:
        acc = states[0][name].clone()
        for s in states[1:]:
            acc = acc + s[name]
        out[name] = acc / len(states)
    return out


@pytest.mark.parametrize("k", [1, 5, 10, 15, 20])
def test_average_matches_naive_oracle(tmp_path, k):
    with dc.precision("float64"):
        ring = _filled_ring(tmp_path, 20)
        averaged = average(ring, k)
        states = [load_checkpoint(tmp_path / e.path).state for e in ring.latest(k)]
    oracle = _naive_mean(states)
    for name, value in averaged.state.items():
        assert torch.allclose(value, oracle[name], atol=1e-12, rtol=0), name
    assert averaged.step == 20
    if k == 1:
        assert all(torch.equal(averaged.state[n], states[0][n]) for n in states[0])


def test_average_float32_tolerance(tmp_path):
    with dc.precision("float32"):
        ring = _filled_ring(tmp_path, 5)
        averaged = average(ring, 5)
        states = [load_checkpoint(tmp_path / e.path).state for e in ring.latest(5)]
    oracle = _naive_mean([{n: t.double() for n, t in s.items()} for s in states])
    for name, value in averaged.state.items():
        assert value.dtype == torch.float32
        assert torch.allclose(value.double(), oracle[name], atol=1e-6, rtol=1e-7), name


def test_mean_of_one_and_three_is_two():
    with dc.precision("float64"):
        models = [_random_model(0), _random_model(1)]
        for model, value in zip(models, (1.0, 3.0)):
            with torch.no_grad():
                for p in model.parameters():
                    p.fill_(value)
        averaged = average_checkpoints([from_model(m, seed=0, step=i + 1) for i, m in enumerate(models)])
    assert all(bool(torch.all(t == 2.0)) for t in averaged.state.values())
    assert averaged.extra["averaged_steps"] == [1, 2]


def test_average_is_permutation_invariant_and_idempotent():
    with dc.precision("float64"):
        ckpts = [from_model(_random_model(i), seed=0, step=i + 1) for i in range(5)]
        forward = average_checkpoints(ckpts)
        shuffled = average_checkpoints([ckpts[i] for i in (3, 0, 4, 1, 2)])
        again = average_checkpoints([forward, forward])
    for name in forward.state:
        assert torch.allclose(forward.state[name], shuffled.state[name], atol=1e-12, rtol=0)
        assert torch.equal(again.state[name], forward.state[name])


def test_average_rejects_config_mismatch():
    with dc.precision("float64"):
        a = from_model(_random_model(0), seed=0, step=1)
        b = from_model(_random_model(1, tiny_config(answer_count=6)), seed=0, step=2)
    with pytest.raises(ConfigMismatchError):
        average_checkpoints([a, b])


def test_average_k_out_of_range(tmp_path):
    with dc.precision("float64"):
        ring = _filled_ring(tmp_path, 3)
    with pytest.raises(ValueError):
        average(ring, 4)
    with pytest.raises(ValueError):
        average(ring, 0)


# ------------------------------------------------------------
# 多数決
# ------------------------------------------------------------


def test_vote_examples():
    votes = np.array([[0, 1], [0, 2], [1, 2]])
    assert majority_vote(PredictionMatrix(votes=votes, answer_count=3)).tolist() == [0, 2]
    single = np.array([[2, 0, 1]])
    assert majority_vote(PredictionMatrix(votes=single, answer_count=3)).tolist() == [2, 0, 1]


def test_tie_requires_probabilities():
    with pytest.raises(TieBreakError):
        majority_vote(PredictionMatrix(votes=np.array([[0], [1]]), answer_count=2))


def test_tie_broken_by_summed_probability_then_index():
    votes = np.array([[0, 0], [1, 1]])
    probs = np.array(
        [
            [[0.6, 0.4, 0.0], [0.5, 0.5, 0.0]],
            [[0.1, 0.9, 0.0], [0.5, 0.5, 0.0]],
        ]
    )
    assert majority_vote(PredictionMatrix(votes=votes, probabilities=probs)).tolist() == [1, 0]


def _oracle_vote(votes, probs):
    out = []
    for i in range(votes.shape[1]):
        counts = Counter(int(v) for v in votes[:, i])
        best = max(counts.values())
        tied = sorted(c for c, n in counts.items() if n == best)
        if len(tied) > 1:
            sums = {c: float(np.sum(probs[:, i, c])) for c in tied}
            top = max(sums.values())
            tied = [c for c in tied if sums[c] == top]
        out.append(tied[0])
    return out


def test_vote_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        probs = rng.dirichlet(np.ones(4), size=(5, 200))
        votes = rng.integers(0, 4, size=(5, 200))
        preds = PredictionMatrix(votes=votes, probabilities=probs)
        assert majority_vote(preds).tolist() == _oracle_vote(votes, probs)


def test_vote_invariant_to_per_example_rescaling():
    rng = np.random.default_rng(1)
    probs = rng.dirichlet(np.ones(3), size=(4, 100))
    votes = probs.argmax(axis=-1)
    scale = rng.uniform(0.1, 10.0, size=(1, 100, 1))
    a = majority_vote(PredictionMatrix(votes=votes, probabilities=probs))
    b = majority_vote(PredictionMatrix(votes=votes, probabilities=probs * scale))
    assert a.tolist() == b.tolist()


def test_prediction_dump_round_trip():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 3, 10).tolist()
    rows = []
    probs = rng.dirichlet(np.ones(3), size=(2, 10))
    for m in range(2):
        rows.extend(prediction_dump_rows(f"m{m}", probs[m], labels))
    preds = PredictionMatrix.from_dump(pd.DataFrame(rows))
    assert preds.model_ids == ["m0", "m1"]
    assert preds.answer_count == 3
    np.testing.assert_array_equal(preds.votes, probs.argmax(axis=-1))


# ------------------------------------------------------------
# アンサンブル
# ------------------------------------------------------------


class _Stub:
    def __init__(self, model_id, answers, answer_count):
        self.model_id = model_id
        self.answers = answers
        self.answer_count = answer_count

    def predict_proba(self, inputs):
        out = np.zeros((len(inputs), self.answer_count))
        out[np.arange(len(inputs)), self.answers[: len(inputs)]] = 1.0
        return out


def test_complementary_stubs_reach_full_accuracy():
    labels = np.arange(30) % 4
    stubs = []
    for m in range(3):
        answers = labels.copy()
        wrong = np.arange(30) % 3 == m
        answers[wrong] = (labels[wrong] + 1) % 4
        stubs.append(_Stub(f"stub-{m}", answers, 4))
    result = ensemble_eval(stubs, list(range(30)), labels.tolist())
    assert result.accuracy == 1.0
    assert all(acc == pytest.approx(2 / 3) for acc in result.per_model.values())


def test_answer_vocabulary_mismatch():
    with pytest.raises(ConfigMismatchError):
        ensemble_eval([_Stub("a", np.zeros(3, int), 4), _Stub("b", np.zeros(3, int), 5)], [0, 1, 2], [0, 0, 0])


def test_identical_models_match_individual_accuracy():
    with dc.precision("float64"):
        model = _random_model(0)
        inputs, labels = _inputs(model.config, 25)
        predictors = [ModelPredictor(model, model_id=f"copy-{i}") for i in range(3)]
        result = ensemble_eval(predictors, inputs, labels)
    assert set(result.per_model.values()) == {result.accuracy}
