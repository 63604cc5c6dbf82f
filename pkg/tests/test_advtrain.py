import math
import sys
from pathlib import Path

import numpy as np
import pytest  # type: ignore
import torch

PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))

from src import diffcore as dc  # noqa: E402
from src.advtrain import (  # noqa: E402
    AdvConfig,
    Trainer,
    attack_eval,
    inner_maximize,
    inner_maximize_example,
    jsd,
    jsd_from_logits,
    losses,
    make_optimizer,
    per_example_objective,
    project_columns,
    train_step,
    vanilla_loss,
)
from src.errors import InvalidDistributionError, NonFiniteLossError  # noqa: E402
from src.model import FusionInput, RegionFeature, TCFModel, collate, tiny_config  # noqa: E402
from src.tools.metrics_log import MetricsLog, read_metrics_log  # noqa: E402


@pytest.fixture(autouse=True)
def _float64():
    with dc.precision("float64"):
        yield


def _inputs(cfg, n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        nq = int(rng.integers(1, cfg.max_question_len + 1))
        no = int(rng.integers(0, cfg.max_tag_len + 1))
        ni = int(rng.integers(1, cfg.max_region_len + 1))
        regions = []
        for _ in range(ni):
            x0, y0 = rng.uniform(0, 0.5, 2)
            w, h = rng.uniform(0.1, 0.4, 2)
            regions.append(RegionFeature(stats=rng.standard_normal(cfg.d_vis), box=[x0, y0, x0 + w, y0 + h, w, h]))
        out.append(
            FusionInput(
                question_tokens=tuple(int(t) for t in rng.integers(3, cfg.vocab_size, nq)),
                object_tags=tuple(int(t) for t in rng.integers(3, cfg.vocab_size, no)),
                regions=tuple(regions),
            )
        )
    labels = [int(v) for v in rng.integers(0, cfg.answer_count, n)]
    return out, labels


def _model(seed=0, **overrides):
    cfg = tiny_config(**overrides)
    model = TCFModel(cfg, generator=torch.Generator().manual_seed(seed))
    gen = torch.Generator().manual_seed(seed + 100)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn(p.shape, generator=gen) * 0.3)
    return model


# ------------------------------------------------------------
# JSD
# ------------------------------------------------------------


def _random_dists(n, c, seed):
    gen = torch.Generator().manual_seed(seed)
    return [torch.softmax(torch.randn(c, generator=gen) * 2, dim=-1) for _ in range(n)]


def test_jsd_symmetry_and_range():
    ps, qs = _random_dists(50, 6, 0), _random_dists(50, 6, 1)
    for p, q in zip(ps, qs):
        a, b = float(jsd(p, q)), float(jsd(q, p))
        assert abs(a - b) <= 1e-12
        assert 0.0 <= a <= math.log(2.0)
        assert float(jsd(p, p)) <= 1e-12


def test_jsd_known_values():
    p, q = torch.tensor([1.0, 0.0]), torch.tensor([0.5, 0.5])
    m = [0.75, 0.25]
    kl_pm = math.log(1.0 / m[0])
    kl_qm = 0.5 * math.log(0.5 / m[0]) + 0.5 * math.log(0.5 / m[1])
    assert float(jsd(p, q)) == pytest.approx(0.5 * kl_pm + 0.5 * kl_qm, abs=1e-6)
    assert float(jsd(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]))) == pytest.approx(math.log(2.0), abs=1e-12)


@pytest.mark.parametrize(
    "p, q",
    [
        ([0.5, 0.6], [0.5, 0.5]),
        ([1.2, -0.2], [0.5, 0.5]),
        ([0.5, 0.5], [1.0, 0.0, 0.0]),
    ],
)
def test_jsd_rejects_invalid_distributions(p, q):
    with pytest.raises(InvalidDistributionError):
        jsd(torch.tensor(p), torch.tensor(q))


def test_jsd_from_logits_matches_probability_form():
    gen = torch.Generator().manual_seed(4)
    a, b = torch.randn(8, 5, generator=gen), torch.randn(8, 5, generator=gen)
    expected = jsd(torch.softmax(a, -1), torch.softmax(b, -1))
    assert torch.allclose(jsd_from_logits(a, b), expected, atol=1e-12)


# ------------------------------------------------------------
# 損失
# ------------------------------------------------------------


def test_zero_perturbation_identity_over_fixture():
    model = _model()
    inputs, labels = _inputs(model.config, 100)
    batch = collate(inputs, model.config)
    y = torch.tensor(labels)
    zero = torch.zeros(batch.size, batch.seq_len, model.config.embed_dim)
    assert torch.equal(model(batch, zero), model(batch))
    out = losses(model, batch, y, zero, AdvConfig())
    assert float(out.r_ce) == float(out.l_con)
    assert float(out.r_jsd) <= 1e-12


@pytest.mark.parametrize("alpha", [0.0, 0.5, 2.0])
def test_combined_definition(alpha):
    model = _model()
    inputs, labels = _inputs(model.config, 6)
    batch = collate(inputs, model.config)
    delta = torch.randn(batch.size, batch.seq_len, model.config.embed_dim, generator=torch.Generator().manual_seed(1))
    out = losses(model, batch, torch.tensor(labels), delta * 0.3, AdvConfig(alpha=alpha))
    assert float(out.combined) == pytest.approx(float(out.l_con + out.r_ce + alpha * out.r_jsd), abs=1e-14)
    assert float(out.r_ce) != float(out.l_con)


def test_vanilla_loss_has_no_adversarial_terms():
    model = _model()
    inputs, labels = _inputs(model.config, 4)
    out = vanilla_loss(model, collate(inputs, model.config), torch.tensor(labels))
    record = out.to_record()
    assert record["r_ce"] is None and record["r_jsd"] is None
    assert record["combined"] == record["l_con"]


@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_objective_gradient_wrt_delta(alpha):
    model = _model()
    inputs, labels = _inputs(model.config, 3, seed=2)
    batch = collate(inputs, model.config)
    y = torch.tensor(labels)
    with torch.no_grad():
        clean = model(batch)
    mask = batch.text_mask.unsqueeze(-1).to(torch.float64)
    point = torch.randn(batch.size, batch.seq_len, model.config.embed_dim, generator=torch.Generator().manual_seed(3))
    f = lambda d: per_example_objective(model, batch, y, d, alpha, clean).sum()  # noqa: E731
    assert dc.grad_check(f, point * 0.2 * mask) < 1e-4


# ------------------------------------------------------------
# 内側最大化
# ------------------------------------------------------------


class _LinearToy:
    """logits = W · Σ_text δ + b の凸な玩具モデル。"""

    def __init__(self, embed_dim, num_classes, seed=0):
        gen = torch.Generator().manual_seed(seed)
        self.embed_dim = embed_dim
        self.weight = torch.randn(num_classes, embed_dim, generator=gen)
        self.bias = torch.randn(num_classes, generator=gen)

    def __call__(self, batch, delta=None):
        b = batch.size
        if delta is None:
            return self.bias.expand(b, -1).clone()
        summed = (delta * batch.text_mask.unsqueeze(-1)).sum(dim=1)
        return summed @ self.weight.T + self.bias


@pytest.mark.parametrize("lr, eps", [(0.1, 0.5), (2.0, 0.5)])
def test_single_step_on_linear_toy(lr, eps):
    cfg = tiny_config()
    inputs, labels = _inputs(cfg, 3, seed=6)
    batch = collate(inputs, cfg)
    toy = _LinearToy(cfg.embed_dim, cfg.answer_count)
    adv = AdvConfig(ascent_steps=1, ascent_lr=lr, epsilon=eps, init_scale=0.0, alpha=0.0)
    pert = inner_maximize(toy, batch, torch.tensor(labels), adv)

    p = torch.softmax(toy.bias, dim=-1)
    for i, y in enumerate(labels):
        g = toy.weight.T @ (p - torch.nn.functional.one_hot(torch.tensor(y), cfg.answer_count).to(p.dtype))
        t = batch.spans[i].text_len
        column = lr * g / (math.sqrt(t) * g.norm())
        if column.norm() > eps:
            column = eps * g / g.norm()
        got = pert.for_example(i)
        assert got.shape == (t, cfg.embed_dim)
        assert torch.allclose(got, column.expand(t, -1), atol=1e-12)
        assert torch.all(pert.delta[i, t:] == 0)


def test_projection_bounds_columns():
    delta = torch.randn(4, 6, 8, generator=torch.Generator().manual_seed(0)) * 3
    projected = project_columns(delta, 0.5)
    norms = projected.norm(dim=-1)
    assert torch.all(norms <= 0.5 + 1e-12)
    small = delta.norm(dim=-1) <= 0.5
    assert torch.equal(projected[small], delta[small])


def test_inner_max_contract_over_trials():
    model = _model(seed=1)
    cfg = AdvConfig(epsilon=0.3, ascent_steps=3, ascent_lr=0.2, init_scale=0.05)
    for trial in range(100):
        inputs, labels = _inputs(model.config, 2, seed=1000 + trial)
        batch = collate(inputs, model.config)
        y = torch.tensor(labels)
        pert = inner_maximize(model, batch, y, cfg, torch.Generator().manual_seed(trial))

        # 同じ生成器から δ_0 を再現する
        gen = torch.Generator().manual_seed(trial)
        noise = torch.rand(pert.delta.shape, generator=gen) * 2.0 - 1.0
        mask = batch.text_mask.unsqueeze(-1).to(noise.dtype)
        delta0 = project_columns(noise * cfg.init_scale * mask, cfg.epsilon)

        assert torch.all(pert.column_norms() <= cfg.epsilon + 1e-9)
        assert torch.all(pert.delta[~batch.text_mask] == 0)
        with torch.no_grad():
            clean = model(batch)
            before = per_example_objective(model, batch, y, delta0, cfg.alpha, clean)
            after = per_example_objective(model, batch, y, pert.delta, cfg.alpha, clean)
        assert torch.all(after >= before - 1e-9), trial


def test_inner_max_leaves_parameters_untouched():
    model = _model()
    before = [p.detach().clone() for p in model.parameters()]
    inputs, labels = _inputs(model.config, 3)
    inner_maximize(model, collate(inputs, model.config), torch.tensor(labels), AdvConfig())
    assert all(torch.equal(a, b) for a, b in zip(before, model.parameters()))
    assert all(p.requires_grad for p in model.parameters())


def test_inner_maximize_example_shape():
    model = _model()
    inputs, labels = _inputs(model.config, 1)
    delta = inner_maximize_example(inputs[0], labels[0], model, AdvConfig(), torch.Generator().manual_seed(0))
    assert delta.shape == (inputs[0].text_len, model.config.embed_dim)


# ------------------------------------------------------------
# 外側最小化
# ------------------------------------------------------------


def _separable_batch(cfg, n=8, seed=0):
    """質問の 2 トークン目 (3 か 4) だけで答えが決まる 2 クラスのバッチ。"""
    rng = np.random.default_rng(seed)
    inputs, labels = [], []
    for i in range(n):
        label = i % 2
        regions = tuple(
            RegionFeature(stats=rng.standard_normal(cfg.d_vis), box=[0.1, 0.1, 0.4, 0.4, 0.3, 0.3]) for _ in range(2)
        )
        inputs.append(FusionInput(question_tokens=(5, 3 + label), object_tags=(6,), regions=regions))
        labels.append(label)
    return collate(inputs, cfg), torch.tensor(labels)


def test_adversarial_training_halves_loss_on_separable_batch():
    cfg = tiny_config(answer_count=2)
    model = TCFModel(cfg, generator=torch.Generator().manual_seed(0))
    batch, y = _separable_batch(cfg)
    adv_cfg = AdvConfig(alpha=1.0, epsilon=0.01, ascent_steps=1, ascent_lr=0.01, init_scale=0.0)
    optimizer = make_optimizer(model, learning_rate=1e-2)
    gen = torch.Generator().manual_seed(0)
    history = [
        float(train_step(model, optimizer, batch, y, mode="adversarial", cfg=adv_cfg, step=s, generator=gen).combined)
        for s in range(50)
    ]
    assert history[49] <= 0.5 * history[0], history


def test_vanishing_perturbation_doubles_vanilla_gradient():
    model = _model(seed=5)
    inputs, labels = _inputs(model.config, 4, seed=2)
    batch = collate(inputs, model.config)
    y = torch.tensor(labels)
    cfg = AdvConfig(alpha=0.0, epsilon=1e-10, init_scale=0.0)
    pert = inner_maximize(model, batch, y, cfg, torch.Generator().manual_seed(0))
    params = list(model.parameters())

    adv = losses(model, batch, y, pert.delta, cfg)
    adv_grads = torch.autograd.grad(adv.combined, params)
    van = vanilla_loss(model, batch, y)
    van_grads = torch.autograd.grad(van.combined, params)

    assert float(adv.combined) == pytest.approx(2.0 * float(van.l_con), abs=1e-8)
    for g_adv, g_van in zip(adv_grads, van_grads):
        assert torch.allclose(g_adv, 2.0 * g_van, atol=1e-7)


def test_combined_loss_gradient_check_over_parameters():
    model = _model()
    inputs, labels = _inputs(model.config, 2, seed=3)
    batch = collate(inputs, model.config)
    y = torch.tensor(labels)
    gen = torch.Generator().manual_seed(4)
    mask = batch.text_mask.unsqueeze(-1).to(torch.float64)
    delta = (torch.rand(batch.size, batch.seq_len, model.config.embed_dim, generator=gen) - 0.5) * mask
    cfg = AdvConfig(alpha=1.0)
    params = dict(model.named_parameters())
    errors = dc.grad_check_tensors(lambda: losses(model, batch, y, delta, cfg).combined, params)
    assert set(errors) == set(params)
    assert max(errors.values()) < 1e-4, errors


def test_non_finite_loss_aborts_with_step():
    model = _model()
    with torch.no_grad():
        model.classifier_bias[0] = float("nan")
    inputs, labels = _inputs(model.config, 2)
    optimizer = make_optimizer(model)
    with pytest.raises(NonFiniteLossError) as e:
        train_step(model, optimizer, collate(inputs, model.config), torch.tensor(labels), mode="vanilla", cfg=AdvConfig(), step=17)
    assert e.value.step == 17


@pytest.mark.parametrize("mode", ["vanilla", "adversarial"])
def test_trainer_writes_metrics(tmp_path, mode):
    model = _model()
    inputs, labels = _inputs(model.config, 10)
    log = MetricsLog(tmp_path / "metrics.jsonl")
    trainer = Trainer(
        model,
        mode=mode,
        adv_cfg=AdvConfig(),
        optimizer=make_optimizer(model),
        batch_size=4,
        shuffle_rng=np.random.default_rng(0),
        delta_generator=torch.Generator().manual_seed(0),
        metrics_log=log,
    )
    seen = []
    trainer.fit(inputs, labels, epochs=2, on_epoch_end=lambda epoch, step, loss: seen.append((epoch, step)))
    assert seen == [(1, 3), (2, 6)]
    df = read_metrics_log(log.path)
    assert list(df["step"]) == list(range(6))
    assert df["wall_clock"].isna().all()
    if mode == "vanilla":
        assert df["r_ce"].isna().all() and df["r_jsd"].isna().all()
    else:
        assert df["r_ce"].notna().all()


# ------------------------------------------------------------
# 攻撃評価
# ------------------------------------------------------------


def test_attack_eval_tiny_epsilon_equals_clean():
    model = _model()
    inputs, labels = _inputs(model.config, 20)
    result = attack_eval(model, inputs, labels, AdvConfig(epsilon=1e-12, init_scale=0.0, ascent_lr=1e-12))
    assert result.attacked_accuracy == result.clean_accuracy
    assert result.num_examples == 20


def test_attack_never_exceeds_clean():
    model = _model(seed=4)
    inputs, labels = _inputs(model.config, 30, seed=9)
    result = attack_eval(model, inputs, labels, AdvConfig(epsilon=2.0, ascent_lr=1.0), torch.Generator().manual_seed(0))
    assert 0.0 <= result.attacked_accuracy <= result.clean_accuracy <= 1.0


def test_attack_counts_match_recomputed_predictions():
    model = _model(seed=4)
    inputs, labels = _inputs(model.config, 30, seed=9)
    cfg = AdvConfig(epsilon=2.0, ascent_lr=1.0)
    result = attack_eval(model, inputs, labels, cfg, torch.Generator().manual_seed(0))

    batch = collate(inputs, model.config)
    y = torch.tensor(labels)
    pert = inner_maximize(model, batch, y, cfg, torch.Generator().manual_seed(0), alpha=0.0)
    with torch.no_grad():
        clean_ok = model(batch).argmax(dim=-1) == y
        adv_ok = model(batch, pert.delta).argmax(dim=-1) == y
    assert result.raw_attacked_accuracy == pytest.approx(float(adv_ok.double().mean()))
    assert result.attacked_accuracy == pytest.approx(float((clean_ok & adv_ok).double().mean()))
    assert result.attacked_accuracy <= min(result.clean_accuracy, result.raw_attacked_accuracy)


def test_tiny_epsilon_raw_attacked_equals_clean():
    model = _model()
    inputs, labels = _inputs(model.config, 20)
    result = attack_eval(model, inputs, labels, AdvConfig(epsilon=1e-12, init_scale=0.0, ascent_lr=1e-12))
    assert result.raw_attacked_accuracy == result.clean_accuracy
