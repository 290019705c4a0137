import numpy as np
import pytest

import past.trainer as trainer
from past.embeddings import Dataset
from past.errors import EmptySelection, InvalidSpec, MissingLabels
from past.harness import benchmark_adapt_config, benchmark_spec
from past.metrics import evaluate
from past.model import Embedder
from past.synth import ShiftSpec, SynthSpec, generate
from past.trainer import AdaptConfig, PretrainConfig, extract_features, pretrain_source, run_past


@pytest.fixture(scope="module")
def small():
    spec = SynthSpec(num_identities_source=6, num_identities_target=5, samples_per_identity=(12, 12),
                     holdout_per_identity=6, queries_per_identity=2, seed=1)
    source, target, query, gallery, _ = generate(spec)
    model = pretrain_source(source, PretrainConfig(epochs=5, seed=1))
    cfg = AdaptConfig(s_min=4, eta=10, P=4, K=4, max_iter=2, epochs_conservative=1, epochs_promoting=1, seed=3)
    return model, target, query, gallery, cfg


def test_two_separated_identities_rank1_is_perfect():
    rng = np.random.default_rng(0)
    ids = np.repeat([0, 1], 30)
    x = rng.normal(0, 0.3, (60, 6)) + np.where(ids[:, None] == 0, 3.0, -3.0)
    source = Dataset(x, ids, np.tile([0, 1], 30))
    model = pretrain_source(source, PretrainConfig(epochs=10, seed=0))
    res = evaluate(source.subset(np.arange(0, 60, 2)), source.subset(np.arange(1, 60, 2)), model, ranks=(1,))
    assert res.cmc[1] == 1.0


def test_zero_epochs_is_random_init():
    source = generate(SynthSpec(seed=0))[0]
    m = pretrain_source(source, PretrainConfig(epochs=0, seed=5))
    ref = Embedder.create(source.dim, seed=5)
    assert all(np.array_equal(m.params[k], ref.params[k]) for k in ref.params)


def test_pretrain_is_deterministic_and_needs_labels():
    source = generate(SynthSpec(seed=0))[0]
    a = pretrain_source(source, PretrainConfig(epochs=2, seed=2))
    b = pretrain_source(source, PretrainConfig(epochs=2, seed=2))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    with pytest.raises(MissingLabels):
        pretrain_source(Dataset.unlabeled(source.features))


def test_extract_features(small):
    model, target, *_ = small
    f = extract_features(model, target)
    assert f.shape[0] == len(target)
    np.testing.assert_allclose(np.linalg.norm(f, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(f, extract_features(model, target))


def test_zero_iterations_returns_model_unchanged(small):
    model, target, query, gallery, cfg = small
    cfg = AdaptConfig(**{**cfg.__dict__, "max_iter": 0})
    adapted, logs = run_past(model, target, cfg, query, gallery)
    assert logs == []
    assert all(np.array_equal(adapted.params[k], model.params[k]) for k in model.params)


def test_run_is_deterministic_and_input_untouched(small):
    model, target, query, gallery, cfg = small
    before = {k: v.copy() for k, v in model.params.items()}
    a_model, a_logs = run_past(model, target, cfg, query, gallery)
    b_model, b_logs = run_past(model, target, cfg, query, gallery)
    assert a_logs == b_logs
    assert all(np.array_equal(a_model.params[k], b_model.params[k]) for k in a_model.params)
    assert all(np.array_equal(model.params[k], before[k]) for k in before)
    assert [entry.iteration for entry in a_logs] == [1, 2]


def test_stage_order_selection_and_classifier_width(small, monkeypatch):
    model, target, query, gallery, cfg = small
    events = []
    real_c, real_p, real_label, real_loss = (trainer.conservative_stage, trainer.promoting_stage,
                                             trainer.pseudo_label, trainer.classifier_loss)

    def label(*a, **k):
        lab = real_label(*a, **k)
        events.append(("labels", lab))
        return lab

    def cons(model, target, labeling, *a, **k):
        events.append(("conservative", labeling.num_clusters))
        return real_c(model, target, labeling, *a, **k)

    def prom(model, target, labeling, *a, **k):
        events.append(("promoting", labeling.num_clusters))
        return real_p(model, target, labeling, *a, **k)

    def loss(F, W, labels):
        events.append(("classifier", W.shape[1]))
        return real_loss(F, W, labels)

    monkeypatch.setattr(trainer, "pseudo_label", label)
    monkeypatch.setattr(trainer, "conservative_stage", cons)
    monkeypatch.setattr(trainer, "promoting_stage", prom)
    monkeypatch.setattr(trainer, "classifier_loss", loss)
    _, logs = run_past(model, target, cfg, query, gallery)
    kinds = [e[0] for e in events if e[0] != "classifier"]
    assert kinds == ["labels", "conservative", "promoting"] * cfg.max_iter
    labelings = [e[1] for e in events if e[0] == "labels"]
    for lab, entry in zip(labelings, logs):
        assert entry.selected == int((lab.labels >= 0).sum()) == len(lab.selected)
        assert set(lab.selected) <= set(range(len(target)))
    widths = {e[1] for e in events if e[0] == "classifier"}
    assert widths <= {lab.num_clusters for lab in labelings}


def test_empty_selection(small):
    model, target, query, gallery, cfg = small
    with pytest.raises(EmptySelection):
        run_past(model, target, AdaptConfig(**{**cfg.__dict__, "s_min": len(target) + 1}))


def test_config_validation():
    with pytest.raises(InvalidSpec):
        AdaptConfig(clustering="spectral").validate()
    with pytest.raises(InvalidSpec):
        AdaptConfig(eta=0).validate()
    assert AdaptConfig().batch_size == 64


@pytest.mark.parametrize("method", ["dbscan", "kmeans"])
def test_other_clustering_methods_run(small, method):
    model, target, query, gallery, cfg = small
    _, logs = run_past(model, target, AdaptConfig(**{**cfg.__dict__, "clustering": method}), query, gallery,
                       num_source_ids=6)
    assert len(logs) == cfg.max_iter


def test_identity_shift_control():
    spec = benchmark_spec(0)
    spec.shift = ShiftSpec.identity()
    source, target, query, gallery, _ = generate(spec)
    model = pretrain_source(source, PretrainConfig(seed=0))
    direct = evaluate(query, gallery, model, ranks=(1,)).cmc[1]
    adapted, _ = run_past(model, target, benchmark_adapt_config(0), num_source_ids=20)
    assert abs(evaluate(query, gallery, adapted, ranks=(1,)).cmc[1] - direct) <= 0.05
