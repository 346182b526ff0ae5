import numpy as np
import pytest

import dygad.trainer as trainer_mod
from dygad import tensor as T
from dygad.config import ExperimentConfig
from dygad.inject import inject_anomalies
from dygad.objective import hypersphere_terms
from dygad.synthetic import two_community_store
from dygad.tgraph import EventStore, sample_subgraph
from dygad.trainer import (
    AblationFlags,
    DivergenceError,
    LabelBudget,
    Model,
    SplitSpec,
    apply_ablations,
    fit,
    select_labels,
    split_chronological,
)


def uniform_store(n_edges, n_anomalies=0, seed=0, n_nodes=20):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n_nodes, n_edges)
    dst = (src + 1 + rng.integers(0, n_nodes - 1, n_edges)) % n_nodes
    t = np.sort(rng.uniform(0, 100, n_edges))
    labels = np.zeros(n_edges, dtype=np.int64)
    labels[rng.choice(n_edges, n_anomalies, replace=False)] = 1
    return EventStore(src, dst, t, np.zeros((n_edges, 1)), labels=labels,
                      n_nodes=n_nodes)


def bench_config(**kw):
    defaults = dict(dataset_format="synthetic", hidden=8, time_dim=8, heads=2,
                    layers=1, fanouts=(4, 2), batch_size=16, epochs=1,
                    learning_rate=1e-3)
    defaults.update(kw)
    return ExperimentConfig(**defaults)


# ---------------------------------------------------------------------------
# splits

def test_split_ten_edges():
    splits = split_chronological(uniform_store(10))
    assert (len(splits.train_idx), len(splits.val_idx), len(splits.test_idx)) == (5, 2, 3)


def test_split_three_edges():
    splits = split_chronological(uniform_store(3))
    assert (len(splits.train_idx), len(splits.val_idx), len(splits.test_idx)) == (1, 1, 1)


def test_split_chronological_ordering():
    store = uniform_store(50, seed=3)
    splits = split_chronological(store)
    assert store.t[splits.train_idx].max() <= store.t[splits.test_idx].min()
    all_idx = np.concatenate([splits.train_idx, splits.val_idx, splits.test_idx])
    np.testing.assert_array_equal(np.sort(all_idx), np.arange(50))


def test_split_empty_rejected():
    with pytest.raises(ValueError, match="empty"):
        split_chronological(uniform_store(2))


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.2, 0.2)


# ---------------------------------------------------------------------------
# label budget

def test_select_labels_small_example():
    store = uniform_store(110, n_anomalies=10, seed=1, n_nodes=30)
    labeled = select_labels(store, np.arange(110), LabelBudget(1, seed=0))
    assert sum(1 for y in labeled.values() if y == 1) == 1
    assert sum(1 for y in labeled.values() if y == 0) == 10
    for pos, y in labeled.items():
        assert store.labels[pos] == y


def test_select_labels_uci_scale_counts():
    store = uniform_store(14253, n_anomalies=415, seed=2, n_nodes=200)
    labeled = select_labels(store, np.arange(14253), LabelBudget(3, seed=0))
    assert sum(1 for y in labeled.values() if y == 1) == 3
    assert sum(1 for y in labeled.values() if y == 0) == 100  # round(13838*3/415)


def test_select_labels_full_budget_labels_everything():
    store = uniform_store(40, n_anomalies=4, seed=3)
    labeled = select_labels(store, np.arange(40), LabelBudget(4, seed=0))
    assert len(labeled) == 40


def test_select_labels_insufficient_anomalies():
    store = uniform_store(40, n_anomalies=2, seed=4)
    with pytest.raises(ValueError, match="only 2"):
        select_labels(store, np.arange(40), LabelBudget(3))


def test_select_labels_stays_inside_training_split():
    store = uniform_store(60, n_anomalies=12, seed=5)
    train_idx = np.arange(30)
    labeled = select_labels(store, train_idx, LabelBudget(2, seed=1))
    assert set(labeled) <= set(train_idx.tolist())


# ---------------------------------------------------------------------------
# fit loop

def small_labeled_store(seed=6):
    store = two_community_store(n_nodes=40, n_events=200, seed=seed)
    store, _ = inject_anomalies(store, 0.06, 2, seed=seed)
    return store


def test_fit_one_epoch_emits_one_record():
    store = small_labeled_store()
    result = fit(store, bench_config(epochs=1))
    assert len(result.log) == 1
    assert result.log[0].epoch == 1
    assert np.isfinite(result.log[0].train_loss)
    assert 0.0 <= result.log[0].val_auc <= 1.0


def test_fit_seed_determinism():
    store = small_labeled_store()
    cfg = bench_config(epochs=2)
    a = fit(store, cfg)
    b = fit(store, cfg)
    state_a, state_b = a.model.state_dict(), b.model.state_dict()
    assert set(state_a) == set(state_b)
    for name in state_a:
        np.testing.assert_array_equal(state_a[name], state_b[name])
    assert [r.to_json().rsplit('"seconds"', 1)[0] for r in a.log] == \
           [r.to_json().rsplit('"seconds"', 1)[0] for r in b.log]


def test_fit_divergence_error_names_batch(monkeypatch):
    store = small_labeled_store()

    def broken_total_loss(batch, heads):
        with np.errstate(over="ignore"):
            return T.scale(T.Tensor([1.7e308]), 10.0)  # overflows to inf

    monkeypatch.setattr(trainer_mod, "total_loss", broken_total_loss)
    with pytest.raises(DivergenceError, match="epoch 1, batch 0"):
        fit(store, bench_config())


def test_label_hygiene_test_labels_never_influence_training():
    store = small_labeled_store()
    cfg = bench_config(epochs=2, n_labeled_anomalies=1)
    base = fit(store, cfg)

    labels = store.labels.copy()
    labels[base.splits.test_idx] = 1 - labels[base.splits.test_idx]
    again = fit(store.with_labels(labels), cfg)
    assert again.labeled == base.labeled
    for name, arr in base.model.state_dict().items():
        np.testing.assert_array_equal(arr, again.model.state_dict()[name])
    assert [r.train_loss for r in base.log] == [r.train_loss for r in again.log]
    assert [r.val_auc for r in base.log] == [r.val_auc for r in again.log]


def test_label_hygiene_gradients_only_read_selected_labels(monkeypatch):
    # with the labeled set pinned, scrambling every other train label leaves
    # the parameter trajectory untouched: gradients never read those labels
    store = small_labeled_store()
    cfg = bench_config(epochs=2, n_labeled_anomalies=1)
    base = fit(store, cfg)

    monkeypatch.setattr(trainer_mod, "select_labels",
                        lambda *_args, **_kw: dict(base.labeled))
    labels = store.labels.copy()
    rng = np.random.default_rng(0)
    protect = set(base.labeled) | set(base.splits.val_idx.tolist())
    for pos in base.splits.train_idx:
        if int(pos) not in protect:
            labels[pos] = rng.integers(0, 2)
    again = fit(store.with_labels(labels), cfg)
    for name, arr in base.model.state_dict().items():
        np.testing.assert_array_equal(arr, again.model.state_dict()[name])
    assert [r.train_loss for r in base.log] == [r.train_loss for r in again.log]


def test_temporal_hygiene_no_future_events_during_fit(monkeypatch):
    store = small_labeled_store()
    seen = []
    real = sample_subgraph

    def recording(store_, pos, fanouts, include_center, rng_seed, **kw):
        sub = real(store_, pos, fanouts, include_center, rng_seed, **kw)
        t_c = store_.t[pos]
        assert np.all(store_.t[sub.event_pos] <= t_c)
        if not include_center:
            assert np.all(store_.t[sub.event_pos] < t_c)
        seen.append(len(sub.event_pos))
        return sub

    monkeypatch.setattr(trainer_mod, "sample_subgraph", recording)
    fit(store, bench_config())
    assert len(seen) > 0


def test_best_epoch_snapshot_returned():
    store = small_labeled_store()
    cfg = bench_config(epochs=3)
    result = fit(store, cfg)
    best = max(result.log, key=lambda r: r.val_auc)
    assert result.best_epoch == best.epoch
    assert result.best_val_auc == best.val_auc


# ---------------------------------------------------------------------------
# ablations

def test_apply_ablations_all_off_is_identity():
    store = small_labeled_store()
    cfg = bench_config()
    model = Model(cfg, store.feat_dim, time_scale=1.0)
    variant = apply_ablations(AblationFlags(), model)
    sub = sample_subgraph(store, store.n_edges - 1, cfg.fanouts, True, rng_seed=0)
    a = model.enc_ego.encode(sub).data
    b = variant.enc_ego.encode(sub).data
    assert a.tobytes() == b.tobytes()


def test_apply_ablations_shares_surviving_parameters():
    store = small_labeled_store()
    model = Model(bench_config(), store.feat_dim, time_scale=1.0)
    variant = apply_ablations(AblationFlags(no_global_mha=True), model)
    base = model.state_dict()
    for name, arr in variant.state_dict().items():
        if name in base:
            np.testing.assert_array_equal(arr, base[name])
    assert not any(".glo." in name for name in variant.state_dict())


def test_no_contrastive_total_loss_is_mean_hypersphere():
    store = small_labeled_store()
    cfg = bench_config(no_contrastive=True)
    model = Model(cfg, store.feat_dim, time_scale=1.0)
    rng = np.random.default_rng(1)
    h_ego = T.Tensor(rng.normal(size=(5, cfg.hidden)))
    h_ctx = T.Tensor(rng.normal(size=(5, cfg.hidden)))
    y = np.array([0, 1, 0, 0, 1], dtype=float)
    from dygad.objective import LossBatch, total_loss
    got = total_loss(LossBatch.assemble(h_ego, h_ctx, y, y > -1), model.heads).item()
    want = hypersphere_terms(h_ego, h_ctx, y).data.mean()
    assert abs(got - want) <= 1e-12
    assert not any(name.startswith("heads.fp.")
                   for name in model.trainable_parameters())


def test_no_ego_context_changes_only_the_loss_argument():
    rng = np.random.default_rng(2)
    h_ego = T.Tensor(rng.normal(size=(4, 6)))
    h_ctx = T.Tensor(rng.normal(size=(4, 6)))
    y = np.array([1.0, 0.0, 1.0, 0.0])
    ablated = hypersphere_terms(h_ego, h_ctx, y, no_ego_context=True).data
    zero_ctx = hypersphere_terms(h_ego, T.Tensor(np.zeros((4, 6))), y).data
    np.testing.assert_allclose(ablated, zero_ctx, rtol=1e-12)


def test_fit_respects_hsc_labeled_only():
    store = small_labeled_store()
    cfg = bench_config(hsc_labeled_only=True, epochs=1)
    result = fit(store, cfg)
    assert len(result.log) == 1
