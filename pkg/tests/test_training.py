import numpy as np
import pytest
from scipy import stats

from tgnef import bench
from tgnef.data import SyntheticSpec, generate_synthetic
from tgnef.graph import EventLog, NodeFeatures
from tgnef.nef import NEFConfig
from tgnef.nn import Adam
from tgnef.tgn import EmbeddingConfig, ModelConfig
from tgnef.training import (StreamData, TrainConfig, TrainingError, build_model, negative_sample, restore,
                            stream_scores, train, train_epoch)
from tgnef.walks import WalkConfig

TINY = ModelConfig(embedding=EmbeddingConfig(d_mem=8, d_emb=8, d_time=4, n_neighbors=4),
                   nef=NEFConfig(d_pos=4, d_time=4, d_hidden=4, walks=WalkConfig(K=3)), dropout=0.0)


def toy_stream(n_nodes=20, n_events=20, seed=0):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n_nodes, n_events)
    dst = (src + rng.integers(1, n_nodes, n_events)) % n_nodes
    ev = EventLog(src, dst, np.arange(1.0, n_events + 1), np.zeros((n_events, 0)), n_nodes)
    empty = EventLog([], [], [], np.zeros((0, 0)), n_nodes)
    return StreamData(ev, empty, empty, NodeFeatures.empty(n_nodes), np.arange(n_nodes),
                      np.zeros(0, int), np.zeros(0, int))


@pytest.fixture(scope="module")
def small_data():
    data = generate_synthetic(SyntheticSpec(n_nodes=40, n_events=400, seed=3))
    spec = bench.ExperimentSpec(n_runs=1, model=TINY, train=TrainConfig(batch_size=50, epochs=2))
    return bench.prepare(spec, data.events, data.node_features, 11)


# negative sampling -------------------------------------------------------------------------


def test_one_negative_per_positive(rng):
    for n in (1, 7, 200):
        src, dst = rng.integers(0, 10, n), rng.integers(0, 10, n)
        assert len(negative_sample(src, dst, np.arange(10), rng)) == n


def test_negatives_stay_in_destination_side(rng):
    dst_side = np.arange(50, 60)
    neg = negative_sample(rng.integers(0, 50, 500), rng.choice(dst_side, 500), dst_side, rng)
    assert np.isin(neg, dst_side).all()


def test_negatives_uniform_chi_square():
    rng = np.random.default_rng(7)
    universe = np.arange(100, 120)
    src = np.zeros(100_000, dtype=np.int64)  # positives lie outside the universe, so nothing collides
    neg = negative_sample(src, np.full(100_000, 5), universe, rng)
    counts = np.bincount(neg - 100, minlength=20)
    assert stats.chisquare(counts).pvalue > 0.01


def test_negatives_avoid_batch_positives(rng):
    src = np.array([0, 0, 1])
    dst = np.array([1, 2, 0])
    for _ in range(50):
        neg = negative_sample(src, dst, np.arange(3), rng)
        assert not ({(0, 1), (0, 2), (1, 0)} & set(zip(src.tolist(), neg.tolist())))


def test_negative_universe_too_small(rng):
    with pytest.raises(ValueError):
        negative_sample(np.array([0]), np.array([1]), np.array([1]), rng)


# training steps -------------------------------------------------------------------------------


def test_zero_lr_leaves_weights_unchanged():
    data = toy_stream()
    model = build_model(TINY, data)
    before = model.state_dict()
    train_epoch(model, data, TrainConfig(batch_size=20, lr=0.0), Adam(model.parameters(), lr=0.0),
                np.random.default_rng(0))
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_toy_graph_overfits():
    data = toy_stream()
    cfg = ModelConfig(embedding=EmbeddingConfig(d_mem=16, d_emb=16, d_time=8, n_neighbors=5),
                      nef=NEFConfig(d_pos=8, d_time=8, d_hidden=8, walks=WalkConfig(K=4)), dropout=0.0)
    model = build_model(cfg, data)
    opt = Adam(model.parameters(), lr=0.007)
    tc = TrainConfig(batch_size=20, lr=0.007)
    losses = []
    for _ in range(50):
        # the same negatives every epoch: a fixed toy set to memorise
        res = train_epoch(model, data, tc, opt, np.random.default_rng(1))
        assert all(np.isfinite(r.loss) for r in res)
        losses.append(res[0].loss)
    assert losses[-1] < 0.1
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_non_finite_loss_aborts_with_batch():
    data = toy_stream()
    model = build_model(TINY, data)
    model.decoder.mlp.layers[-1].bias.data = np.array([np.inf])
    with pytest.raises(TrainingError, match="batch starting at event 0"):
        train_epoch(model, data, TrainConfig(batch_size=5), Adam(model.parameters()), np.random.default_rng(0))


def test_batch_results_are_finite(small_data):
    model = build_model(TINY, small_data)
    res = train_epoch(model, small_data, TrainConfig(batch_size=50), Adam(model.parameters()),
                      np.random.default_rng(0))
    assert len(res) == int(np.ceil(len(small_data.train) / 50))
    assert all(np.isfinite(r.loss) and r.wall >= 0 for r in res)


def test_stream_data_needs_one_negative_per_event():
    data = toy_stream()
    with pytest.raises(ValueError):
        StreamData(data.train, data.train, data.val, data.node_features, data.train_universe,
                   np.zeros(3, int), np.zeros(0, int))


# train loop ----------------------------------------------------------------------------------


def test_patience_zero_runs_one_epoch(small_data):
    model = build_model(TINY, small_data)
    h = train(model, small_data, TrainConfig(batch_size=50, epochs=5, patience=0))
    assert len(h.epochs) == 1 and h.best_epoch == 0


def test_equal_seeds_equal_metrics(small_data):
    cfg = TrainConfig(batch_size=50, epochs=2, seed=4)
    runs = []
    for _ in range(2):
        model = build_model(TINY, small_data)
        h = train(model, small_data, cfg)
        runs.append(([(e.train_loss, e.val_auc, e.val_ap) for e in h.epochs],
                     stream_scores(model, small_data, 50)["test"]))
    assert runs[0][0] == runs[1][0]
    assert np.array_equal(runs[0][1][0], runs[1][1][0], equal_nan=True)


def test_checkpoint_reload_reproduces_val_ap(small_data, tmp_path):
    cfg = TrainConfig(batch_size=50, epochs=3, seed=2)
    model = build_model(TINY, small_data)
    h = train(model, small_data, cfg, checkpoint_dir=tmp_path)
    fresh = build_model(TINY, small_data)
    header = restore(fresh, tmp_path / "best.npz", cfg)
    assert header["epoch"] == h.best_epoch
    pos, neg = small_data.scored("val", *stream_scores(fresh, small_data, cfg.batch_size, score_test=False)["val"])
    from tgnef.training import _metrics
    assert _metrics(pos, neg)[1] == h.best_val_ap == h.epochs[h.best_epoch].val_ap


def test_history_jsonl(small_data, tmp_path):
    import json
    model = build_model(TINY, small_data)
    h = train(model, small_data, TrainConfig(batch_size=50, epochs=2))
    h.write_jsonl(tmp_path / "h.jsonl", "abc")
    rows = [json.loads(x) for x in (tmp_path / "h.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [0, 1] and all(r["config_hash"] == "abc" for r in rows)
    assert all("wall" not in r for r in rows)
    times = [json.loads(x) for x in (tmp_path / "h.timings.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in times] == [0, 1] and all(r["seconds"] >= 0 for r in times)


def test_evaluation_scores_before_storing(small_data):
    # a val event must not reach memory before it is scored: the first val events score the
    # same whether or not the rest of the val stream exists
    model = build_model(TINY, small_data)
    full = stream_scores(model, small_data, 10, score_test=False)["val"][0]
    cut = small_data.val.select(np.arange(20))
    short = StreamData(small_data.train, cut, small_data.test, small_data.node_features,
                       small_data.train_universe, small_data.val_neg[:20], small_data.test_neg,
                       small_data.val_score[:20], small_data.test_score)
    part = stream_scores(model, short, 10, score_test=False)["val"][0]
    assert np.isfinite(part).any()
    assert np.array_equal(full[:20], part, equal_nan=True)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(patience=-1)
