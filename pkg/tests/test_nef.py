import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tgnef import tensor as T
from tgnef.graph import EventLog, NodeFeatures, build
from tgnef.nef import NEFConfig, NEFGenerator, anonymize, cross_frequencies, positional_frequency
from tgnef.nn import TimeEncoder, grad_check
from tgnef.tensor import Tensor
from tgnef.walks import Walk, WalkConfig, WalkSet, WalkStep, sample_walk_set, sample_walks

from test_graph import logs, random_log


def walk_set(owner, paths, M, t=10.0):
    """Hand-built walk set; each path is a list of node ids, padded to M+1."""
    walks = []
    for path in paths:
        steps = [WalkStep(n, t - i, np.zeros(0), np.zeros(0), False) for i, n in enumerate(path)]
        steps += [WalkStep(path[-1], 0.0, np.zeros(0), np.zeros(0), True)] * (M + 1 - len(path))
        walks.append(Walk(t, tuple(steps)))
    return WalkSet(owner, t, tuple(walks))


def make_gen(cfg=None, d_node=0, d_edge=0, seed=0):
    cfg = cfg or NEFConfig(d_pos=4, d_time=3, d_hidden=3, walks=WalkConfig(K=4, M=2, seed=seed))
    return NEFGenerator(cfg, d_node, d_edge, np.random.default_rng(seed))


def graph(seed, n_nodes=30, n_events=120, d_node=2, d_edge=2):
    rng = np.random.default_rng(seed)
    log = random_log(rng, n_nodes, n_events, d_edge=d_edge)
    return log, NodeFeatures(rng.normal(size=(n_nodes, d_node)))


# positional frequency and anonymization --------------------------------------------


def test_positional_frequency_absent_node():
    S = walk_set(0, [[0, 1], [0, 2]], M=1)
    assert positional_frequency(9, S).tolist() == [0, 0]


def test_positional_frequency_enumeration():
    a, b, c = 0, 1, 2
    S = walk_set(a, [[a, b], [a, c]], M=1)
    assert positional_frequency(a, S).tolist() == [2, 0]
    assert positional_frequency(b, S).tolist() == [0, 1]
    assert positional_frequency(c, S).tolist() == [0, 1]


def test_padding_is_not_counted():
    S = walk_set(0, [[0], [0, 1]], M=2)
    assert positional_frequency(0, S).tolist() == [2, 0, 0]


def test_anonymize_disjoint_sets_have_zero_cross_counts():
    Si = walk_set(0, [[0, 1], [0, 2]], M=1)
    Sj = walk_set(5, [[5, 6], [5, 7]], M=1)
    ai, aj = anonymize(Si, Sj)
    assert all(not g2.any() for walk in ai for _, g2 in walk)
    assert all(not g2.any() for walk in aj for _, g2 in walk)


def test_anonymize_overlap_hand_case():
    # S_i: 0->1 twice; S_j: 1->0, 1 alone
    Si = walk_set(0, [[0, 1], [0, 1]], M=1)
    Sj = walk_set(1, [[1, 0], [1]], M=1)
    ai, aj = anonymize(Si, Sj)
    as_lists = lambda walk: [(g1.tolist(), g2.tolist()) for g1, g2 in walk]  # noqa: E731
    assert as_lists(ai[0]) == [([2, 0], [0, 1]), ([0, 2], [2, 0])]
    assert as_lists(aj[0]) == [([2, 0], [0, 2]), ([0, 1], [2, 0])]
    assert as_lists(aj[1]) == [([2, 0], [0, 2]), ([0, 0], [0, 0])]


def test_anonymize_requires_common_origin():
    with pytest.raises(ValueError):
        anonymize(walk_set(0, [[0]], 1, t=1.0), walk_set(1, [[1]], 1, t=2.0))


@given(logs(max_events=40), st.integers(0, 500))
def test_cross_frequencies_match_enumeration(log, seed):
    adj = build(log)
    cfg = WalkConfig(K=3, M=2, alpha=0.5, seed=seed)
    t = log.t_max + 1.0
    i, j = 0, 1
    Si, Sj = sample_walk_set(adj, i, t, cfg), sample_walk_set(adj, j, t, cfg)
    bi, bj = sample_walks(adj, [i], [t], cfg), sample_walks(adj, [j], [t], cfg)
    fast = cross_frequencies(bi.nodes, bj.nodes, bj.valid, log.node_count)[0]
    for k, walk in enumerate(Si.walks):
        for m, step in enumerate(walk.steps):
            assert fast[k, m].tolist() == positional_frequency(step.node, Sj).tolist()
    # counting identity
    L = cfg.M + 1
    nodes = {s.node for w in Si.walks for s in w.steps}
    totals = sum(positional_frequency(w, Si) for w in nodes)
    assert totals.tolist() == [sum(not w.steps[m].pad for w in Si.walks) for m in range(L)]


@given(st.lists(st.lists(st.integers(0, 5), min_size=1, max_size=3), min_size=2, max_size=4),
       st.lists(st.lists(st.integers(0, 5), min_size=1, max_size=3), min_size=2, max_size=4),
       st.permutations(range(6)))
def test_anonymize_is_relabel_invariant(pi_paths, pj_paths, perm):
    Si, Sj = walk_set(0, pi_paths, M=2), walk_set(1, pj_paths, M=2)
    relabel = lambda paths: [[perm[n] for n in p] for p in paths]  # noqa: E731
    a = anonymize(Si, Sj)
    b = anonymize(walk_set(0, relabel(pi_paths), M=2), walk_set(1, relabel(pj_paths), M=2))
    flat = lambda x: [(g1.tolist(), g2.tolist()) for side in x for w in side for g1, g2 in w]  # noqa: E731
    assert flat(a) == flat(b)


# time encoding ---------------------------------------------------------------------


def test_time_fourier_zero_is_ones():
    assert np.array_equal(TimeEncoder(5)(np.zeros(3)).data, np.ones((3, 5)))


@given(st.lists(st.floats(0, 1e7, allow_nan=False), min_size=1, max_size=8))
def test_time_fourier_bounded(dts):
    out = TimeEncoder(6)(np.array(dts)).data
    assert np.all(np.abs(out) <= 1.0)


def test_time_fourier_frequency_grad(rng):
    te = TimeEncoder(4)
    dt = rng.uniform(0, 5, 6)
    w = rng.normal(size=(6, 4))
    assert grad_check(lambda: (te(dt) * w).sum(), dict(te.named_parameters())).passed


def test_time_fourier_ladder():
    te = TimeEncoder(4)
    assert np.allclose(te.omega.data, [1.0 / 10 ** (k * 5 / 4) for k in range(4)], rtol=1e-15)


# step and walk encoders --------------------------------------------------------------


def test_encode_step_symmetric_counts_double():
    gen = make_gen()
    g = np.array([[1.0, 2.0, 0.0]])
    h = gen.encode_steps(g, g, np.zeros(1), np.zeros((1, 0)), np.ones(1, bool)).data
    single = gen.f1(Tensor(g)).data
    assert np.allclose(h[0, :4], 2 * single[0], rtol=1e-15, atol=0)


def test_encode_step_padding_and_shape():
    gen = make_gen(d_node=2, d_edge=3)
    g = np.ones((2, 3))
    h = gen.encode_steps(g, g, np.ones(2), np.ones((2, 5)), np.array([True, False])).data
    assert h.shape == (2, 4 + 3 + 5)
    assert not h[1].any()


def test_encode_walk_mean_single_step():
    gen = make_gen(NEFConfig(d_pos=2, d_time=2, encoder="mean", walks=WalkConfig(K=2, M=2)))
    h = np.random.default_rng(0).normal(size=(1, 3, gen.d_step))
    valid = np.array([[True, False, False]])
    assert np.array_equal(gen.encode_walks(Tensor(h), valid).data[0], h[0, 0])


def test_encode_walk_mean_ignores_padding():
    gen = make_gen(NEFConfig(d_pos=2, d_time=2, encoder="mean", walks=WalkConfig(K=2, M=2)))
    rng = np.random.default_rng(1)
    a = rng.normal(size=(1, 3, gen.d_step))
    b = a.copy()
    b[0, 2] = 7.0
    valid = np.array([[True, True, False]])
    assert np.array_equal(gen.encode_walks(Tensor(a), valid).data, gen.encode_walks(Tensor(b), valid).data)


def test_encode_walk_all_padded_is_zero():
    for enc in ("mean", "rnn"):
        gen = make_gen(NEFConfig(d_pos=2, d_time=2, d_hidden=2, encoder=enc, walks=WalkConfig(K=2, M=1)))
        out = gen.encode_walks(Tensor(np.ones((1, 2, gen.d_step))), np.zeros((1, 2), bool)).data
        assert not out.any()


def _lstm_scalar(W, U, b, xs):
    d = U.shape[0]
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
    h, c = [0.0] * d, [0.0] * d
    for x in xs:
        pre = [sum(x[i] * W[i, j] for i in range(len(x))) + sum(h[i] * U[i, j] for i in range(d)) + b[j]
               for j in range(4 * d)]
        c = [sig(pre[d + j]) * c[j] + sig(pre[j]) * math.tanh(pre[2 * d + j]) for j in range(d)]
        h = [sig(pre[3 * d + j]) * math.tanh(c[j]) for j in range(d)]
    return h


def test_encode_walk_bilstm_scalar_oracle():
    gen = make_gen(NEFConfig(d_pos=2, d_time=2, d_hidden=3, walks=WalkConfig(K=2, M=1)))
    rng = np.random.default_rng(3)
    for _, p in gen.named_parameters():
        p.data = rng.normal(size=p.data.shape) * 0.5
    xs = rng.normal(size=(2, gen.d_step))
    out = gen.encode_walks(Tensor(xs[None]), np.ones((1, 2), bool)).data[0]
    fwd = _lstm_scalar(gen.encoder.fwd.W.data, gen.encoder.fwd.U.data, gen.encoder.fwd.b.data, xs)
    bwd = _lstm_scalar(gen.encoder.bwd.W.data, gen.encoder.bwd.U.data, gen.encoder.bwd.b.data, xs[::-1])
    assert np.allclose(out, fwd + bwd, rtol=1e-12, atol=1e-14)


# full NEF ------------------------------------------------------------------------------


def test_cold_vector_for_isolated_pairs():
    log = EventLog.from_events([(0, 1, 1.0), (1, 2, 2.0)], 8)
    adj = build(log)
    gen = make_gen()
    out = gen(adj, [3, 5, 6], [4, 7, 3], [5.0, 9.0, 3.0]).data
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[0], out[2])


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("enc,agg", [("rnn", "mean"), ("mean", "attention")])
def test_nef_permutation_invariant(seed, enc, agg):
    log, nf = graph(seed)
    perm = np.random.default_rng(seed + 100).permutation(log.node_count)
    plog = EventLog(perm[log.src], perm[log.dst], log.t, log.edge_features, log.node_count)
    pnf = np.empty_like(nf.values)
    pnf[perm] = nf.values
    cfg = NEFConfig(d_pos=4, d_time=3, d_hidden=3, encoder=enc, aggregator=agg, walks=WalkConfig(K=4, M=2, seed=seed))
    gen = NEFGenerator(cfg, 2, 2, np.random.default_rng(seed))
    src, dst = np.arange(10), np.arange(10, 20)
    t = np.full(10, log.t_max * 0.8)
    a = gen(build(log, nf), src, dst, t).data
    b = gen(build(plog, NodeFeatures(pnf)), perm[src], perm[dst], t).data
    assert np.array_equal(a, b)


def test_identity_aggregation_is_mean_of_walk_encodings():
    log, nf = graph(7)
    adj = build(log, nf)
    gen = make_gen(NEFConfig(d_pos=4, d_time=3, d_hidden=3, walks=WalkConfig(K=5, M=2, seed=7)), 2, 2, 7)
    src, dst, t = np.array([1, 4]), np.array([2, 9]), np.array([60.0, 80.0])
    out = gen(adj, src, dst, t).data
    for p in range(2):
        wi = sample_walks(adj, src[p:p + 1], t[p:p + 1], gen.cfg.walks)
        wj = sample_walks(adj, dst[p:p + 1], t[p:p + 1], gen.cfg.walks)
        g_own, g_oth, dt, x, valid = gen.step_inputs(adj, wi, wj)
        encs = [gen.encode_walks(gen.encode_steps(g_own[0, k:k + 1], g_oth[0, k:k + 1], dt[0, k:k + 1],
                                                   x[0, k:k + 1], valid[0, k:k + 1]), valid[0, k:k + 1]).data[0]
                for k in range(10)]
        assert np.allclose(out[p], np.mean(encs, axis=0), rtol=1e-12, atol=1e-14)


def test_attention_aggregation_matches_manual():
    log, nf = graph(8)
    adj = build(log, nf)
    gen = make_gen(NEFConfig(d_pos=3, d_time=2, encoder="mean", aggregator="attention",
                             walks=WalkConfig(K=3, M=2, seed=8)), 2, 2, 8)
    t = np.array([log.t_max])
    out = gen(adj, [0], [1], t).data[0]
    wi, wj = sample_walks(adj, [0], t, gen.cfg.walks), sample_walks(adj, [1], t, gen.cfg.walks)
    g_own, g_oth, dt, x, valid = gen.step_inputs(adj, wi, wj)
    h = gen.encode_steps(g_own[0], g_oth[0], dt[0], x[0], valid[0]).data
    per = []
    for k in range(6):
        v = valid[0, k]
        enc = h[k][v].mean(axis=0)
        q = enc @ gen.q.weight.data
        keys, vals = h[k][v] @ gen.k.weight.data, h[k][v] @ gen.v.weight.data
        s = keys @ q / math.sqrt(gen.dim)
        w = np.exp(s - s.max())
        per.append((w / w.sum()) @ vals)
    assert np.allclose(out, np.mean(per, axis=0), rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("seed", range(4))
def test_nef_ignores_future_events(seed):
    log, nf = graph(seed, n_events=150)
    cut = log.t[100]
    past = log.select(np.arange(100))
    gen = make_gen(seed=seed, d_node=2, d_edge=2)
    src, dst = log.src[100:110], log.dst[100:110]
    t = np.full(10, cut)
    assert np.array_equal(gen(build(past, nf), src, dst, t).data, gen(build(log, nf), src, dst, t).data)


def test_nef_output_finite_and_fixed_width():
    log, nf = graph(9)
    gen = make_gen(d_node=2, d_edge=2)
    out = gen(build(log, nf), np.arange(30), np.roll(np.arange(30), 1), np.linspace(1, log.t_max, 30)).data
    assert out.shape == (30, gen.dim) and np.all(np.isfinite(out))


def test_nef_mean_identity_grad_check():
    log, nf = graph(10, n_nodes=6, n_events=16)
    adj = build(log, nf)
    gen = make_gen(NEFConfig(d_pos=3, d_time=2, encoder="mean", walks=WalkConfig(K=3, M=2, seed=1)), 2, 2, 1)
    rng = np.random.default_rng(0)
    for _, p in gen.named_parameters():
        p.data = p.data + rng.normal(0, 0.05, p.data.shape)
    w = rng.normal(size=(3, gen.dim))
    t = np.full(3, log.t_max + 0.5)
    rep = grad_check(lambda: (gen(adj, log.src[-3:], log.dst[-3:], t) * w).sum(), dict(gen.named_parameters()))
    assert rep.passed, str(rep)


def test_config_validation():
    with pytest.raises(ValueError):
        NEFConfig(d_pos=0)
    with pytest.raises(ValueError):
        NEFConfig(encoder="gru")
    with pytest.raises(ValueError):
        NEFConfig(aggregator="max")
