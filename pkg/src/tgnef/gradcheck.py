"""Finite-difference checks for every trainable block on a 6-node fixture."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .decoders import EdgeDecoder, NodeDecoder
from .graph import EventLog, NodeFeatures, build
from .nef import NEFConfig, NEFGenerator
from .nn import MLP, BiLSTM, GRUCell, GradCheckReport, Linear, LSTMCell, TimeEncoder, grad_check
from .tensor import Tensor
from .tgn import TGN, EmbeddingConfig, ModelConfig
from .walks import WalkConfig


def fixture(seed: int, n_nodes: int = 6, n_events: int = 16, d_edge: int = 2, d_node: int = 2):
    """Small random event log with node and edge features."""
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n_nodes, n_events)
    dst = (src + rng.integers(1, n_nodes, n_events)) % n_nodes
    t = np.cumsum(rng.uniform(0.5, 1.5, n_events))
    log = EventLog(src, dst, t, rng.normal(size=(n_events, d_edge)), n_nodes)
    return log, NodeFeatures(rng.normal(size=(n_nodes, d_node)))


def _params(module) -> dict[str, Tensor]:
    return dict(module.named_parameters())


def _jitter(module, rng: np.random.Generator, scale: float = 0.05) -> None:
    """Move parameters off the zero-bias init, where ReLU kinks sit exactly at 0."""
    for _, p in module.named_parameters():
        p.data = p.data + rng.normal(0.0, scale, p.data.shape)


def _leaf(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _scalar(out: Tensor, w: np.ndarray) -> Tensor:
    # random projection so every output coordinate matters
    return (out * w).sum()


def check_blocks(seed: int, max_elems: int = 4, tol: float = 1e-4) -> dict[str, GradCheckReport]:
    """Grad-check each block and the full NEF+TGN forward pass for one seed."""
    rng = np.random.default_rng(seed)
    probe = np.random.default_rng(seed + 10_000)
    reports = {}

    def run(name, module, fn, extra=None):
        if module is not None:
            _jitter(module, rng)
        inputs = _params(module) if module is not None else {}
        inputs.update(extra or {})
        reports[name] = grad_check(fn, inputs, tol=tol, max_elems=max_elems, rng=probe)

    x = _leaf(rng, (3, 4))
    lin = Linear(4, 3, rng)
    w3 = rng.normal(size=(3, 3))
    run("linear", lin, lambda: _scalar(lin(x), w3), {"x": x})

    mlp = MLP([4, 5, 2], rng)
    w2 = rng.normal(size=(3, 2))
    run("mlp", mlp, lambda: _scalar(mlp(x), w2), {"x": x})

    gru = GRUCell(4, 3, rng)
    h = _leaf(rng, (3, 3))
    run("gru", gru, lambda: _scalar(gru(x, h), w3), {"x": x, "h": h})

    lstm = LSTMCell(4, 3, rng)
    c = _leaf(rng, (3, 3))
    run("lstm_cell", lstm, lambda: _scalar(lstm(x, (h, c))[0] + lstm(x, (h, c))[1], w3), {"x": x})

    bi = BiLSTM(4, 3, rng)
    seq = _leaf(rng, (2, 3, 4))
    mask = np.array([[True, True, False], [True, True, True]])
    w6 = rng.normal(size=(2, 6))
    run("bilstm", bi, lambda: _scalar(bi(seq, mask), w6), {"seq": seq})

    te = TimeEncoder(4)
    dt = rng.uniform(0, 3, size=5)
    w54 = rng.normal(size=(5, 4))
    run("time_encoder", te, lambda: _scalar(te(dt), w54))

    q = _leaf(rng, (2, 4))
    k = _leaf(rng, (2, 3, 4))
    v = _leaf(rng, (2, 3, 2))
    amask = np.array([[True, True, False], [True, True, True]])
    w22 = rng.normal(size=(2, 2))
    run("attention", None, lambda: _scalar(T.masked_attention(q, k, v, amask)[0], w22), {"q": q, "k": k, "v": v})

    za, zb = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    edec = EdgeDecoder(4, rng, dropout=0.0)
    wv = rng.normal(size=3)
    run("edge_decoder", edec, lambda: _scalar(edec(za, zb), wv), {"z_i": za})
    ndec = NodeDecoder(4, 3, rng, dropout=0.0)
    run("node_decoder", ndec, lambda: _scalar(ndec(za), w3), {"z": za})

    log, nf = fixture(seed)
    adj = build(log, nf)
    pairs_t = np.full(3, log.t[-1] + 0.5)
    src, dst = log.src[-3:], log.dst[-3:]
    for enc, agg in (("rnn", "mean"), ("mean", "attention")):
        cfg = NEFConfig(d_pos=3, d_time=3, d_hidden=3, encoder=enc, aggregator=agg,
                        walks=WalkConfig(K=3, M=2, seed=seed))
        gen = NEFGenerator(cfg, nf.dim, log.edge_feature_dim, rng)
        wn = rng.normal(size=(3, gen.dim))
        run(f"nef_{enc}_{agg}", gen, lambda gen=gen, wn=wn: _scalar(gen(adj, src, dst, pairs_t), wn))

    reports["tgn_full"] = check_full_model(seed, max_elems=max_elems, tol=tol)
    return reports


def check_full_model(seed: int, max_elems: int = 4, tol: float = 1e-4) -> GradCheckReport:
    """Loss of one batch through flush, NEF messages, NEF attention, 2 hops and decoder."""
    log, nf = fixture(seed)
    cfg = ModelConfig(
        embedding=EmbeddingConfig(d_mem=4, d_emb=4, d_time=3, n_neighbors=3, hops=2),
        nef=NEFConfig(d_pos=3, d_time=3, d_hidden=3, walks=WalkConfig(K=3, M=2, seed=seed)),
        dropout=0.0, seed=seed)
    model = TGN(cfg, log.node_count, nf.dim, log.edge_feature_dim).attach(build(log, nf))
    model.eval()
    _jitter(model, np.random.default_rng(seed + 1))
    cut = len(log) - 4
    neg = (log.dst[cut:] + 1) % log.node_count
    labels = np.r_[np.ones(4), np.zeros(4)]

    def loss() -> Tensor:
        model.reset_state()
        model.store_events(log.src[:cut], log.dst[:cut], log.t[:cut], log.edge_features[:cut])
        pos, negl = model.forward_batch(log.src[cut:], log.dst[cut:], log.t[cut:], neg)
        return T.bce_with_logits(T.concat([pos, negl]), labels)

    return grad_check(loss, _params(model), tol=tol, max_elems=max_elems, rng=np.random.default_rng(seed))
