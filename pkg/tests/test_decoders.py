import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tgnef import tensor as T
from tgnef.decoders import EdgeDecoder, NodeDecoder, edge_probability, node_class_probs
from tgnef.nn import grad_check
from tgnef.tensor import Tensor


def test_zero_final_layer_gives_half(rng):
    dec = EdgeDecoder(4, rng)
    last = dec.mlp.layers[-1]
    last.weight.data = np.zeros_like(last.weight.data)
    last.bias.data = np.zeros_like(last.bias.data)
    for _ in range(5):
        assert edge_probability(dec, rng.normal(size=4), rng.normal(size=4)) == 0.5


@given(arrays(np.float64, 8, elements=st.floats(-1e3, 1e3)))
def test_edge_probability_open_interval(z):
    dec = EdgeDecoder(4, np.random.default_rng(0))
    p = edge_probability(dec, z[:4], z[4:])
    assert 0.0 < p < 1.0


def test_edge_decoder_is_order_dependent(rng):
    dec = EdgeDecoder(8, rng, dropout=0.0)
    a, b = rng.normal(size=8), rng.normal(size=8)
    assert edge_probability(dec, a, b) != edge_probability(dec, b, a)


def test_one_dimensional_hand_case(rng):
    dec = EdgeDecoder(1, rng, dropout=0.0)
    # hidden widths [1, 1]; set every layer so the net reduces to sigmoid(w.x + b) on positive inputs
    l1, l2, l3 = dec.mlp.layers
    l1.weight.data = np.array([[2.0], [-1.0]])
    l1.bias.data = np.array([0.5])
    l2.weight.data = np.array([[1.0]])
    l2.bias.data = np.array([0.0])
    l3.weight.data = np.array([[0.7]])
    l3.bias.data = np.array([-0.2])
    x_i, x_j = 1.5, 0.25
    h = max(2.0 * x_i - 1.0 * x_j + 0.5, 0.0)
    expect = 1.0 / (1.0 + np.exp(-(0.7 * h - 0.2)))
    assert edge_probability(dec, [x_i], [x_j]) == pytest.approx(expect, rel=1e-15)


def test_edge_decoder_dim_mismatch(rng):
    with pytest.raises(T.DimensionError):
        EdgeDecoder(4, rng)(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 4))))


def test_node_zero_logits_uniform(rng):
    dec = NodeDecoder(4, 3, rng)
    last = dec.mlp.layers[-1]
    last.weight.data = np.zeros_like(last.weight.data)
    assert np.allclose(node_class_probs(dec, rng.normal(size=4)), np.full(3, 1 / 3), rtol=1e-15)


def test_softmax_shift_invariance(rng):
    dec = NodeDecoder(4, 3, rng)
    z = rng.normal(size=4)
    p = node_class_probs(dec, z)
    dec.mlp.layers[-1].bias.data = dec.mlp.layers[-1].bias.data + 17.0
    assert np.allclose(node_class_probs(dec, z), p, rtol=1e-12)


def test_three_class_hand_softmax(rng):
    dec = NodeDecoder(2, 3, rng, dropout=0.0)
    z = Tensor(np.array([[0.3, -0.4]]))
    logits = dec.logits(z).data[0]
    e = np.exp(logits)
    assert np.allclose(dec(z).data[0], e / e.sum(), rtol=1e-14)


def test_node_decoder_dim_mismatch(rng):
    with pytest.raises(T.DimensionError):
        NodeDecoder(4, 2, rng)(Tensor(np.ones((1, 5))))


def test_binary_argmax_matches_sigmoid_threshold(rng):
    dec = NodeDecoder(3, 2, rng, dropout=0.0)
    z = Tensor(rng.normal(size=(200, 3)))
    lg = dec.logits(z).data
    p1 = 1.0 / (1.0 + np.exp(-(lg[:, 1] - lg[:, 0])))
    assert np.array_equal(dec(z).data.argmax(axis=1), (p1 > 0.5).astype(int))


@pytest.mark.parametrize("seed", range(5))
def test_decoders_grad_check(seed):
    rng = np.random.default_rng(seed)
    edec, ndec = EdgeDecoder(3, rng, dropout=0.0), NodeDecoder(3, 2, rng, dropout=0.0)
    for mod in (edec, ndec):
        for _, p in mod.named_parameters():
            p.data = p.data + rng.normal(0, 0.05, p.data.shape)
    a, b = Tensor(rng.normal(size=(4, 3)), True), Tensor(rng.normal(size=(4, 3)), True)
    y = rng.integers(0, 2, 4)
    assert grad_check(lambda: T.bce_with_logits(edec.logits(a, b), y), dict(edec.named_parameters()) | {"a": a}).passed
    assert grad_check(lambda: T.cross_entropy(ndec.logits(a), y), dict(ndec.named_parameters()) | {"a": a}).passed
