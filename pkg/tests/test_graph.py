import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tgnef.graph import EventLog, GraphError, NodeFeatures, build


def random_log(rng, n_nodes, n_events, d_edge=0, tie_prob=0.0):
    src = rng.integers(0, n_nodes, n_events)
    dst = rng.integers(0, n_nodes, n_events)
    t = np.cumsum(np.where(rng.random(n_events) < tie_prob, 0.0, rng.uniform(0.1, 2.0, n_events)))
    return EventLog(src, dst, t, rng.normal(size=(n_events, d_edge)), n_nodes)


@st.composite
def logs(draw, max_nodes=10, max_events=40):
    n_nodes = draw(st.integers(2, max_nodes))
    n_events = draw(st.integers(0, max_events))
    seed = draw(st.integers(0, 2**31 - 1))
    return random_log(np.random.default_rng(seed), n_nodes, n_events, tie_prob=0.2)


# build ------------------------------------------------------------------------------


def test_empty_log_has_empty_lists():
    adj = build(EventLog([], [], [], np.zeros((0, 0)), 4))
    assert all(adj.degree(u) == 0 for u in range(4))


def test_single_event_listed_twice():
    adj = build(EventLog.from_events([(0, 1, 5.0)], 3))
    assert adj.neighbors_before(0, 6.0, 5)[0][:3] == (1, 5.0, 0)
    assert adj.neighbors_before(1, 6.0, 5)[0][:3] == (0, 5.0, 0)
    assert adj.degree(2) == 0


def test_build_rejects_bad_input():
    with pytest.raises(GraphError):
        EventLog([0], [5], [1.0], np.zeros((1, 0)), 3)
    with pytest.raises(GraphError):
        EventLog([0, 1], [1, 2], [2.0, 1.0], np.zeros((2, 0)), 3)


def test_from_events_breaks_ties_by_input_order():
    log = EventLog.from_events([(0, 1, 2.0), (1, 2, 1.0), (2, 0, 1.0)], 3)
    assert log.src.tolist() == [1, 2, 0]


# neighbors_before -------------------------------------------------------------------


def test_neighbors_before_no_history():
    adj = build(EventLog.from_events([(0, 1, 1.0)], 3))
    assert adj.neighbors_before(2, 10.0, 3) == []


def test_neighbors_before_is_strict():
    adj = build(EventLog.from_events([(0, 1, 1.0), (0, 2, 2.0), (0, 3, 3.0)], 4))
    got = adj.neighbors_before(0, 3.0, 5)
    assert [g[1] for g in got] == [1.0, 2.0]


def test_neighbors_before_unknown_node():
    adj = build(EventLog.from_events([(0, 1, 1.0)], 2))
    with pytest.raises(GraphError):
        adj.neighbors_before(7, 2.0, 1)


def test_chain_two_hop_matches_path_enumeration():
    log = EventLog.from_events([(0, 1, 1.0), (1, 2, 2.0)], 3)
    adj = build(log)
    for t in (1.0, 1.5, 2.5):
        edges = [(s, d) for s, d, tt in zip(log.src, log.dst, log.t) if tt < t]
        und = edges + [(d, s) for s, d in edges]
        reach = {b for a, b in und if a == 0}
        reach |= {c for a, b in und if a == 0 for b2, c in und if b2 == b}
        assert adj.khop_neighborhood(0, t, 2) == reach - {0}


# khop -------------------------------------------------------------------------------


def test_khop_isolated_node():
    adj = build(EventLog.from_events([(0, 1, 1.0)], 3))
    assert adj.khop_neighborhood(2, 5.0, 3) == set()


def test_khop_star_centre():
    adj = build(EventLog.from_events([(0, 1, 1.0), (2, 0, 2.0), (0, 3, 3.0), (0, 4, 4.0)], 5))
    assert adj.khop_neighborhood(0, 3.5, 1) == {1, 2, 3}


def _bfs_oracle(log, node, t, k):
    adjset = {u: set() for u in range(log.node_count)}
    for s, d, tt in zip(log.src.tolist(), log.dst.tolist(), log.t.tolist()):
        if tt < t:
            adjset[s].add(d)
            adjset[d].add(s)
    reach, frontier = {node}, {node}
    for _ in range(k):
        frontier = set().union(*(adjset[u] for u in frontier)) - reach if frontier else set()
        reach |= frontier
    return reach - {node}


@pytest.mark.parametrize("seed", range(10))
def test_khop_matches_bfs_oracle(seed):
    rng = np.random.default_rng(seed)
    log = random_log(rng, 12, 25)
    adj = build(log)
    for node, k in itertools.product(range(12), (1, 2, 3)):
        t = rng.uniform(0, log.t_max + 1)
        assert adj.khop_neighborhood(node, t, k) == _bfs_oracle(log, node, t, k)


# snapshot ---------------------------------------------------------------------------


def test_snapshot_bounds(rng):
    log = random_log(rng, 5, 30)
    assert len(log.snapshot_before(0.0)) == 0
    assert len(log.snapshot_before(log.t_max + 1)) == len(log)
    med = float(np.median(log.t))
    assert len(log.snapshot_before(med)) == sum(1 for x in log.t if x < med)


def test_node_feature_row_mismatch():
    with pytest.raises(GraphError):
        build(EventLog.from_events([(0, 1, 1.0)], 2), NodeFeatures(np.zeros((3, 1))))


# properties ------------------------------------------------------------------------


@given(logs(), st.floats(0, 100), st.integers(1, 6))
def test_neighbors_strictly_before(log, t, count):
    adj = build(log)
    for u in range(log.node_count):
        got = adj.neighbors_before(u, t, count)
        assert all(tt < t for _, tt, _, _ in got)
        expect = [i for i in range(len(log)) if log.t[i] < t and u in (log.src[i], log.dst[i])]
        # self-loops list twice under their node
        expect = [i for i in expect for _ in range(2 if log.src[i] == log.dst[i] == u else 1)]
        assert [e for _, _, e, _ in got] == expect[-count:]


@given(logs())
def test_adjacency_size_is_twice_events(log):
    adj = build(log)
    assert int(adj.degree(np.arange(log.node_count)).sum()) == 2 * len(log)
    for u in range(log.node_count):
        seg = adj.time[adj.indptr[u]:adj.indptr[u + 1]]
        assert np.all(np.diff(seg) >= 0)


@given(logs(), st.lists(st.floats(0, 100), min_size=2, max_size=6))
def test_neighbor_queries_independent_of_order(log, times):
    adj = build(log)
    node = 0
    first = [adj.neighbors_before(node, t, 3) for t in times]
    again = [adj.neighbors_before(node, t, 3) for t in reversed(times)][::-1]
    assert [[x[:3] for x in a] for a in first] == [[x[:3] for x in b] for b in again]


@given(logs(), st.integers(1, 5))
def test_recent_neighbors_distinct_and_causal(log, n):
    adj = build(log)
    nodes = np.arange(log.node_count)
    times = np.full(log.node_count, float(np.median(log.t)) if len(log) else 1.0)
    nbr, tm, pos, mask = adj.recent_neighbors(nodes, times, n)
    for q in range(len(nodes)):
        got = nbr[q][mask[q]].tolist()
        assert len(set(got)) == len(got)
        assert np.all(tm[q][mask[q]] < times[q])
        assert np.all(np.diff(tm[q][mask[q]]) <= 0)
