"""
Unit tests for the min-cut backends.

The Dinic solver is checked against brute-force enumeration of every s-t cut
on small random graphs; PyMaxflow (when installed) must agree with it.

Run with: pytest tests/test_maxflow_solver.py
"""

import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modules.maxflow_solver import (
    SINK_SIDE,
    SOURCE_SIDE,
    FlowGraph,
    PyMaxflowGraph,
    make_graph,
    pymaxflow_available,
    resolve_backend,
)
from utils.errors import SatSolarError


@st.composite
def small_graphs(draw):
    n = draw(st.integers(1, 5))
    caps = st.integers(0, 9)
    terminals = [(draw(caps), draw(caps)) for _ in range(n)]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edges = [(i, j, draw(caps), draw(caps)) for i, j in pairs if draw(st.booleans())]
    return n, terminals, edges


def cut_cost(sides, terminals, edges) -> float:
    cost = 0.0
    for node, (cap_source, cap_sink) in enumerate(terminals):
        cost += cap_source if sides[node] == SINK_SIDE else cap_sink
    for i, j, cap, rev in edges:
        if sides[i] == SOURCE_SIDE and sides[j] == SINK_SIDE:
            cost += cap
        if sides[j] == SOURCE_SIDE and sides[i] == SINK_SIDE:
            cost += rev
    return cost


def brute_force_min_cut(n, terminals, edges) -> float:
    return min(cut_cost(sides, terminals, edges) for sides in itertools.product((0, 1), repeat=n))


def build(graph, terminals, edges):
    for node, (cap_source, cap_sink) in enumerate(terminals):
        graph.add_tedge(node, cap_source, cap_sink)
    for i, j, cap, rev in edges:
        graph.add_edge(i, j, cap, rev)
    return graph


# ===================================================================
# TEST 1: Dinic against exhaustive enumeration
# ===================================================================

@settings(max_examples=150, deadline=None)
@given(small_graphs())
def test_dinic_matches_exhaustive_min_cut(graph_spec):
    n, terminals, edges = graph_spec
    graph = build(FlowGraph(n), terminals, edges)
    flow = graph.maxflow()
    best = brute_force_min_cut(n, terminals, edges)
    assert abs(flow - best) < 1e-9, f"max flow {flow} != min cut {best}"
    sides = [graph.segment(node) for node in range(n)]
    assert abs(cut_cost(sides, terminals, edges) - flow) < 1e-9, "reported partition must be a minimum cut"


def test_chain_example():
    """s -3-> 0 -2-> 1 -4-> t: bottleneck is the middle edge."""
    graph = FlowGraph(2)
    graph.add_tedge(0, 3.0, 0.0)
    graph.add_tedge(1, 0.0, 4.0)
    graph.add_edge(0, 1, 2.0, 0.0)
    assert graph.maxflow() == 2.0
    assert graph.segments().tolist() == [SOURCE_SIDE, SINK_SIDE]
    print("✅ test_chain_example")


def test_terminal_caps_accumulate():
    graph = FlowGraph(1)
    graph.add_tedges([0, 0], [1.0, 2.0], [5.0, 0.5])
    assert graph.maxflow() == 3.0
    print("✅ test_terminal_caps_accumulate")


def test_segment_before_maxflow_raises():
    graph = FlowGraph(2)
    with pytest.raises(SatSolarError):
        graph.segment(0)
    with pytest.raises(SatSolarError):
        graph.add_edge(0, 1, -1.0, 0.0)
    print("✅ test_segment_before_maxflow_raises")


# ===================================================================
# TEST 2: Backend selection
# ===================================================================

def test_resolve_backend(monkeypatch):
    monkeypatch.setenv("SATSOLAR_MAXFLOW_BACKEND", "dinic")
    assert resolve_backend() == "dinic"
    assert isinstance(make_graph(3), FlowGraph)
    with pytest.raises(SatSolarError):
        resolve_backend("simplex")
    monkeypatch.delenv("SATSOLAR_MAXFLOW_BACKEND")
    assert resolve_backend("auto") in ("dinic", "pymaxflow")
    print("✅ test_resolve_backend")


@pytest.mark.skipif(not pymaxflow_available(), reason="PyMaxflow not installed")
@settings(max_examples=60, deadline=None)
@given(small_graphs())
def test_pymaxflow_agrees_with_dinic(graph_spec):
    n, terminals, edges = graph_spec
    reference = build(FlowGraph(n), terminals, edges).maxflow()
    other = build(PyMaxflowGraph(n), terminals, edges).maxflow()
    assert abs(reference - other) < 1e-9, f"dinic {reference} vs pymaxflow {other}"


def test_pymaxflow_segments_shape():
    pytest.importorskip("maxflow")
    graph = PyMaxflowGraph(2)
    graph.add_tedges(np.array([0, 1]), np.array([3.0, 0.0]), np.array([0.0, 4.0]))
    graph.add_edges([0], [1], [2.0], [0.0])
    assert graph.maxflow() == 2.0
    assert graph.segments().tolist() == [SOURCE_SIDE, SINK_SIDE]
    print("✅ test_pymaxflow_segments_shape")


# ===================================================================
# RUN ALL TESTS
# ===================================================================

if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
