# modules/maxflow_solver.py
"""
s-t max-flow / min-cut for the binary graph cuts of alpha-expansion.

Two interchangeable backends share one small interface
(add_tedge/add_edge, maxflow, segment):

- FlowGraph: Dinic's augmenting-path algorithm in pure Python. Exact and
  dependency-free; used as the reference solver.
- PyMaxflowGraph: thin adapter over PyMaxflow (Boykov-Kolmogorov), much
  faster on image-sized graphs.

Segment convention (same as PyMaxflow): 0 = source side, 1 = sink side.
"""

import logging
import os
from collections import deque
from typing import List, Optional

import numpy as np

from utils.constants import DEFAULT_MAXFLOW_BACKEND, MAXFLOW_BACKENDS
from utils.errors import SatSolarError

logger = logging.getLogger(__name__)

SOURCE_SIDE = 0
SINK_SIDE = 1

# residual capacities at or below this are treated as saturated
_EPS = 1e-12


class FlowGraph:
    """
    Dinic max-flow on n user nodes plus an implicit source and sink.

    Terminal capacities are accumulated per node; the part common to the
    source and sink link is pushed up front, as PyMaxflow does.
    """

    def __init__(self, n_nodes: int):
        self.n_nodes = int(n_nodes)
        self._source_cap = np.zeros(self.n_nodes)
        self._sink_cap = np.zeros(self.n_nodes)
        self._edges: List[tuple] = []
        self._reachable: Optional[np.ndarray] = None
        self._flow: Optional[float] = None

    def add_tedge(self, node: int, cap_source: float, cap_sink: float) -> None:
        self._source_cap[node] += cap_source
        self._sink_cap[node] += cap_sink

    def add_tedges(self, nodes, caps_source, caps_sink) -> None:
        np.add.at(self._source_cap, np.asarray(nodes, dtype=np.int64), caps_source)
        np.add.at(self._sink_cap, np.asarray(nodes, dtype=np.int64), caps_sink)

    def add_edge(self, i: int, j: int, cap: float, rev_cap: float) -> None:
        if cap < 0 or rev_cap < 0:
            raise SatSolarError(f"edge capacities must be non-negative, got {cap}, {rev_cap}")
        self._edges.append((int(i), int(j), float(cap), float(rev_cap)))

    def add_edges(self, i_nodes, j_nodes, caps, rev_caps) -> None:
        for i, j, cap, rev in zip(i_nodes, j_nodes, caps, rev_caps):
            self.add_edge(i, j, cap, rev)

    def _build(self):
        n = self.n_nodes
        source, sink = n, n + 1
        head: List[List[int]] = [[] for _ in range(n + 2)]
        to: List[int] = []
        cap: List[float] = []

        def link(u, v, c_uv, c_vu):
            head[u].append(len(to))
            to.append(v)
            cap.append(c_uv)
            head[v].append(len(to))
            to.append(u)
            cap.append(c_vu)

        trivial = np.minimum(self._source_cap, self._sink_cap)
        source_cap = self._source_cap - trivial
        sink_cap = self._sink_cap - trivial
        for node in range(n):
            if source_cap[node] > 0:
                link(source, node, float(source_cap[node]), 0.0)
            if sink_cap[node] > 0:
                link(node, sink, float(sink_cap[node]), 0.0)
        for i, j, c, rc in self._edges:
            link(i, j, c, rc)
        return head, to, cap, float(trivial.sum())

    @staticmethod
    def _levels(head, to, cap, source, sink):
        level = [-1] * len(head)
        level[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for e in head[u]:
                v = to[e]
                if level[v] < 0 and cap[e] > _EPS:
                    level[v] = level[u] + 1
                    queue.append(v)
        return level

    def maxflow(self) -> float:
        """Compute the maximum flow; afterwards segment() reports the min cut."""
        head, to, cap, flow = self._build()
        source, sink = self.n_nodes, self.n_nodes + 1

        while True:
            level = self._levels(head, to, cap, source, sink)
            if level[sink] < 0:
                break
            it = [0] * len(head)
            while True:
                # walk one augmenting path in the level graph
                path: List[int] = []
                u = source
                while u != sink:
                    edges = head[u]
                    advanced = False
                    while it[u] < len(edges):
                        e = edges[it[u]]
                        if cap[e] > _EPS and level[to[e]] == level[u] + 1:
                            path.append(e)
                            u = to[e]
                            advanced = True
                            break
                        it[u] += 1
                    if advanced:
                        continue
                    if u == source:
                        break
                    level[u] = -1
                    e = path.pop()
                    u = to[e ^ 1]
                    it[u] += 1
                if u != sink:
                    break
                push = min(cap[e] for e in path)
                for e in path:
                    cap[e] -= push
                    cap[e ^ 1] += push
                flow += push

        final = self._levels(head, to, cap, source, sink)
        self._reachable = np.array([lv >= 0 for lv in final[: self.n_nodes]], dtype=bool)
        self._flow = flow
        return flow

    def segment(self, node: int) -> int:
        if self._reachable is None:
            raise SatSolarError("maxflow() must run before segment()")
        return SOURCE_SIDE if self._reachable[node] else SINK_SIDE

    def segments(self) -> np.ndarray:
        if self._reachable is None:
            raise SatSolarError("maxflow() must run before segments()")
        return np.where(self._reachable, SOURCE_SIDE, SINK_SIDE)


class PyMaxflowGraph:
    """Same interface as FlowGraph, backed by PyMaxflow."""

    def __init__(self, n_nodes: int):
        import maxflow

        self.n_nodes = int(n_nodes)
        self._graph = maxflow.Graph[float]()
        self._nodes = self._graph.add_nodes(self.n_nodes)

    def add_tedge(self, node: int, cap_source: float, cap_sink: float) -> None:
        self._graph.add_tedge(int(node), float(cap_source), float(cap_sink))

    def add_tedges(self, nodes, caps_source, caps_sink) -> None:
        self._graph.add_grid_tedges(
            np.asarray(nodes, dtype=np.int64),
            np.asarray(caps_source, dtype=np.float64),
            np.asarray(caps_sink, dtype=np.float64),
        )

    def add_edge(self, i: int, j: int, cap: float, rev_cap: float) -> None:
        self._graph.add_edge(int(i), int(j), float(cap), float(rev_cap))

    def add_edges(self, i_nodes, j_nodes, caps, rev_caps) -> None:
        for i, j, cap, rev in zip(i_nodes, j_nodes, caps, rev_caps):
            self._graph.add_edge(int(i), int(j), float(cap), float(rev))

    def maxflow(self) -> float:
        return float(self._graph.maxflow())

    def segment(self, node: int) -> int:
        return int(self._graph.get_segment(int(node)))

    def segments(self) -> np.ndarray:
        return np.asarray(self._graph.get_grid_segments(np.arange(self.n_nodes)), dtype=np.int64)


def pymaxflow_available() -> bool:
    try:
        import maxflow  # noqa: F401
    except ImportError:
        return False
    return True


def resolve_backend(backend: Optional[str] = None) -> str:
    """
    Pick the concrete solver: the explicit argument, else
    SATSOLAR_MAXFLOW_BACKEND, else the default. "auto" prefers PyMaxflow.
    """
    name = (backend or os.getenv("SATSOLAR_MAXFLOW_BACKEND") or DEFAULT_MAXFLOW_BACKEND).lower()
    if name not in MAXFLOW_BACKENDS:
        raise SatSolarError(f"unknown max-flow backend {name!r}, expected one of {MAXFLOW_BACKENDS}")
    if name == "auto":
        return "pymaxflow" if pymaxflow_available() else "dinic"
    if name == "pymaxflow" and not pymaxflow_available():
        raise SatSolarError("max-flow backend 'pymaxflow' requested but PyMaxflow is not installed")
    return name


def make_graph(n_nodes: int, backend: Optional[str] = None):
    """Create an empty flow graph for the resolved backend."""
    if resolve_backend(backend) == "pymaxflow":
        return PyMaxflowGraph(n_nodes)
    return FlowGraph(n_nodes)
