import numpy as np
import pytest

from cityboost import syncity
from cityboost.roadgraph import Counter, Edge, Node, Point, RoadGraph, Supersegment


def make_graph(nodes, edges=(), supersegments=(), counters=()):
    """Build a RoadGraph from terse tuples.

    nodes: (id, x, y); edges: (id, start, end[, road_class]);
    supersegments: (id, [node ids]); counters: (id, x, y).
    """
    return RoadGraph(
        nodes={n[0]: Node(n[0], Point(n[1], n[2])) for n in nodes},
        edges={e[0]: Edge(e[0], e[1], e[2], e[3] if len(e) > 3 else 0) for e in edges},
        supersegments={s[0]: Supersegment(s[0], tuple(s[1])) for s in supersegments},
        counters={c[0]: Counter(c[0], Point(c[1], c[2])) for c in counters},
    )


@pytest.fixture(scope="session")
def small_world():
    """Desk-size synthetic world shared by read-only tests."""
    cfg = syncity.SynthConfig(
        seed=7,
        n_counters=10,
        n_nodes=30,
        n_edges=60,
        n_supersegments=5,
        n_weeks=5,
    )
    return syncity.generate(cfg)


@pytest.fixture(scope="session")
def rng():
    return np.random.Generator(np.random.PCG64(20220914))
