"""Static road-graph data model, CSV ingestion, and geometric derivations.

The graph is a plain container of nodes, directed edges, supersegments
(ordered node sequences between major intersections), and roadside
counters.  All distances are planar Euclidean in whatever unit the input
coordinates use; the unit only has to be consistent within one city.

CSV schemas (UTF-8, header row, comma-separated):

    nodes.csv         node_id,x,y
    edges.csv         edge_id,start_node,end_node,road_class
    supersegments.csv ss_id,node_seq      (node_seq is a ';'-joined id list)
    counters.csv      counter_id,x,y

A loaded graph is immutable in practice: nothing in the toolkit mutates
it after :func:`load_graph`, so it is safe to share across workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DanglingReference,
    DegenerateSupersegment,
    MissingFile,
    NoCounters,
    SchemaError,
)

# Relative slack used when detecting ties between floating-point distance
# sums; ties are then broken by the lowest id.
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise SchemaError(f"non-finite coordinate ({self.x}, {self.y})")

    def distance_to(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Node:
    id: int
    position: Point


@dataclass(frozen=True)
class Edge:
    id: int
    start_node: int
    end_node: int
    road_class: int = 0


@dataclass(frozen=True)
class Supersegment:
    id: int
    nodes: tuple[int, ...]


@dataclass(frozen=True)
class Counter:
    id: int
    position: Point


@dataclass
class RoadGraph:
    """Referentially consistent collections keyed by id."""

    nodes: dict[int, Node] = field(default_factory=dict)
    edges: dict[int, Edge] = field(default_factory=dict)
    supersegments: dict[int, Supersegment] = field(default_factory=dict)
    counters: dict[int, Counter] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()
        self._counter_cache: tuple[np.ndarray, np.ndarray] | None = None

    def validate(self) -> None:
        for edge in self.edges.values():
            if edge.start_node == edge.end_node:
                raise SchemaError(f"edge {edge.id} is a self-loop")
            for nid in (edge.start_node, edge.end_node):
                if nid not in self.nodes:
                    raise DanglingReference(
                        f"edge {edge.id} references unknown node {nid}"
                    )
        for ss in self.supersegments.values():
            if len(ss.nodes) < 2:
                raise DegenerateSupersegment(
                    f"supersegment {ss.id} has {len(ss.nodes)} node(s), need >= 2"
                )
            for a, b in zip(ss.nodes, ss.nodes[1:]):
                if a == b:
                    raise SchemaError(
                        f"supersegment {ss.id} repeats node {a} consecutively"
                    )
            for nid in ss.nodes:
                if nid not in self.nodes:
                    raise DanglingReference(
                        f"supersegment {ss.id} references unknown node {nid}"
                    )

    def counter_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(sorted counter ids, matching n x 2 position array), cached."""
        if self._counter_cache is None:
            ids = np.array(sorted(self.counters), dtype=np.int64)
            pos = np.array(
                [[self.counters[i].position.x, self.counters[i].position.y] for i in ids],
                dtype=np.float64,
            ).reshape(len(ids), 2)
            self._counter_cache = (ids, pos)
        return self._counter_cache

    def __eq__(self, other) -> bool:
        if not isinstance(other, RoadGraph):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and self.supersegments == other.supersegments
            and self.counters == other.counters
        )


def _read_rows(path: Path, expected_header: list[str]) -> list[list[str]]:
    if not path.exists():
        raise MissingFile(str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header {expected_header}")
        if header != expected_header:
            raise SchemaError(f"{path}: header {header} != expected {expected_header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(expected_header)} columns, got {len(row)}"
                )
            rows.append(row)
        return rows


def _parse_int(text: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise SchemaError(f"{where}: expected integer, got {text!r}")


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"{where}: expected number, got {text!r}")
    if not math.isfinite(value):
        raise SchemaError(f"{where}: non-finite value {text!r}")
    return value


def load_graph(
    node_file: str | Path,
    edge_file: str | Path,
    supersegment_file: str | Path,
    counter_file: str | Path,
) -> RoadGraph:
    """Load the four CSV files into a validated :class:`RoadGraph`."""
    nodes = {}
    for row in _read_rows(Path(node_file), ["node_id", "x", "y"]):
        nid = _parse_int(row[0], "node_id")
        if nid in nodes:
            raise SchemaError(f"duplicate node id {nid}")
        nodes[nid] = Node(nid, Point(_parse_float(row[1], "x"), _parse_float(row[2], "y")))

    edges = {}
    for row in _read_rows(Path(edge_file), ["edge_id", "start_node", "end_node", "road_class"]):
        eid = _parse_int(row[0], "edge_id")
        if eid in edges:
            raise SchemaError(f"duplicate edge id {eid}")
        edges[eid] = Edge(
            eid,
            _parse_int(row[1], "start_node"),
            _parse_int(row[2], "end_node"),
            _parse_int(row[3], "road_class") if row[3] != "" else 0,
        )

    supersegments = {}
    for row in _read_rows(Path(supersegment_file), ["ss_id", "node_seq"]):
        sid = _parse_int(row[0], "ss_id")
        if sid in supersegments:
            raise SchemaError(f"duplicate supersegment id {sid}")
        seq = tuple(_parse_int(part, "node_seq") for part in row[1].split(";") if part != "")
        supersegments[sid] = Supersegment(sid, seq)

    counters = {}
    for row in _read_rows(Path(counter_file), ["counter_id", "x", "y"]):
        cid = _parse_int(row[0], "counter_id")
        if cid in counters:
            raise SchemaError(f"duplicate counter id {cid}")
        counters[cid] = Counter(cid, Point(_parse_float(row[1], "x"), _parse_float(row[2], "y")))

    return RoadGraph(nodes=nodes, edges=edges, supersegments=supersegments, counters=counters)


def save_graph(graph: RoadGraph, out_dir: str | Path) -> None:
    """Write the graph back out in the load_graph CSV schemas.

    Coordinates are written with repr precision so load(save(g)) == g.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "x", "y"])
        for nid in sorted(graph.nodes):
            n = graph.nodes[nid]
            w.writerow([nid, repr(n.position.x), repr(n.position.y)])
    with open(out / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["edge_id", "start_node", "end_node", "road_class"])
        for eid in sorted(graph.edges):
            e = graph.edges[eid]
            w.writerow([eid, e.start_node, e.end_node, e.road_class])
    with open(out / "supersegments.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["ss_id", "node_seq"])
        for sid in sorted(graph.supersegments):
            w.writerow([sid, ";".join(str(n) for n in graph.supersegments[sid].nodes)])
    with open(out / "counters.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["counter_id", "x", "y"])
        for cid in sorted(graph.counters):
            c = graph.counters[cid]
            w.writerow([cid, repr(c.position.x), repr(c.position.y)])


def load_graph_dir(directory: str | Path) -> RoadGraph:
    """Convenience wrapper: load the four CSVs from one directory."""
    d = Path(directory)
    return load_graph(
        d / "nodes.csv", d / "edges.csv", d / "supersegments.csv", d / "counters.csv"
    )


def edge_representative_point(edge: Edge, graph: RoadGraph) -> Point:
    """An edge is represented by the position of its start node."""
    if edge.start_node not in graph.nodes:
        raise DanglingReference(f"edge {edge.id} start node {edge.start_node} not in graph")
    return graph.nodes[edge.start_node].position


def supersegment_geometry(
    ss: Supersegment, graph: RoadGraph
) -> tuple[Point, Point, Point, float]:
    """Return (medoid, start, end, length) for a supersegment.

    The medoid is the member node position minimizing the sum of Euclidean
    distances to the other member positions; sums within a 1e-12 relative
    band of the minimum count as tied and the lowest node id wins.  Length
    is the polyline length over consecutive member positions.
    """
    if len(ss.nodes) < 2:
        raise DegenerateSupersegment(f"supersegment {ss.id} has fewer than 2 nodes")
    positions = np.array(
        [[graph.nodes[n].position.x, graph.nodes[n].position.y] for n in ss.nodes],
        dtype=np.float64,
    )
    diffs = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diffs**2).sum(axis=2))
    sums = dist.sum(axis=1)
    best = sums.min()
    tied = np.flatnonzero(sums <= best + _TIE_RTOL * max(best, 1.0))
    medoid_pos = positions[min(tied, key=lambda i: ss.nodes[i])]
    medoid = Point(float(medoid_pos[0]), float(medoid_pos[1]))
    start = graph.nodes[ss.nodes[0]].position
    end = graph.nodes[ss.nodes[-1]].position
    length = float(np.sqrt(((positions[1:] - positions[:-1]) ** 2).sum(axis=1)).sum())
    return medoid, start, end, length


def nearest_counter(p: Point, graph: RoadGraph) -> int:
    """Id of the counter closest to p; ties go to the lowest counter id."""
    if not graph.counters:
        raise NoCounters("graph has no counters")
    ids, pos = graph.counter_arrays()
    d2 = (pos[:, 0] - p.x) ** 2 + (pos[:, 1] - p.y) ** 2
    return int(ids[int(np.argmin(d2))])


def nearest_counter_index(points: np.ndarray, graph: RoadGraph) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized nearest-counter lookup for an (n, 2) point array.

    Returns (index into the sorted counter-id axis, distance).  argmin picks
    the first minimum, which is the lowest id because ids are sorted.
    """
    if not graph.counters:
        raise NoCounters("graph has no counters")
    _, pos = graph.counter_arrays()
    d2 = ((points[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    return idx, np.sqrt(d2[np.arange(len(points)), idx])
