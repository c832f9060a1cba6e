"""Deterministic synthetic city and traffic generator.

Everything is a pure function of the config seed, driven by numpy's PCG64
generator (a named, portable 64-bit PRNG) with one spawned stream per
generation stage, so changing one knob never shifts the randomness of the
others.

The synthetic signal is built to resemble urban counter data: every
counter has a constant base level plus morning/evening peak bumps whose
relative height is counter-specific (some counters are morning-heavy,
some evening-heavy), damped on weekends.  The Gaussian noise term models
measurement error: reported counter volumes are the noisy, clipped,
rounded readings of a noise-free latent flow.  Latent edge speeds fall
as the latent volume at the nearest counter rises, the congestion class
thresholds the speed / free-flow ratio, and supersegment travel times
are the exact sum of their member segment travel times.  Congestion
labels are observed for a small random subset of (edge, slot) pairs;
speeds and travel times are dense.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .counterfeat import CounterMatrix
from .errors import InvalidConfig
from .roadgraph import (
    Counter,
    Edge,
    Node,
    Point,
    RoadGraph,
    Supersegment,
    nearest_counter_index,
    save_graph,
)

CLASS_GREEN, CLASS_YELLOW, CLASS_RED = 0, 1, 2
CLASS_NAMES = ("green", "yellow", "red")

GREEN_MIN_RATIO = 0.66
YELLOW_MIN_RATIO = 0.33

# Day profile (fractions of a day): two cosine-squared bumps.
MORNING_CENTER_FRAC = 8.0 / 24.0
EVENING_CENTER_FRAC = 18.0 / 24.0
PEAK_HALF_WIDTH_FRAC = 2.5 / 24.0
WEEKEND_FACTOR = 0.35

CITY_SIZE_KM = 10.0
BASE_VOLUME_RANGE = (60.0, 140.0)
AMPLITUDE_MULT_RANGE = (0.5, 1.5)
MORNING_SHARE_RANGE = (0.15, 0.85)
FREEFLOW_BY_CLASS = (35.0, 50.0, 70.0, 90.0)
# Speed falls linearly with nearby volume, hitting the floor at this load.
VOLUME_AT_STANDSTILL = 400.0
MIN_SPEED_KMH = 2.0


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_counters: int = 20
    n_nodes: int = 60
    n_edges: int = 120
    n_supersegments: int = 8
    n_weeks: int = 2
    slots_per_day: int = 96
    peak_amplitude: float = 400.0
    noise_sd: float = 60.0
    label_rate: float = 0.05

    def __post_init__(self):
        if self.n_counters < 1 or self.n_nodes < 2 or self.n_edges < 1:
            raise InvalidConfig("need >= 1 counter, >= 2 nodes, >= 1 edge")
        if self.n_supersegments < 1 or self.n_weeks < 1:
            raise InvalidConfig("need >= 1 supersegment and >= 1 week")
        if self.slots_per_day < 8:
            raise InvalidConfig("slots_per_day must be >= 8")
        if self.peak_amplitude < 0 or self.noise_sd < 0:
            raise InvalidConfig("peak_amplitude and noise_sd must be >= 0")
        if not 0 < self.label_rate <= 1:
            raise InvalidConfig("label_rate must be in (0, 1]")

    @property
    def n_slots(self) -> int:
        return self.n_weeks * 7 * self.slots_per_day


@dataclass(eq=False)
class SynthWorld:
    config: SynthConfig
    graph: RoadGraph
    volumes: CounterMatrix
    edge_ids: np.ndarray
    edge_speeds: np.ndarray
    label_mask: np.ndarray
    label_class: np.ndarray
    ss_ids: np.ndarray
    etas: np.ndarray
    ss_member_edges: dict[int, list[int]] = field(default_factory=dict)

    def equals(self, other: "SynthWorld") -> bool:
        return (
            self.config == other.config
            and self.graph == other.graph
            and np.array_equal(self.volumes.values, other.volumes.values)
            and np.array_equal(self.volumes.observed, other.volumes.observed)
            and np.array_equal(self.edge_speeds, other.edge_speeds)
            and np.array_equal(self.label_mask, other.label_mask)
            and np.array_equal(self.label_class[self.label_mask], other.label_class[other.label_mask])
            and np.array_equal(self.etas, other.etas)
            and self.ss_member_edges == other.ss_member_edges
        )

    def labels_records(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(edge_id, t, class) arrays for the observed label subset."""
        e_idx, t_idx = np.nonzero(self.label_mask)
        return self.edge_ids[e_idx], t_idx, self.label_class[e_idx, t_idx]

    def speed_records(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(edge_id, t, speed) arrays for the dense speed grid."""
        n_e, n_t = self.edge_speeds.shape
        return (
            np.repeat(self.edge_ids, n_t),
            np.tile(np.arange(n_t), n_e),
            self.edge_speeds.ravel(),
        )

    def eta_records(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ss_id, t, eta_seconds) arrays for the dense travel-time grid."""
        n_s, n_t = self.etas.shape
        return (
            np.repeat(self.ss_ids, n_t),
            np.tile(np.arange(n_t), n_s),
            self.etas.ravel(),
        )


def weekpart_of_slot(t: int, slots_per_day: int = 96) -> str:
    day = (t // slots_per_day) % 7
    return "weekend" if day >= 5 else "weekday"


def daypart_of_slot(t: int, slots_per_day: int = 96) -> str:
    d = t % slots_per_day
    half = PEAK_HALF_WIDTH_FRAC * slots_per_day
    for frac in (MORNING_CENTER_FRAC, EVENING_CENTER_FRAC):
        if abs(d - frac * slots_per_day) <= half:
            return "peak"
    return "offpeak"


def _day_profile(slots_per_day: int) -> np.ndarray:
    """(2, slots_per_day) morning and evening cosine-squared bumps in [0, 1]."""
    d = np.arange(slots_per_day, dtype=np.float64)
    half = PEAK_HALF_WIDTH_FRAC * slots_per_day
    out = np.zeros((2, slots_per_day))
    for row, frac in enumerate((MORNING_CENTER_FRAC, EVENING_CENTER_FRAC)):
        offset = d - frac * slots_per_day
        inside = np.abs(offset) <= half
        out[row, inside] = np.cos(0.5 * np.pi * offset[inside] / half) ** 2
    return out


def _generate_graph(cfg: SynthConfig, rng: np.random.Generator):
    positions = rng.uniform(0.0, CITY_SIZE_KM, size=(cfg.n_nodes, 2))
    nodes = {i: Node(i, Point(float(x), float(y))) for i, (x, y) in enumerate(positions)}

    # Supersegment walks over distinct nodes; their consecutive pairs must
    # exist as edges, created here first so every walk is edge-covered.
    max_len = min(6, cfg.n_nodes)
    ss_nodes: list[tuple[int, ...]] = []
    edge_pairs: list[tuple[int, int]] = []
    pair_set: set[tuple[int, int]] = set()
    for _ in range(cfg.n_supersegments):
        length = int(rng.integers(2, max_len + 1)) if max_len > 2 else 2
        walk = tuple(int(n) for n in rng.choice(cfg.n_nodes, size=length, replace=False))
        ss_nodes.append(walk)
        for a, b in zip(walk, walk[1:]):
            if (a, b) not in pair_set:
                pair_set.add((a, b))
                edge_pairs.append((a, b))
    if len(edge_pairs) > cfg.n_edges:
        raise InvalidConfig(
            f"supersegments require {len(edge_pairs)} edges but n_edges={cfg.n_edges}"
        )
    while len(edge_pairs) < cfg.n_edges:
        a = int(rng.integers(cfg.n_nodes))
        b = int(rng.integers(cfg.n_nodes))
        if a == b or (a, b) in pair_set:
            continue
        pair_set.add((a, b))
        edge_pairs.append((a, b))

    road_classes = rng.integers(0, len(FREEFLOW_BY_CLASS), size=cfg.n_edges)
    edges = {
        i: Edge(i, a, b, int(road_classes[i])) for i, (a, b) in enumerate(edge_pairs)
    }
    supersegments = {i: Supersegment(i, walk) for i, walk in enumerate(ss_nodes)}
    counter_pos = rng.uniform(0.0, CITY_SIZE_KM, size=(cfg.n_counters, 2))
    counters = {
        i: Counter(i, Point(float(x), float(y))) for i, (x, y) in enumerate(counter_pos)
    }
    graph = RoadGraph(nodes=nodes, edges=edges, supersegments=supersegments, counters=counters)
    pair_to_edge = {pair: i for i, pair in enumerate(edge_pairs)}
    member_edges = {
        sid: [pair_to_edge[(a, b)] for a, b in zip(walk, walk[1:])]
        for sid, walk in enumerate(ss_nodes)
    }
    return graph, member_edges


def generate(config: SynthConfig) -> SynthWorld:
    """Build the full synthetic world for a config; bit-reproducible."""
    streams = np.random.SeedSequence(config.seed).spawn(5)
    graph_rng, profile_rng, noise_rng, speed_rng, label_rng = (
        np.random.Generator(np.random.PCG64(s)) for s in streams
    )

    graph, member_edges = _generate_graph(config, graph_rng)
    k, T = config.n_counters, config.n_slots
    spd = config.slots_per_day

    base = profile_rng.uniform(*BASE_VOLUME_RANGE, size=k)
    amp_mult = profile_rng.uniform(*AMPLITUDE_MULT_RANGE, size=k)
    morning_share = profile_rng.uniform(*MORNING_SHARE_RANGE, size=k)

    bumps = _day_profile(spd)
    slot_of_day = np.arange(T) % spd
    day_index = (np.arange(T) // spd) % 7
    weekend = day_index >= 5
    week_factor = np.where(weekend, WEEKEND_FACTOR, 1.0)

    profile = (
        morning_share[:, None] * bumps[0][slot_of_day][None, :]
        + (1.0 - morning_share[:, None]) * bumps[1][slot_of_day][None, :]
    )
    latent = (
        base[:, None]
        + config.peak_amplitude * amp_mult[:, None] * profile * week_factor[None, :]
    )
    noise = noise_rng.standard_normal((k, T))
    values = np.rint(np.maximum(latent + config.noise_sd * noise, 0.0))
    slot_index = np.column_stack([np.arange(T) // (7 * spd), np.arange(T) % (7 * spd)])
    volumes = CounterMatrix(values=values, counter_ids=np.arange(k), slot_index=slot_index)

    # Latent edge speeds: free flow scaled down by the nearby latent flow
    # (the physical traffic; the reported counter value measures it with
    # error).
    edge_ids = np.arange(config.n_edges)
    start_pos = np.array(
        [
            [graph.nodes[graph.edges[e].start_node].position.x,
             graph.nodes[graph.edges[e].start_node].position.y]
            for e in edge_ids
        ]
    )
    near_idx, _ = nearest_counter_index(start_pos, graph)
    ff_base = np.array([FREEFLOW_BY_CLASS[graph.edges[e].road_class] for e in edge_ids])
    freeflow = ff_base * speed_rng.uniform(0.9, 1.1, size=config.n_edges)
    local_volume = latent[near_idx, :]
    edge_speeds = np.maximum(
        MIN_SPEED_KMH, freeflow[:, None] * (1.0 - local_volume / VOLUME_AT_STANDSTILL)
    )

    ratio = edge_speeds / freeflow[:, None]
    label_class = np.where(
        ratio >= GREEN_MIN_RATIO, CLASS_GREEN, np.where(ratio >= YELLOW_MIN_RATIO, CLASS_YELLOW, CLASS_RED)
    ).astype(np.int8)
    label_mask = label_rng.random((config.n_edges, T)) < config.label_rate

    # Supersegment travel time = exact sum of member segment times.
    lengths = np.zeros(config.n_edges)
    for e in edge_ids:
        edge = graph.edges[e]
        lengths[e] = graph.nodes[edge.start_node].position.distance_to(
            graph.nodes[edge.end_node].position
        )
    ss_ids = np.arange(config.n_supersegments)
    etas = np.zeros((config.n_supersegments, T))
    for sid in ss_ids:
        members = member_edges[int(sid)]
        etas[sid] = (lengths[members, None] / edge_speeds[members, :]).sum(axis=0) * 3600.0

    return SynthWorld(
        config=config,
        graph=graph,
        volumes=volumes,
        edge_ids=edge_ids,
        edge_speeds=edge_speeds,
        label_mask=label_mask,
        label_class=label_class,
        ss_ids=ss_ids,
        etas=etas,
        ss_member_edges=member_edges,
    )


def write_world(world: SynthWorld, out_dir: str | Path) -> None:
    """Export the world as the CSV bundle consumed by the pipeline."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(world.graph, out)

    k, T = world.volumes.values.shape
    pd.DataFrame(
        {
            "counter_id": np.repeat(world.volumes.counter_ids, T),
            "t": np.tile(np.arange(T), k),
            "volume": world.volumes.values.ravel().astype(np.int64),
        }
    ).to_csv(out / "volumes.csv", index=False)

    eid, lt, lc = world.labels_records()
    pd.DataFrame({"edge_id": eid, "t": lt, "class": lc}).to_csv(
        out / "labels_cc.csv", index=False
    )

    sid, st, sv = world.speed_records()
    pd.DataFrame({"edge_id": sid, "t": st, "speed": sv}).to_csv(
        out / "speeds.csv", index=False, float_format="%.6f"
    )

    gid, gt, gv = world.eta_records()
    pd.DataFrame({"ss_id": gid, "t": gt, "eta": gv}).to_csv(
        out / "eta.csv", index=False, float_format="%.6f"
    )

    meta = {
        "seed": world.config.seed,
        "n_weeks": world.config.n_weeks,
        "slots_per_day": world.config.slots_per_day,
        "n_slots": world.config.n_slots,
        "label_rate": world.config.label_rate,
        "peak_amplitude": world.config.peak_amplitude,
        "noise_sd": world.config.noise_sd,
    }
    (out / "world_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
