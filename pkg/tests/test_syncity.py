import numpy as np
import pytest

from cityboost import syncity
from cityboost.errors import InvalidConfig
from cityboost.pipeline import load_world
from cityboost.syncity import SynthConfig, generate, write_world


def test_determinism_bit_identical():
    cfg = SynthConfig(seed=123, n_counters=6, n_nodes=20, n_edges=40, n_supersegments=3, n_weeks=1)
    assert generate(cfg).equals(generate(cfg))


def test_different_seeds_differ():
    base = dict(n_counters=6, n_nodes=20, n_edges=40, n_supersegments=3, n_weeks=1)
    a = generate(SynthConfig(seed=1, **base))
    b = generate(SynthConfig(seed=2, **base))
    assert not np.array_equal(a.volumes.values, b.volumes.values)


def test_degenerate_config_constant_volumes():
    cfg = SynthConfig(seed=5, n_counters=4, n_nodes=10, n_edges=15, n_supersegments=2,
                      n_weeks=1, peak_amplitude=0.0, noise_sd=0.0)
    world = generate(cfg)
    assert np.all(world.volumes.values == world.volumes.values[:, :1])


def test_volume_shape_one_week():
    cfg = SynthConfig(seed=7, n_counters=10, n_nodes=25, n_edges=40, n_supersegments=3, n_weeks=1)
    world = generate(cfg)
    assert world.volumes.values.shape == (10, 672)


def test_invalid_config_rejected():
    with pytest.raises(InvalidConfig):
        SynthConfig(n_counters=0)
    with pytest.raises(InvalidConfig):
        SynthConfig(label_rate=0.0)
    with pytest.raises(InvalidConfig):
        # More supersegment edges than the edge budget allows.
        generate(SynthConfig(n_nodes=50, n_edges=1, n_supersegments=10))


def test_eta_is_sum_of_member_segment_times(small_world):
    w = small_world
    g = w.graph
    for sid, members in w.ss_member_edges.items():
        recomputed = np.zeros(w.etas.shape[1])
        for e in members:
            edge = g.edges[e]
            length = g.nodes[edge.start_node].position.distance_to(
                g.nodes[edge.end_node].position
            )
            recomputed += length / w.edge_speeds[e, :] * 3600.0
        np.testing.assert_allclose(w.etas[sid], recomputed, rtol=1e-12)
    assert np.all(w.etas > 0)


def test_supersegment_walks_are_edge_covered(small_world):
    g = small_world.graph
    pair_to_edge = {(e.start_node, e.end_node): e.id for e in g.edges.values()}
    for ss in g.supersegments.values():
        for a, b in zip(ss.nodes, ss.nodes[1:]):
            assert (a, b) in pair_to_edge


def test_peak_hours_louder_than_offpeak(small_world):
    T = small_world.volumes.n_slots
    peak = np.array([syncity.daypart_of_slot(t) == "peak" for t in range(T)])
    values = small_world.volumes.values
    assert values[:, peak].mean() > values[:, ~peak].mean()


def test_red_count_monotone_in_amplitude():
    base = dict(seed=11, n_counters=8, n_nodes=20, n_edges=40, n_supersegments=3,
                n_weeks=1, noise_sd=0.0)
    reds = []
    for amp in (100.0, 300.0, 500.0):
        w = generate(SynthConfig(peak_amplitude=amp, **base))
        reds.append(int((w.label_class[w.label_mask] == syncity.CLASS_RED).sum()))
    assert reds[0] <= reds[1] <= reds[2]


def test_label_subset_rate(small_world):
    rate = small_world.label_mask.mean()
    assert rate == pytest.approx(small_world.config.label_rate, rel=0.1)


def test_weekend_profile_differs():
    cfg = SynthConfig(seed=3, n_counters=5, n_nodes=12, n_edges=20, n_supersegments=2,
                      n_weeks=1, noise_sd=0.0)
    w = generate(cfg)
    spd = cfg.slots_per_day
    day_means = w.volumes.values.reshape(5, 7, spd).mean(axis=(0, 2))
    assert day_means[:5].mean() > day_means[5:].mean()


def test_csv_world_round_trip(tmp_path, small_world):
    write_world(small_world, tmp_path)
    loaded = load_world(tmp_path)
    assert loaded.graph == small_world.graph
    np.testing.assert_array_equal(loaded.volumes.values, small_world.volumes.values)
    assert loaded.volumes.observed.all()
    eid, ts, cls = loaded.labels
    seid, sts, scls = small_world.labels_records()
    np.testing.assert_array_equal(eid, seid)
    np.testing.assert_array_equal(ts, sts)
    np.testing.assert_array_equal(cls, scls)
    np.testing.assert_allclose(loaded.etas[2], small_world.eta_records()[2], atol=5e-7)
