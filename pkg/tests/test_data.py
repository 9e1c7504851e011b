import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import bellman_ford

from topotraj.data import (
    GridGraph,
    RawRecord,
    TrajectoryDataset,
    assemble_trajectories,
    crossroads_environment,
    filter_border_crossing,
    generate_synthetic,
    parse_trajectory_csv,
    resample_uniform,
    split_dataset,
    toy_environment,
)
from topotraj.errors import EmptyFile, MissingColumn
from topotraj.topology import Environment, Point2, Trajectory, h_signature

EMPTY = Environment((0, 0), (10, 10))


# -- CSV ---------------------------------------------------------------


def test_parse_atc_row_in_millimetres(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1351046400.5,12,−1000,2500,1700,0.5,0.1,0.2\n")
    res = parse_trajectory_csv(p)
    assert res.records == [RawRecord(1351046400.5, 12, Point2(-1.0, 2.5))]
    assert res.skipped == 0


def test_header_only_file_is_empty(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("time,id,x,y\n")
    with pytest.raises(EmptyFile):
        parse_trajectory_csv(p)
    (tmp_path / "z.csv").write_text("")
    with pytest.raises(EmptyFile):
        parse_trajectory_csv(tmp_path / "z.csv")


def test_malformed_rows_skipped_and_counted(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("time,id,x,y\n0,1,0,0\n1,1,oops,0\n2,1,100,0\n3,1,200,0\n")
    res = parse_trajectory_csv(p)
    assert len(res.records) == 3
    assert res.skipped == 1


def test_named_columns_and_missing_column(tmp_path):
    p = tmp_path / "n.csv"
    p.write_text("pid,px,py,stamp\n4,1.5,2.5,10\n")
    res = parse_trajectory_csv(p, {"time": "stamp", "id": "pid", "x": "px", "y": "py"}, unit_scale=1.0)
    assert res.records == [RawRecord(10.0, 4, Point2(1.5, 2.5))]
    with pytest.raises(MissingColumn):
        parse_trajectory_csv(p, {"time": "t", "id": "pid", "x": "px", "y": "py"})
    with pytest.raises(MissingColumn):
        parse_trajectory_csv(p, {"time": 0, "id": 1, "x": 2, "y": 9})


# -- assembly ----------------------------------------------------------


def recs(pid, times):
    return [RawRecord(float(t), pid, Point2(float(t), 0.0)) for t in times]


def test_single_monotone_track():
    trajs = assemble_trajectories(recs(3, range(10)))
    assert len(trajs) == 1 and len(trajs[0]) == 10


def test_gap_splits_track():
    trajs = assemble_trajectories(recs(3, [0, 1, 2, 62, 63]), gap_threshold_s=5)
    assert [len(t) for t in trajs] == [3, 2]


def test_min_points_drops_short_pieces():
    assert assemble_trajectories(recs(1, [0, 100]), gap_threshold_s=5, min_points=2) == []


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_grouping_invariant_under_shuffle(seed):
    rng = np.random.default_rng(seed)
    records = []
    for pid in range(4):
        times = np.sort(rng.choice(200, size=15, replace=False))
        records += recs(pid, times)
    shuffled = records[:]
    random.Random(seed).shuffle(shuffled)
    a, b = assemble_trajectories(records, 20), assemble_trajectories(shuffled, 20)
    assert [t.id for t in a] == [t.id for t in b]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.points, y.points)


# -- filtering and resampling -------------------------------------------


def line(a, b, n=5):
    return Trajectory.from_points(np.linspace(a, b, n))


def test_border_filter():
    through = line((0, 5), (10, 5))
    stops = line((0, 5), (5, 5))
    assert filter_border_crossing([through, stops], EMPTY, 0.1) == [through]


def test_border_filter_keep_rate_half():
    good = [line((0, y), (10, y)) for y in np.linspace(1, 9, 10)]
    bad = [line((0, y), (6, y)) for y in np.linspace(1, 9, 10)]
    kept = filter_border_crossing(good + bad, EMPTY, 0.1)
    assert len(kept) / 20 == 0.5


def test_border_filter_rejects_excursions():
    out = Trajectory.from_points([(0, 5), (5, 12), (10, 5)])
    assert filter_border_crossing([out], EMPTY, 0.1) == []


def test_resample_identity_on_uniform():
    t = line((0, 0), (4, 2), n=6)
    r = resample_uniform(t, 6)
    np.testing.assert_allclose(r.points, t.points, atol=1e-12)
    np.testing.assert_allclose(r.timestamps, t.timestamps, atol=1e-12)


def test_resample_midpoint():
    t = Trajectory([(0, 0), (4, 2)], [0, 2])
    np.testing.assert_allclose(resample_uniform(t, 3).points[1], [2, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=2, max_size=20), st.integers(2, 100))
def test_resample_endpoints_and_length(pts, T):
    traj = Trajectory.from_points(pts, dt=0.3)
    r = resample_uniform(traj, T)
    assert len(r) == T
    np.testing.assert_array_equal(r.points[0], traj.points[0])
    np.testing.assert_array_equal(r.points[-1], traj.points[-1])
    assert np.all(np.diff(r.timestamps) > 0)


# -- grid graph and generation ---------------------------------------------


def test_grid_has_no_node_in_obstacle():
    env = toy_environment()
    g = GridGraph(env, 0.25)
    free_pts = g.positions[g.free]
    for o in env.obstacles:
        xs = [p.x for p in o.polygon]
        ys = [p.y for p in o.polygon]
        strictly = (
            (free_pts[:, 0] > min(xs)) & (free_pts[:, 0] < max(xs))
            & (free_pts[:, 1] > min(ys)) & (free_pts[:, 1] < max(ys))
        )
        assert not strictly.any()
    rows, cols = g.adjacency.nonzero()
    assert g.free[rows].all() and g.free[cols].all()


def test_disc_obstacles_when_no_polygon():
    env = Environment.from_dict({"boundary": {"min": [0, 0], "max": [10, 10]}, "obstacles": [{"id": 1, "center": [5, 5]}]})
    g = GridGraph(env, 0.5, obstacle_radius=2.0)
    d = np.linalg.norm(g.positions[g.free] - [5, 5], axis=1)
    assert d.min() > 2.0


def test_straight_row_path_in_empty_environment():
    g = GridGraph(EMPTY, 1.0)
    cost, nodes = g.shortest_path(g.index(0, 4), g.index(10, 4))
    assert cost == pytest.approx(10.0)
    np.testing.assert_allclose(g.positions[nodes][:, 1], 4.0)


def test_dijkstra_cost_matches_bellman_ford():
    env = Environment.from_dict(
        {
            "boundary": {"min": [0, 0], "max": [9, 9]},
            "obstacles": [{"id": 1, "center": [4.5, 4.5], "polygon": [[3, 2], [6, 2], [6, 7], [3, 7]]}],
        }
    )
    g = GridGraph(env, 1.0)
    ref = bellman_ford(g.adjacency, directed=False)
    rng = np.random.default_rng(0)
    free = np.flatnonzero(g.free)
    for _ in range(30):
        s, t = rng.choice(free, 2, replace=False)
        cost, nodes = g.shortest_path(int(s), int(t))
        assert cost == pytest.approx(ref[s, t], abs=1e-9)
        steps = np.linalg.norm(np.diff(g.positions[nodes], axis=0), axis=1)
        assert steps.sum() == pytest.approx(cost, abs=1e-9)


def test_toy_generator_class_set_and_labels():
    env = toy_environment()
    ds = generate_synthetic(env, 0.25, 150, seed=3)
    assert set(ds.labels) <= {(), (1,), (1, 2)}
    assert len(set(ds.labels)) == 3
    ds.validate()
    for t in ds.trajectories:
        assert env.on_boundary(t.points[0], 1e-9) and t.points[0][0] == 0.0
        assert t.points[-1][0] != 0.0
        assert np.all(np.diff(t.timestamps) > 0)


def test_generator_is_reproducible(tmp_path):
    env = crossroads_environment()
    a = generate_synthetic(env, 0.5, 40, seed=9)
    b = generate_synthetic(env, 0.5, 40, seed=9)
    a.save_jsonl(tmp_path / "a.jsonl")
    b.save_jsonl(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    c = generate_synthetic(env, 0.5, 40, seed=10)
    assert a.labels != c.labels or not np.array_equal(a.trajectories[0].points, c.trajectories[0].points)


def test_perturbed_paths_avoid_obstacles():
    env = toy_environment()
    ds = generate_synthetic(env, 0.25, 30, seed=4, noise_std=0.1)
    g = GridGraph(env, 0.25)
    for t in ds.trajectories:
        for a, b in zip(t.points[:-1], t.points[1:]):
            assert g.segment_free(a, b)


def test_crossroads_has_at_least_three_classes():
    ds = generate_synthetic(crossroads_environment(), 0.5, 200, seed=0)
    assert len(set(ds.labels)) >= 3


# -- splitting and storage --------------------------------------------------


def small_dataset(n=10):
    trajs = [line((0, 1 + 0.5 * i), (10, 1 + 0.5 * i)) for i in range(n)]
    return TrajectoryDataset.labelled(trajs, EMPTY)


def test_split_sizes_and_determinism():
    ds = small_dataset()
    tr, te = split_dataset(ds, 0.8, seed=1)
    assert (len(tr), len(te)) == (8, 2)
    tr2, _ = split_dataset(ds, 0.8, seed=1)
    assert [t.points[0, 1] for t in tr.trajectories] == [t.points[0, 1] for t in tr2.trajectories]
    ys = sorted(t.points[0, 1] for t in tr.trajectories + te.trajectories)
    assert ys == sorted(t.points[0, 1] for t in ds.trajectories)
    assert len(tr.labels) == 8


def test_split_rejects_bad_fraction():
    with pytest.raises(ValueError):
        split_dataset(small_dataset(), 1.0)


def test_jsonl_roundtrip(tmp_path):
    ds = generate_synthetic(toy_environment(), 0.5, 5, seed=0)
    ds.save_jsonl(tmp_path / "d.jsonl")
    back = TrajectoryDataset.load_jsonl(tmp_path / "d.jsonl", ds.environment)
    assert back.labels == ds.labels
    for a, b in zip(ds.trajectories, back.trajectories):
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.timestamps, b.timestamps)
        assert a.id == b.id


def test_resampled_dataset_relabels_and_stacks():
    ds = generate_synthetic(toy_environment(), 0.25, 20, seed=2)
    r = ds.resampled(16)
    assert r.matrix().shape == (20, 32)
    assert sum(len(v) for v in r.by_class().values()) == 20
    for t, h in zip(r.trajectories, r.labels):
        assert h_signature(t, r.environment) == h
