"""Trajectory ingestion, preprocessing and synthetic corpora.

Synthetic trajectories are lattice shortest paths from the left boundary
to a random point on any other boundary, with interior waypoints jittered
and the h-signature recomputed on the final polyline.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from matplotlib.path import Path as MplPath
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import Disconnected, EmptyFile, MissingColumn
from .topology import Environment, Obstacle, Point2, Trajectory, Word, h_signature

log = logging.getLogger(__name__)

MM = 0.001
DEFAULT_COLUMNS = {"time": 0, "id": 1, "x": 2, "y": 3}
DEFAULT_T = 80
DEFAULT_OBSTACLE_RADIUS = 1.0


# -- ingestion -----------------------------------------------------------


@dataclass(frozen=True)
class RawRecord:
    time: float
    person_id: int
    position: Point2


@dataclass(frozen=True)
class ParseResult:
    records: list[RawRecord]
    skipped: int


def _num(s: str) -> float:
    return float(s.strip().replace("−", "-"))


def parse_trajectory_csv(
    path, column_map: Mapping[str, int | str] | None = None, unit_scale: float = MM
) -> ParseResult:
    """Read ``time, id, x, y`` records from a CSV log.

    ``column_map`` maps each of ``time``, ``id``, ``x``, ``y`` to a column
    index or header name.  A first row whose mapped fields are all
    non-numeric is treated as a header.  Rows that fail to parse are
    skipped and counted.
    """
    cmap = dict(DEFAULT_COLUMNS if column_map is None else column_map)
    missing = {"time", "id", "x", "y"} - set(cmap)
    if missing:
        raise MissingColumn(f"column_map lacks {sorted(missing)}")
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFile(f"{path} is empty")

    def looks_like_header(row):
        vals = [row[i] for i in cmap.values() if isinstance(i, int) and i < len(row)]
        if any(isinstance(i, str) for i in cmap.values()):
            return True
        try:
            [_num(v) for v in vals]
        except ValueError:
            return all(not _parses(v) for v in vals)
        return False

    header = rows[0] if looks_like_header(rows[0]) else None
    body = rows[1:] if header is not None else rows
    idx = {}
    for key, col in cmap.items():
        if isinstance(col, str):
            names = [h.strip() for h in header] if header else []
            if col not in names:
                raise MissingColumn(f"column {col!r} not in header of {path}")
            idx[key] = names.index(col)
        else:
            idx[key] = int(col)
    if not body:
        raise EmptyFile(f"{path} has no data rows")
    width = max(idx.values()) + 1
    if len(body[0]) < width:
        raise MissingColumn(f"{path} has {len(body[0])} columns, need {width}")

    records, skipped = [], 0
    for row in body:
        try:
            t, pid = _num(row[idx["time"]]), _num(row[idx["id"]])
            x, y = _num(row[idx["x"]]) * unit_scale, _num(row[idx["y"]]) * unit_scale
        except (ValueError, IndexError):
            skipped += 1
            continue
        if not all(map(math.isfinite, (t, pid, x, y))) or pid != int(pid):
            skipped += 1
            continue
        records.append(RawRecord(t, int(pid), Point2(x, y)))
    if skipped:
        log.info("skipped %d malformed rows in %s", skipped, path)
    return ParseResult(records, skipped)


def _parses(v: str) -> bool:
    try:
        _num(v)
        return True
    except ValueError:
        return False


def assemble_trajectories(
    records: Iterable[RawRecord], gap_threshold_s: float = 5.0, min_points: int = 2
) -> list[Trajectory]:
    """Group records by person, sort by time and split at long gaps.

    Repeated timestamps keep the first record.  Output is ordered by
    person id, then time.
    """
    if gap_threshold_s <= 0:
        raise ValueError("gap_threshold_s must be positive")
    by_id: dict[int, list[RawRecord]] = defaultdict(list)
    for r in records:
        by_id[r.person_id].append(r)
    out = []
    for pid in sorted(by_id):
        # sort on the full record so shuffled duplicates resolve the same way
        recs = sorted(by_id[pid], key=lambda r: (r.time, r.position))
        pieces, cur = [], []
        for r in recs:
            if cur and r.time == cur[-1].time:
                continue
            if cur and r.time - cur[-1].time > gap_threshold_s:
                pieces.append(cur)
                cur = []
            cur.append(r)
        pieces.append(cur)
        pieces = [p for p in pieces if len(p) >= min_points]
        for k, piece in enumerate(pieces):
            tid = str(pid) if len(pieces) == 1 else f"{pid}-{k}"
            out.append(Trajectory([r.position for r in piece], [r.time for r in piece], id=tid))
    return out


def filter_border_crossing(trajs: Iterable[Trajectory], env: Environment, tolerance: float) -> list[Trajectory]:
    """Keep trajectories that start and end at the boundary and stay inside."""
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    (x0, y0), (x1, y1) = env.min_corner, env.max_corner
    kept = []
    for tr in trajs:
        p = tr.points
        inside = np.all((p[:, 0] >= x0 - tolerance) & (p[:, 0] <= x1 + tolerance)
                        & (p[:, 1] >= y0 - tolerance) & (p[:, 1] <= y1 + tolerance))
        if inside and env.on_boundary(p[0], tolerance) and env.on_boundary(p[-1], tolerance):
            kept.append(tr)
    return kept


def resample_uniform(traj: Trajectory, T: int = DEFAULT_T) -> Trajectory:
    """Linear interpolation at ``T`` evenly spaced times over the span."""
    if T < 2:
        raise ValueError("T must be >= 2")
    if len(traj) < 2:
        raise ValueError("need at least two points to resample")
    ts = traj.timestamps
    new_t = np.linspace(ts[0], ts[-1], T)
    pts = np.column_stack([np.interp(new_t, ts, traj.points[:, k]) for k in range(2)])
    pts[0], pts[-1] = traj.points[0], traj.points[-1]
    new_t[-1] = ts[-1]
    return Trajectory(pts, new_t, id=traj.id)


# -- datasets ------------------------------------------------------------


@dataclass
class TrajectoryDataset:
    trajectories: list[Trajectory]
    environment: Environment
    labels: list[Word]

    def __post_init__(self):
        if len(self.trajectories) != len(self.labels):
            raise ValueError("labels and trajectories differ in length")
        self.labels = [tuple(int(a) for a in h) for h in self.labels]

    def __len__(self) -> int:
        return len(self.trajectories)

    @classmethod
    def labelled(cls, trajs: Sequence[Trajectory], env: Environment, **kw) -> "TrajectoryDataset":
        return cls(list(trajs), env, [h_signature(t, env, **kw) for t in trajs])

    def validate(self, **kw) -> None:
        for t, h in zip(self.trajectories, self.labels):
            got = h_signature(t, self.environment, **kw)
            if got != h:
                raise ValueError(f"trajectory {t.id}: label {h} but signature {got}")

    def subset(self, indices: Iterable[int]) -> "TrajectoryDataset":
        idx = list(indices)
        return TrajectoryDataset([self.trajectories[i] for i in idx], self.environment, [self.labels[i] for i in idx])

    def class_counts(self) -> dict[Word, int]:
        counts: dict[Word, int] = defaultdict(int)
        for h in self.labels:
            counts[h] += 1
        return dict(sorted(counts.items(), key=lambda kv: (len(kv[0]), kv[0])))

    def resampled(self, T: int = DEFAULT_T, relabel: bool = True) -> "TrajectoryDataset":
        trajs = [resample_uniform(t, T) for t in self.trajectories]
        if relabel:
            return TrajectoryDataset.labelled(trajs, self.environment, check_boundary=False)
        return TrajectoryDataset(trajs, self.environment, list(self.labels))

    def by_class(self) -> dict[Word, np.ndarray]:
        """Flattened ``(N_h, 2T)`` matrices per label; trajectories must share a length."""
        groups: dict[Word, list[np.ndarray]] = defaultdict(list)
        for t, h in zip(self.trajectories, self.labels):
            groups[h].append(t.points.reshape(-1))
        return {h: np.array(groups[h]) for h in sorted(groups, key=lambda w: (len(w), w))}

    def matrix(self) -> np.ndarray:
        return np.array([t.points.reshape(-1) for t in self.trajectories])

    def save_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for t, h in zip(self.trajectories, self.labels):
                doc = {
                    "id": t.id,
                    "t": t.timestamps.tolist(),
                    "x": t.points[:, 0].tolist(),
                    "y": t.points[:, 1].tolist(),
                    "h": list(h),
                }
                f.write(json.dumps(doc) + "\n")

    @classmethod
    def load_jsonl(cls, path, env: Environment) -> "TrajectoryDataset":
        trajs, labels = [], []
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                d = json.loads(line)
                trajs.append(Trajectory(np.column_stack([d["x"], d["y"]]), d["t"], id=d.get("id")))
                labels.append(tuple(d["h"]))
        return cls(trajs, env, labels)


def split_dataset(ds: TrajectoryDataset, train_fraction: float, seed: int = 0):
    """Seeded shuffle, then the first ``round(fraction * n)`` go to training."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(train_fraction * n))
    if n >= 2:
        k = min(max(k, 1), n - 1)
    return ds.subset(perm[:k].tolist()), ds.subset(perm[k:].tolist())


# -- grid graph ----------------------------------------------------------


@dataclass
class GridGraph:
    """8-connected lattice over free space, edges weighted by length.

    Lattice lines include both boundary sides, so the spacing is the
    requested resolution rounded to divide the domain evenly.
    """

    environment: Environment
    resolution: float
    obstacle_radius: float = DEFAULT_OBSTACLE_RADIUS

    def __post_init__(self):
        env = self.environment
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.nx = int(round(env.width / self.resolution)) + 1
        self.ny = int(round(env.height / self.resolution)) + 1
        self.xs = np.linspace(env.min_corner.x, env.max_corner.x, self.nx)
        self.ys = np.linspace(env.min_corner.y, env.max_corner.y, self.ny)
        self._polys = [MplPath(np.array(o.polygon)) for o in env.obstacles if o.polygon is not None]
        self._discs = np.array([o.center for o in env.obstacles if o.polygon is None]).reshape(-1, 2)
        gx, gy = np.meshgrid(self.xs, self.ys)
        self.positions = np.column_stack([gx.ravel(), gy.ravel()])
        self.free = self.is_free(self.positions)
        self.adjacency = self._build_edges()
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def index(self, ix: int, iy: int) -> int:
        return iy * self.nx + ix

    def is_free(self, pts: np.ndarray) -> np.ndarray:
        """Vectorised test: inside the domain and outside every obstacle."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        env = self.environment
        eps = 1e-9
        ok = ((pts[:, 0] >= env.min_corner.x - eps) & (pts[:, 0] <= env.max_corner.x + eps)
              & (pts[:, 1] >= env.min_corner.y - eps) & (pts[:, 1] <= env.max_corner.y + eps))
        for poly in self._polys:
            ok &= ~poly.contains_points(pts, radius=1e-9)
        for c in self._discs:
            ok &= np.sum((pts - c) ** 2, axis=1) > self.obstacle_radius**2
        return ok

    def segment_free(self, a, b, step: float | None = None) -> bool:
        step = self.resolution / 4 if step is None else step
        a, b = np.asarray(a, float), np.asarray(b, float)
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / step)) + 1)
        s = np.linspace(0.0, 1.0, n)[:, None]
        return bool(np.all(self.is_free(a + s * (b - a))))

    def _build_edges(self) -> csr_matrix:
        nx, ny = self.nx, self.ny
        ids = np.arange(nx * ny).reshape(ny, nx)
        rows, cols, w = [], [], []
        for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
            ys = slice(max(0, -dy), ny - max(0, dy))
            xs = slice(0, nx - dx)
            a = ids[ys, xs].ravel()
            b = ids[max(0, -dy) + dy : ny - max(0, dy) + dy, dx:nx].ravel()
            ok = self.free[a] & self.free[b]
            mid = 0.5 * (self.positions[a] + self.positions[b])
            ok &= self.is_free(mid)
            a, b = a[ok], b[ok]
            length = np.linalg.norm(self.positions[b] - self.positions[a], axis=1)
            rows += [a, b]
            cols += [b, a]
            w += [length, length]
        n = nx * ny
        return csr_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    def left_nodes(self) -> np.ndarray:
        idx = np.arange(self.ny) * self.nx
        return idx[self.free[idx]]

    def other_boundary_nodes(self) -> np.ndarray:
        """Free nodes on the bottom, top and right sides, excluding the left column."""
        nx, ny = self.nx, self.ny
        bottom = np.arange(1, nx)
        top = (ny - 1) * nx + np.arange(1, nx)
        right = np.arange(1, ny - 1) * nx + (nx - 1)
        idx = np.unique(np.concatenate([bottom, top, right]))
        return idx[self.free[idx]]

    def _from(self, start: int):
        if start not in self._cache:
            dist, pred = dijkstra(self.adjacency, directed=False, indices=start, return_predecessors=True)
            self._cache[start] = (dist, pred)
        return self._cache[start]

    def shortest_path(self, start: int, goal: int) -> tuple[float, list[int]]:
        """(cost, node list).  Raises Disconnected if ``goal`` is unreachable."""
        dist, pred = self._from(start)
        if not np.isfinite(dist[goal]):
            raise Disconnected(f"no path from node {start} to {goal}")
        path = [goal]
        while path[-1] != start:
            path.append(int(pred[path[-1]]))
        return float(dist[goal]), path[::-1]


def generate_synthetic(
    env: Environment,
    grid_resolution: float = 0.25,
    num_trajs: int = 500,
    seed: int = 0,
    noise_std: float | None = None,
    obstacle_radius: float = DEFAULT_OBSTACLE_RADIUS,
    speed: float = 1.0,
    max_retries: int = 50,
) -> TrajectoryDataset:
    """Dijkstra paths from the left boundary to any other boundary.

    Interior waypoints get isotropic Gaussian jitter (default std
    ``0.05 * grid_resolution``); a jittered point is reverted if it or
    either adjacent segment enters an obstacle.  Timestamps assume
    constant ``speed``.
    """
    graph = GridGraph(env, grid_resolution, obstacle_radius)
    noise_std = 0.05 * grid_resolution if noise_std is None else noise_std
    rng = np.random.default_rng(seed)
    starts, goals = graph.left_nodes(), graph.other_boundary_nodes()
    if len(starts) == 0 or len(goals) == 0:
        raise Disconnected("no free boundary nodes")
    trajs = []
    for k in range(num_trajs):
        for _ in range(max_retries):
            s, g = int(starts[rng.integers(len(starts))]), int(goals[rng.integers(len(goals))])
            try:
                _, nodes = graph.shortest_path(s, g)
                break
            except Disconnected:
                continue
        else:
            raise Disconnected(f"no connected endpoint pair after {max_retries} draws")
        pts = graph.positions[nodes].copy()
        jitter = rng.normal(scale=noise_std, size=pts.shape) if noise_std > 0 else np.zeros_like(pts)
        for i in range(1, len(pts) - 1):
            cand = pts[i] + jitter[i]
            if graph.is_free(cand)[0] and graph.segment_free(pts[i - 1], cand) and graph.segment_free(cand, pts[i + 1]):
                pts[i] = cand
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= 0):
            pts = graph.positions[nodes].copy()
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        t = np.concatenate([[0.0], np.cumsum(seg)]) / speed
        trajs.append(Trajectory(pts, t, id=f"syn-{k:05d}"))
    return TrajectoryDataset.labelled(trajs, env)


# -- reference environments ------------------------------------------------


def _rect(x0, y0, x1, y1) -> tuple[Point2, ...]:
    return (Point2(x0, y0), Point2(x1, y0), Point2(x1, y1), Point2(x0, y1))


def toy_environment() -> Environment:
    """Two obstacles; the first sits on the bottom wall so nothing passes under it.

    Left-to-boundary shortest paths fall into the classes (), (1) and (1, 2).
    """
    return Environment(
        (0.0, 0.0),
        (10.0, 10.0),
        (
            Obstacle(1, Point2(4.0, 1.5), _rect(3.0, 0.0, 5.0, 3.0)),
            Obstacle(2, Point2(6.5, 3.5), _rect(5.75, 2.5, 7.25, 4.5)),
        ),
    )


def crossroads_environment() -> Environment:
    """Two free-standing blocks in a square hall; paths can go over, under
    or between them."""
    return Environment(
        (0.0, 0.0),
        (20.0, 20.0),
        (
            Obstacle(1, Point2(7.0, 12.0), _rect(5.5, 10.0, 8.5, 14.0)),
            Obstacle(2, Point2(13.0, 8.0), _rect(11.5, 6.0, 14.5, 10.0)),
        ),
    )


ENVIRONMENTS = {"toy": toy_environment, "crossroads": crossroads_environment}
