"""Planar environments, ray-crossing words and h-signatures.

Each obstacle emits a vertical ray upwards from its centre.  Following a
path and writing ``+i`` whenever it crosses ray ``i`` left-to-right and
``-i`` right-to-left gives a word; cancelling adjacent ``(i, -i)`` pairs
gives the h-signature, which identifies the path's homotopy class.

Words are plain tuples of nonzero ints, e.g. ``(1, -2)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

from .errors import BoundaryViolation, InvalidEnvironment

Word = tuple[int, ...]

# Endpoint tolerance, as a fraction of the larger boundary side.
BOUNDARY_TOL_FRAC = 0.01


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Obstacle:
    id: int
    center: Point2
    polygon: tuple[Point2, ...] | None = None


@dataclass(frozen=True)
class Ray:
    """Vertical ray pointing in +y from an obstacle centre."""

    obstacle_id: int
    origin: Point2


@dataclass(frozen=True)
class Environment:
    """Axis-aligned rectangular domain with point-centred obstacles.

    Obstacle ids must be ``1..n`` and centre x-coordinates pairwise
    distinct, so that the rays never intersect.
    """

    min_corner: Point2
    max_corner: Point2
    obstacles: tuple[Obstacle, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "min_corner", Point2(*map(float, self.min_corner)))
        object.__setattr__(self, "max_corner", Point2(*map(float, self.max_corner)))
        obstacles = tuple(sorted(self.obstacles, key=lambda o: o.id))
        object.__setattr__(self, "obstacles", obstacles)
        (x0, y0), (x1, y1) = self.min_corner, self.max_corner
        if not all(np.isfinite([x0, y0, x1, y1])) or not (x0 < x1 and y0 < y1):
            raise InvalidEnvironment(f"degenerate boundary {self.min_corner} .. {self.max_corner}")
        ids = [o.id for o in obstacles]
        if ids != list(range(1, len(ids) + 1)):
            raise InvalidEnvironment(f"obstacle ids must be 1..n without gaps, got {ids}")
        for o in obstacles:
            cx, cy = o.center
            if not (x0 < cx < x1 and y0 < cy < y1):
                raise InvalidEnvironment(f"obstacle {o.id} centre {o.center} not strictly inside boundary")
        xs = [o.center.x for o in obstacles]
        if len(set(xs)) != len(xs):
            raise InvalidEnvironment("obstacle centres share an x-coordinate; rays would coincide")

    @property
    def n_obstacles(self) -> int:
        return len(self.obstacles)

    @property
    def width(self) -> float:
        return self.max_corner.x - self.min_corner.x

    @property
    def height(self) -> float:
        return self.max_corner.y - self.min_corner.y

    @property
    def rays(self) -> tuple[Ray, ...]:
        return tuple(Ray(o.id, o.center) for o in self.obstacles)

    def alphabet(self) -> tuple[int, ...]:
        n = self.n_obstacles
        return tuple(range(1, n + 1)) + tuple(range(-1, -n - 1, -1))

    def boundary_tolerance(self, frac: float = BOUNDARY_TOL_FRAC) -> float:
        return frac * max(self.width, self.height)

    def contains(self, point, tol: float = 0.0) -> bool:
        """True if ``point`` lies in the boundary rectangle grown by ``tol``."""
        x, y = point
        (x0, y0), (x1, y1) = self.min_corner, self.max_corner
        return x0 - tol <= x <= x1 + tol and y0 - tol <= y <= y1 + tol

    def on_boundary(self, point, tol: float) -> bool:
        """True if ``point`` is within ``tol`` of the boundary rectangle."""
        if not self.contains(point, tol):
            return False
        x, y = point
        (x0, y0), (x1, y1) = self.min_corner, self.max_corner
        strictly_inside = x0 + tol < x < x1 - tol and y0 + tol < y < y1 - tol
        return not strictly_inside

    # -- serialisation -------------------------------------------------

    def to_dict(self) -> dict:
        obstacles = []
        for o in self.obstacles:
            d = {"id": o.id, "center": [o.center.x, o.center.y]}
            if o.polygon is not None:
                d["polygon"] = [[p.x, p.y] for p in o.polygon]
            obstacles.append(d)
        return {
            "boundary": {"min": list(self.min_corner), "max": list(self.max_corner)},
            "obstacles": obstacles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        try:
            b = d["boundary"]
            obstacles = []
            for o in d.get("obstacles", []):
                poly = o.get("polygon")
                obstacles.append(
                    Obstacle(
                        id=int(o["id"]),
                        center=Point2(*map(float, o["center"])),
                        polygon=None if poly is None else tuple(Point2(*map(float, p)) for p in poly),
                    )
                )
            return cls(Point2(*b["min"]), Point2(*b["max"]), tuple(obstacles))
        except (KeyError, TypeError) as exc:
            raise InvalidEnvironment(f"malformed environment document: {exc!r}") from exc

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Environment":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped planar polyline.

    ``points`` has shape ``(T, 2)`` in meters and ``timestamps`` shape
    ``(T,)`` in seconds, strictly increasing.  Arrays are made read-only.
    """

    points: np.ndarray
    timestamps: np.ndarray
    id: str | None = field(default=None, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        ts = np.array(self.timestamps, dtype=float).reshape(-1)
        if len(pts) != len(ts):
            raise ValueError(f"{len(pts)} points but {len(ts)} timestamps")
        if len(pts) < 1:
            raise ValueError("trajectory needs at least one point")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(ts))):
            raise ValueError("non-finite trajectory values")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        pts.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "timestamps", ts)

    @classmethod
    def from_points(cls, points, dt: float = 1.0, id: str | None = None) -> "Trajectory":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(pts, dt * np.arange(len(pts)), id=id)

    def __len__(self) -> int:
        return len(self.points)

    def reversed(self) -> "Trajectory":
        ts = self.timestamps
        return Trajectory(self.points[::-1], (ts[-1] - ts)[::-1], id=self.id)

    def prefix(self, k: int) -> "Trajectory":
        return Trajectory(self.points[:k], self.timestamps[:k], id=self.id)


def _as_points(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.points
    return np.asarray(traj, dtype=float).reshape(-1, 2)


def crossing_letter(segment_start, segment_end, ray: Ray) -> int | None:
    """Signed letter for a single segment crossing ``ray``, or None.

    A point counts as right of the ray when ``x >= ray.origin.x``; a
    crossing is a change of side with the interpolated y at or above the
    ray origin.
    """
    sx, sy = segment_start
    ex, ey = segment_end
    ox, oy = ray.origin
    s_right = sx >= ox
    e_right = ex >= ox
    if s_right == e_right:
        return None
    y_at = sy + (ox - sx) * (ey - sy) / (ex - sx)
    if y_at < oy:
        return None
    return ray.obstacle_id if e_right else -ray.obstacle_id


def compute_word(traj, env: Environment) -> Word:
    """Unreduced crossing word of a trajectory (or ``(T, 2)`` array).

    Letters are in path order; several crossings inside one segment are
    ordered by where along the segment they happen.
    """
    pts = _as_points(traj)
    if len(pts) < 2 or env.n_obstacles == 0:
        return ()
    ox = np.array([o.center.x for o in env.obstacles])
    oy = np.array([o.center.y for o in env.obstacles])
    ids = np.array([o.id for o in env.obstacles])

    xs, ys = pts[:-1, 0], pts[:-1, 1]
    xe, ye = pts[1:, 0], pts[1:, 1]
    s_right = xs[:, None] >= ox[None, :]
    e_right = xe[:, None] >= ox[None, :]
    seg, r = np.nonzero(s_right != e_right)
    if len(seg) == 0:
        return ()
    sx, sy, ex, ey = xs[seg], ys[seg], xe[seg], ye[seg]
    y_at = sy + (ox[r] - sx) * (ey - sy) / (ex - sx)
    keep = y_at >= oy[r]
    seg, r, sx, ex = seg[keep], r[keep], sx[keep], ex[keep]
    u = (ox[r] - sx) / (ex - sx)
    letters = np.where(e_right[seg, r], ids[r], -ids[r])
    order = np.lexsort((u, seg))
    return tuple(int(a) for a in letters[order])


def reduce_word(word: Iterable[int]) -> Word:
    """Free reduction: cancel adjacent ``(a, -a)`` pairs until none remain."""
    stack: list[int] = []
    for a in word:
        if stack and stack[-1] == -a:
            stack.pop()
        else:
            stack.append(a)
    return tuple(stack)


def is_reduced(word: Sequence[int]) -> bool:
    return all(word[i] != -word[i + 1] for i in range(len(word) - 1))


def invert_word(word: Sequence[int]) -> Word:
    """Word of the reversed path: reversed order, negated letters."""
    return tuple(-a for a in reversed(word))


def h_signature(
    traj,
    env: Environment,
    check_boundary: bool = True,
    boundary_tol_frac: float = BOUNDARY_TOL_FRAC,
) -> Word:
    """Reduced h-signature of a boundary-to-boundary trajectory.

    Raises:
        BoundaryViolation: if ``check_boundary`` and either endpoint is
            further than ``boundary_tol_frac`` of the domain size from the
            boundary.
    """
    pts = _as_points(traj)
    if check_boundary:
        tol = env.boundary_tolerance(boundary_tol_frac)
        for name, p in (("start", pts[0]), ("end", pts[-1])):
            if not env.on_boundary(p, tol):
                raise BoundaryViolation(f"trajectory {name} {tuple(p)} is not on the boundary (tol {tol:g})")
    return reduce_word(compute_word(pts, env))


def partial_h_signature(prefix, env: Environment) -> Word:
    """Reduced crossing word of an incomplete trajectory."""
    return reduce_word(compute_word(prefix, env))


class PartialSignatureTracker:
    """Incrementally maintained partial h-signature.

    >>> env = Environment((0, 0), (4, 4), (Obstacle(1, Point2(2, 1)),))
    >>> tr = PartialSignatureTracker(env)
    >>> for p in [(0, 3), (1, 3), (3, 3)]:
    ...     _ = tr.update(p)
    >>> tr.word
    (1,)
    """

    def __init__(self, env: Environment):
        self.env = env
        self._last: np.ndarray | None = None
        self._stack: list[int] = []

    @property
    def word(self) -> Word:
        return tuple(self._stack)

    def update(self, point) -> Word:
        point = np.asarray(point, dtype=float)
        if self._last is not None:
            for a in compute_word(np.stack([self._last, point]), self.env):
                if self._stack and self._stack[-1] == -a:
                    self._stack.pop()
                else:
                    self._stack.append(a)
        self._last = point
        return self.word


def is_compatible(h: Sequence[int], p: Sequence[int]) -> bool:
    """True iff ``p`` is a literal prefix of ``h`` (both reduced)."""
    return len(p) <= len(h) and tuple(h[: len(p)]) == tuple(p)
