import numpy as np
import pytest

from topotraj.topology import Environment, Obstacle, Point2


def densify(points, factor):
    """Insert ``factor - 1`` evenly spaced points on every segment."""
    points = np.asarray(points, dtype=float)
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        for k in range(1, factor + 1):
            out.append(a + (b - a) * (k / factor))
    return np.array(out)


def random_environment(rng, n=3, size=10.0):
    xs = rng.choice(np.arange(1, 20), size=n, replace=False) * size / 20
    ys = rng.uniform(0.1 * size, 0.9 * size, size=n)
    return Environment(
        Point2(0, 0), Point2(size, size), tuple(Obstacle(i + 1, Point2(x, y)) for i, (x, y) in enumerate(zip(xs, ys)))
    )


@pytest.fixture
def one_obstacle_env():
    return Environment(Point2(0, 0), Point2(10, 10), (Obstacle(1, Point2(5, 5)),))


@pytest.fixture
def two_obstacle_env():
    return Environment(Point2(0, 0), Point2(10, 10), (Obstacle(1, Point2(3, 4)), Obstacle(2, Point2(7, 6))))


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
