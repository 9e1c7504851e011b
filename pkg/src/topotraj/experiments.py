"""End-to-end experiments used by ``scripts/`` and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import TrajectoryDataset, crossroads_environment, generate_synthetic, split_dataset, toy_environment
from .evaluation import MetricReport, run_experiment
from .gmm import fit_em, fit_hierarchical
from .topology import PartialSignatureTracker, Word
from .vomp import DEFAULT_EPSILON, DEFAULT_MAX_ORDER, Psa, learn_psa, posterior_over_full

SEED = 2024


@dataclass
class ToyResult:
    psa: Psa
    class_counts: dict[Word, int]
    trajectory_id: str
    # (point index, partial signature, class posterior) whenever the partial signature changes
    timeline: list[tuple[int, Word, dict[Word, float]]] = field(default_factory=list)

    def posterior_for(self, p: Word) -> dict[Word, float]:
        for _, q, probs in self.timeline:
            if q == p:
                return probs
        raise KeyError(p)


def toy_experiment(
    seed: int = SEED,
    num_trajs: int = 500,
    grid_resolution: float = 0.25,
    epsilon: float = DEFAULT_EPSILON,
    max_order: int = DEFAULT_MAX_ORDER,
) -> ToyResult:
    """Learn the class model on the two-obstacle room and follow one held-out
    trajectory of class (1, 2) through its crossings."""
    env = toy_environment()
    ds = generate_synthetic(env, grid_resolution, num_trajs, seed)
    train, test = split_dataset(ds, 0.9, seed)
    psa = learn_psa(train.labels, epsilon, max_order, env.n_obstacles)
    i = test.labels.index((1, 2))
    traj = test.trajectories[i]
    tracker = PartialSignatureTracker(env)
    timeline = []
    last = None
    for k, point in enumerate(traj.points):
        p = tracker.update(point)
        if p != last:
            timeline.append((k, p, posterior_over_full(p, psa).probs))
            last = p
    return ToyResult(psa, train.class_counts(), traj.id, timeline)


@dataclass
class BenchmarkResult:
    report: MetricReport
    train: TrajectoryDataset
    test: TrajectoryDataset
    components_per_class: dict[Word, int]


def crossroads_benchmark(
    seed: int = SEED,
    n_train: int = 1000,
    n_test: int = 200,
    T: int = 80,
    components: int | str = 3,
    fractions=(0.5, 1.0),
    grid_resolution: float = 0.5,
    sigma_y: float = 0.1,
) -> BenchmarkResult:
    """Topology-informed model against a flat mixture of equal size."""
    env = crossroads_environment()
    ds = generate_synthetic(env, grid_resolution, n_train + n_test, seed)
    train = ds.subset(range(n_train)).resampled(T)
    test = ds.subset(range(n_train, n_train + n_test))
    psa = learn_psa(train.labels, n_obstacles=env.n_obstacles)
    model = fit_hierarchical(train.by_class(), components, seed=seed, sigma_y=sigma_y)
    baseline = fit_em(train.matrix(), model.total_components(), seed=seed)
    report = run_experiment(psa, model, baseline, test, list(fractions))
    return BenchmarkResult(report, train, test, {h: g.n_components for h, g in model.per_class.items()})
