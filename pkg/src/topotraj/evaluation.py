"""Prediction metrics and the observation-fraction sweep.

Three per-trajectory scores are reported for the topology-informed model
and a flat mixture baseline:

* ``ade``: mean distance between the truth and the top-weighted mean,
* ``amd``: weight-averaged squared Mahalanobis distance per timestep,
* ``kld``: divergence from the final mixture weights to the partial ones.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import TrajectoryDataset, resample_uniform
from .errors import IndexMismatch, NumericalFailure
from .gmm import Gmm, HierarchicalGmm, Observation, Prediction, predict, predict_flat
from .topology import Trajectory, partial_h_signature
from .vomp import Psa, posterior_over_full

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.0125, 0.15, 0.42, 0.7, 0.975, 1.0)
KLD_FLOOR = 1e-12
SYSTEMS = ("topology", "naive")
METRICS = ("ade", "amd", "kld")


def _truth_points(truth) -> np.ndarray:
    pts = truth.points if isinstance(truth, Trajectory) else np.asarray(truth, dtype=float)
    return pts.reshape(-1, 2)


def ade(truth, pred: Prediction) -> float:
    x = _truth_points(truth)
    m = pred.best().mean.reshape(-1, 2)
    if m.shape != x.shape:
        raise ValueError(f"truth has {len(x)} points, prediction {len(m)}")
    return float(np.mean(np.linalg.norm(x - m, axis=1)))


def amd(truth, pred: Prediction) -> float:
    """Weighted mean over terms and timesteps of the 2-D Mahalanobis square."""
    x = _truth_points(truth)
    T = len(x)
    total = 0.0
    for term in pred.terms:
        if term.weight == 0:
            continue
        m = term.mean.reshape(-1, 2)
        if m.shape != x.shape:
            raise ValueError(f"truth has {T} points, prediction {len(m)}")
        idx = np.arange(T) * 2
        blocks = np.stack(
            [term.cov[idx, idx], term.cov[idx, idx + 1], term.cov[idx + 1, idx], term.cov[idx + 1, idx + 1]], axis=1
        ).reshape(T, 2, 2)
        try:
            L = np.linalg.cholesky(blocks)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"non-SPD 2x2 block in term {(term.h, term.c)}") from exc
        theta = (x - m)[:, :, None]
        z = np.linalg.solve(L, theta)
        total += term.weight * float(np.sum(z * z)) / T
    return total


def kld_flagged(final_weights: Mapping, partial_weights: Mapping, floor: float = KLD_FLOOR) -> tuple[float, bool]:
    """Divergence and whether the zero-support floor was used."""
    if set(final_weights) != set(partial_weights):
        raise IndexMismatch("weight maps are indexed by different (h, c) sets")
    total, floored = 0.0, False
    for key, w in final_weights.items():
        if w <= 0:
            continue
        q = partial_weights[key]
        if q <= 0:
            q, floored = floor, True
        total += w * (math.log(w) - math.log(q))
    return total, floored


def kld(final_weights: Mapping, partial_weights: Mapping, floor: float = KLD_FLOOR) -> float:
    return kld_flagged(final_weights, partial_weights, floor)[0]


# -- the sweep -------------------------------------------------------------


@dataclass(frozen=True)
class MetricRow:
    traj_id: str
    fraction: float
    system: str
    ade: float
    amd: float
    kld: float


@dataclass(frozen=True)
class AggregateRow:
    fraction: float
    system: str
    metric: str
    median: float
    q25: float
    q75: float


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)
    floored: int = 0

    def values(self, fraction: float, system: str, metric: str) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.rows if r.fraction == fraction and r.system == system])

    def aggregate(self) -> list[AggregateRow]:
        fractions = sorted({r.fraction for r in self.rows})
        out = []
        for f in fractions:
            for s in SYSTEMS:
                for m in METRICS:
                    v = self.values(f, s, m)
                    if len(v) == 0:
                        continue
                    q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75])
                    out.append(AggregateRow(f, s, m, float(med), float(q25), float(q75)))
        return out

    def median(self, fraction: float, system: str, metric: str) -> float:
        return float(np.median(self.values(fraction, system, metric)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["traj_id", "fraction", "system", "ade", "amd", "kld"])
            for r in self.rows:
                w.writerow([r.traj_id, repr(r.fraction), r.system, repr(r.ade), repr(r.amd), repr(r.kld)])

    def write_aggregate_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["fraction", "system", "metric", "median", "q25", "q75"])
            for a in self.aggregate():
                w.writerow([repr(a.fraction), a.system, a.metric, repr(a.median), repr(a.q25), repr(a.q75)])

    @classmethod
    def read_csv(cls, path) -> "MetricReport":
        with open(path, newline="") as f:
            rows = [
                MetricRow(r["traj_id"], float(r["fraction"]), r["system"], float(r["ade"]), float(r["amd"]), float(r["kld"]))
                for r in csv.DictReader(f)
            ]
        return cls(rows)


def observed_count(fraction: float, T: int) -> int:
    """Number of leading timesteps observed at ``fraction`` of ``T``."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    return min(T, max(1, math.ceil(fraction * T - 1e-9)))


def run_experiment(
    psa: Psa,
    model: HierarchicalGmm,
    baseline: Gmm,
    test: TrajectoryDataset,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    use_length_prior: bool = True,
) -> MetricReport:
    """Score both systems on every test trajectory at every fraction.

    Test trajectories are resampled to the model length.  Measurements are
    the first ``ceil(f * T)`` resampled truth points; the final weights
    used by ``kld`` condition on the whole trajectory.
    """
    fractions = list(fractions)
    if fractions != sorted(fractions):
        raise ValueError("fractions must be sorted ascending")
    T, sigma_y = model.T, model.sigma_y
    env = test.environment
    report = MetricReport()

    def topo(points):
        p = partial_h_signature(points, env)
        post = posterior_over_full(p, psa, use_length_prior=use_length_prior)
        probs = {h: q for h, q in post.probs.items() if q > 0 or h in model.per_class}
        return predict(model, Observation.prefix(points), probs)

    for i, traj in enumerate(test.trajectories):
        truth = traj if len(traj) == T else resample_uniform(traj, T)
        x = truth.points
        tid = traj.id if traj.id is not None else str(i)
        final_topo = topo(x).weight_map()
        final_flat = predict_flat(baseline, Observation.prefix(x), sigma_y).weight_map()
        for f in fractions:
            k = observed_count(f, T)
            obs_pts = x[:k]
            for system, pred, final in (
                ("topology", topo(obs_pts), final_topo),
                ("naive", predict_flat(baseline, Observation.prefix(obs_pts), sigma_y), final_flat),
            ):
                d, floored = kld_flagged(final, pred.weight_map())
                report.floored += floored
                report.rows.append(MetricRow(tid, float(f), system, ade(x, pred), amd(x, pred), d))
    if report.floored:
        log.info("%d KLD evaluations used the zero-weight floor", report.floored)
    return report


def plot_aggregate(report: MetricReport, path) -> None:
    """Median with quartile bars per metric, one panel each, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    agg = report.aggregate()
    with matplotlib.rc_context({"svg.hashsalt": "topotraj", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, len(METRICS), figsize=(12, 3.5))
        for ax, metric in zip(axes, METRICS):
            for k, system in enumerate(SYSTEMS):
                rows = [a for a in agg if a.metric == metric and a.system == system]
                if not rows:
                    continue
                f = np.array([a.fraction for a in rows]) + (k - 0.5) * 0.01
                med = np.array([a.median for a in rows])
                err = np.array([[a.median - a.q25 for a in rows], [a.q75 - a.median for a in rows]])
                ax.errorbar(f, med, yerr=err, marker="o", capsize=3, label=system)
            ax.set_title(metric.upper())
            ax.set_xlabel("observed fraction")
        axes[0].legend()
        fig.tight_layout()
        fig.savefig(Path(path), format="svg", metadata={"Date": None})
        plt.close(fig)
