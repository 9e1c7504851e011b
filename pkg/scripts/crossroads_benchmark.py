"""Topology-informed prediction against a flat mixture on the crossroads hall.

Writes per-trajectory and aggregate CSVs (and an SVG with --svg) into
--out, then prints the medians per fraction.

    python scripts/crossroads_benchmark.py --out results/crossroads
"""

import argparse
from pathlib import Path

from topotraj.evaluation import DEFAULT_FRACTIONS, METRICS, SYSTEMS, plot_aggregate
from topotraj.experiments import SEED, crossroads_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=SEED)
    ap.add_argument("--n-train", type=int, default=1000)
    ap.add_argument("--n-test", type=int, default=200)
    ap.add_argument("--T", type=int, default=80)
    ap.add_argument("--components", default="3", help="'bic' or a per-class count")
    ap.add_argument("--fractions", type=float, nargs="+", default=sorted({*DEFAULT_FRACTIONS, 0.5}))
    ap.add_argument("--out", default="results/crossroads")
    ap.add_argument("--svg", action="store_true")
    args = ap.parse_args()

    comps = args.components if args.components == "bic" else int(args.components)
    res = crossroads_benchmark(args.seed, args.n_train, args.n_test, args.T, comps, args.fractions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.report.write_csv(out / "report.csv")
    res.report.write_aggregate_csv(out / "aggregate.csv")
    if args.svg:
        plot_aggregate(res.report, out / "aggregate.svg")

    print("components per class:", {str(h): k for h, k in res.components_per_class.items()})
    print(f"{'fraction':>8} {'system':>9} " + " ".join(f"{m:>10}" for m in METRICS))
    for f in args.fractions:
        for s in SYSTEMS:
            print(f"{f:8.4f} {s:>9} " + " ".join(f"{res.report.median(f, s, m):10.4g}" for m in METRICS))
    print("wrote", out)


if __name__ == "__main__":
    main()
