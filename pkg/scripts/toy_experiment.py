"""Class posterior along one trajectory in the two-obstacle room.

Prints the posterior every time the partial signature changes and can
draw the training corpus coloured by class.

    python scripts/toy_experiment.py --seed 2024 --svg toy.svg
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.patches import Polygon

from topotraj.data import generate_synthetic, toy_environment
from topotraj.experiments import SEED, toy_experiment


def fmt(h):
    return "(" + ",".join(map(str, h)) + ")"


def draw(seed, n, path):
    env = toy_environment()
    ds = generate_synthetic(env, 0.25, n, seed)
    classes = sorted(set(ds.labels), key=lambda h: (len(h), h))
    colours = dict(zip(classes, ["tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple"]))
    with matplotlib.rc_context({"svg.hashsalt": "topotraj"}):
        fig, ax = plt.subplots(figsize=(5, 5))
        for t, h in zip(ds.trajectories, ds.labels):
            ax.plot(t.points[:, 0], t.points[:, 1], color=colours[h], lw=0.5, alpha=0.5)
        for o in env.obstacles:
            ax.add_patch(Polygon(o.polygon, color="0.3"))
            ax.plot([o.center.x, o.center.x], [o.center.y, env.max_corner.y], "k--", lw=0.8)
        for h, c in colours.items():
            ax.plot([], [], color=c, label=fmt(h))
        ax.set_xlim(env.min_corner.x, env.max_corner.x)
        ax.set_ylim(env.min_corner.y, env.max_corner.y)
        ax.set_aspect("equal")
        ax.legend(loc="upper left", fontsize=8)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=SEED)
    ap.add_argument("--num-trajs", type=int, default=500)
    ap.add_argument("--svg", help="draw the generated corpus here")
    args = ap.parse_args()

    res = toy_experiment(args.seed, args.num_trajs)
    print("training classes:", {fmt(h): n for h, n in res.class_counts.items()})
    print(f"following trajectory {res.trajectory_id}")
    classes = sorted(res.psa.support, key=lambda h: (len(h), h))
    print(f"{'step':>5} {'partial':>8} " + " ".join(f"{fmt(h):>8}" for h in classes))
    for k, p, probs in res.timeline:
        print(f"{k:>5} {fmt(p):>8} " + " ".join(f"{probs.get(h, 0.0):8.3f}" for h in classes))
    if args.svg:
        draw(args.seed, args.num_trajs, args.svg)
        print("wrote", args.svg)


if __name__ == "__main__":
    main()
