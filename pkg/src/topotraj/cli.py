"""``topotraj`` command line: generate, train, predict, eval.

Every command writes ``<command>_manifest.json`` next to its outputs with
the resolved configuration and a SHA-256 of each file it produced.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION, __version__
from .config import Config, load_config
from .data import (
    ENVIRONMENTS,
    TrajectoryDataset,
    assemble_trajectories,
    filter_border_crossing,
    generate_synthetic,
    parse_trajectory_csv,
    split_dataset,
)
from .errors import TopoTrajError
from .evaluation import plot_aggregate, run_experiment
from .gmm import Gmm, HierarchicalGmm, Observation, fit_em, fit_hierarchical, predict, word_key
from .topology import Environment, h_signature, partial_h_signature
from .vomp import Psa, learn_psa, posterior_over_full

log = logging.getLogger("topotraj")


class CommandError(Exception):
    pass


def resolve_environment(spec: str) -> Environment:
    if spec in ENVIRONMENTS:
        return ENVIRONMENTS[spec]()
    path = Path(spec)
    if not path.exists():
        raise CommandError(f"environment {spec!r} is neither a built-in ({', '.join(ENVIRONMENTS)}) nor a file")
    return Environment.load(path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: Config, command: str, outputs: list[Path], extra: dict | None = None) -> Path:
    doc = {
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "command": command,
        "config": cfg.to_dict(),
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    if extra:
        doc.update(extra)
    path = cfg.out(f"{command}_manifest.json")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _dataset_path(cfg: Config) -> Path:
    return Path(cfg.data) if cfg.data else cfg.out("dataset.jsonl")


# -- commands --------------------------------------------------------------


def cmd_generate(cfg: Config) -> list[Path]:
    env = resolve_environment(cfg.environment)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.source == "synthetic":
        if cfg.num_trajs == 0:
            warnings.warn("num_trajs is 0; writing an empty dataset", UserWarning, stacklevel=2)
            ds = TrajectoryDataset([], env, [])
        else:
            ds = generate_synthetic(
                env, cfg.grid_resolution, cfg.num_trajs, cfg.seed, cfg.noise_std, cfg.obstacle_radius
            )
    else:
        if not cfg.csv_dir:
            raise CommandError("source 'csv' needs csv_dir")
        files = sorted(Path(cfg.csv_dir).glob("*.csv"))
        if not files:
            raise CommandError(f"no CSV files in {cfg.csv_dir}")
        records = []
        for f in files:
            records += parse_trajectory_csv(f, cfg.column_map, cfg.unit_scale).records
        trajs = assemble_trajectories(records, cfg.gap_threshold_s)
        kept = filter_border_crossing(trajs, env, cfg.border_tolerance)
        log.info("%d of %d trajectories satisfy the border crossing filter", len(kept), len(trajs))
        ds = TrajectoryDataset(kept, env, [h_signature(t, env, check_boundary=False) for t in kept])
    data_path, env_path = _dataset_path(cfg), out / "environment.json"
    ds.save_jsonl(data_path)
    env.save(env_path)
    counts = {json.dumps(list(h)): n for h, n in ds.class_counts().items()}
    outputs = [data_path, env_path]
    return outputs + [write_manifest(cfg, "generate", outputs, {"n_trajectories": len(ds), "class_counts": counts})]


def cmd_train(cfg: Config) -> list[Path]:
    env = _load_env(cfg)
    data_path = _dataset_path(cfg)
    if not data_path.exists():
        raise CommandError(f"dataset {data_path} not found; run generate first")
    ds = TrajectoryDataset.load_jsonl(data_path, env)
    if len(ds) < 2:
        raise CommandError(f"dataset {data_path} has {len(ds)} trajectories; need at least 2")
    train, test = split_dataset(ds, cfg.train_fraction, cfg.seed)
    train_r = train.resampled(cfg.T)
    psa = learn_psa(train_r.labels, cfg.epsilon, cfg.max_order, env.n_obstacles)
    model = fit_hierarchical(
        train_r.by_class(), cfg.components_policy(), cfg.reg, cfg.em_tol, cfg.em_max_iter, cfg.seed, cfg.sigma_y
    )
    k = min(model.total_components(), len(train_r))
    baseline = fit_em(train_r.matrix(), k, cfg.reg, cfg.em_tol, cfg.em_max_iter, cfg.seed)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in ("psa.json", "hgmm.json", "baseline.json", "train.jsonl", "test.jsonl")}
    psa.save(paths["psa.json"])
    model.save(paths["hgmm.json"])
    baseline.save(paths["baseline.json"], T=cfg.T, sigma_y=cfg.sigma_y)
    train.save_jsonl(paths["train.jsonl"])
    test.save_jsonl(paths["test.jsonl"])
    extra = {
        "epsilon": cfg.epsilon,
        "max_order": cfg.max_order,
        "seed": cfg.seed,
        "n_train": len(train),
        "n_test": len(test),
        "class_counts": {json.dumps(list(h)): n for h, n in train_r.class_counts().items()},
        "components_per_class": {json.dumps(list(h)): g.n_components for h, g in sorted(model.per_class.items(), key=lambda kv: word_key(kv[0]))},
        "total_components": model.total_components(),
        "baseline_components": baseline.n_components,
        "psa_states": len(psa.states),
    }
    outputs = list(paths.values())
    return outputs + [write_manifest(cfg, "train", outputs, extra)]


def _load_env(cfg: Config) -> Environment:
    stored = cfg.out("environment.json")
    if cfg.environment in ENVIRONMENTS or Path(cfg.environment).exists():
        return resolve_environment(cfg.environment)
    if stored.exists():
        return Environment.load(stored)
    raise CommandError(f"environment {cfg.environment!r} not found")


def _load_models(cfg: Config):
    try:
        psa = Psa.load(cfg.out("psa.json"))
        model = HierarchicalGmm.load(cfg.out("hgmm.json"))
        baseline_doc = json.loads(cfg.out("baseline.json").read_text())
    except FileNotFoundError as exc:
        raise CommandError(f"missing model file {exc.filename}; run train first") from exc
    baseline = Gmm.from_dict(baseline_doc)
    if baseline_doc.get("T") != model.T or baseline.dim != 2 * model.T:
        raise CommandError("baseline and hierarchical models disagree on T")
    if model.T != cfg.T:
        raise CommandError(f"models were trained with T={model.T} but the configuration has T={cfg.T}")
    return psa, model, baseline


def read_points(path) -> np.ndarray:
    """Prefix points from JSON (``[[x, y], ...]`` or ``{"x": [...], "y": [...]}``) or x,y CSV."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if isinstance(doc, dict):
            return np.column_stack([doc["x"], doc["y"]]).astype(float)
        return np.asarray(doc, dtype=float).reshape(-1, 2)
    rows = []
    for line in path.read_text().splitlines():
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 2:
            continue
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            continue
    return np.array(rows, dtype=float).reshape(-1, 2)


def cmd_predict(cfg: Config, prefix_path, out_path=None) -> dict:
    """Class posterior and conditioned mixture for a prefix sampled on the model's time grid."""
    env = _load_env(cfg)
    psa, model, _ = _load_models(cfg)
    pts = read_points(prefix_path)
    if len(pts) > model.T:
        raise CommandError(f"prefix has {len(pts)} points but the model covers only T={model.T}")
    p = partial_h_signature(pts, env) if len(pts) else ()
    post = posterior_over_full(p, psa)
    pred = predict(model, Observation.prefix(pts), post.probs)
    doc = {
        "partial_signature": list(p),
        "class_posterior": [{"h": list(h), "p": q} for h, q in sorted(post.probs.items(), key=lambda kv: word_key(kv[0]))],
        "posterior_fallback": post.fallback,
        "prediction": pred.to_dict(),
    }
    text = json.dumps(doc) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)
    return doc


def cmd_eval(cfg: Config) -> list[Path]:
    env = _load_env(cfg)
    psa, model, baseline = _load_models(cfg)
    test_path = cfg.out("test.jsonl")
    if not test_path.exists():
        raise CommandError(f"{test_path} not found; run train first")
    test = TrajectoryDataset.load_jsonl(test_path, env)
    report = run_experiment(psa, model, baseline, test, [float(f) for f in cfg.fractions])
    rows, agg = cfg.out("report.csv"), cfg.out("aggregate.csv")
    report.write_csv(rows)
    report.write_aggregate_csv(agg)
    outputs = [rows, agg]
    if cfg.plots:
        svg = cfg.out("aggregate.svg")
        plot_aggregate(report, svg)
        outputs.append(svg)
    return outputs + [write_manifest(cfg, "eval", outputs, {"kld_floor_uses": report.floored})]


# -- argument parsing ------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="YAML configuration file")
    for f in fields(Config):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper(), help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topotraj",
        description="Topology-informed trajectory prediction. Any configuration key can be "
        "given as --key-name VALUE or via a TOPOTRAJ_KEY environment variable.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("generate", "write a trajectory dataset (synthetic or from CSV logs)"),
        ("train", "fit the suffix automaton, per-class mixtures and flat baseline"),
        ("predict", "predict from a trajectory prefix"),
        ("eval", "run the observation-fraction sweep and write reports"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_config_flags(p)
        if name == "predict":
            p.add_argument("prefix", help="prefix points: JSON or x,y CSV, one point per model timestep")
            p.add_argument("--out", "-o", help="write prediction JSON here instead of stdout")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {f.name: getattr(args, f.name) for f in fields(Config)}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "predict":
            cmd_predict(cfg, args.prefix, args.out)
        else:
            cmd_eval(cfg)
    except (CommandError, TopoTrajError, ValueError, OSError) as exc:
        print(f"topotraj {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
