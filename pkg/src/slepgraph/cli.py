"""Command-line entry point: ``slepgraph <command> [--config FILE] [--set key=value ...]``.

Configuration is a flat ``key = value`` file with section prefixes::

    seed = 3
    synth.kind = three_ring
    model.K = 20
    train.epochs = 300
    run.out_dir = runs

Every command writes into a fresh timestamped directory under ``run.out_dir``
together with a ``manifest.json`` that is enough to replay it
(``slepgraph replay path/to/manifest.json``).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    Trajectory,
    curvature_profile,
    export_embeddings,
    extract_trajectory,
    read_embeddings,
    write_curvature_csv,
    write_curvature_summary,
)
from .eigenmap import benchmark_runtime, write_benchmark_csv
from .graph import laplacian_eigensystem, load_graph_json
from .mask import cluster_attention, load_mask_json, mask_iou, save_mask_json
from .model import GraphContext, ModelConfig, load_checkpoint, node_weights, save_checkpoint
from .slepian import BandSelector, NodeSelector, save_basis_csv, slepians
from .synth import SyntheticSpec, load_bundle, make_dataset, save_bundle
from .train import TrainConfig, ablation_sweep, evaluate, split_dataset, train, write_ablation_csv, write_metrics_json

SEED_ENV = "SLEPGRAPH_SEED"


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class AblationOptions:
    K_list: tuple = (5, 10, 20, 50)
    n_runs: int = 5
    jobs: int = 1


@dataclasses.dataclass
class EigenmapOptions:
    sizes: tuple = (256, 512, 1024, 2048)
    K: int = 10
    repeats: int = 5


@dataclasses.dataclass
class CurvatureOptions:
    window_fraction: float = 0.05


@dataclasses.dataclass
class PathOptions:
    out_dir: str = "runs"
    data: str = ""
    checkpoint: str = ""


@dataclasses.dataclass
class RunConfig:
    """All settings for one command, one dataclass per config section."""

    synth: SyntheticSpec = dataclasses.field(default_factory=SyntheticSpec)
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    ablation: AblationOptions = dataclasses.field(default_factory=AblationOptions)
    eigenmap: EigenmapOptions = dataclasses.field(default_factory=EigenmapOptions)
    curvature: CurvatureOptions = dataclasses.field(default_factory=CurvatureOptions)
    run: PathOptions = dataclasses.field(default_factory=PathOptions)
    seed: int = 0

    SECTIONS = ("synth", "model", "train", "ablation", "eigenmap", "curvature", "run")
    # per-section seeds are derived from the top-level seed
    HIDDEN = {"synth.seed", "model.seed", "train.seed"}

    def flat(self) -> dict:
        out = {"seed": self.seed}
        for sec in self.SECTIONS:
            for k, v in dataclasses.asdict(getattr(self, sec)).items():
                key = f"{sec}.{k}"
                if key not in self.HIDDEN:
                    out[key] = list(v) if isinstance(v, tuple) else v
        return out

    def apply_seed(self) -> None:
        self.synth.seed = self.model.seed = self.train.seed = int(self.seed)

    def validate(self) -> None:
        self.synth.validate()
        self.model.validate()
        self.train.validate()
        if any(int(k) < 1 for k in self.ablation.K_list) or self.ablation.n_runs < 1 or self.ablation.jobs < 1:
            raise ConfigError("ablation.K_list entries, n_runs and jobs must be positive")
        if list(self.eigenmap.sizes) != sorted(self.eigenmap.sizes) or self.eigenmap.repeats < 1:
            raise ConfigError("eigenmap.sizes must be ascending and eigenmap.repeats positive")
        if not 0 < self.curvature.window_fraction <= 1:
            raise ConfigError("curvature.window_fraction must lie in (0, 1]")


def _coerce(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None
    return value.strip()


def set_key(cfg: RunConfig, key: str, value: str) -> None:
    key = key.strip()
    if key == "seed":
        cfg.seed = _coerce(value, 0, key)
        return
    sec, _, name = key.partition(".")
    if sec not in RunConfig.SECTIONS or not name or key in RunConfig.HIDDEN:
        raise ConfigError(f"unknown config key {key!r}")
    obj = getattr(cfg, sec)
    names = {f.name for f in dataclasses.fields(obj)}
    if name not in names:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(obj, name, _coerce(value, getattr(obj, name), key))


def parse_config_text(text: str, cfg: RunConfig, source: str = "<config>") -> None:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        try:
            set_key(cfg, key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None


def build_config(config_path=None, overrides=(), env=None) -> RunConfig:
    """Defaults, then the config file, then ``--set`` overrides, then the seed env var."""
    env = os.environ if env is None else env
    cfg = RunConfig()
    if config_path:
        parse_config_text(Path(config_path).read_text(), cfg, str(config_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        set_key(cfg, *item.split("=", 1))
    if env.get(SEED_ENV):
        cfg.seed = _coerce(env[SEED_ENV], 0, SEED_ENV)
    cfg.apply_seed()
    cfg.validate()
    return cfg


def config_from_flat(flat: dict) -> RunConfig:
    cfg = RunConfig()
    for key, value in flat.items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        set_key(cfg, key, str(value))
    cfg.apply_seed()
    cfg.validate()
    return cfg


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.flat(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def version_string() -> str:
    """Package version, with the git commit appended when available."""
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def make_run_dir(cfg: RunConfig, command: str) -> Path:
    base = Path(cfg.run.out_dir)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    name = f"{command}-{stamp}-{config_hash(cfg)[:8]}"
    path = base / name
    n = 1
    while path.exists():
        path = base / f"{name}-{n}"
        n += 1
    path.mkdir(parents=True)
    return path


def write_manifest(run_dir: Path, cfg: RunConfig, command: str, args: dict) -> None:
    doc = {
        "command": command,
        "args": args,
        "config": cfg.flat(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": version_string(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (run_dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_data(cfg: RunConfig):
    if cfg.run.data:
        return load_bundle(cfg.run.data)
    return make_dataset(cfg.synth)


def checkpoint_name(seed: int, K: int) -> str:
    return f"run_{seed}_K{K}.ckpt"


# -- commands -----------------------------------------------------------------

def cmd_synth(cfg, args, run_dir):
    ds = make_dataset(cfg.synth)
    out = save_bundle(ds, run_dir / "bundle", cfg.synth)
    size = int(np.count_nonzero(ds.truth_mask)) if ds.truth_mask is not None else 0
    print(f"bundle {out} truth-mask size {size}")
    return {"bundle": str(out), "truth_mask_size": size}


def cmd_slepian(cfg, args, run_dir):
    graph = load_graph_json(args["graph"])
    N = graph.n_nodes
    if args.get("mask"):
        doc = load_mask_json(args["mask"])
        nodes = NodeSelector(np.asarray(doc["mask"], dtype=float))
    elif args.get("subset"):
        nodes = NodeSelector.from_subset([int(v) for v in args["subset"].split(",") if v], N)
    else:
        nodes = NodeSelector(np.ones(N))
    K = int(args["K"])
    if K > N:
        raise ConfigError(f"K={K} exceeds graph size {N}")
    eig = laplacian_eigensystem(graph, cfg.model.laplacian)
    basis = slepians(eig, BandSelector(K), nodes, args.get("variant") or cfg.model.variant)
    path = run_dir / "basis.csv"
    save_basis_csv(basis, path)
    return {"basis": str(path), "values": basis.values.tolist()}


def _checkpoint_extra(cfg, ds, metrics=None):
    extra = {"config_hash": config_hash(cfg)}
    if metrics is not None:
        extra["best_test_acc"] = metrics.best_test_acc
    return extra


def cmd_train(cfg, args, run_dir):
    ds = load_data(cfg)
    state, metrics, ctx = train(cfg.model, cfg.train, ds)
    ckpt = run_dir / checkpoint_name(cfg.seed, state.config.K)
    save_checkpoint(ckpt, state, ctx.clusters, _checkpoint_extra(cfg, ds, metrics))
    extra = {}
    if state.config.arch == "slepnet":
        m = node_weights(state, ctx)
        save_mask_json(run_dir / "mask.json", cluster_attention(state.params["mask_w"], state.config.attention), m)
        if ds.truth_mask is not None:
            extra["mask_iou"] = mask_iou(m, ds.truth_mask)
    write_metrics_json(metrics, run_dir / "metrics.json", **extra)
    summary = {"best_test_acc": metrics.best_test_acc, "best_epoch": metrics.best_epoch,
               "best_subject_acc": metrics.best_subject_acc, "checkpoint": str(ckpt), **extra}
    print(json.dumps(summary, sort_keys=True))
    return summary


def _restore(cfg):
    if not cfg.run.checkpoint:
        raise ConfigError("run.checkpoint must name a checkpoint file")
    state, clusters, _ = load_checkpoint(cfg.run.checkpoint)
    ds = load_data(cfg)
    ctx = GraphContext.build(ds.graph, state.config, clusters)
    return state, ctx, ds


def cmd_eval(cfg, args, run_dir):
    state, ctx, ds = _restore(cfg)
    if args.get("all"):
        target = ds
    else:
        _, te = split_dataset(ds, cfg.train.split_fraction, cfg.train.seed)
        target = ds.subset(te)
    res = evaluate(state, ctx, target, cfg.train.label_smoothing)
    res["n_samples"] = len(target)
    res["epoch"] = state.epoch
    _dump(run_dir / "eval.json", res)
    print(json.dumps(res, sort_keys=True))
    return res


def cmd_mask_eval(cfg, args, run_dir):
    state, ctx, ds = _restore(cfg)
    if state.config.arch != "slepnet":
        raise ConfigError("mask-eval needs a SlepNet checkpoint")
    m = node_weights(state, ctx)
    a = cluster_attention(state.params["mask_w"], state.config.attention)
    save_mask_json(run_dir / "mask.json", a, m)
    res = {"selected": int(np.count_nonzero(m > 0.5))}
    if ds.truth_mask is not None:
        res["iou"] = mask_iou(m, ds.truth_mask)
    _dump(run_dir / "mask_eval.json", res)
    print(json.dumps(res, sort_keys=True))
    return res


def cmd_ablation(cfg, args, run_dir):
    ds = load_data(cfg)
    rows = ablation_sweep(list(cfg.ablation.K_list), cfg.model, cfg.train, ds, cfg.ablation.n_runs,
                          jobs=cfg.ablation.jobs)
    write_ablation_csv(rows, run_dir / "ablation.csv")
    _dump(run_dir / "ablation_runs.json", rows)
    for r in rows:
        print(f"K={r['K']:4d} acc {r['mean_acc']:.4f} +- {r['std_acc']:.4f}")
    return {"rows": len(rows)}


def cmd_curvature(cfg, args, run_dir):
    if args.get("embeddings"):
        trajs = read_embeddings(args["embeddings"])
    else:
        state, ctx, ds = _restore(cfg)
        trajs = []
        for s in np.unique(ds.subjects):
            idx = np.nonzero(ds.subjects == s)[0]
            idx = idx[np.argsort(ds.timepoints[idx], kind="stable")]
            if idx.size < 3:
                continue
            trajs.append(extract_trajectory(state, ctx, ds.X[idx], ds.timepoints[idx], subject=int(s),
                                            allow_untrained=bool(args.get("allow_untrained"))))
        export_embeddings(trajs, run_dir / "embeddings.csv")
    profiles = [curvature_profile(t, cfg.curvature.window_fraction) for t in trajs]
    write_curvature_csv(profiles, run_dir / "curvature.csv")
    label = args.get("label") or "model"
    write_curvature_summary({label: profiles}, run_dir / "curvature_summary.json")
    means = [p.mean for p in profiles]
    res = {"n_trajectories": len(profiles), "mean_tau": float(np.mean(means)) if means else float("nan")}
    print(json.dumps(res, sort_keys=True))
    return res


def cmd_eigenmap_bench(cfg, args, run_dir):
    rows = benchmark_runtime(list(cfg.eigenmap.sizes), K=cfg.eigenmap.K, repeats=cfg.eigenmap.repeats,
                             seed=cfg.seed)
    write_benchmark_csv(rows, run_dir / "benchmark.csv")
    for r in rows:
        print(f"N={r['N']:5d} exact {r['t_exact_ms']:9.2f} ms  eigenmap {r['t_eigenmap_ms']:7.3f} ms")
    return {"rows": len(rows)}


COMMANDS = {
    "synth": cmd_synth,
    "slepian": cmd_slepian,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablation": cmd_ablation,
    "curvature": cmd_curvature,
    "eigenmap-bench": cmd_eigenmap_bench,
    "mask-eval": cmd_mask_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slepgraph", description="Graph Slepians and SlepNet experiments.")
    parser.add_argument("--version", action="version", version=f"slepgraph {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        return p

    add("synth", "generate a synthetic dataset bundle")
    p = add("slepian", "compute a Slepian basis for a graph")
    p.add_argument("--graph", required=True, help="graph JSON file")
    p.add_argument("--K", type=int, required=True, help="bandwidth")
    p.add_argument("--subset", help="comma-separated 0-based node indices")
    p.add_argument("--mask", help="mask JSON file with soft node weights")
    p.add_argument("--variant", choices=["energy", "embedded"])
    add("train", "train a model")
    p = add("eval", "evaluate a checkpoint on the test split")
    p.add_argument("--all", action="store_true", help="evaluate on every sample instead")
    add("ablation", "sweep the number of Slepian vectors")
    p = add("curvature", "trajectory curvature from a checkpoint or an embeddings CSV")
    p.add_argument("--embeddings", help="CSV with subject,t,dim_0,... rows")
    p.add_argument("--label", help="group name in the summary JSON")
    p.add_argument("--allow-untrained", action="store_true")
    add("eigenmap-bench", "time exact bases against eigenmap inference")
    add("mask-eval", "dump and score the learned mask of a checkpoint")
    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    return parser


def run_command(command: str, cfg: RunConfig, args: dict) -> Path:
    run_dir = make_run_dir(cfg, command)
    write_manifest(run_dir, cfg, command, args)
    COMMANDS[command](cfg, args, run_dir)
    return run_dir


def _error(exc, code):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "replay":
            doc = json.loads(Path(ns.manifest).read_text())
            cfg = config_from_flat(doc["config"])
            run_dir = run_command(doc["command"], cfg, doc["args"])
        else:
            cfg = build_config(ns.config, ns.set)
            args = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "set")}
            run_dir = run_command(ns.command, cfg, args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError) as exc:
        return _error(exc, 2)
    except Exception as exc:  # surfaced as machine-readable JSON
        return _error(exc, 1)
    print(f"run directory: {run_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
