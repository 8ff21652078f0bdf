"""Command-line entry points and run orchestration.

Subcommands: synth, cluster, train, sample, baseline, evaluate, report, run.
``run`` drives a whole experiment (method -> samples -> report -> manifest)
from a flat key-value config file, optionally over several seeds with
mean +/- std aggregation.

Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import io as dio
from .baselines import (
    GreedySelector,
    MCMCSampler,
    PPOSampler,
    RandomSampler,
)
from .core import CycleSpec, SampleSet, SizeConstraint
from .env_hier import ClusterMap, cluster_blocks
from .errors import (
    ConfigError,
    DelDesignError,
    DimensionError,
    NumericError,
    ParseError,
    UsageError,
)
from .gflownet import GFlowNetSampler
from .metrics import evaluate
from .reward import ScoreTable

METHODS = ("gfn-flat", "gfn-hier", "random", "greedy", "mcmc", "ppo")


@dataclass
class RunConfig:
    """Fully resolved experiment configuration."""

    method: str
    min_size: int
    max_size: int
    out_dir: str
    score_table: str | None = None
    cycle_sizes: tuple[int, ...] | None = None
    synth_seed: int = 0
    synth_structure: str = dio.ADDITIVE
    n_samples: int = 5000
    seed: int = 0
    n_seeds: int = 1
    topk: int = 100
    bins: int = 20
    beta: float = 64.0
    fingerprints: str | None = None
    clusters: tuple[int, ...] | None = None
    properties: tuple[str, ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise UsageError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.score_table is None and self.cycle_sizes is None:
            raise UsageError("either a score-table path or cycle sizes is required")

    @classmethod
    def from_mapping(cls, kv: dict) -> "RunConfig":
        kv = dict(kv)

        def pop(key, default=None, conv=str):
            if key in kv:
                return conv(kv.pop(key))
            return default

        def tupint(s):
            return tuple(int(v) for v in str(s).split(","))

        known = dict(
            method=pop("run.method"),
            min_size=pop("problem.min_size", conv=int),
            max_size=pop("problem.max_size", conv=int),
            out_dir=pop("run.out_dir", "runs"),
            score_table=pop("problem.score_table"),
            cycle_sizes=pop("problem.cycle_sizes", conv=tupint),
            synth_seed=pop("problem.synth_seed", 0, int),
            synth_structure=pop("problem.synth_structure", dio.ADDITIVE),
            n_samples=pop("run.n_samples", 5000, int),
            seed=pop("run.seed", 0, int),
            n_seeds=pop("run.n_seeds", 1, int),
            topk=pop("run.topk", 100, int),
            bins=pop("run.bins", 20, int),
            beta=pop("reward.beta", 64.0, float),
            fingerprints=pop("hier.fingerprints"),
            clusters=pop("hier.clusters", conv=tupint),
            properties=tuple(
                p for p in str(pop("run.properties", "")).split(",") if p
            ),
        )
        if known["method"] is None:
            raise UsageError("config is missing run.method")
        if known["min_size"] is None or known["max_size"] is None:
            raise UsageError("config is missing problem.min_size / problem.max_size")
        return cls(params=kv, **known)


def _param(params: dict, key: str, default, conv):
    return conv(params[key]) if key in params else default


def load_table(cfg: RunConfig) -> ScoreTable:
    if cfg.score_table is not None:
        table = dio.load_score_table(cfg.score_table)
        if cfg.cycle_sizes is not None and tuple(cfg.cycle_sizes) != table.dims:
            raise DimensionError(
                f"configured cycle sizes {cfg.cycle_sizes} do not match table dims {table.dims}"
            )
        return table
    return dio.synth_scores(CycleSpec(cfg.cycle_sizes), cfg.synth_seed, cfg.synth_structure)


def resolve_cluster_map(cfg: RunConfig, spec: CycleSpec) -> ClusterMap:
    if cfg.fingerprints is not None:
        fps = dio.load_fingerprints(cfg.fingerprints)
        if cfg.clusters is None:
            raise UsageError("hier.clusters is required when clustering fingerprints")
        cmap = cluster_blocks(fps, cfg.clusters)
    else:
        cmap = ClusterMap.singletons(spec)
    cmap.check_spec(spec)
    return cmap


def build_sampler(cfg: RunConfig, spec: CycleSpec, seed: int):
    p = cfg.params
    if cfg.method in ("gfn-flat", "gfn-hier"):
        hier = cfg.method == "gfn-hier"
        return GFlowNetSampler(
            cfg.min_size,
            cfg.max_size,
            hierarchical=hier,
            cluster_map=resolve_cluster_map(cfg, spec) if hier else None,
            iterations=_param(p, "gfn.iterations", 5000, int),
            learning_rate=_param(p, "gfn.learning_rate", 1e-4, float),
            batch_size=_param(p, "gfn.batch_size", 50, int),
            replay_batch=_param(p, "gfn.replay_batch", 50, int),
            replay_capacity=_param(p, "gfn.replay_capacity", 1000, int),
            beta=cfg.beta,
            epsilon=_param(p, "gfn.epsilon", 0.1, float),
            hidden_dim=_param(p, "gfn.hidden_dim", 512, int),
            n_layers=_param(p, "gfn.n_layers", 5, int),
            random_state=seed,
        )
    if cfg.method == "random":
        return RandomSampler(cfg.min_size, cfg.max_size, beta=cfg.beta, random_state=seed)
    if cfg.method == "greedy":
        return GreedySelector(
            k1=_param(p, "greedy.k1", 25, int),
            k2=_param(p, "greedy.k2", 25, int),
            k3=_param(p, "greedy.k3", 40, int),
            beta=cfg.beta,
        )
    if cfg.method == "mcmc":
        return MCMCSampler(
            cfg.min_size,
            cfg.max_size,
            n_chains=_param(p, "mcmc.n_chains", 5000, int),
            chain_length=_param(p, "mcmc.chain_length", 250, int),
            beta=cfg.beta,
            proposal_mode=_param(p, "mcmc.proposal_mode", "paper-skip", str),
            random_state=seed,
        )
    if cfg.method == "ppo":
        return PPOSampler(
            cfg.min_size,
            cfg.max_size,
            iterations=_param(p, "ppo.iterations", 2000, int),
            learning_rate=_param(p, "ppo.learning_rate", 1e-4, float),
            decay_period=_param(p, "ppo.decay_period", 1_000_000, int),
            decay_coef=_param(p, "ppo.decay_coef", 0.5, float),
            clip_eps=_param(p, "ppo.clip_eps", 0.1, float),
            entropy_coef=_param(p, "ppo.entropy_coef", 1e-3, float),
            trajectories_per_iter=_param(p, "ppo.trajectories_per_iter", 64, int),
            epochs=_param(p, "ppo.epochs", 16, int),
            minibatch_size=_param(p, "ppo.minibatch_size", 2, int),
            epsilon=_param(p, "ppo.epsilon", 0.001, float),
            beta=cfg.beta,
            hidden_dim=_param(p, "ppo.hidden_dim", 256, int),
            random_state=seed,
        )
    raise UsageError(f"unknown method {cfg.method!r}")


_METRIC_KEYS = (
    "mean_probability",
    "diversity",
    "topk_probability",
    "topk_diversity",
    "top1_probability",
)


def aggregate_reports(reports: list[dict]) -> dict:
    """Per-metric mean +/- std across seeds; None metrics stay None."""
    out = {}
    for key in _METRIC_KEYS:
        vals = [r[key] for r in reports]
        if any(v is None for v in vals):
            out[key] = None
            continue
        out[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    out["n_seeds"] = len(reports)
    return out


def run(cfg: RunConfig) -> int:
    """Execute one experiment end to end; artifacts land in cfg.out_dir."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = load_table(cfg)
    spec = table.spec()
    SizeConstraint(cfg.min_size, cfg.max_size)
    props = [dio.load_property_table(p) for p in cfg.properties]
    for prop in props:
        if prop.values.shape != table.dims:
            raise DimensionError(
                f"property {prop.name!r} dims {prop.values.shape} != table dims {table.dims}"
            )
    reports = []
    for i in range(cfg.n_seeds):
        seed = cfg.seed + i
        sampler = build_sampler(cfg, spec, seed)
        sampler.fit(table)
        if i == 0 and cfg.method in ("gfn-flat", "gfn-hier", "ppo"):
            _save_model_checkpoint(cfg, sampler, spec, out)
        n = 1 if cfg.method == "greedy" else cfg.n_samples
        samples = sampler.sample(n)
        dio.save_sample_set(out / f"samples_seed{seed}.json", samples, spec, cfg.beta)
        report = evaluate(samples, k=cfg.topk, props=props, bins=cfg.bins)
        rep = report.to_dict()
        if cfg.method == "greedy":
            # single deterministic design: only the top-1 column is meaningful
            rep = {k: (rep[k] if k in ("top1_probability", "k", "n_samples") else None)
                   for k in rep}
            rep["top1_probability"] = report.top1_probability
        (out / f"report_seed{seed}.json").write_text(json.dumps(rep, indent=2))
        if hasattr(sampler, "history_"):
            with open(out / f"training_log_seed{seed}.jsonl", "w") as f:
                for rec in sampler.history_:
                    f.write(json.dumps(rec) + "\n")
        reports.append(rep)
    summary = aggregate_reports(reports) if cfg.n_seeds > 1 else reports[0]
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    manifest = asdict(cfg)
    manifest["resolved_dims"] = list(table.dims)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    return 0


# argparse front end -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _tupint(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(","))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deldesign", description="Combinatorial library subset design")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a seeded synthetic score table")
    s.add_argument("--cycles", type=_tupint, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--structure", default=dio.ADDITIVE,
                   choices=[dio.ADDITIVE, dio.ADDITIVE_PAIRWISE])
    s.add_argument("--out", required=True)

    s = sub.add_parser("cluster", help="cluster building blocks from fingerprints")
    s.add_argument("--fingerprints", required=True)
    s.add_argument("--clusters", type=_tupint, required=True)
    s.add_argument("--out", required=True)

    for name in ("train", "baseline"):
        s = sub.add_parser(
            name,
            help="train a learned sampler" if name == "train" else "run a non-learned sampler",
        )
        s.add_argument("--method", required=True,
                       choices=["gfn-flat", "gfn-hier", "ppo"] if name == "train"
                       else ["random", "greedy", "mcmc"])
        s.add_argument("--table", required=True)
        s.add_argument("--min-size", type=int, required=True)
        s.add_argument("--max-size", type=int, required=True)
        s.add_argument("--n", type=int, default=5000)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--seeds", type=int, default=1, dest="n_seeds")
        s.add_argument("--beta", type=float, default=64.0)
        s.add_argument("--fingerprints")
        s.add_argument("--clusters", type=_tupint)
        s.add_argument("--out-dir", required=True)
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    s = sub.add_parser("sample", help="sample from a trained checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--table", required=True)
    s.add_argument("--n", type=int, default=5000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("evaluate", help="evaluate a sample-set file")
    s.add_argument("--samples", required=True)
    s.add_argument("--topk", type=int, default=100)
    s.add_argument("--properties", nargs="*", default=[])
    s.add_argument("--bins", type=int, default=20)
    s.add_argument("--out", required=True)
    s.add_argument("--hist-csv")

    s = sub.add_parser("report", help="aggregate per-seed reports (mean +/- std)")
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("run", help="full pipeline from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return p


def _overrides(pairs: list[str]) -> dict:
    out = {}
    for kv in pairs:
        if "=" not in kv:
            raise UsageError(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _cmd_synth(args) -> int:
    table = dio.synth_scores(CycleSpec(args.cycles), args.seed, args.structure)
    dio.save_score_table(args.out, table)
    return 0


def _cmd_cluster(args) -> int:
    fps = dio.load_fingerprints(args.fingerprints)
    cmap = cluster_blocks(fps, args.clusters)
    Path(args.out).write_text(json.dumps({"labels": [list(c) for c in cmap.labels]}))
    return 0


def _cmd_train_or_baseline(args) -> int:
    kv = {
        "run.method": args.method,
        "problem.score_table": args.table,
        "problem.min_size": args.min_size,
        "problem.max_size": args.max_size,
        "run.n_samples": args.n,
        "run.seed": args.seed,
        "run.n_seeds": args.n_seeds,
        "reward.beta": args.beta,
        "run.out_dir": args.out_dir,
    }
    if args.fingerprints:
        kv["hier.fingerprints"] = args.fingerprints
    if args.clusters:
        kv["hier.clusters"] = ",".join(str(c) for c in args.clusters)
    kv.update(_overrides(args.set))
    return run(RunConfig.from_mapping(kv))


def _save_model_checkpoint(cfg: RunConfig, sampler, spec: CycleSpec, out: Path) -> None:
    meta = {
        "method": cfg.method,
        "cycle_sizes": list(spec.cycle_sizes),
        "min_size": cfg.min_size,
        "max_size": cfg.max_size,
        "beta": cfg.beta,
        "seed": cfg.seed,
        "params": cfg.params,
    }
    if cfg.method in ("gfn-flat", "gfn-hier"):
        if cfg.method == "gfn-hier":
            meta["cluster_labels"] = [list(c) for c in sampler.env_.cmap.labels]
        dio.save_checkpoint(out / "checkpoint.npz", sampler.model_.state_arrays(), meta)
    else:
        arrays = {f"actor{i}": p for i, p in enumerate(sampler.actor_.params)}
        dio.save_checkpoint(out / "checkpoint.npz", arrays, meta)


def _cmd_sample(args) -> int:
    from .gflownet import TBModel, sample_library_set
    from .env_flat import FlatEnv
    from .env_hier import HierEnv
    from .baselines import ppo_sample
    from .neural import MLP
    from .validation import as_rng

    arrays, meta = dio.load_checkpoint(args.checkpoint)
    table = dio.load_score_table(args.table)
    spec = table.spec()
    if list(spec.cycle_sizes) != meta["cycle_sizes"]:
        raise DimensionError("score table dims do not match the checkpoint")
    constraint = SizeConstraint(meta["min_size"], meta["max_size"])
    p = meta.get("params", {})
    rng = as_rng(args.seed)
    if meta["method"] in ("gfn-flat", "gfn-hier"):
        if meta["method"] == "gfn-hier":
            env = HierEnv(spec, constraint, ClusterMap(meta["cluster_labels"]))
        else:
            env = FlatEnv(spec, constraint)
        model = TBModel(
            env,
            _param(p, "gfn.hidden_dim", 512, int),
            _param(p, "gfn.n_layers", 5, int),
            np.random.default_rng(0),
        )
        model.load_state_arrays(arrays)
        samples = sample_library_set(model, env, table, args.n, meta["beta"], rng)
    elif meta["method"] == "ppo":
        env = FlatEnv(spec, constraint)
        h = _param(p, "ppo.hidden_dim", 256, int)
        actor = MLP([env.obs_dim, h, h, env.n_actions], np.random.default_rng(0))
        actor.params = [arrays[f"actor{i}"] for i in range(len(actor.params))]
        samples = ppo_sample(actor, env, table, args.n, meta["beta"], rng)
    else:
        raise UsageError(f"checkpoint method {meta['method']!r} is not samplable")
    dio.save_sample_set(args.out, samples, spec, meta["beta"])
    return 0


def _cmd_evaluate(args) -> int:
    samples, spec, beta = dio.load_sample_set(args.samples)
    props = [dio.load_property_table(p) for p in args.properties]
    report = evaluate(samples, k=args.topk, props=props, bins=args.bins)
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=2))
    if args.hist_csv:
        with open(args.hist_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["property", "bin_left", "bin_right", "count"])
            for name, h in report.property_histograms.items():
                for j, count in enumerate(h["counts"]):
                    w.writerow([name, h["edges"][j], h["edges"][j + 1], count])
    return 0


def _cmd_report(args) -> int:
    reports = [json.loads(Path(p).read_text()) for p in args.inputs]
    Path(args.out).write_text(json.dumps(aggregate_reports(reports), indent=2))
    return 0


def _cmd_run(args) -> int:
    kv = dio.parse_config_file(args.config)
    kv.update(_overrides(args.set))
    return run(RunConfig.from_mapping(kv))


_DISPATCH = {
    "synth": _cmd_synth,
    "cluster": _cmd_cluster,
    "train": _cmd_train_or_baseline,
    "baseline": _cmd_train_or_baseline,
    "sample": _cmd_sample,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _DISPATCH[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (ParseError, ConfigError, DimensionError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except DelDesignError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
