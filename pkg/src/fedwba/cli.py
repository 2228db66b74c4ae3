"""Command-line entry point.

    python -m fedwba run <config.ini> [--seed S] [--workers W] [--out-dir DIR]
    python -m fedwba validate [--kl-eta ETA]
    python -m fedwba ablate <axis> <config.ini> [...]
    python -m fedwba --print-defaults

The config is an INI file with sections ``[experiment]``, ``[svgd]``,
``[aggregation]``, ``[data]`` and optionally ``[ablate]``. Any key left out
takes the default printed by ``--print-defaults``. The output directory is
``--out-dir`` if given, else ``$FEDWBA_OUT``, else ``./fedwba-out``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .barycenter import AggregationConfig
from .data import (load_idx, partition_label_skew, synth_blobs,
                   write_partition_manifest)
from .federation import (CSV_COLUMNS, CSV_VERSION, FederationConfig, config_to_dict,
                         run_experiment)
from .numerics import make_rng
from .svgd import KERNELS, SvgdConfig, SvgdKernel
from .validation import KL_SUITE_SVGD, run_all

log = logging.getLogger("fedwba")

DEFAULT_OUT = "fedwba-out"
DATA_SOURCES = ("synth", "idx")

# section -> key -> (type name, default); the single source of truth for
# parsing, validation messages and --print-defaults
SCHEMA = {
    "experiment": {
        "num_clients": ("int", 10),
        "sample_size": ("int", 2),
        "rounds": ("int", 50),
        "particles": ("int", 10),
        "hidden_dim": ("int", 100),
        "kde_bandwidth": ("float", 0.55),
        "init_scale": ("float", 0.1),
        "seed": ("int", 0),
        "aggregator": ("str", "wba"),
        "use_prior": ("bool", True),
        "client_weighting": ("str", "uniform"),
        "eval_mode": ("str", "local"),
        "workers": ("optint", None),
    },
    "svgd": {
        "iterations": ("int", 30),
        "step_eta": ("float", 0.01),
        "adagrad_lambda": ("float", 1e-8),
        "momentum": ("float", 0.9),
        "minibatch": ("optint", None),
        "kernel": ("str", "rbf"),
        "bandwidth": ("bandwidth", None),
        "degree": ("int", 2),
        "coef0": ("float", 1.0),
        "alpha": ("float", 1.0),
        "bias": ("float", 0.0),
    },
    "aggregation": {
        "fixed_point_iters": ("int", 1),
    },
    "data": {
        "source": ("str", "synth"),
        "images": ("str", ""),
        "labels": ("str", ""),
        "classes": ("int", 10),
        "per_class": ("int", 100),
        "dim": ("int", 20),
        "spread": ("float", 0.3),
        "labels_per_client": ("int", 5),
        "test_fraction": ("float", 1 / 6),
    },
}

ABLATION_GRIDS = {
    "kernel": ["rbf", "laplacian", "polynomial", "sigmoid"],
    "svgd_iters": ["20", "30", "40"],
    "bandwidth": ["1", "median", "12"],
    "particles": ["5", "10", "20"],
    "schedule_ratio": ["0.1", "0.2", "0.5"],
    "labels_per_client": ["2", "5", "10"],
    "eta": ["0.01", "0.02", "0.03"],
    "lambda": ["1e-7", "1e-8", "1e-9", "1e-10"],
    "kde_bandwidth": ["0.30", "0.55", "0.70"],
    "aggregation": ["wba", "param-avg"],
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSpec:
    source: str
    images: str
    labels: str
    classes: int
    per_class: int
    dim: int
    spread: float
    labels_per_client: int
    test_fraction: float


@dataclass(frozen=True)
class RunSpec:
    federation: FederationConfig
    data: DataSpec
    ablate_values: tuple = ()
    ablate_seeds: tuple = ()


def _convert(kind, raw, where):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "optint":
            return None if raw.strip().lower() in ("", "none") else int(raw)
        if kind == "bandwidth":
            return None if raw.strip().lower() in ("", "none", "median", "med") else float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from None


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def defaults_text() -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_format(d)}" for k, (_, d) in keys.items())
        lines.append("")
    lines.append("[ablate]")
    lines.append("# values = comma-separated grid for the chosen axis")
    lines.append("# seeds = comma-separated seeds (default: experiment seed)")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base_dir=".", seed=None, workers=None) -> RunSpec:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SCHEMA and section != "ablate":
            raise ConfigError(f"[{section}]: unknown section")
    for section, keys in SCHEMA.items():
        got = parser[section] if parser.has_section(section) else {}
        for key in got:
            if key not in keys:
                raise ConfigError(f"{section}.{key}: unknown key")
        values[section] = {
            key: _convert(kind, got[key], f"{section}.{key}") if key in got else default
            for key, (kind, default) in keys.items()
        }
    exp, sv, ag, da = (values[s] for s in ("experiment", "svgd", "aggregation", "data"))
    if seed is not None:
        exp["seed"] = seed
    if workers is not None:
        exp["workers"] = workers
    if exp["workers"] is None:
        exp["workers"] = os.cpu_count() or 1

    def build(section, fn):
        try:
            return fn()
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from None

    kernel = build("svgd", lambda: SvgdKernel(
        sv["kernel"], sv["bandwidth"], sv["degree"], sv["coef0"], sv["alpha"], sv["bias"]))
    svgd = build("svgd", lambda: SvgdConfig(
        sv["iterations"], sv["step_eta"], sv["adagrad_lambda"], sv["momentum"],
        sv["minibatch"], kernel))
    aggregation = build("aggregation", lambda: AggregationConfig(ag["fixed_point_iters"]))
    federation = build("experiment", lambda: FederationConfig(
        svgd=svgd, aggregation=aggregation, **exp))

    if da["source"] not in DATA_SOURCES:
        raise ConfigError(f"data.source: expected one of {DATA_SOURCES}, got {da['source']!r}")
    if da["source"] == "idx":
        for key in ("images", "labels"):
            if not da[key]:
                raise ConfigError(f"data.{key}: required when source = idx")
            path = Path(da[key])
            da[key] = str(path if path.is_absolute() else (Path(base_dir) / path).resolve())
    if not 0 <= da["test_fraction"] < 1:
        raise ConfigError("data.test_fraction: must lie in [0, 1)")
    if not 1 <= da["labels_per_client"] <= da["classes"]:
        raise ConfigError("data.labels_per_client: must lie in [1, classes]")
    data = DataSpec(**da)

    ablate_values, ablate_seeds = (), ()
    if parser.has_section("ablate"):
        sec = parser["ablate"]
        if "values" in sec:
            ablate_values = tuple(v.strip() for v in sec["values"].split(",") if v.strip())
        if "seeds" in sec:
            ablate_seeds = tuple(_convert("int", v, "ablate.seeds")
                                 for v in sec["seeds"].split(",") if v.strip())
    return RunSpec(federation, data, ablate_values, ablate_seeds)


def load_config(path, seed=None, workers=None) -> RunSpec:
    path = Path(path)
    return parse_config(path.read_text(), path.parent, seed, workers)


def config_snapshot(spec: RunSpec) -> str:
    """INI text that parses back to ``spec`` (paths made absolute)."""
    f, s, k = spec.federation, spec.federation.svgd, spec.federation.svgd.kernel
    sections = {
        "experiment": {key: getattr(f, key) for key in SCHEMA["experiment"]},
        "svgd": {"iterations": s.iterations, "step_eta": s.step_eta,
                 "adagrad_lambda": s.adagrad_lambda, "momentum": s.momentum,
                 "minibatch": s.minibatch, "kernel": k.kind, "bandwidth": k.bandwidth,
                 "degree": k.degree, "coef0": k.coef0, "alpha": k.alpha, "bias": k.bias},
        "aggregation": {"fixed_point_iters": f.aggregation.fixed_point_iters},
        "data": {key: getattr(spec.data, key) for key in SCHEMA["data"]},
    }
    lines = []
    for name, keys in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{key} = {_format(v)}" for key, v in keys.items())
        lines.append("")
    return "\n".join(lines)


def build_shards(spec: RunSpec):
    """Load or synthesize the data and split it across clients.

    The data stream is seeded from the experiment seed so that a config plus
    seed pins down the shards.
    """
    d, cfg = spec.data, spec.federation
    rng = make_rng([cfg.seed, 1])
    if d.source == "synth":
        dataset = synth_blobs(d.classes, d.per_class, d.dim, d.spread, rng)
    else:
        dataset = load_idx(d.images, d.labels, d.classes)
    return partition_label_skew(dataset, cfg.num_clients, d.labels_per_client,
                                d.test_fraction, rng)


def resolve_out_dir(flag) -> Path:
    if flag:
        return Path(flag)
    return Path(os.environ.get("FEDWBA_OUT") or DEFAULT_OUT)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def execute(spec: RunSpec, out_dir) -> dict:
    """Run one experiment into ``out_dir`` and return its summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(config_snapshot(spec))
    manifest = {
        "version": __version__,
        "seed": spec.federation.seed,
        "config": config_to_dict(spec.federation),
        "data": spec.data.__dict__,
        "csv_columns": list(CSV_COLUMNS),
        "csv_version": CSV_VERSION,
        "artifacts": {"config": "config.ini", "rounds_csv": "rounds.csv",
                      "summary": "summary.json", "timing": "timing.json",
                      "partition": "partition.json", "ensembles": "ensembles/"},
        "started": _now(),
        "finished": None,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, default=str))
    shards = build_shards(spec)
    write_partition_manifest(shards, out / "partition.json")
    result = run_experiment(spec.federation, shards, out)
    manifest["finished"] = _now()
    manifest_path.write_text(json.dumps(manifest, indent=2, default=str))
    summary = result.summary()
    summary["dim"] = result.shape.flat_len
    return summary


def cmd_run(args) -> int:
    spec = load_config(args.config, args.seed, args.workers)
    out = resolve_out_dir(args.out_dir)
    summary = execute(spec, out)
    print(f"final_mean_acc={summary['final_mean_acc']:.4f} "
          f"final_mean_ece={summary['final_mean_ece']:.4f} "
          f"rounds={summary['rounds']} comm_bytes_total={summary['comm_bytes_total']}")
    print(f"artifacts in {out}")
    return 0


def cmd_validate(args) -> int:
    kl_config = KL_SUITE_SVGD if args.kl_eta is None else replace(
        KL_SUITE_SVGD, step_eta=args.kl_eta)
    results = run_all(kl_config)
    for result in results:
        print(result.line())
    return 0 if all(r.passed for r in results) else 1


def apply_axis(spec: RunSpec, axis: str, value: str) -> RunSpec:
    f, d = spec.federation, spec.data
    svgd = f.svgd
    if axis == "kernel":
        if value not in KERNELS:
            raise ConfigError(f"ablate.values: unknown kernel {value!r}")
        f = replace(f, svgd=replace(svgd, kernel=replace(svgd.kernel, kind=value)))
    elif axis == "svgd_iters":
        f = replace(f, svgd=replace(svgd, iterations=int(value)))
    elif axis == "bandwidth":
        bw = _convert("bandwidth", value, "ablate.values")
        f = replace(f, svgd=replace(svgd, kernel=replace(svgd.kernel, bandwidth=bw)))
    elif axis == "particles":
        f = replace(f, particles=int(value))
    elif axis == "schedule_ratio":
        f = replace(f, sample_size=max(1, round(float(value) * f.num_clients)))
    elif axis == "labels_per_client":
        d = replace(d, labels_per_client=int(value))
    elif axis == "eta":
        f = replace(f, svgd=replace(svgd, step_eta=float(value)))
    elif axis == "lambda":
        f = replace(f, svgd=replace(svgd, adagrad_lambda=float(value)))
    elif axis == "kde_bandwidth":
        f = replace(f, kde_bandwidth=float(value))
    elif axis == "aggregation":
        f = replace(f, aggregator=value)
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}")
    return replace(spec, federation=f, data=d)


ABLATE_COLUMNS = ("axis", "value", "seed", "final_mean_acc", "final_mean_ece", "rounds",
                  "comm_bytes_total", "comm_bytes_per_round", "message_bytes")


def cmd_ablate(args) -> int:
    if args.axis not in ABLATION_GRIDS:
        print(f"error: unknown axis {args.axis!r}; expected one of "
              f"{', '.join(ABLATION_GRIDS)}", file=sys.stderr)
        return 2
    spec = load_config(args.config, args.seed, args.workers)
    grid = spec.ablate_values or tuple(ABLATION_GRIDS[args.axis])
    seeds = spec.ablate_seeds if args.seed is None and spec.ablate_seeds else (
        spec.federation.seed,)
    out = resolve_out_dir(args.out_dir) / f"ablate-{args.axis}"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in grid:
        cell = apply_axis(spec, args.axis, value)
        for seed in seeds:
            run = replace(cell, federation=replace(cell.federation, seed=seed))
            summary = execute(run, out / f"{value}-seed{seed}")
            per_round = run.federation.comm_bytes_per_round(summary["dim"])
            rows.append((args.axis, value, seed, repr(summary["final_mean_acc"]),
                         repr(summary["final_mean_ece"]), summary["rounds"],
                         summary["comm_bytes_total"], per_round, summary["message_bytes"]))
            print(f"{args.axis}={value} seed={seed} acc={summary['final_mean_acc']:.4f} "
                  f"ece={summary['final_mean_ece']:.4f} comm/round={per_round}")
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATE_COLUMNS)
        writer.writerows(rows)
    print(f"summary in {out / 'summary.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedwba", description="Particle-based Bayesian federated learning simulator.")
    parser.add_argument("--print-defaults", action="store_true",
                        help="print the default config and exit")
    parser.add_argument("--version", action="version", version=f"fedwba {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every round")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override experiment.seed")
    common.add_argument("--workers", type=int, help="override experiment.workers")
    common.add_argument("--out-dir", help="output directory (default: $FEDWBA_OUT or "
                        f"./{DEFAULT_OUT})")
    sub = parser.add_subparsers(dest="command")
    run = sub.add_parser("run", parents=[common], help="run one experiment")
    run.add_argument("config")
    run.set_defaults(func=cmd_run)
    val = sub.add_parser("validate", help="run the convergence and OT oracle suites")
    val.add_argument("--kl-eta", type=float, help="override the KL suite step size")
    val.set_defaults(func=cmd_validate)
    abl = sub.add_parser("ablate", parents=[common], help="sweep one config axis")
    abl.add_argument("axis", help=", ".join(ABLATION_GRIDS))
    abl.add_argument("config")
    abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(defaults_text())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    config = getattr(args, "config", None)
    if config is not None and not Path(config).is_file():
        print(f"error: config file not found: {config}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
