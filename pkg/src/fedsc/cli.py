"""Command line front end.

Subcommands: ``generate`` (write train/test dataset files), ``run`` (one
federated experiment, metrics to CSV), ``compare`` (two metrics files side by
side), ``theory`` (bound calculators on a constants file).

Configuration is layered: built-in defaults, then ``--preset``, then an
INI-style config file of ``key = value`` lines under ``[data]``,
``[partition]``, ``[federation]`` and ``[output]`` sections, then flags.
Unknown config keys are hard errors.  The ``FEDSC_SEED`` environment
variable overrides the seed from every other source.  Exit codes: 0 success,
2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .data import (
    apply_long_tail,
    generate_gaussian_blobs,
    load_dataset,
    PartitionConfig,
    save_dataset,
    split_holdout,
)
from .errors import (
    FedscError,
    InvalidArgumentError,
    InvalidConfigError,
    InvalidConstantsError,
)
from .federation import (
    FederationConfig,
    read_metrics_csv,
    rounds_to_accuracy,
    run_experiment,
    write_metrics_csv,
    write_run_metadata,
)
from .model import OptimizerConfig
from .theory import (
    TheoryConstants,
    theorem1_bound,
    theorem2_eta_threshold,
    theorem3_min_rounds,
)

_HOLDOUT_FRACTION = 0.1


@dataclass
class RunConfig:
    """Every knob the generate/run commands understand, flattened."""

    num_classes: int = 10
    per_class: int = 500
    dim: int = 16
    separation: float = 4.0
    scheme: str = "dirichlet"
    num_clients: int = 10
    alpha: float = 0.2
    rho: float = 100.0
    inner_scheme: str = "dirichlet"
    algorithm: str = "fedsc"
    rounds: int = 100
    local_epochs: int = 10
    participation_fraction: float = 1.0
    neighbors: int = 2
    temperature: float = 0.05
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 64
    hidden_dim: int = 64
    feature_dim: int = 32
    rpcl_weight: float = 1.0
    cpdr_weight: float = 1.0
    cpdr_norm: str = "l1"
    seed: int = 0
    threads: int = 0  # 0 = available cores
    out: str = "runs"


# config-file schema: section -> key -> RunConfig field (same name except out)
_SCHEMA = {
    "data": ("num_classes", "per_class", "dim", "separation"),
    "partition": ("scheme", "num_clients", "alpha", "rho", "inner_scheme"),
    "federation": (
        "algorithm", "rounds", "local_epochs", "participation_fraction",
        "neighbors", "temperature", "learning_rate", "momentum",
        "weight_decay", "batch_size", "hidden_dim", "feature_dim",
        "rpcl_weight", "cpdr_weight", "cpdr_norm", "seed", "threads",
    ),
    "output": ("dir",),
}

_PRESETS = {
    "desk": {"rounds": 30, "local_epochs": 5},
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(field_name: str, raw: str):
    kind = _FIELD_TYPES[field_name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise InvalidConfigError(f"key '{field_name}': {exc}") from exc


def _load_config_file(path: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config file: {exc}") from exc
    except configparser.Error as exc:
        raise InvalidConfigError(f"cannot parse config file: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise InvalidConfigError(f"unknown config section '[{section}]'")
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise InvalidConfigError(
                    f"unknown config key '{key}' in section '[{section}]'"
                )
            field_name = "out" if (section, key) == ("output", "dir") else key
            out[field_name] = _coerce(field_name, raw)
    return out


def _resolve_run_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.preset:
        if args.preset not in _PRESETS:
            raise InvalidConfigError(f"unknown preset '{args.preset}'")
        values.update(_PRESETS[args.preset])
    if args.config:
        values.update(_load_config_file(args.config))
    for name in _FIELD_TYPES:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    env_seed = os.environ.get("FEDSC_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError as exc:
            raise InvalidConfigError(f"FEDSC_SEED must be an integer: {exc}") from exc
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise InvalidConfigError(str(exc)) from exc
    try:
        # validate derived configs eagerly so bad values exit as config errors
        _partition_config(cfg)
        _federation_config(cfg)
    except InvalidArgumentError as exc:
        raise InvalidConfigError(str(exc)) from exc
    return cfg


def _partition_config(cfg: RunConfig, scheme: str | None = None) -> PartitionConfig:
    return PartitionConfig(
        scheme=scheme or cfg.scheme,
        num_clients=cfg.num_clients,
        alpha=cfg.alpha,
        rho=cfg.rho,
        inner_scheme=cfg.inner_scheme,
        seed=cfg.seed,
    )


def _federation_config(cfg: RunConfig) -> FederationConfig:
    return FederationConfig(
        rounds=cfg.rounds,
        num_clients=cfg.num_clients,
        local_epochs=cfg.local_epochs,
        participation_fraction=cfg.participation_fraction,
        neighbors=cfg.neighbors,
        temperature=cfg.temperature,
        optimizer=OptimizerConfig(cfg.learning_rate, cfg.momentum,
                                  cfg.weight_decay, cfg.batch_size),
        algorithm=cfg.algorithm,
        seed=cfg.seed,
        hidden_dim=cfg.hidden_dim,
        feature_dim=cfg.feature_dim,
        rpcl_weight=cfg.rpcl_weight,
        cpdr_weight=cfg.cpdr_weight,
        cpdr_norm=cfg.cpdr_norm,
        threads=cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1),
    )


def cmd_generate(cfg: RunConfig) -> int:
    """Write train.fsd and test.fsd plus a per-class count table."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_gaussian_blobs(cfg.num_classes, cfg.per_class, cfg.dim,
                                      cfg.separation, cfg.seed)
    train, test = split_holdout(dataset, _HOLDOUT_FRACTION, cfg.seed)
    if cfg.scheme == "long_tailed":
        train = apply_long_tail(train, cfg.rho, cfg.seed)
    save_dataset(out / "train.fsd", train)
    save_dataset(out / "test.fsd", test)
    print(f"wrote {out / 'train.fsd'} ({train.num_samples} samples)")
    print(f"wrote {out / 'test.fsd'} ({test.num_samples} samples)")
    print("class train_count test_count")
    train_counts, test_counts = train.class_counts(), test.class_counts()
    for j in range(cfg.num_classes):
        print(f"{j + 1} {train_counts[j]} {test_counts[j]}")
    return 0


def cmd_run(cfg: RunConfig) -> int:
    """Run one experiment against previously generated dataset files."""
    out = Path(cfg.out)
    train = load_dataset(out / "train.fsd")
    test = load_dataset(out / "test.fsd")
    # long-tail thinning already happened at generate time
    scheme = cfg.inner_scheme if cfg.scheme == "long_tailed" else cfg.scheme
    partition = _partition_config(cfg, scheme=scheme)
    federation = _federation_config(cfg)
    result = run_experiment(federation, train, partition, test=test)

    metrics_path = out / f"metrics_{cfg.algorithm}.csv"
    write_metrics_csv(metrics_path, result.metrics)
    meta = {name: getattr(cfg, name) for name in _FIELD_TYPES}
    meta["aggregation_weights"] = "renormalized-sigmoid"
    meta["bootstrap"] = "ce-only-until-prototypes-exist"
    meta["prototype_refresh"] = "latest-report-per-client"
    write_run_metadata(out / f"meta_{cfg.algorithm}.txt", meta)

    for m in result.metrics:
        print(f"round {m.round} accuracy {m.accuracy:.6f} loss {m.loss_total:.6f}")
    print(f"wrote {metrics_path}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    """Key=value comparison of two metrics files."""
    metrics_a = read_metrics_csv(args.metrics_a)
    metrics_b = read_metrics_csv(args.metrics_b)
    if not metrics_a or not metrics_b:
        raise InvalidArgumentError("metrics files must contain at least one round")
    final_a, final_b = metrics_a[-1].accuracy, metrics_b[-1].accuracy
    threshold = args.threshold if args.threshold is not None else 0.9 * final_a
    hit_a = rounds_to_accuracy(metrics_a, threshold)
    hit_b = rounds_to_accuracy(metrics_b, threshold)
    print(f"final_accuracy_a={final_a:.6f}")
    print(f"final_accuracy_b={final_b:.6f}")
    print(f"delta_final_accuracy={final_b - final_a:.6f}")
    print(f"threshold={threshold:.6f}")
    print(f"rounds_to_threshold_a={'none' if hit_a is None else hit_a}")
    print(f"rounds_to_threshold_b={'none' if hit_b is None else hit_b}")
    if hit_a is not None and hit_b is not None:
        print(f"delta_rounds_to_threshold={hit_b - hit_a}")
    else:
        print("delta_rounds_to_threshold=none")
    return 0


_CONSTANT_KEYS = {
    "l1": float, "l2": float, "b": float, "sigma_sq": float,
    "num_classes": int, "m": int, "local_epochs": int, "eta": float,
    "xi": float, "l0": float, "l_star": float, "l_re": float,
}


def _load_constants(path: str) -> dict:
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InvalidConstantsError(f"cannot read constants file: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidConstantsError(f"line {lineno}: expected key=value")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _CONSTANT_KEYS:
            raise InvalidConstantsError(f"line {lineno}: unknown constant '{key}'")
        try:
            values[key] = _CONSTANT_KEYS[key](raw)
        except ValueError as exc:
            raise InvalidConstantsError(f"line {lineno}: {exc}") from exc
    return values


def cmd_theory(args: argparse.Namespace) -> int:
    """Evaluate the bound calculators on a key=value constants file."""
    values = _load_constants(args.constants)
    l_re = values.pop("l_re", None)
    required = ("l1", "l2", "b", "sigma_sq", "num_classes", "m",
                "local_epochs", "eta")
    missing = [k for k in required if k not in values]
    if missing:
        raise InvalidConstantsError(f"missing constants: {', '.join(missing)}")
    constants = TheoryConstants(**values)
    if l_re is not None:
        print(f"theorem1_bound={theorem1_bound(l_re, constants):.6f}")
    print(f"theorem2_eta_threshold={theorem2_eta_threshold(constants):.6f}")
    if constants.xi is not None:
        plan = theorem3_min_rounds(constants)
        print(f"theorem3_min_rounds={plan.min_rounds:.6f}")
        print(f"theorem3_eta_max={plan.eta_max:.6f}")
    return 0


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI-style config file")
    parser.add_argument("--preset", help="named preset (desk)")
    for name, kind in _FIELD_TYPES.items():
        flag = "--" + name.replace("_", "-")
        if kind == "int":
            parser.add_argument(flag, type=int, default=None)
        elif kind == "float":
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, default=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsc",
        description="Desk-scale federated learning sandbox with prototype "
                    "collaboration and executable convergence bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write train/test dataset files")
    _add_run_flags(gen)

    run = sub.add_parser("run", help="run one federated experiment")
    _add_run_flags(run)

    cmp_ = sub.add_parser("compare", help="compare two metrics CSV files")
    cmp_.add_argument("metrics_a")
    cmp_.add_argument("metrics_b")
    cmp_.add_argument("--threshold", type=float, default=None,
                      help="accuracy target (default: 90%% of file A's final)")

    theory = sub.add_parser("theory", help="evaluate the bound calculators")
    theory.add_argument("constants", help="key=value constants file")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command in ("generate", "run"):
            cfg = _resolve_run_config(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_theory(args)
    except (InvalidConfigError, InvalidConstantsError) as exc:
        print(f"fedsc: {exc.code}: {exc}", file=sys.stderr)
        return 2
    except FedscError as exc:
        print(f"fedsc: {exc.code}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"fedsc: io-error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
