"""Command-line surface tying the package into end-to-end experiment protocols.

Verbs: prepare, train, bootstrap, significance, feature-curve, search,
depth-sweep. Exit codes: 0 success or valid experimental outcome (a diverged
training run is an outcome, reported as such), 1 usage error, 2 data error,
3 internal error. All artifacts are written without timestamps, so reruns
with identical inputs and seeds are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    build_dataset,
    combine_assays,
    load_descriptor_table,
    load_labels,
    load_prepared,
    make_folds,
    save_prepared,
    select_assays,
    split_train_test,
    zscore_normalize,
)
from .evaluation import (
    EvalReport,
    bootstrap_variance,
    config_hash,
    cross_fold_evaluate,
    significance_test,
)
from .exceptions import DataError, QsarnnError
from .feature_selection import rank_features, subset_features, write_ranking
from .network import NetworkConfig, save_model
from .search import (
    apply_overrides,
    default_space,
    point_to_configs,
    run_search,
    write_trials,
)
from .training import TrainSpec, default_quotas

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

MODES = ("single", "combined", "multi")


def load_run_config(path: str | Path) -> dict:
    """Read and sanity check the flat JSON run configuration."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file {path} does not exist")
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise UsageError(f"config file {path} is not valid JSON: {err}") from None
    for key in ("data_dir", "mode", "out_dir"):
        if key not in config:
            raise UsageError(f"config is missing required key {key!r}")
    if config["mode"] not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {config['mode']!r}")
    if config["mode"] in ("single", "combined") and "assay" not in config:
        raise UsageError(f"mode {config['mode']!r} requires an 'assay' key")
    if config["mode"] == "combined" and "combine_with" not in config:
        raise UsageError("combined mode requires a 'combine_with' list")
    return config


def build_views(config: dict, train, test):
    """Mode-specific train/test dataset views.

    single: one assay; combined: the primary assay's training set augmented
    with related assays (test stays primary-only); multi: all assays.
    """
    mode = config["mode"]
    if mode == "single":
        return select_assays(train, [config["assay"]]), select_assays(test, [config["assay"]])
    if mode == "combined":
        others = list(config["combine_with"])
        return (
            combine_assays(config["assay"], others, train),
            combine_assays(config["assay"], others, test),
        )
    return train, test


def network_config_from(config: dict, input_dim: int, n_assays: int) -> NetworkConfig:
    hidden = tuple(config.get("hidden_sizes", (128,)))
    dropout = config.get("dropout", 0.0)
    if np.isscalar(dropout):
        dropout = (float(dropout),) * (1 + len(hidden))
    return NetworkConfig(
        input_dim=input_dim,
        hidden_sizes=hidden,
        output_dim=n_assays,
        activation=config.get("activation", "sigmoid"),
        dropout_rates=tuple(dropout),
        init_scale=float(config.get("init_scale", 0.05)),
        bottom_scale_log_multiplier=float(config.get("bottom_scale_log_multiplier", 0.0)),
    )


def train_spec_from(config: dict, view, seed_override: int | None = None) -> TrainSpec:
    quotas = config.get("assay_quotas")
    multi_task = view.n_assays > 1
    if quotas is None and multi_task:
        quotas = default_quotas(view.assay_ids, int(config.get("batch_size", 128)))
    spec = TrainSpec(
        epochs=int(config.get("epochs", 30)),
        initial_lr=float(config.get("initial_lr", 0.05)),
        anneal_mode=config.get("anneal_mode", "exponential"),
        anneal_delay_fraction=float(config.get("anneal_delay_fraction", 0.5)),
        momentum=float(config.get("momentum", 0.9)),
        weight_cost=float(config.get("weight_cost", 0.0)),
        batch_size=int(config.get("batch_size", 128)),
        assay_quotas=quotas,
        seed=int(config.get("seed", 0)),
    )
    if seed_override is not None:
        spec = replace(spec, seed=seed_override)
    try:
        spec.validate(multi_task=multi_task)
    except ValueError as err:
        raise UsageError(f"invalid training settings: {err}") from None
    return spec


def _out_dir(config: dict, args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(config["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, config: dict, extra: dict | None = None) -> None:
    payload = {
        "command": command,
        "qsarnn_version": __version__,
        "config": config,
    }
    if extra:
        payload.update(extra)
    (out / "manifest.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8"
    )


def _report_path(out: Path, assay: str) -> Path:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in assay)
    return out / f"report_{safe}.json"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    table = load_descriptor_table(args.descriptors)
    labels = load_labels(args.labels)
    normalized, stats = zscore_normalize(table)
    data = build_dataset(normalized, labels)
    train, test = split_train_test(data, args.test_fraction, args.seed)
    assignment = make_folds(train, args.folds, args.seed)
    train = train.with_fold_ids(assignment.fold_ids)
    out = Path(args.out)
    save_prepared(out, normalized, stats, train, test, assignment, args.test_fraction, args.seed)
    _write_manifest(
        out,
        "prepare",
        {
            "descriptors": str(args.descriptors),
            "labels": str(args.labels),
            "test_fraction": args.test_fraction,
            "folds": args.folds,
            "seed": args.seed,
        },
    )
    print(
        f"prepared {data.n_cases} cases over {data.n_assays} assays: "
        f"{train.n_cases} train / {test.n_cases} test, {args.folds} folds -> {out}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    train_all, test_all, stats, _ = load_prepared(config["data_dir"])
    train_view, test_view = build_views(config, train_all, test_all)
    net_config = network_config_from(config, train_view.n_features, train_view.n_assays)
    spec = train_spec_from(config, train_view)
    out = _out_dir(config, args)

    fold_params: list = []
    reports = cross_fold_evaluate(
        train_view,
        test_view,
        net_config,
        spec,
        model_label=config.get("model_label", "MULTI" if config["mode"] == "multi" else "NNET"),
        scoring="test",
        threads=args.threads,
        return_params=fold_params,
    )
    for i, params in enumerate(fold_params):
        save_model(
            out / f"model_fold{i}.bin",
            params,
            config=net_config,
            seed=spec.seed,
            descriptor_names=train_view.descriptors.descriptor_names,
            norm_stats_ref="norm_stats.json",
        )
    for assay, report in reports.items():
        _report_path(out, assay).write_text(report.to_json(), encoding="utf-8")
    _write_manifest(
        out, "train", config, {"config_hash": config_hash(net_config, spec)}
    )
    for assay, report in reports.items():
        if report.status == "diverged":
            print(f"{assay}: training diverged (reported, not fatal)")
        else:
            print(f"{assay}: mean test AUC {report.mean_auc:.4f}")
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    train_all, test_all, _, _ = load_prepared(config["data_dir"])
    train_view, test_view = build_views(config, train_all, test_all)
    net_config = network_config_from(config, train_view.n_features, train_view.n_assays)
    spec = train_spec_from(config, train_view)
    out = _out_dir(config, args)

    missing = [a for a in train_view.assay_ids if not _report_path(out, a).exists()]
    if missing:
        raise DataError(
            f"no report for assay(s) {missing}; run `qsarnn train` before bootstrap"
        )
    variances = bootstrap_variance(
        train_view, test_view, net_config, spec,
        resamples=args.resamples, threads=args.threads,
    )
    for assay, variance in variances.items():
        path = _report_path(out, assay)
        report = EvalReport.from_json(path.read_text(encoding="utf-8"))
        report.bootstrap_variance = variance
        report.bootstrap_resamples = args.resamples
        path.write_text(report.to_json(), encoding="utf-8")
        print(f"{assay}: bootstrap variance {variance:.6g} ({args.resamples} resamples)")
    return EXIT_OK


def cmd_significance(args) -> int:
    report_a = EvalReport.from_json(Path(args.report_a).read_text(encoding="utf-8"))
    report_b = EvalReport.from_json(Path(args.report_b).read_text(encoding="utf-8"))
    for name, report in (("A", report_a), ("B", report_b)):
        if report.bootstrap_variance is None:
            raise DataError(
                f"report {name} ({report.model_label}/{report.assay_id}) has no "
                "bootstrap variance; run `qsarnn bootstrap` first"
            )
    resamples_a = report_a.bootstrap_resamples or 8
    resamples_b = report_b.bootstrap_resamples or 8
    if resamples_a != resamples_b:
        raise DataError(
            f"reports used different resample counts ({resamples_a} vs {resamples_b})"
        )
    result = significance_test(
        report_a.mean_auc,
        report_b.mean_auc,
        report_a.bootstrap_variance,
        report_b.bootstrap_variance,
        resamples=resamples_a,
    )
    print(result.verdict())
    print(result.to_json())
    return EXIT_OK


def _parse_ks(text: str, n_features: int) -> list[int]:
    ks = []
    for token in text.split(","):
        token = token.strip()
        ks.append(n_features if token == "all" else int(token))
    return ks


def cmd_feature_curve(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    if "assay" not in config:
        raise UsageError("feature-curve requires an 'assay' key to rank features against")
    train_all, test_all, _, _ = load_prepared(config["data_dir"])
    train_view, test_view = build_views(config, train_all, test_all)
    out = _out_dir(config, args)

    ranking = rank_features(train_view, config["assay"])
    write_ranking(ranking, train_view.descriptors.descriptor_names, out / "ranking.csv")
    ks = _parse_ks(args.ks, train_view.n_features)
    rows = []
    for k in ks:
        train_k = subset_features(train_view, ranking, k)
        test_k = subset_features(test_view, ranking, k)
        net_config = network_config_from(config, train_k.n_features, train_k.n_assays)
        spec = train_spec_from(config, train_k)
        reports = cross_fold_evaluate(
            train_k, test_k, net_config, spec, scoring="test", threads=args.threads
        )
        report = reports[config["assay"]]
        mean = "" if report.mean_auc is None else repr(float(report.mean_auc))
        rows.append((k, mean))
        print(f"k={k}: mean test AUC {report.mean_auc}")
    curve = out / "feature_curve.csv"
    with curve.open("w", encoding="utf-8") as fh:
        fh.write("k,mean_auc\n")
        for k, mean in rows:
            fh.write(f"{k},{mean}\n")
    _write_manifest(out, "feature-curve", config, {"ks": ks})
    return EXIT_OK


def _search_once(config: dict, train_view, depth: int, args, space_override: dict | None):
    space = default_space(depth, multi_task=train_view.n_assays > 1)
    if space_override:
        space = apply_overrides(space, space_override)
    target = config.get("assay") if train_view.n_assays > 1 else None
    return space, run_search(
        train_view,
        depth=depth,
        multi_task=train_view.n_assays > 1,
        budget=args.budget,
        strategy=args.strategy,
        seed=int(config.get("seed", 0)),
        batch_size=int(config.get("batch_size", 128)),
        target_assay=target,
        space=space,
        threads=args.threads,
    )


def _config_from_point(config: dict, point: dict, depth: int) -> dict:
    winner = dict(config)
    winner["hidden_sizes"] = [int(point[f"hidden{i}"]) for i in range(1, depth + 1)]
    winner["dropout"] = [
        float(point["dropout_input"]),
        *(float(point[f"dropout_hidden{i}"]) for i in range(1, depth + 1)),
    ]
    for key in (
        "activation", "anneal_mode",
    ):
        winner[key] = point[key]
    for key in (
        "epochs", "initial_lr", "anneal_delay_fraction", "momentum",
        "weight_cost", "init_scale", "bottom_scale_log_multiplier",
    ):
        winner[key] = point[key]
    winner["epochs"] = int(point["epochs"])
    return winner


def cmd_search(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    train_all, _, _, _ = load_prepared(config["data_dir"])
    train_view, _ = build_views(config, train_all, train_all.take(np.empty(0, dtype=np.int64)))
    out = _out_dir(config, args)
    depth = args.depth if args.depth is not None else len(config.get("hidden_sizes", (128,)))
    override = None
    if args.space_override:
        override = json.loads(Path(args.space_override).read_text(encoding="utf-8"))

    space, (best, history) = _search_once(config, train_view, depth, args, override)
    write_trials(out / "trials.csv", space, history)
    winner = _config_from_point(config, best.point, depth)
    winner["search_val_auc"] = best.val_auc
    (out / "best_config.json").write_text(
        json.dumps(winner, sort_keys=True, indent=2), encoding="utf-8"
    )
    _write_manifest(
        out, "search", config,
        {"budget": args.budget, "strategy": args.strategy, "depth": depth},
    )
    print(f"best of {args.budget} trials: validation AUC {best.val_auc:.4f}")
    return EXIT_OK


def cmd_depth_sweep(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    train_all, _, _, _ = load_prepared(config["data_dir"])
    train_view, _ = build_views(config, train_all, train_all.take(np.empty(0, dtype=np.int64)))
    out = _out_dir(config, args)
    override = None
    if args.space_override:
        override = json.loads(Path(args.space_override).read_text(encoding="utf-8"))
    depths = [int(d) for d in args.depths.split(",")]

    rows = []
    for depth in depths:
        per_depth = override
        if override:
            # a shared override file may name dimensions absent at this depth
            names = set(default_space(depth, train_view.n_assays > 1).names)
            per_depth = {k: v for k, v in override.items() if k in names}
        space, (best, history) = _search_once(config, train_view, depth, args, per_depth)
        write_trials(out / f"trials_depth{depth}.csv", space, history)
        rows.append((depth, best.val_auc))
        print(f"depth {depth}: best validation AUC {best.val_auc:.4f}")
    sweep = out / "depth_sweep.csv"
    with sweep.open("w", encoding="utf-8") as fh:
        fh.write("depth,mean_auc\n")
        for depth, value in rows:
            fh.write(f"{depth},{value!r}\n")
    _write_manifest(out, "depth-sweep", config, {"depths": depths, "budget": args.budget})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="qsarnn", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=str, default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads for folds/trials")

    p = sub.add_parser("prepare", help="normalize, split, and fold raw CSV data")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="cross-fold train and report test AUC")
    p.add_argument("--config", required=True)
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bootstrap", help="attach bootstrap variance to reports")
    p.add_argument("--config", required=True)
    p.add_argument("--resamples", type=int, default=8)
    add_common(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("significance", help="compare two reports")
    p.add_argument("--report-a", required=True)
    p.add_argument("--report-b", required=True)
    p.set_defaults(func=cmd_significance)

    p = sub.add_parser("feature-curve", help="AUC at several feature counts")
    p.add_argument("--config", required=True)
    p.add_argument("--ks", required=True, help="comma list of feature counts; 'all' allowed")
    add_common(p)
    p.set_defaults(func=cmd_feature_curve)

    p = sub.add_parser("search", help="sequential metaparameter search")
    p.add_argument("--config", required=True)
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--strategy", choices=("random", "gp"), default="gp")
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--space-override", type=str, default=None)
    add_common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("depth-sweep", help="search per depth, emit a summary table")
    p.add_argument("--config", required=True)
    p.add_argument("--depths", type=str, default="1,2,3")
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--strategy", choices=("random", "gp"), default="gp")
    p.add_argument("--space-override", type=str, default=None)
    add_common(p)
    p.set_defaults(func=cmd_depth_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except QsarnnError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
