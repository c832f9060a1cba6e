"""Command-line interface.

One executable, subcommand style: gen-city, featurize, train, predict,
evaluate, ablate, tune, export-pca-scatter.  Every run prints its
resolved configuration, all randomness flows from explicit seeds, and
reruns with identical inputs produce byte-identical outputs.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error;
failures print one machine-parsable line ``category/ErrorName: detail``.
Set CB_LOG=debug|info|warn to control logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import gbdt, pipeline, syncity
from .errors import CityBoostError, SchemaError, UsageError
from .gbdt import ObjectiveConfig, TrainParams
from .metrics import eval_core, eval_extended
from .pipeline import PipelineConfig
from .tables import FeatureTable

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

_TRAIN_PARAM_FLAGS = [f.name for f in dataclass_fields(TrainParams)]


def _setup_logging() -> None:
    level = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING}.get(
        os.environ.get("CB_LOG", "warn").lower(), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _print_config(verb: str, resolved: dict) -> None:
    for key in sorted(resolved):
        print(f"[config] {verb}.{key} = {resolved[key]}")


def _read_kv_file(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file {path} does not exist")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_weights(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.split(",") if p != ""]
    if len(parts) != 3:
        raise UsageError(f"expected 3 comma-separated class weights, got {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _resolve_train_params(cfg: dict[str, str], args) -> TrainParams:
    values: dict = {}
    for name in _TRAIN_PARAM_FLAGS:
        default = getattr(TrainParams, name)
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
        elif name in cfg:
            values[name] = type(default)(cfg[name]) if not isinstance(default, int) else int(cfg[name])
        else:
            values[name] = default
    return TrainParams(**values)


def _resolve_path(args, cfg: dict[str, str], name: str) -> str:
    """Path arguments may come from the flag or the run-config file."""
    value = getattr(args, name, None) or cfg.get(name)
    if value is None:
        raise UsageError(f"--{name} is required (flag or config key '{name}')")
    return value


def _resolve_pipeline_config(cfg: dict[str, str], args) -> PipelineConfig:
    task = getattr(args, "task", None) or cfg.get("task", "core")
    kwargs: dict = {"task": task}
    for name, cast in (
        ("n_pc_last", int),
        ("n_pc_sum", int),
        ("window", int),
        ("knn_k", int),
        ("n_clusters", int),
        ("min_count", int),
        ("alpha", float),
    ):
        flag = getattr(args, name, None)
        if flag is not None:
            kwargs[name] = flag
        elif name in cfg:
            kwargs[name] = cast(cfg[name])
    weights = getattr(args, "weights", None) or cfg.get("class_weights")
    if weights is not None:
        kwargs["class_weights"] = (
            weights if isinstance(weights, tuple) else _parse_weights(weights)
        )
    return PipelineConfig(**kwargs)


def _add_threads_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads",
        type=int,
        default=0,
        help="worker threads, 0 = auto; outputs are identical at any setting",
    )


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--num-leaves", dest="num_leaves", type=int, default=None)
    parser.add_argument("--num-iters", dest="num_iters", type=int, default=None)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    parser.add_argument("--min-data-in-leaf", dest="min_data_in_leaf", type=int, default=None)
    parser.add_argument("--lambda-l2", dest="lambda_l2", type=float, default=None)
    parser.add_argument(
        "--early-stopping-rounds", dest="early_stopping_rounds", type=int, default=None
    )
    parser.add_argument("--max-bins", dest="max_bins", type=int, default=None)
    parser.add_argument("--feature-fraction", dest="feature_fraction", type=float, default=None)
    parser.add_argument("--bagging-fraction", dest="bagging_fraction", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cityboost",
        description="Counter-driven traffic forecasting toolkit",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-city", help="generate a synthetic city CSV bundle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--counters", type=int, default=20)
    p.add_argument("--nodes", type=int, default=60)
    p.add_argument("--edges", type=int, default=120)
    p.add_argument("--supersegments", type=int, default=8)
    p.add_argument("--weeks", type=int, default=2)
    p.add_argument("--slots-per-day", dest="slots_per_day", type=int, default=96)
    p.add_argument("--peak-amplitude", dest="peak_amplitude", type=float, default=400.0)
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=60.0)
    p.add_argument("--label-rate", dest="label_rate", type=float, default=0.05)

    p = sub.add_parser("featurize", help="fit artifacts and assemble feature tables")
    p.add_argument("--task", choices=("core", "extended"), default=None)
    p.add_argument("--world", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="key=value run config file")
    p.add_argument("--n-pc-last", dest="n_pc_last", type=int, default=None)
    p.add_argument("--n-pc-sum", dest="n_pc_sum", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--knn-k", dest="knn_k", type=int, default=None)
    p.add_argument("--n-clusters", dest="n_clusters", type=int, default=None)
    p.add_argument("--min-count", dest="min_count", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--weights", default=None, help="class weights green,yellow,red")
    _add_threads_flag(p)

    p = sub.add_parser("train", help="train a boosted ensemble on assembled features")
    p.add_argument("--features", default=None, help="featurize output directory")
    p.add_argument("--out", default=None, help="model JSON path")
    p.add_argument("--config", default=None, help="key=value run config file")
    p.add_argument("--no-init", action="store_true", help="train from zero init scores")
    p.add_argument("--log-out", default=None, help="training log CSV path")
    _add_param_flags(p)
    _add_threads_flag(p)

    p = sub.add_parser("predict", help="predict with a trained model")
    p.add_argument("--model", default=None)
    p.add_argument("--features", default=None)
    p.add_argument("--split", choices=("train", "valid"), default="valid")
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="key=value run config file")
    p.add_argument("--no-init", action="store_true")
    _add_threads_flag(p)

    p = sub.add_parser("evaluate", help="score predictions against labels")
    p.add_argument("--preds", default=None)
    p.add_argument("--features", default=None)
    p.add_argument("--split", choices=("train", "valid"), default="valid")
    p.add_argument("--config", default=None, help="key=value run config file")
    p.add_argument(
        "--weights",
        default=None,
        help="class weights green,yellow,red; required for the core task",
    )

    p = sub.add_parser("ablate", help="run the component ablation ladder")
    p.add_argument("--world", default=None)
    p.add_argument("--task", choices=("core", "extended"), default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="key=value run config file")
    p.add_argument(
        "--arms",
        default=None,
        help="'|'-separated arms, each a ','-separated flag list or 'none'; "
        "defaults to the full component ladder",
    )
    p.add_argument("--weights", default=None)
    p.add_argument("--tune-budget", dest="tune_budget", type=int, default=None)
    _add_param_flags(p)
    _add_threads_flag(p)

    p = sub.add_parser("tune", help="stepwise hyperparameter tuning")
    p.add_argument("--features", default=None)
    p.add_argument("--out", default=None, help="tuned params JSON path")
    p.add_argument("--config", default=None, help="key=value run config file")
    p.add_argument(
        "--space",
        default=None,
        help="';'-separated param=v1,v2 sweeps, in sweep order "
        "(default num_leaves=31,63;learning_rate=0.1,0.2)",
    )
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--no-init", action="store_true")
    _add_param_flags(p)
    _add_threads_flag(p)

    p = sub.add_parser("export-pca-scatter", help="write 2-component snapshot scores")
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--fit-on-train-weeks", action="store_true")
    return parser


def _cmd_gen_city(args) -> int:
    cfg = syncity.SynthConfig(
        seed=args.seed,
        n_counters=args.counters,
        n_nodes=args.nodes,
        n_edges=args.edges,
        n_supersegments=args.supersegments,
        n_weeks=args.weeks,
        slots_per_day=args.slots_per_day,
        peak_amplitude=args.peak_amplitude,
        noise_sd=args.noise_sd,
        label_rate=args.label_rate,
    )
    _print_config("gen-city", {"out": args.out, **cfg.__dict__})
    world = syncity.generate(cfg)
    syncity.write_world(world, args.out)
    print(f"wrote world to {args.out}")
    return EXIT_OK


def _featurize_meta(out: Path) -> dict:
    meta_path = out / "features_meta.json"
    if not meta_path.exists():
        raise UsageError(f"{out} is not a featurize output directory")
    return json.loads(meta_path.read_text())


def _cmd_featurize(args) -> int:
    cfg_file = _read_kv_file(args.config)
    config = _resolve_pipeline_config(cfg_file, args)
    world_path = _resolve_path(args, cfg_file, "world")
    out_path = _resolve_path(args, cfg_file, "out")
    _print_config("featurize", {"world": world_path, "out": out_path, **config.to_json()})
    world = pipeline.load_world(world_path)
    split = pipeline.interleaved_split(world.weeks())
    bundle = pipeline.fit_artifacts(world, split, config)
    table_train = pipeline.assemble(world, bundle, weeks=split.train_weeks)
    table_valid = pipeline.assemble(world, bundle, weeks=split.valid_weeks)

    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    bundle.save(out / "artifacts")
    table_train.to_csv(out / "features_train.csv")
    table_valid.to_csv(out / "features_valid.csv")
    meta = {
        "task": config.task,
        "slots_per_day": world.slots_per_day,
        "train_weeks": list(split.train_weeks),
        "valid_weeks": list(split.valid_weeks),
        "class_weights": list(config.class_weights),
        "n_features": table_train.n_features,
    }
    (out / "features_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    print(
        f"assembled {table_train.n_rows} train rows and {table_valid.n_rows} valid rows "
        f"with {table_train.n_features} features"
    )
    return EXIT_OK


def _load_tables(featdir: str, split: str | None = None):
    out = Path(featdir)
    meta = _featurize_meta(out)
    if split is None:
        return (
            FeatureTable.from_csv(out / "features_train.csv"),
            FeatureTable.from_csv(out / "features_valid.csv"),
            meta,
        )
    return FeatureTable.from_csv(out / f"features_{split}.csv"), meta


def _cmd_train(args) -> int:
    cfg_file = _read_kv_file(args.config)
    params = _resolve_train_params(cfg_file, args)
    features_path = _resolve_path(args, cfg_file, "features")
    out_path = _resolve_path(args, cfg_file, "out")
    no_init = args.no_init or cfg_file.get("no_init", "").lower() in ("1", "true", "yes")
    table_train, table_valid, meta = _load_tables(features_path)
    task = meta["task"]
    weights = tuple(meta["class_weights"])
    objective = (
        ObjectiveConfig(kind=gbdt.WEIGHTED_SOFTMAX_CE, class_weights=weights)
        if task == "core"
        else ObjectiveConfig(kind=gbdt.MAE)
    )
    _print_config(
        "train",
        {
            "features": features_path,
            "out": out_path,
            "task": task,
            "no_init": no_init,
            "threads": args.threads,
            "class_weights": weights if task == "core" else None,
            **params.to_json(),
        },
    )
    init_tr = None if no_init else table_train.init
    init_va = None if no_init else table_valid.init
    model, log = gbdt.train(table_train, table_valid, init_tr, init_va, objective, params)
    model.save(out_path)
    log_path = args.log_out or str(Path(out_path).with_suffix(".log.csv"))
    pd.DataFrame(log, columns=["iter", "train_metric", "valid_metric"]).to_csv(
        log_path, index=False, float_format="%.10f"
    )
    best = next(row for row in log if row[0] == model.best_iteration)
    print(
        f"trained {model.n_iterations} iterations (best {model.best_iteration}), "
        f"valid {model.metric_name} {best[2]:.6f}; model at {out_path}, log at {log_path}"
    )
    return EXIT_OK


def _global_slot(table: FeatureTable, slots_per_day: int) -> np.ndarray:
    return table.weeks * 7 * slots_per_day + table.slots


def _cmd_predict(args) -> int:
    cfg_file = _read_kv_file(args.config)
    model_path = _resolve_path(args, cfg_file, "model")
    features_path = _resolve_path(args, cfg_file, "features")
    out_path = _resolve_path(args, cfg_file, "out")
    _print_config(
        "predict",
        {
            "model": model_path,
            "features": features_path,
            "split": args.split,
            "out": out_path,
            "no_init": args.no_init,
        },
    )
    model = gbdt.TreeEnsemble.load(model_path)
    table, meta = _load_tables(features_path, args.split)
    init = None if args.no_init else table.init
    frame = {
        "entity_id": table.entity_ids,
        "t": _global_slot(table, meta["slots_per_day"]),
    }
    if model.objective.kind == gbdt.WEIGHTED_SOFTMAX_CE:
        proba = gbdt.predict_proba(model, table, init)
        for c, name in enumerate(syncity.CLASS_NAMES):
            frame[f"pred_p_{name}"] = proba[:, c]
    else:
        frame["pred"] = gbdt.predict(model, table, init)
    pd.DataFrame(frame).to_csv(out_path, index=False, float_format="%.10f")
    print(f"wrote {len(table.entity_ids)} predictions to {out_path}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg_file = _read_kv_file(args.config)
    preds_path = _resolve_path(args, cfg_file, "preds")
    features_path = _resolve_path(args, cfg_file, "features")
    table, meta = _load_tables(features_path, args.split)
    if table.label is None:
        raise SchemaError("features file has no label column")
    preds = pd.read_csv(preds_path, float_precision="round_trip")
    if len(preds) != table.n_rows:
        raise SchemaError(
            f"prediction rows ({len(preds)}) != feature rows ({table.n_rows})"
        )
    if not np.array_equal(preds["entity_id"].to_numpy(), table.entity_ids):
        raise SchemaError("prediction rows are not aligned with the feature rows")
    task = meta["task"]
    if task == "core":
        weights_text = args.weights or cfg_file.get("class_weights")
        if weights_text is None:
            raise UsageError("core evaluation requires explicit --weights green,yellow,red")
        weights = _parse_weights(weights_text)
        _print_config(
            "evaluate",
            {"preds": preds_path, "split": args.split, "task": task, "class_weights": weights},
        )
        proba = preds[[f"pred_p_{n}" for n in syncity.CLASS_NAMES]].to_numpy()
        metric = eval_core(proba, table.label.astype(np.int64), weights)
        print(f"# class_weights = {weights[0]},{weights[1]},{weights[2]}")
        print(f"weighted_ce = {metric:.6f}")
    else:
        _print_config(
            "evaluate", {"preds": preds_path, "split": args.split, "task": task}
        )
        metric = eval_extended(preds["pred"].to_numpy(), table.label)
        print(f"mae = {metric:.6f}")
    return EXIT_OK


def _parse_arms(text: str) -> list[frozenset]:
    arms = []
    for chunk in text.split("|"):
        chunk = chunk.strip()
        if chunk in ("", "none"):
            arms.append(frozenset())
        else:
            arms.append(frozenset(flag.strip() for flag in chunk.split(",")))
    return arms


DEFAULT_ARMS = (
    "none|pca|pca,init_score|pca,init_score,target_encoding|"
    "pca,init_score,target_encoding,tuned"
)


def _cmd_ablate(args) -> int:
    cfg_file = _read_kv_file(args.config)
    config = _resolve_pipeline_config(cfg_file, args)
    params = _resolve_train_params(cfg_file, args)
    world_path = _resolve_path(args, cfg_file, "world")
    out_path = _resolve_path(args, cfg_file, "out")
    arms_text = args.arms or cfg_file.get("arms") or DEFAULT_ARMS
    arms = _parse_arms(arms_text)
    _print_config(
        "ablate",
        {
            "world": world_path,
            "out": out_path,
            "arms": arms_text,
            **config.to_json(),
            **params.to_json(),
        },
    )
    world = pipeline.load_world(world_path)
    result = pipeline.ablate(
        world, arms, config, params, tune_budget=args.tune_budget
    )
    result.to_csv(out_path)
    print(result.to_frame().to_string(index=False))
    print(f"ablation report at {out_path}")
    return EXIT_OK


def _parse_space(text: str) -> list[tuple[str, list]]:
    space = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise UsageError(f"bad sweep chunk {chunk!r}, expected name=v1,v2")
        name, values = chunk.split("=", 1)
        name = name.strip()
        default = getattr(TrainParams, name, None)
        if default is None:
            raise UsageError(f"unknown tunable parameter {name!r}")
        cast = int if isinstance(default, int) else float
        space.append((name, [cast(v) for v in values.split(",") if v != ""]))
    return space


DEFAULT_TUNE_SPACE_TEXT = "num_leaves=31,63;learning_rate=0.1,0.2"


def _cmd_tune(args) -> int:
    cfg_file = _read_kv_file(args.config)
    params = _resolve_train_params(cfg_file, args)
    features_path = _resolve_path(args, cfg_file, "features")
    out_path = _resolve_path(args, cfg_file, "out")
    space_text = args.space or cfg_file.get("space") or DEFAULT_TUNE_SPACE_TEXT
    space = _parse_space(space_text)
    table_train, table_valid, meta = _load_tables(features_path)
    task = meta["task"]
    weights = tuple(meta["class_weights"])
    objective = (
        ObjectiveConfig(kind=gbdt.WEIGHTED_SOFTMAX_CE, class_weights=weights)
        if task == "core"
        else ObjectiveConfig(kind=gbdt.MAE)
    )
    _print_config(
        "tune",
        {
            "features": features_path,
            "out": out_path,
            "space": space_text,
            "budget": args.budget,
            **params.to_json(),
        },
    )
    init_tr = None if args.no_init else table_train.init
    init_va = None if args.no_init else table_valid.init

    def run(p: TrainParams) -> float:
        model, log = gbdt.train(table_train, table_valid, init_tr, init_va, objective, p)
        return log[model.best_iteration][2]

    tuned, trace = pipeline.stepwise_tune(run, params, space, budget=args.budget)
    Path(out_path).write_text(json.dumps(tuned.to_json(), indent=2, sort_keys=True))
    trace_path = str(Path(out_path).with_suffix(".trace.csv"))
    pd.DataFrame(trace, columns=["param", "value", "valid_metric"]).to_csv(
        trace_path, index=False, float_format="%.10f"
    )
    print(f"tuned params at {out_path} ({len(trace)} runs), trace at {trace_path}")
    return EXIT_OK


def _cmd_export_pca_scatter(args) -> int:
    _print_config(
        "export-pca-scatter",
        {"world": args.world, "out": args.out, "window": args.window,
         "fit_on_train_weeks": args.fit_on_train_weeks},
    )
    world = pipeline.load_world(args.world)
    split = pipeline.interleaved_split(world.weeks()) if args.fit_on_train_weeks else None
    frame = pipeline.pca_scatter(world, split=split, window=args.window)
    frame.to_csv(args.out, index=False, float_format="%.10f")
    print(f"wrote {len(frame)} snapshot scores to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "gen-city": _cmd_gen_city,
    "featurize": _cmd_featurize,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "tune": _cmd_tune,
    "export-pca-scatter": _cmd_export_pca_scatter,
}


def dispatch(argv=None) -> int:
    """Parse argv and run one subcommand, mapping errors to exit codes."""
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.verb](args)
    except CityBoostError as exc:
        print(exc.report(), file=sys.stderr)
        if exc.category == "UsageError":
            return EXIT_USAGE
        if exc.category == "DataError":
            return EXIT_DATA
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        logger.exception("unexpected failure")
        print(f"InternalError/{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
