"""``kdunloc`` command line: ingest, train, identify, experiment.

Settings resolve in this order, later winning: built-in defaults, a preset
(``--preset``), a JSON config file of flat dotted keys (``--config``), then
command-line flags. Recognised keys are ``seed``, ``trials``, ``jobs``,
``format``, ``n_users``, ``sample_size``, ``session_mode``, ``columns.user``,
``columns.session``, ``columns.rep``, ``columns.timings``, plus
``pipeline.<option>`` and ``grid.<option>``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import (
    Dataset,
    DatasetError,
    Source,
    load_cmu,
    load_mobikey,
    select_users,
    subsample,
    write_csv,
)
from .pipeline import (
    ExperimentGrid,
    PipelineConfig,
    PipelineError,
    TrainedModel,
    identify_batch,
    run_experiment,
    train,
)
from .synth import make_cmu_like

logger = logging.getLogger("kdunloc")

PRESETS = ("table1", "table3", "table4", "table5")
TOP_KEYS = {"seed", "trials", "jobs", "format", "n_users", "sample_size", "session_mode", "data"}
COLUMN_KEYS = {"user", "session", "rep", "timings"}


class UsageError(Exception):
    pass


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return json.loads(resources.files("kdunloc.presets").joinpath(f"{name}.json").read_text())


def _check_keys(cfg: dict) -> None:
    pipe = {f.name for f in fields(PipelineConfig)}
    grid = {f.name for f in fields(ExperimentGrid)} - {"base"}
    for key in cfg:
        head, _, tail = key.partition(".")
        ok = (
            (not tail and key in TOP_KEYS)
            or (head == "pipeline" and tail in pipe)
            or (head == "grid" and tail in grid)
            or (head == "columns" and tail in COLUMN_KEYS)
        )
        if not ok:
            raise UsageError(f"unknown config key {key!r}")


def resolve_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if getattr(args, "preset", None):
        cfg.update(load_preset(args.preset))
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg.update(loaded)
    flag_map = {
        "seed": "seed",
        "trials": "trials",
        "jobs": "jobs",
        "format": "format",
        "n_users": "n_users",
        "sample_size": "sample_size",
        "session_mode": "session_mode",
        "reducer": "pipeline.reducer",
        "cluster": "pipeline.cluster",
        "classifier": "pipeline.classifier",
        "dims": "pipeline.dims",
        "knn_k": "pipeline.knn_k",
        "user_col": "columns.user",
        "session_col": "columns.session",
        "rep_col": "columns.rep",
    }
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "timing_cols", None):
        cfg["columns.timings"] = [c for c in args.timing_cols.split(",") if c]
    if getattr(args, "no_quantile", False):
        cfg["pipeline.use_quantile"] = False
    _check_keys(cfg)
    return cfg


def pipeline_config(cfg: dict) -> PipelineConfig:
    opts = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("pipeline.")}
    if "seed" in cfg and "seed" not in opts:
        opts["seed"] = int(cfg["seed"])
    try:
        return PipelineConfig.from_dict(opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def load_dataset(path: str | None, cfg: dict) -> Dataset:
    fmt = cfg.get("format", "cmu")
    if path is None:
        if fmt != "cmu":
            raise UsageError("a data path is required unless using the built-in CMU-layout surrogate")
        logger.info("no data path given: using the synthetic CMU-layout surrogate")
        return make_cmu_like()
    if fmt == "cmu":
        return load_cmu(path)
    if fmt not in ("mobikey", "generic"):
        raise UsageError(f"unknown format {fmt!r}")
    cmap = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("columns.")}
    if "user" not in cmap or "session" not in cmap or not cmap.get("timings"):
        raise UsageError(
            f"--format {fmt} needs --user-col, --session-col and --timing-cols (or columns.* config keys)"
        )
    return load_mobikey(path, cmap, Source(fmt))


def _restrict(ds: Dataset, cfg: dict) -> Dataset:
    seed = int(cfg.get("seed", 0))
    if cfg.get("n_users") is not None:
        ds = select_users(ds, int(cfg["n_users"]), seed)
    if cfg.get("sample_size") is not None:
        ds = subsample(ds, int(cfg["sample_size"]), seed, cfg.get("session_mode", "random"))
    return ds


def _summary_counts(ds: Dataset) -> str:
    counts = list(ds.counts().values())
    if not counts:
        return f"0 users, 0 samples, {ds.n_features} features"
    per = str(counts[0]) if min(counts) == max(counts) else f"{min(counts)}-{max(counts)}"
    return f"{len(counts)} users, {per} samples/user, {ds.n_features} features"


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.path is None:
        raise UsageError("ingest needs a data path")
    ds = load_dataset(args.path, cfg)
    print(_summary_counts(ds))
    for u, c in ds.counts().items():
        print(f"  {u}: {c}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out / "dataset.csv")
    print(f"cached to {out / 'dataset.csv'}")
    return 0


def _model_summary(model: TrainedModel) -> str:
    c = model.clusters
    lines = [
        f"features: {'quantile-transformed' if model.config.use_quantile else 'raw (no quantile transform)'}",
        f"reducer: {model.config.reducer} ({model.reduced.shape[1]} dims), clustering: {c.method}",
        f"estimated clusters N = {c.k}",
        "cluster sizes: " + ", ".join(f"{j}:{int(np.sum(c.labels == j))}" for j in range(c.k)),
    ]
    if np.any(c.labels < 0):
        lines.append(f"noise points: {int(np.sum(c.labels < 0))}")
    table = c.diagnostics.get("bic")
    if isinstance(table, dict):
        lines.append("BIC: " + ", ".join(f"k={k}: {v:.2f}" if isinstance(v, float) else f"k={k}: {v}" for k, v in table.items()))
    elif table is not None:
        lines.append(f"BIC: {table:.2f}")
    if model.cluster_users:
        lines.append("cluster -> user: " + ", ".join(f"{k}:{v}" for k, v in sorted(model.cluster_users.items())))
    return "\n".join(lines)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    pcfg = pipeline_config(cfg)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from exc
    ds = _restrict(load_dataset(args.path, cfg), cfg)
    model = train(ds, pcfg)
    doc = model.to_dict()
    doc["resolved_config"] = cfg
    (out / "model.json").write_text(json.dumps(doc))
    summary = _model_summary(model)
    (out / "summary.txt").write_text(f"# config={json.dumps(cfg, sort_keys=True)}\n{summary}\n")
    print(summary)
    print(f"model written to {out / 'model.json'}")
    return 0


def cmd_identify(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    try:
        model = TrainedModel.from_json(Path(args.model).read_text())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot load model {args.model}: {exc}") from exc
    ds = load_dataset(args.path, cfg)
    if len(ds) and ds.n_features != model.n_features:
        raise UsageError(f"samples have {ds.n_features} features but the model expects {model.n_features}")
    classifier = cfg.get("pipeline.classifier", model.config.classifier)
    res = identify_batch(model, ds.features if len(ds) else np.zeros((0, model.n_features)), classifier)
    users = res.users(model.cluster_users)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "predicted_cluster", "matched_user", "residual"])
        for i in range(len(ds)):
            sid = f"{ds.users[i]}/{ds.sessions[i]}/{ds.reps[i]}"
            resid = "" if np.isnan(res.residuals[i]) else repr(float(res.residuals[i]))
            w.writerow([sid, int(res.labels[i]), users[i] or "", resid])
    if len(ds) and model.cluster_users:
        acc = float(np.mean([p == t for p, t in zip(users, ds.users)]))
        print(f"accuracy vs. file labels: {100 * acc:.2f}% over {len(ds)} samples")
    print(f"{len(ds)} predictions written to {out}")
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    grid_opts = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("grid.")}
    # single-value flags narrow the grid axes
    for flag, axis in (("pipeline.reducer", "reducers"), ("pipeline.cluster", "clusters"), ("pipeline.classifier", "classifiers")):
        if flag in cfg:
            grid_opts[axis] = [cfg[flag]]
    if cfg.get("pipeline.use_quantile") is False:
        grid_opts["quantile"] = [False]
    if args.sample_size is not None:
        grid_opts["sample_sizes"] = [args.sample_size]
    if args.n_users is not None:
        grid_opts["n_users"] = [args.n_users]
    if args.session_mode is not None:
        grid_opts["session_modes"] = [args.session_mode]
    base = {k: v for k, v in cfg.items() if k.startswith("pipeline.")}
    for key in ("pipeline.reducer", "pipeline.cluster", "pipeline.classifier", "pipeline.use_quantile"):
        base.pop(key, None)
    try:
        grid = ExperimentGrid.from_dict({**grid_opts, "base": pipeline_config(base)})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    exp_cfg = {k: v for k, v in cfg.items() if k not in ("n_users", "sample_size")}
    ds = load_dataset(args.path, exp_cfg)
    trials = int(cfg.get("trials", 20))
    seed = int(cfg.get("seed", 0))
    report = run_experiment(ds, grid, trials=trials, seed=seed, jobs=int(cfg.get("jobs", 1)))
    paths = report.write(args.out)
    print(report.render_table(), end="")
    print(f"{len(report.records)} records, {report.skipped} skipped; wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def _common(p: argparse.ArgumentParser, path: bool = True) -> None:
    if path:
        p.add_argument("path", nargs="?", help="keystroke CSV (omit to use the synthetic CMU-layout surrogate)")
    p.add_argument("--config", help="JSON file of dotted keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs")
    p.add_argument("--jobs", type=int)
    p.add_argument("--format", choices=["cmu", "mobikey", "generic"])
    p.add_argument("--user-col", dest="user_col")
    p.add_argument("--session-col", dest="session_col")
    p.add_argument("--rep-col", dest="rep_col")
    p.add_argument("--timing-cols", dest="timing_cols", help="comma-separated timing columns")
    p.add_argument("--reducer", choices=["pca", "kpca", "tsne"])
    p.add_argument("--cluster", choices=["dbscan", "gmm", "xmeans"])
    p.add_argument("--classifier", choices=["nn", "unloc"])
    p.add_argument("--no-quantile", dest="no_quantile", action="store_true")
    p.add_argument("--dims", type=int)
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--n-users", dest="n_users", type=int)
    p.add_argument("--session-mode", dest="session_mode", choices=["intra", "inter", "random"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdunloc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a dataset, print a summary, write a normalized CSV cache")
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the training pipeline and write model.json")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("identify", help="label samples with a trained model")
    p.add_argument("model", help="model.json from 'train'")
    _common(p)
    p.set_defaults(func=cmd_identify, out="labels.csv")

    p = sub.add_parser("experiment", help="run a Monte-Carlo experiment grid")
    _common(p)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--trials", type=int)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
