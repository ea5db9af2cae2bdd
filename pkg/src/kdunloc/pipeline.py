"""Training, identification and the Monte-Carlo experiment harness.

Training (unsupervised): quantile-transform the training rows, reduce them,
cluster the reduced points, then build one scaled-Manhattan template per
estimated cluster on the transformed full-dimensional rows. The cluster
centroids are the anchors.

Identification assigns each new sample a training cluster label, either by
nearest neighbours in the reduced space (``nn``) or by first localizing it
with ordinal unfolding from its template scores (``unloc``).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import cluster as cl
from . import reduce as rd
from .dataset import Dataset, DatasetError, SplitMode, SplitSpec, remove_outliers, select_users, split, subsample
from .metrics import (
    CrossDistanceMatrix,
    UserTemplate,
    adjusted_rand_index,
    build_template,
    known_known_matrix,
    match_clusters,
    score_matrix,
)
from .qtransform import QuantileModel, fit_quantile
from .unloc import UnlocConfig, localize

logger = logging.getLogger(__name__)

REDUCERS = ("pca", "kpca", "tsne")
CLUSTERERS = ("dbscan", "gmm", "xmeans")
CLASSIFIERS = ("nn", "unloc")


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    use_quantile: bool = True
    n_quantiles: int | None = None
    reducer: str = "pca"
    dims: int = 2
    kpca_gamma: float | None = None
    tsne_perplexity: float | None = None
    tsne_iterations: int = 1000
    cluster: str = "xmeans"
    k_max: int = 10
    gmm_k_min: int = 1
    gmm_k_max: int = 8
    dbscan_eps: float | None = None
    dbscan_min_samples: int = 5
    classifier: str = "unloc"
    knn_k: int = 1
    unloc_restarts: int = 8
    unloc_map: str = "affine"
    unloc_pooling: str = "global"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.reducer not in REDUCERS:
            raise ValueError(f"reducer must be one of {REDUCERS}, got {self.reducer!r}")
        if self.cluster not in CLUSTERERS:
            raise ValueError(f"cluster must be one of {CLUSTERERS}, got {self.cluster!r}")
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.dims < 1:
            raise ValueError("dims must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown pipeline option(s): {sorted(unknown)}")
        return cls(**d)

    def unloc_config(self, seed: int) -> UnlocConfig:
        return UnlocConfig(
            restarts=self.unloc_restarts, map_kind=self.unloc_map, pooling=self.unloc_pooling, seed=seed
        )


@dataclass
class TrainedModel:
    config: PipelineConfig
    quantile: QuantileModel | None
    reducer: Any  # PCAModel, KPCAModel or TSNEResult
    reduced: np.ndarray
    train_q: np.ndarray
    clusters: cl.ClusterResult
    templates: list[UserTemplate]
    known_known: np.ndarray
    # cluster label -> user id, filled only when training labels were supplied
    cluster_users: dict[int, str] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.clusters.k

    @property
    def n_features(self) -> int:
        return self.train_q.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_features:
            raise ValueError(f"samples have {x.shape[1]} features, model expects {self.n_features}")
        return self.quantile.transform(x) if self.quantile is not None else x

    def to_dict(self) -> dict:
        return {
            "format": "kdunloc-model/1",
            "config": self.config.to_dict(),
            "quantile": self.quantile.to_dict() if self.quantile is not None else None,
            "reducer": self.reducer.to_dict(),
            "reduced": self.reduced.tolist(),
            "train_q": self.train_q.tolist(),
            "clusters": self.clusters.to_dict(),
            "templates": [t.to_dict() for t in self.templates],
            "known_known": self.known_known.tolist(),
            "cluster_users": {str(k): v for k, v in self.cluster_users.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> TrainedModel:
        if d.get("format") != "kdunloc-model/1":
            raise ValueError("not a kdunloc model document")
        r = d["reducer"]
        if r["kind"] == "pca":
            reducer = rd.pca_from_dict(r)
        elif r["kind"] == "kpca":
            reducer = rd.kpca_from_dict(r)
        elif r["kind"] == "tsne":
            emb = np.asarray(r["embedding"], float)
            reducer = rd.TSNEResult(
                emb, r["kl"], float("nan"), r["perplexity"], r["learning_rate"], r["iterations"], r["seed"],
                np.empty(0),
            )
        else:
            raise ValueError(f"unknown reducer kind {r['kind']!r}")
        return cls(
            PipelineConfig.from_dict(d["config"]),
            QuantileModel.from_dict(d["quantile"]) if d["quantile"] is not None else None,
            reducer,
            np.asarray(d["reduced"], float),
            np.asarray(d["train_q"], float),
            cl.ClusterResult.from_dict(d["clusters"]),
            [UserTemplate.from_dict(t) for t in d["templates"]],
            np.asarray(d["known_known"], float),
            {int(k): v for k, v in d.get("cluster_users", {}).items()},
        )

    @classmethod
    def from_json(cls, s: str) -> TrainedModel:
        return cls.from_dict(json.loads(s))


def _fit_reducer(xq: np.ndarray, cfg: PipelineConfig) -> tuple[Any, np.ndarray]:
    if cfg.reducer == "pca":
        model = rd.pca_fit(xq, cfg.dims)
        return model, model.transform(xq)
    if cfg.reducer == "kpca":
        model = rd.kpca_fit(xq, cfg.dims, cfg.kpca_gamma)
        return model, model.transform(xq)
    res = rd.tsne_embed(xq, cfg.dims, cfg.tsne_perplexity, cfg.tsne_iterations, seed=cfg.seed)
    return res, res.embedding


def _cluster(z: np.ndarray, cfg: PipelineConfig) -> cl.ClusterResult:
    n = z.shape[0]
    if cfg.cluster == "dbscan":
        return cl.dbscan(z, cfg.dbscan_eps, cfg.dbscan_min_samples)
    if cfg.cluster == "gmm":
        hi = min(cfg.gmm_k_max, n)
        return cl.gmm_select(z, range(min(cfg.gmm_k_min, hi), hi + 1), seed=cfg.seed)
    return cl.xmeans(z, min(cfg.k_max, n), seed=cfg.seed)


def train(x: np.ndarray | Dataset, cfg: PipelineConfig, users: Sequence[str] | None = None) -> TrainedModel:
    """Fit the training pipeline on the rows of ``x``.

    ``users`` (taken from ``x`` when it is a :class:`Dataset`) never reaches
    clustering; it is only used to record which user each cluster mostly holds.
    """
    if isinstance(x, Dataset):
        users = x.users if users is None else users
        x = x.features
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] < 2:
        raise PipelineError("input", f"need at least 2 training rows, got {x.shape[0]}")
    qm = None
    xq = x
    if cfg.use_quantile:
        try:
            qm = fit_quantile(x, cfg.n_quantiles)
        except ValueError as exc:
            raise PipelineError("quantile", str(exc)) from exc
        xq = qm.transform(x)
    try:
        reducer, z = _fit_reducer(xq, cfg)
    except ValueError as exc:
        raise PipelineError("reduce", str(exc)) from exc
    try:
        clusters = _cluster(z, cfg)
    except (ValueError, cl.EMCollapse) as exc:
        raise PipelineError("cluster", str(exc)) from exc
    if clusters.k == 0:
        raise PipelineError(
            "cluster", "clustering found no clusters (every point is noise); raise eps or lower min_samples"
        )
    # one template per estimated cluster; noise points get none
    groups = {str(j): xq[clusters.labels == j] for j in range(clusters.k)}
    templates = [build_template(rows, uid) for uid, rows in groups.items()]
    kk = known_known_matrix(templates, groups)
    mapping = match_clusters(clusters.labels, users) if users is not None else {}
    return TrainedModel(cfg, qm, reducer, z, xq, clusters, templates, kk, mapping)


@dataclass
class Identification:
    labels: np.ndarray
    coords: np.ndarray
    residuals: np.ndarray
    ambiguous: np.ndarray

    def users(self, mapping: dict[int, str]) -> list[str | None]:
        return [mapping.get(int(lab)) for lab in self.labels]


def knn_vote(points: np.ndarray, labels: np.ndarray, queries: np.ndarray, k: int = 1) -> np.ndarray:
    """Majority label of the ``k`` nearest points; vote ties go to the nearest point's label."""
    q = np.atleast_2d(queries)
    d2 = np.sum((q[:, None, :] - points[None, :, :]) ** 2, axis=2)
    k = min(k, len(points))
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    out = np.empty(len(q), dtype=np.int64)
    for i, idx in enumerate(order):
        votes = Counter(labels[idx].tolist())
        top = max(votes.values())
        winners = {lab for lab, c in votes.items() if c == top}
        out[i] = next(lab for lab in labels[idx] if lab in winners)
    return out


def identify_batch(
    model: TrainedModel,
    x: np.ndarray,
    classifier: str | None = None,
    seed: int | None = None,
) -> Identification:
    """Predict a training-cluster label for every row of ``x``."""
    cfg = model.config
    classifier = classifier or cfg.classifier
    if classifier not in CLASSIFIERS:
        raise ValueError(f"classifier must be one of {CLASSIFIERS}")
    seed = cfg.seed if seed is None else seed
    xq = model.transform(x)
    n = xq.shape[0]
    dims = model.reduced.shape[1]
    coords = np.full((n, dims), np.nan)
    residuals = np.full(n, np.nan)
    ambiguous = np.zeros(n, dtype=bool)
    if n == 0:
        return Identification(np.zeros(0, dtype=np.int64), coords, residuals, ambiguous)
    labels = model.clusters.labels
    member = labels >= 0
    if model.k == 1:
        return Identification(np.zeros(n, dtype=np.int64), coords, residuals, ambiguous)

    points, point_labels = model.reduced[member], labels[member]
    if classifier == "nn":
        if cfg.reducer == "tsne":
            # no out-of-sample map: re-embed training and query rows together
            joint = rd.tsne_embed(
                np.vstack([model.train_q, xq]), dims, cfg.tsne_perplexity, cfg.tsne_iterations, seed=seed
            ).embedding
            coords = joint[model.train_q.shape[0]:]
            points = joint[: model.train_q.shape[0]][member]
        else:
            coords = model.reducer.transform(xq)
        return Identification(knn_vote(points, point_labels, coords, cfg.knn_k), coords, residuals, ambiguous)

    anchors = model.clusters.centroids
    scores = score_matrix(model.templates, xq)
    ucfg = cfg.unloc_config(seed)
    order = [t.user_id for t in model.templates]
    for i in range(n):
        d = CrossDistanceMatrix(model.known_known, scores[i], order)
        try:
            est = localize(d, anchors, ucfg)
            coords[i], residuals[i], ambiguous[i] = est.coords, est.residual, est.ambiguous
        except ValueError as exc:
            # degenerate proxies: fall back to the best-scoring anchor
            logger.debug("localization fell back to nearest template: %s", exc)
            coords[i] = anchors[int(np.argmin(scores[i]))]
            ambiguous[i] = True
    return Identification(knn_vote(points, point_labels, coords, cfg.knn_k), coords, residuals, ambiguous)


def identify(model: TrainedModel, sample: np.ndarray, classifier: str | None = None, seed: int | None = None) -> int:
    return int(identify_batch(model, np.asarray(sample, float)[None, :], classifier, seed).labels[0])


# ------------------------------------------------------------------ experiments


@dataclass(frozen=True)
class MethodSpec:
    reducer: str
    cluster: str
    use_quantile: bool = True

    @property
    def label(self) -> str:
        return f"{'Q' if self.use_quantile else 'raw'}+{self.reducer}+{self.cluster}"


@dataclass
class ExperimentGrid:
    """Cells are the product of every list below.

    A ``sample_sizes`` entry may be ``[lo, hi]``: each trial then draws one
    size uniformly from that inclusive range. An empty ``classifiers`` list
    runs clustering only.
    """

    sample_sizes: list = field(default_factory=lambda: [50])
    n_users: list[int] = field(default_factory=lambda: [4])
    session_modes: list[str] = field(default_factory=lambda: ["random"])
    reducers: list[str] = field(default_factory=lambda: ["pca"])
    clusters: list[str] = field(default_factory=lambda: ["xmeans"])
    classifiers: list[str] = field(default_factory=lambda: ["nn", "unloc"])
    quantile: list[bool] = field(default_factory=lambda: [True])
    # reduced dimension per user count (PCA/KPCA only; t-SNE stays at base dims)
    dims_by_users: dict[str, int] = field(default_factory=dict)
    train_fraction: float = 0.8
    outlier_k: float = 3.0
    base: PipelineConfig = field(default_factory=PipelineConfig)
    # "mode_n_users_size" rows by "method" columns in the text table; metric accuracy or clustering
    table: str = "accuracy"

    def __post_init__(self) -> None:
        if isinstance(self.base, dict):
            self.base = PipelineConfig.from_dict(self.base)
        for m in self.session_modes:
            SplitMode(m)
        for r in self.reducers:
            if r not in REDUCERS:
                raise ValueError(f"unknown reducer {r!r}")
        for c in self.clusters:
            if c not in CLUSTERERS:
                raise ValueError(f"unknown cluster method {c!r}")
        for c in self.classifiers:
            if c not in CLASSIFIERS:
                raise ValueError(f"unknown classifier {c!r}")
        if not (self.sample_sizes and self.n_users and self.session_modes and self.reducers and self.clusters):
            raise ValueError("experiment grid has an empty axis")
        if self.table not in ("accuracy", "clustering"):
            raise ValueError("table must be 'accuracy' or 'clustering'")

    def methods(self) -> list[MethodSpec]:
        return [MethodSpec(r, c, q) for q in self.quantile for r in self.reducers for c in self.clusters]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base"] = self.base.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentGrid:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown grid option(s): {sorted(unknown)}")
        return cls(**d)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _size_key(size) -> str:
    return f"{size[0]}-{size[1]}" if isinstance(size, (list, tuple)) else str(int(size))


@dataclass(frozen=True)
class _Job:
    index: int
    trial: int
    size: Any
    n_users: int
    mode: str
    method: MethodSpec


_WORKER_DS: Dataset | None = None


def _init_worker(ds: Dataset) -> None:
    global _WORKER_DS
    _WORKER_DS = ds


def _draw(ds: Dataset, grid: ExperimentGrid, job: _Job, seed: int) -> tuple[Dataset, Dataset, int]:
    """The data of one trial; identical for every method in the same (size, users, mode, trial)."""
    mode_code = list(SplitMode).index(SplitMode(job.mode))
    users = select_users(ds, job.n_users, derive_seed(seed, job.trial, 1))
    # filter each user's whole pool so that N drawn samples split exactly ceil(f*N) / rest
    users = remove_outliers(users, grid.outlier_k)
    size = job.size
    if isinstance(size, (list, tuple)):
        rng = np.random.default_rng(derive_seed(seed, job.trial, 2, job.n_users, mode_code))
        size = int(rng.integers(int(size[0]), int(size[1]) + 1))
    data_seed = derive_seed(seed, job.trial, 3, job.n_users, mode_code, size)
    sub = subsample(users, size, data_seed, job.mode, grid.train_fraction)
    tr, te = split(sub, SplitSpec(grid.train_fraction, SplitMode(job.mode), data_seed))
    return tr, te, size


def _run_job(ds: Dataset, grid: ExperimentGrid, job: _Job, seed: int) -> list[dict]:
    m = job.method
    base = {
        "method": m.label,
        "reducer": m.reducer,
        "cluster": m.cluster,
        "quantile": int(m.use_quantile),
        "sample_size": _size_key(job.size),
        "n_users": job.n_users,
        "session_mode": job.mode,
        "trial": job.trial,
        "seed": seed,
    }
    classifiers = grid.classifiers or [""]
    try:
        tr, te, size = _draw(ds, grid, job, seed)
    except DatasetError as exc:
        return [{**base, "classifier": c, "status": "skipped", "error": str(exc)} for c in classifiers]
    dims = grid.base.dims
    if m.reducer != "tsne":
        dims = int(grid.dims_by_users.get(str(job.n_users), dims))
    cfg = replace(
        grid.base,
        reducer=m.reducer,
        cluster=m.cluster,
        use_quantile=m.use_quantile,
        dims=dims,
        seed=derive_seed(seed, job.trial, 4),
    )
    base.update(drawn_size=size, n_train=len(tr), n_test=len(te), dims=dims)
    try:
        model = train(tr, cfg)
    except PipelineError as exc:
        return [{**base, "classifier": c, "status": "failed", "error": str(exc)} for c in classifiers]
    ari = adjusted_rand_index(model.clusters.labels, tr.users)
    base.update(k=model.k, ari=ari, k_match=int(model.k == job.n_users))
    out = []
    for c in classifiers:
        rec = {**base, "classifier": c, "status": "ok", "error": ""}
        if c:
            pred = identify_batch(model, te.features, c).users(model.cluster_users)
            rec["accuracy"] = float(np.mean([p == t for p, t in zip(pred, te.users)]))
        out.append(rec)
    return out


def _run_job_worker(args: tuple[ExperimentGrid, _Job, int]) -> list[dict]:
    grid, job, seed = args
    assert _WORKER_DS is not None
    return _run_job(_WORKER_DS, grid, job, seed)


RECORD_FIELDS = [
    "method", "reducer", "cluster", "quantile", "classifier", "sample_size", "drawn_size", "n_users",
    "session_mode", "dims", "trial", "seed", "status", "n_train", "n_test", "k", "k_match", "ari",
    "accuracy", "error",
]


def cell_label(rec: dict) -> str:
    if not rec.get("classifier"):
        return rec["method"]
    return f"{rec['method']}+{rec['classifier']}"


@dataclass
class ExperimentReport:
    records: list[dict]
    grid: ExperimentGrid
    trials: int
    seed: int

    @property
    def skipped(self) -> int:
        return sum(r["status"] != "ok" for r in self.records)

    def select(self, **where) -> list[dict]:
        return [r for r in self.records if all(r.get(k) == v for k, v in where.items())]

    def aggregates(self) -> list[dict]:
        cells: dict[tuple, list[dict]] = {}
        for r in self.records:
            key = (r["session_mode"], r["n_users"], r["sample_size"], cell_label(r))
            cells.setdefault(key, []).append(r)
        out = []
        for (mode, nu, size, label), recs in cells.items():
            ok = [r for r in recs if r["status"] == "ok"]
            agg = {
                "session_mode": mode, "n_users": nu, "sample_size": size, "cell": label,
                "trials": len(recs), "ok": len(ok),
            }
            for metric in ("accuracy", "ari", "k", "k_match"):
                vals = [float(r[metric]) for r in ok if r.get(metric) is not None and metric in r]
                if vals:
                    agg[f"{metric}_mean"] = statistics.fmean(vals)
                    agg[f"{metric}_sd"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
            ks = [int(r["k"]) for r in ok]
            if ks:
                agg["k_mode"] = Counter(ks).most_common(1)[0][0]
            out.append(agg)
        return out

    def mean(self, metric: str, **where) -> float:
        vals = [float(r[metric]) for r in self.select(**where) if r["status"] == "ok" and metric in r]
        return statistics.fmean(vals) if vals else float("nan")

    def config_echo(self) -> dict:
        return {"grid": self.grid.to_dict(), "trials": self.trials, "seed": self.seed}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# config=" + json.dumps(self.config_echo(), sort_keys=True) + "\n")
        w = csv.DictWriter(buf, RECORD_FIELDS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.records:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {"config": self.config_echo(), "skipped": self.skipped, "aggregates": self.aggregates()},
            indent=1,
            sort_keys=True,
        )

    def render_table(self) -> str:
        aggs = self.aggregates()
        rows = list(dict.fromkeys((a["session_mode"], a["n_users"], a["sample_size"]) for a in aggs))
        cols = list(dict.fromkeys(a["cell"] for a in aggs))
        by = {(a["session_mode"], a["n_users"], a["sample_size"], a["cell"]): a for a in aggs}

        def cell(a: dict | None) -> str:
            if a is None or not a["ok"]:
                return "-"
            if self.grid.table == "clustering":
                return f"K={a['k_mode']} ARI={a.get('ari_mean', float('nan')):.2f}"
            return f"{100 * a.get('accuracy_mean', float('nan')):.2f}"

        head = ["mode", "users", "size", *cols]
        body = [[m, str(u), s, *(cell(by.get((m, u, s, c))) for c in cols)] for m, u, s in rows]
        widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
        fmt = lambda r: "  ".join(v.rjust(w) for v, w in zip(r, widths))  # noqa: E731
        lines = [fmt(head), "  ".join("-" * w for w in widths), *map(fmt, body)]
        if self.skipped:
            lines.append(f"({self.skipped} record(s) skipped or failed)")
        return "\n".join(lines) + "\n"

    def write(self, outdir: str | Path) -> dict[str, Path]:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / "trials.csv", "json": out / "summary.json", "table": out / "table.txt"}
        paths["csv"].write_text(self.to_csv())
        paths["json"].write_text(self.to_json() + "\n")
        echo = json.dumps(self.config_echo(), sort_keys=True)
        paths["table"].write_text(f"# config={echo}\n" + self.render_table())
        return paths


def run_experiment(
    ds: Dataset,
    grid: ExperimentGrid,
    trials: int = 20,
    seed: int = 0,
    jobs: int = 1,
) -> ExperimentReport:
    """Run every grid cell for ``trials`` seeded trials.

    All methods in one (sample size, user count, session mode, trial) see the
    same users, samples and split, so their results are paired. One model is
    trained per method and shared by the classifiers.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    job_list = []
    for t in range(trials):
        for size in grid.sample_sizes:
            for nu in grid.n_users:
                for mode in grid.session_modes:
                    for m in grid.methods():
                        job_list.append(_Job(len(job_list), t, size, int(nu), mode, m))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(ds,)) as pool:
            results = list(pool.map(_run_job_worker, [(grid, j, seed) for j in job_list], chunksize=1))
    else:
        results = [_run_job(ds, grid, j, seed) for j in job_list]
    records = [r for res in results for r in res]
    for r in records:
        if r["status"] != "ok":
            logger.warning("trial skipped: %s", r.get("error"))
    return ExperimentReport(records, grid, trials, seed)


def paired_means(report: ExperimentReport, metric: str, keys: Iterable[str]) -> dict[tuple, float]:
    """Mean of ``metric`` per combination of the record fields in ``keys``."""
    keys = list(keys)
    acc: dict[tuple, list[float]] = {}
    for r in report.records:
        if r["status"] == "ok" and metric in r and not (isinstance(r[metric], float) and math.isnan(r[metric])):
            acc.setdefault(tuple(r[k] for k in keys), []).append(float(r[metric]))
    return {k: statistics.fmean(v) for k, v in acc.items()}
