"""Fixed-text keystroke datasets: loading, user selection, outlier filtering, splitting.

A :class:`Dataset` keeps the timing matrix as a single ``(n, p)`` float array with
aligned label arrays; :class:`KeystrokeSample` objects are materialised on demand.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CMU_ID_COLUMNS = ("subject", "sessionIndex", "rep")


class DatasetError(ValueError):
    """Raised for unreadable or inconsistent keystroke data."""


class ConfigError(DatasetError):
    """Raised when a column mapping does not match the file."""


class Source(str, enum.Enum):
    CMU = "cmu"
    MOBIKEY = "mobikey"
    GENERIC = "generic"


class SplitMode(str, enum.Enum):
    INTRA_SESSION = "intra"
    INTER_SESSION = "inter"
    RANDOM = "random"


@dataclass(frozen=True)
class KeystrokeSample:
    user_id: str
    session: int
    rep: int
    features: tuple[float, ...]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    mode: SplitMode = SplitMode.RANDOM
    seed: int = 0
    # number of earliest sessions used for training in INTER_SESSION mode;
    # None picks the cut closest to train_fraction
    train_sessions: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        object.__setattr__(self, "mode", SplitMode(self.mode))


@dataclass
class Dataset:
    """Keystroke timing vectors with per-row user, session and repetition labels."""

    users: np.ndarray
    sessions: np.ndarray
    reps: np.ndarray
    features: np.ndarray
    feature_names: list[str]
    source: Source = Source.GENERIC
    # header names for the user/session/rep columns, reused when writing
    id_columns: tuple[str, str, str] = CMU_ID_COLUMNS
    flagged_users: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.users = np.asarray(self.users, dtype=object)
        self.sessions = np.asarray(self.sessions, dtype=np.int64)
        self.reps = np.asarray(self.reps, dtype=np.int64)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            feats = feats.reshape(len(self.users), len(self.feature_names))
        self.features = feats
        self.source = Source(self.source)
        n = len(self.users)
        if not (len(self.sessions) == len(self.reps) == feats.shape[0] == n):
            raise DatasetError("label arrays and feature matrix differ in length")
        if feats.shape[1] != len(self.feature_names):
            raise DatasetError(
                f"{len(self.feature_names)} feature names for {feats.shape[1]} feature columns"
            )
        if not np.all(np.isfinite(feats)):
            raise DatasetError("non-finite timing value")
        keys = set(zip(self.users.tolist(), self.sessions.tolist(), self.reps.tolist()))
        if len(keys) != n:
            raise DatasetError("duplicate (user, session, rep) triple")

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self) -> Iterator[KeystrokeSample]:
        return iter(self.samples)

    @property
    def samples(self) -> list[KeystrokeSample]:
        return [
            KeystrokeSample(str(u), int(s), int(r), tuple(float(v) for v in f))
            for u, s, r, f in zip(self.users, self.sessions, self.reps, self.features)
        ]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def user_ids(self) -> list[str]:
        """Distinct users in order of first appearance."""
        seen: dict[str, None] = {}
        for u in self.users:
            seen.setdefault(u, None)
        return list(seen)

    def counts(self) -> dict[str, int]:
        return {u: int(np.sum(self.users == u)) for u in self.user_ids()}

    def take(self, index: np.ndarray | Sequence[int]) -> Dataset:
        idx = np.asarray(index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(
            self.users[idx],
            self.sessions[idx],
            self.reps[idx],
            self.features[idx],
            list(self.feature_names),
            self.source,
            self.id_columns,
            list(self.flagged_users),
        )

    def same_as(self, other: Dataset) -> bool:
        return (
            self.feature_names == other.feature_names
            and self.source == other.source
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.sessions, other.sessions)
            and np.array_equal(self.reps, other.reps)
            and np.array_equal(self.features, other.features)
        )


def _read_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: missing header row") from None
        rows = [row for row in reader if row and any(c.strip() for c in row)]
    return header, rows


def _parse_int(value: str, row_no: int, column: str) -> int:
    try:
        f = float(value)
    except ValueError:
        raise DatasetError(f"row {row_no}: non-numeric {column!r} value {value!r}") from None
    if not f.is_integer():
        raise DatasetError(f"row {row_no}: {column!r} must be an integer, got {value!r}")
    return int(f)


def _parse_float(value: str, row_no: int, column: str) -> float:
    try:
        f = float(value)
    except ValueError:
        raise DatasetError(f"row {row_no}: non-numeric timing {column!r} value {value!r}") from None
    if not math.isfinite(f):
        raise DatasetError(f"row {row_no}: non-finite timing {column!r} value {value!r}")
    return f


def load_cmu(path: str | Path) -> Dataset:
    """Load a CMU benchmark style CSV (``subject,sessionIndex,rep,<timings...>``).

    Row numbers in error messages count the header as row 1.
    """
    header, rows = _read_rows(path)
    if len(header) < 4 or tuple(header[:3]) != CMU_ID_COLUMNS:
        raise DatasetError(
            f"{path}: expected header starting with {','.join(CMU_ID_COLUMNS)}, got {header[:3]}"
        )
    names = header[3:]
    users, sessions, reps, feats = [], [], [], []
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DatasetError(f"row {i}: expected {len(header)} columns, got {len(row)}")
        users.append(row[0].strip())
        sessions.append(_parse_int(row[1], i, "sessionIndex"))
        reps.append(_parse_int(row[2], i, "rep"))
        feats.append([_parse_float(v, i, names[j]) for j, v in enumerate(row[3:])])
    return Dataset(
        np.array(users, dtype=object),
        np.array(sessions, dtype=np.int64),
        np.array(reps, dtype=np.int64),
        np.array(feats, dtype=np.float64).reshape(len(rows), len(names)),
        names,
        Source.CMU,
    )


def load_mobikey(
    path: str | Path,
    column_map: Mapping[str, object],
    source: Source | str = Source.MOBIKEY,
) -> Dataset:
    """Load a CSV with an arbitrary header through an explicit role mapping.

    ``column_map`` needs ``user``, ``session`` and ``timings`` (a list of column
    names); ``rep`` is optional and defaults to the running count of the row
    within its (user, session).
    """
    header, rows = _read_rows(path)
    for role in ("user", "session", "timings"):
        if role not in column_map:
            raise ConfigError(f"column_map is missing the {role!r} role")
    timings = column_map["timings"]
    if isinstance(timings, str):
        timings = [t for t in timings.split(",") if t]
    timings = list(timings)  # type: ignore[arg-type]
    if not timings:
        raise ConfigError("column_map must name at least one timing column")
    rep_col = column_map.get("rep")
    wanted = [str(column_map["user"]), str(column_map["session"]), *map(str, timings)]
    if rep_col:
        wanted.append(str(rep_col))
    pos = {h: i for i, h in enumerate(header)}
    for col in wanted:
        if col not in pos:
            raise ConfigError(f"column {col!r} not found in header of {path}")

    ucol, scol = pos[str(column_map["user"])], pos[str(column_map["session"])]
    tcols = [pos[str(t)] for t in timings]
    users, sessions, reps, feats = [], [], [], []
    running: dict[tuple[str, int], int] = {}
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DatasetError(f"row {i}: expected {len(header)} columns, got {len(row)}")
        u = row[ucol].strip()
        s = _parse_int(row[scol], i, header[scol])
        if rep_col:
            r = _parse_int(row[pos[str(rep_col)]], i, str(rep_col))
        else:
            r = running.get((u, s), 0) + 1
            running[(u, s)] = r
        users.append(u)
        sessions.append(s)
        reps.append(r)
        feats.append([_parse_float(row[c], i, header[c]) for c in tcols])
    return Dataset(
        np.array(users, dtype=object),
        np.array(sessions, dtype=np.int64),
        np.array(reps, dtype=np.int64),
        np.array(feats, dtype=np.float64).reshape(len(rows), len(tcols)),
        [str(t) for t in timings],
        Source(source),
        (str(column_map["user"]), str(column_map["session"]), str(rep_col or "rep")),
    )


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` in its own dialect; floats use ``repr`` so reloading is exact."""
    cols = CMU_ID_COLUMNS if ds.source is Source.CMU else ds.id_columns
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*cols, *ds.feature_names])
        for u, s, r, f in zip(ds.users, ds.sessions, ds.reps, ds.features):
            w.writerow([u, int(s), int(r), *(repr(float(v)) for v in f)])


def reload_like(ds: Dataset, path: str | Path) -> Dataset:
    """Load a file written by :func:`write_csv` for a dataset shaped like ``ds``."""
    if ds.source is Source.CMU:
        return load_cmu(path)
    u, s, r = ds.id_columns
    return load_mobikey(
        path, {"user": u, "session": s, "rep": r, "timings": ds.feature_names}, ds.source
    )


def select_users(ds: Dataset, n_users: int, seed: int) -> Dataset:
    """Keep every sample of ``n_users`` users drawn without replacement.

    The draw is a prefix of a seeded permutation, so for a fixed seed the
    selection for ``n`` users is contained in the selection for ``n + 1``.
    Sample order is preserved.
    """
    ids = ds.user_ids()
    if n_users < 1 or n_users > len(ids):
        raise DatasetError(f"cannot select {n_users} users from {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    chosen = {ids[i] for i in order[:n_users]}
    return ds.take(np.array([u in chosen for u in ds.users], dtype=bool))


def _tukey_keep(x: np.ndarray, k: float) -> np.ndarray:
    q1, q3 = np.percentile(x, [25, 75], axis=0)
    iqr = q3 - q1
    lo, hi = q1 - k * iqr, q3 + k * iqr
    inside = (x >= lo) & (x <= hi)
    # zero-IQR features never reject anything
    inside |= (iqr <= 0)[None, :]
    return inside.all(axis=1)


def outlier_mask(ds: Dataset, k: float = 3.0) -> tuple[np.ndarray, list[str]]:
    """Boolean keep-mask of per-user Tukey filtering plus the flagged users.

    Fences are recomputed on the surviving samples until nothing more is
    dropped, which makes the filter idempotent. A user the filter would empty
    is kept whole and flagged.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    keep = np.ones(len(ds), dtype=bool)
    flagged: list[str] = []
    if math.isinf(k):
        return keep, flagged
    for u in ds.user_ids():
        idx = np.flatnonzero(ds.users == u)
        alive = np.ones(len(idx), dtype=bool)
        while True:
            sub = _tukey_keep(ds.features[idx[alive]], k)
            if sub.all():
                break
            if not sub.any():
                alive[:] = True
                flagged.append(u)
                logger.info("outlier filter would remove every sample of user %s; kept", u)
                break
            alive[np.flatnonzero(alive)[~sub]] = False
        keep[idx] = alive
    return keep, flagged


def remove_outliers(ds: Dataset, k: float = 3.0) -> Dataset:
    if len(ds) == 0:
        raise DatasetError("cannot filter an empty dataset")
    keep, flagged = outlier_mask(ds, k)
    out = ds.take(keep)
    out.flagged_users = sorted(set(ds.flagged_users) | set(flagged))
    return out


def _largest_remainder(sizes: list[int], total: int) -> list[int]:
    n = sum(sizes)
    raw = [total * s / n for s in sizes]
    alloc = [min(int(math.floor(r)), s) for r, s in zip(raw, sizes)]
    order = sorted(range(len(sizes)), key=lambda i: (-(raw[i] - math.floor(raw[i])), i))
    left = total - sum(alloc)
    while left > 0:
        for i in order:
            if left and alloc[i] < sizes[i]:
                alloc[i] += 1
                left -= 1
    return alloc


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Per-user train/test partition.

    RANDOM and INTRA_SESSION put exactly ``ceil(train_fraction * n)`` of each
    user's ``n`` samples in train (INTRA_SESSION stratifies the count over the
    user's sessions). INTER_SESSION cuts at a session boundary: the earliest
    sessions train and the rest test, so per-user counts follow the sessions.
    """
    rng = np.random.default_rng(spec.seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for u in ds.user_ids():
        idx = np.flatnonzero(ds.users == u)
        n = len(idx)
        if n < 2:
            raise DatasetError(f"user {u} has {n} sample(s); need at least 2 to split")
        n_train = math.ceil(spec.train_fraction * n - 1e-9)
        if n_train >= n:
            raise DatasetError(
                f"train_fraction {spec.train_fraction} leaves no test sample for user {u} (n={n})"
            )
        if spec.mode is SplitMode.RANDOM:
            perm = idx[rng.permutation(n)]
            train_idx.extend(perm[:n_train])
            test_idx.extend(perm[n_train:])
        elif spec.mode is SplitMode.INTRA_SESSION:
            sess = sorted(set(ds.sessions[idx].tolist()))
            groups = [idx[ds.sessions[idx] == s] for s in sess]
            alloc = _largest_remainder([len(g) for g in groups], n_train)
            for g, a in zip(groups, alloc):
                perm = g[rng.permutation(len(g))]
                train_idx.extend(perm[:a])
                test_idx.extend(perm[a:])
        else:
            sess = sorted(set(ds.sessions[idx].tolist()))
            if len(sess) < 2:
                raise DatasetError(f"INTER_SESSION split needs >=2 sessions; user {u} has {len(sess)}")
            sizes = np.array([np.sum(ds.sessions[idx] == s) for s in sess])
            if spec.train_sessions is not None:
                cut = spec.train_sessions
                if not 1 <= cut < len(sess):
                    raise DatasetError(f"train_sessions={cut} invalid for user {u} with {len(sess)} sessions")
            else:
                cum = np.cumsum(sizes)[:-1]
                cut = int(np.argmin(np.abs(cum - n_train))) + 1
            train_s = set(sess[:cut])
            in_train = np.array([s in train_s for s in ds.sessions[idx]])
            train_idx.extend(idx[in_train])
            test_idx.extend(idx[~in_train])
    return ds.take(np.sort(train_idx)), ds.take(np.sort(test_idx))


def subsample(
    ds: Dataset,
    sample_size: int,
    seed: int,
    mode: SplitMode | str = SplitMode.RANDOM,
    train_fraction: float = 0.8,
) -> Dataset:
    """Draw ``sample_size`` samples per user before splitting.

    RANDOM draws from all sessions; INTRA_SESSION draws from one random session
    (topping up from the next sessions if it is too small); INTER_SESSION draws
    the train share from the earliest sessions and the rest from later ones.
    Each user's draw depends only on ``seed`` and the user id.
    """
    mode = SplitMode(mode)
    keep: list[int] = []
    for u in ds.user_ids():
        idx = np.flatnonzero(ds.users == u)
        if len(idx) < sample_size:
            raise DatasetError(f"user {u} has {len(idx)} samples, fewer than {sample_size}")
        urng = np.random.default_rng([seed, _stable_hash(u)])
        sess = sorted(set(ds.sessions[idx].tolist()))
        if mode is SplitMode.RANDOM:
            keep.extend(urng.choice(idx, sample_size, replace=False))
        elif mode is SplitMode.INTRA_SESSION:
            start = int(urng.integers(len(sess)))
            pool: list[int] = []
            for s in sess[start:] + sess[:start]:
                pool.extend(urng.permutation(idx[ds.sessions[idx] == s]))
                if len(pool) >= sample_size:
                    break
            keep.extend(pool[:sample_size])
        else:
            if len(sess) < 2:
                raise DatasetError(f"INTER_SESSION sampling needs >=2 sessions; user {u} has {len(sess)}")
            n_train = math.ceil(train_fraction * sample_size - 1e-9)
            cut = min(max(1, math.ceil(train_fraction * len(sess))), len(sess) - 1)
            early = idx[np.isin(ds.sessions[idx], sess[:cut])]
            late = idx[np.isin(ds.sessions[idx], sess[cut:])]
            n_test = sample_size - n_train
            if len(early) < n_train or len(late) < n_test:
                raise DatasetError(f"user {u}: not enough samples on each side of the session cut")
            keep.extend(urng.choice(early, n_train, replace=False))
            keep.extend(urng.choice(late, n_test, replace=False))
    return ds.take(np.sort(np.asarray(keep, dtype=np.int64)))


def _stable_hash(s: str) -> int:
    # Python's hash() is salted per process
    h = 2166136261
    for b in s.encode():
        h = ((h ^ b) * 16777619) & 0xFFFFFFFF
    return h
