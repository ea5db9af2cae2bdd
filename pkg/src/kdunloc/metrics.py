"""Templates, scaled Manhattan scores, cross-distance matrices and scoring."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels

EPS_FLOOR = 1e-6


@dataclass(frozen=True)
class UserTemplate:
    user_id: str
    mean: np.ndarray
    mad: np.ndarray
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "mean": self.mean.tolist(),
            "mad": self.mad.tolist(),
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> UserTemplate:
        return cls(str(d["user_id"]), np.asarray(d["mean"], float), np.asarray(d["mad"], float), int(d["n_samples"]))


def build_template(samples: np.ndarray, user_id: str = "", floor: float = EPS_FLOOR) -> UserTemplate:
    """Per-feature mean and mean absolute deviation (floored) of one user's samples."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if x.shape[0] == 0 or x.size == 0:
        raise ValueError("cannot build a template from zero samples")
    mean = x.mean(axis=0)
    mad = np.maximum(np.abs(x - mean).mean(axis=0), floor)
    return UserTemplate(user_id, mean, mad, x.shape[0])


def scaled_manhattan(t: UserTemplate, f: np.ndarray) -> float:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != t.mean.shape:
        raise ValueError(f"feature vector has length {f.size}, template has {t.mean.size}")
    return float(np.mean(np.abs(f - t.mean) / t.mad))


def score_matrix(templates: Sequence[UserTemplate], x: np.ndarray) -> np.ndarray:
    """``out[i, m]`` = scaled Manhattan score of row ``i`` against template ``m``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    means = np.stack([t.mean for t in templates])
    mads = np.stack([t.mad for t in templates])
    if x.shape[1] != means.shape[1]:
        raise ValueError(f"rows have {x.shape[1]} features, templates have {means.shape[1]}")
    return _kernels.scaled_manhattan_matrix(x, means, mads)


@dataclass(frozen=True)
class CrossDistanceMatrix:
    """``known_known[l, m]``: mean score of user ``l``'s samples against template ``m``.
    ``known_test[m]``: score of the test sample against template ``m``."""

    known_known: np.ndarray
    known_test: np.ndarray
    user_order: list[str]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["user", *self.user_order, "test"])
        for u, row, t in zip(self.user_order, self.known_known, self.known_test):
            w.writerow([u, *(repr(float(v)) for v in row), repr(float(t))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> CrossDistanceMatrix:
        rows = list(csv.reader(io.StringIO(text)))
        order = rows[0][1:-1]
        kk = np.array([[float(v) for v in r[1:-1]] for r in rows[1:]])
        kt = np.array([float(r[-1]) for r in rows[1:]])
        return cls(kk.reshape(len(order), len(order)), kt, order)


def known_known_matrix(templates: Sequence[UserTemplate], train: Mapping[str, np.ndarray]) -> np.ndarray:
    ids = [t.user_id for t in templates]
    missing = [u for u in train if u not in ids]
    if missing:
        raise ValueError(f"no template for user(s) {missing}")
    return np.stack([score_matrix(templates, train[u]).mean(axis=0) for u in ids])


def cross_distances(
    templates: Sequence[UserTemplate],
    train: Mapping[str, np.ndarray],
    test_sample: np.ndarray,
    known_known: np.ndarray | None = None,
) -> CrossDistanceMatrix:
    """Known-to-known and known-to-test scores in template order.

    ``known_known`` can be passed in when many test samples share one
    training set.
    """
    if known_known is None:
        known_known = known_known_matrix(templates, train)
    kt = score_matrix(templates, np.asarray(test_sample, dtype=np.float64)[None, :])[0]
    return CrossDistanceMatrix(known_known, kt, [t.user_id for t in templates])


def contingency(a: Sequence, b: Sequence) -> np.ndarray:
    _, ai = np.unique(np.asarray(a), return_inverse=True)
    _, bi = np.unique(np.asarray(b), return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def adjusted_rand_index(a: Sequence, b: Sequence) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    if len(a) != len(b):
        raise ValueError(f"label vectors differ in length ({len(a)} vs {len(b)})")
    if len(a) < 2:
        raise ValueError("ARI needs at least 2 samples")
    table = contingency(a, b)
    # integer pair counts and a single correctly rounded division keep this exact
    pairs = lambda v: sum(int(c) * (int(c) - 1) // 2 for c in np.ravel(v))  # noqa: E731
    index = pairs(table)
    sa, sb = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = len(a) * (len(a) - 1) // 2
    num = 2 * (total * index - sa * sb)
    den = total * (sa + sb) - 2 * sa * sb
    if den == 0:
        # both partitions trivial (one cluster each, or all singletons) and equal
        return 1.0
    return num / den


def identification_accuracy(pred: Sequence, truth: Sequence) -> float:
    if len(pred) != len(truth):
        raise ValueError(f"label vectors differ in length ({len(pred)} vs {len(truth)})")
    if len(pred) == 0:
        raise ValueError("accuracy of an empty prediction is undefined")
    return float(np.mean(np.asarray(pred, dtype=object) == np.asarray(truth, dtype=object)))


def match_clusters(clusters: Sequence[int], users: Sequence[str]) -> dict[int, str]:
    """One-to-one cluster->user map maximising agreement (Hungarian assignment).

    Clusters left unmatched (more clusters than users) are absent from the map;
    the noise label -1 is never matched.
    """
    clusters = np.asarray(clusters)
    users = np.asarray(users, dtype=object)
    cl = sorted(c for c in set(clusters.tolist()) if c != -1)
    us = sorted(set(users.tolist()))
    if not cl or not us:
        return {}
    counts = np.array([[np.sum((clusters == c) & (users == u)) for u in us] for c in cl])
    rows, cols = linear_sum_assignment(-counts)
    return {int(cl[r]): str(us[c]) for r, c in zip(rows, cols)}
