"""Per-feature quantile transform onto the uniform distribution on [0, 1]."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantileModel:
    """Empirical CDF knots per feature.

    ``quantiles[:, j]`` are the input values of feature ``j`` at the probability
    levels ``references`` (evenly spaced on [0, 1], shared by all features).
    """

    references: np.ndarray
    quantiles: np.ndarray

    @property
    def n_quantiles(self) -> int:
        return len(self.references)

    @property
    def feature_count(self) -> int:
        return self.quantiles.shape[1]

    @property
    def constant(self) -> np.ndarray:
        return self.quantiles[0] == self.quantiles[-1]

    def transform(self, m: np.ndarray) -> np.ndarray:
        return apply_quantile(self, m)

    def to_dict(self) -> dict:
        return {
            "n_quantiles": self.n_quantiles,
            "feature_count": self.feature_count,
            "references": self.references.tolist(),
            "quantiles": self.quantiles.T.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> QuantileModel:
        refs = np.asarray(d["references"], dtype=np.float64)
        q = np.asarray(d["quantiles"], dtype=np.float64).T
        if q.shape != (int(d["n_quantiles"]), int(d["feature_count"])) or len(refs) != q.shape[0]:
            raise ValueError("inconsistent quantile model document")
        return cls(refs, q)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> QuantileModel:
        return cls.from_dict(json.loads(s))


def fit_quantile(train: np.ndarray, n_quantiles: int | None = None) -> QuantileModel:
    """Estimate per-feature quantiles at ``n_quantiles`` evenly spaced levels.

    Defaults to ``min(1000, n_rows)``; larger requests are clamped to the row
    count with a warning.
    """
    x = np.asarray(train, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("quantile fit needs a 2-D matrix with at least 2 rows")
    n = x.shape[0]
    if n_quantiles is None:
        n_quantiles = min(1000, n)
    if n_quantiles < 2:
        raise ValueError(f"n_quantiles must be >= 2, got {n_quantiles}")
    if n_quantiles > n:
        warnings.warn(f"n_quantiles={n_quantiles} exceeds {n} rows; clamped", stacklevel=2)
        n_quantiles = n
    refs = np.linspace(0.0, 1.0, n_quantiles)
    q = np.percentile(x, refs * 100.0, axis=0)
    # percentile interpolation can wobble by an ulp; knots must be monotone
    q = np.maximum.accumulate(q, axis=0)
    return QuantileModel(refs, q)


def apply_quantile(model: QuantileModel, m: np.ndarray) -> np.ndarray:
    x = np.asarray(m, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.feature_count:
        raise ValueError(f"expected {model.feature_count} features, got {x.shape[1]}")
    refs = model.references
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        q = model.quantiles[:, j]
        col = x[:, j]
        if q[0] == q[-1]:
            out[:, j] = 0.5
            continue
        # averaging the forward and reversed interpolation assigns tied knots
        # their mid-rank probability
        fwd = np.interp(col, q, refs)
        bwd = -np.interp(-col, -q[::-1], -refs[::-1])
        t = 0.5 * (fwd + bwd)
        t[col <= q[0]] = 0.0
        t[col >= q[-1]] = 1.0
        out[:, j] = t
    return out[0] if squeeze else out
