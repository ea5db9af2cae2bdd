"""Calibrate the surrogate CMU generator against the usual detector EER.

Protocol of the original benchmark: per genuine subject, train on its first 200
repetitions, score its last 200 plus the first 5 repetitions of every other
subject, and average the per-subject equal-error rates. The scaled-Manhattan
detector is usually reported at about 0.096 on the real data.

    python3 benchmarks/calibrate_surrogate.py --noise 0.8 1.0 1.2
"""

from __future__ import annotations

import argparse

import numpy as np

from kdunloc.metrics import build_template, score_matrix
from kdunloc.synth import make_cmu_like


def eer(genuine: np.ndarray, impostor: np.ndarray) -> float:
    thresholds = np.unique(np.concatenate([genuine, impostor]))
    best = (2.0, 1.0)
    for t in thresholds:
        frr = np.mean(genuine > t)
        far = np.mean(impostor <= t)
        if abs(frr - far) < best[0]:
            best = (abs(frr - far), 0.5 * (frr + far))
    return best[1]


def mean_eer(ds) -> float:
    users = ds.user_ids()
    rates = []
    for u in users:
        x = ds.features[ds.users == u]
        t = build_template(x[:200], u)
        gen = score_matrix([t], x[200:])[:, 0]
        imp = np.concatenate(
            [score_matrix([t], ds.features[ds.users == v][:5])[:, 0] for v in users if v != u]
        )
        rates.append(eer(gen, imp))
    return float(np.mean(rates))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--noise", type=float, nargs="+", default=[1.0])
    ap.add_argument("--seed", type=int, default=2009)
    args = ap.parse_args()
    for nz in args.noise:
        print(f"noise={nz:.3f}  mean EER={mean_eer(make_cmu_like(seed=args.seed, noise=nz)):.4f}")


if __name__ == "__main__":
    main()
