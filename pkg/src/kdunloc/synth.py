"""Synthetic stand-in for the CMU password-typing benchmark.

Produces a :class:`~kdunloc.dataset.Dataset` with the benchmark's exact layout
(subjects ``s002``..., 8 sessions x 50 repetitions, 31 timing columns for the
password ``.tie5Roanl`` + Return) from a per-user log-normal timing model with
session drift, per-attempt tempo jitter and occasional hesitation pauses.

The one free knob, ``noise``, was set once so that the classic
scaled-Manhattan anomaly detector reaches an equal-error rate near 0.096, the
value usually reported for the real benchmark (see
``benchmarks/calibrate_surrogate.py``). It was not adjusted afterwards.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset, Source

KEYS = [".", "t", "i", "e", "five", "Shift.r", "o", "a", "n", "l", "Return"]
_KEY_LABEL = {".": "period"}

# typical up-down latency (s) of each consecutive key pair
_UD_BASE = np.array([0.16, 0.09, 0.10, 0.22, 0.30, 0.20, 0.10, 0.08, 0.10, 0.22])
_HOLD_BASE = 0.085


def cmu_feature_names() -> list[str]:
    names: list[str] = []
    labels = [_KEY_LABEL.get(k, k) for k in KEYS]
    for a, b in zip(labels[:-1], labels[1:]):
        names += [f"H.{a}", f"DD.{a}.{b}", f"UD.{a}.{b}"]
    names.append(f"H.{labels[-1]}")
    return names


def make_cmu_like(
    n_users: int = 51,
    sessions: int = 8,
    reps: int = 50,
    seed: int = 2009,
    noise: float = 1.2,
) -> Dataset:
    rng = np.random.default_rng(seed)
    n_keys, n_di = len(KEYS), len(KEYS) - 1
    users, sess_col, rep_col, rows = [], [], [], []
    for u in range(n_users):
        uid = f"s{u + 2:03d}"
        speed = rng.lognormal(0.0, 0.35)
        hold_mu = _HOLD_BASE * rng.lognormal(0.0, 0.22) * rng.lognormal(0.0, 0.15, n_keys)
        ud_mu = _UD_BASE * speed * rng.lognormal(0.0, 0.35, n_di)
        hold_sd = 0.16 * noise * rng.lognormal(0.0, 0.2)
        ud_sd = 0.30 * noise * rng.lognormal(0.0, 0.2)
        pause_rate = 0.03 * rng.lognormal(0.0, 0.5)
        for s in range(1, sessions + 1):
            # practice effect plus session-to-session wobble
            drift = np.exp(-0.04 * (s - 1) + rng.normal(0.0, 0.06 * noise, n_di))
            hdrift = np.exp(rng.normal(0.0, 0.04 * noise, n_keys))
            for r in range(1, reps + 1):
                tempo = rng.lognormal(0.0, 0.08 * noise)
                hold = hold_mu * hdrift * rng.lognormal(0.0, hold_sd, n_keys)
                ud = ud_mu * drift * tempo * rng.lognormal(0.0, ud_sd, n_di)
                pauses = rng.random(n_di) < pause_rate
                ud[pauses] *= rng.lognormal(1.0, 0.5, pauses.sum())
                # key overlap: the next key can go down before this one is released
                ud -= 0.35 * hold[:-1] * rng.random(n_di) * (rng.random(n_di) < 0.15)
                dd = hold[:-1] + ud
                row = []
                for k in range(n_di):
                    row += [hold[k], dd[k], ud[k]]
                row.append(hold[-1])
                rows.append(np.round(row, 4))
                users.append(uid)
                sess_col.append(s)
                rep_col.append(r)
    return Dataset(
        np.array(users, dtype=object),
        np.array(sess_col),
        np.array(rep_col),
        np.array(rows),
        cmu_feature_names(),
        Source.CMU,
    )
