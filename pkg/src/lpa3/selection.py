"""Time-consistency (TCS) scoring and low-TCS sample selection.

For each sample the instantaneous inconsistency between two consecutive
predictions is

    a_t = KL(F_{t-1} || F_t) + |log(F_{t-1}[y_{t-1}] / F_t[y_{t-1}])|

and the score is the negative moving average
``c_t = gamma_c * (-a_t) + (1 - gamma_c) * c_{t-1}``. Low scores flag
samples whose predictions keep moving.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

PROB_FLOOR = 1e-12
SIMPLEX_TOL = 1e-9


@dataclass
class TCSRecord:
    sample_id: int
    c: float = 0.0
    probs: np.ndarray | None = None  # None until the first update: treated as uniform
    label: int = -1
    step: int = 0


def _check_simplex(p: np.ndarray) -> None:
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("predictions must be probability vectors (non-negative, summing to 1)")


def _clamped(p: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), PROB_FLOOR, None)


def inconsistency(prev: np.ndarray, new: np.ndarray, label) -> np.ndarray:
    """Row-wise a_t for (n, C) probability arrays and the previous hard labels."""
    prev, new = _clamped(np.atleast_2d(prev)), _clamped(np.atleast_2d(new))
    label = np.asarray(label, dtype=np.int64).reshape(-1)
    kl = np.sum(prev * (np.log(prev) - np.log(new)), axis=1)
    rows = np.arange(len(prev))
    return kl + np.abs(np.log(prev[rows, label]) - np.log(new[rows, label]))


def tcs_update(record: TCSRecord, new_probs, gamma_c: float = 0.9, label: int | None = None) -> TCSRecord:
    """Return the record after observing ``new_probs``.

    ``label`` is the true class for labeled samples; when omitted the new
    hard label is the argmax (pseudo label). On the very first update the
    previous prediction is uniform and, lacking a previous hard label, the
    current one is used.
    """
    if not 0.0 <= gamma_c <= 1.0:
        raise ValueError("gamma_c must lie in [0, 1]")
    new_probs = np.asarray(new_probs, dtype=np.float64).reshape(-1)
    _check_simplex(new_probs)
    prev = np.full(len(new_probs), 1.0 / len(new_probs)) if record.probs is None else record.probs
    if prev.shape != new_probs.shape:
        raise ValueError(f"prediction has {len(new_probs)} classes, record holds {len(prev)}")
    hard = int(np.argmax(new_probs)) if label is None else int(label)
    prev_label = hard if record.label < 0 else record.label
    a = float(inconsistency(prev, new_probs, [prev_label])[0])
    c = gamma_c * (-a) + (1.0 - gamma_c) * record.c
    return TCSRecord(record.sample_id, c, new_probs.copy(), hard, record.step + 1)


def _count(tau_pct: float, n: int) -> int:
    return int(Fraction(str(float(tau_pct))) * n // 100)


def select_low_tcs(records: Sequence[TCSRecord], tau_pct: float) -> list[int]:
    """Ids of the floor(tau% * n) records with the smallest c; ties go to the smaller id."""
    if not records:
        raise ValueError("no records to select from")
    ids = np.array([r.sample_id for r in records], dtype=np.int64)
    c = np.array([r.c for r in records], dtype=np.float64)
    return [int(i) for i in select_ids(ids, c, tau_pct)]


def select_ids(ids: np.ndarray, c: np.ndarray, tau_pct: float) -> np.ndarray:
    if not 0.0 <= tau_pct <= 100.0:
        raise ValueError("tau_pct must lie in [0, 100]")
    if len(ids) == 0:
        raise ValueError("no records to select from")
    order = np.lexsort((ids, c))
    return ids[order[: _count(tau_pct, len(ids))]]


class TCSTracker:
    """Array-backed TCS state for a fixed pool of sample ids."""

    def __init__(self, ids, num_classes: int, gamma_c: float = 0.9):
        if not 0.0 <= gamma_c <= 1.0:
            raise ValueError("gamma_c must lie in [0, 1]")
        self.ids = np.asarray(ids, dtype=np.int64)
        self.gamma_c = gamma_c
        self.num_classes = num_classes
        self.c = np.zeros(len(self.ids))
        self.probs = np.full((len(self.ids), num_classes), 1.0 / num_classes)
        self.labels = np.full(len(self.ids), -1, dtype=np.int64)
        self.steps = np.zeros(len(self.ids), dtype=np.int64)
        self._pos = {int(i): k for k, i in enumerate(self.ids)}

    def positions(self, ids) -> np.ndarray:
        return np.array([self._pos[int(i)] for i in ids], dtype=np.int64)

    def update(self, ids, new_probs, labels=None) -> None:
        pos = self.positions(ids)
        new_probs = np.asarray(new_probs, dtype=np.float64)
        if new_probs.shape != (len(pos), self.num_classes):
            raise ValueError("prediction array does not match ids / class count")
        _check_simplex(new_probs)
        hard = new_probs.argmax(axis=1) if labels is None else np.asarray(labels, dtype=np.int64)
        prev_label = np.where(self.labels[pos] < 0, hard, self.labels[pos])
        a = inconsistency(self.probs[pos], new_probs, prev_label)
        self.c[pos] = self.gamma_c * (-a) + (1.0 - self.gamma_c) * self.c[pos]
        self.probs[pos] = new_probs
        self.labels[pos] = hard
        self.steps[pos] += 1

    def select(self, ids, tau_pct: float) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        return select_ids(ids, self.c[self.positions(ids)], tau_pct)

    def records(self) -> list[TCSRecord]:
        return [
            TCSRecord(int(i), float(self.c[k]), None if self.steps[k] == 0 else self.probs[k].copy(),
                      int(self.labels[k]), int(self.steps[k]))
            for k, i in enumerate(self.ids)
        ]
