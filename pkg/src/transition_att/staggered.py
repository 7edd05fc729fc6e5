"""Cohort-by-period effects under staggered adoption (single type only).

Cohort ``g`` is first treated in period ``g``; cohort 0 is never treated.
Counterfactual transitions for cohort ``g`` at period ``t`` come from the
control cohorts, matched on the ``ell`` outcomes ending at ``g - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .data import PanelDataset, decode_history, history_codes
from .effects import CELL_THRESHOLD, _check_policy
from .errors import EmptyControlCell, EmptyControlSet, LagExceedsHistory

MODES = ("never", "not_yet", "both")


def _cohort_levels(dataset: PanelDataset) -> List[int]:
    return sorted(int(g) for g in np.unique(dataset.cohorts))


def g_bar(dataset: PanelDataset) -> int:
    """Last period with a valid comparison: ``T`` with never-treated units,
    otherwise one before the last cohort starts."""
    levels = _cohort_levels(dataset)
    return dataset.T if 0 in levels else max(levels) - 1


def control_set(dataset: PanelDataset, g: int, t: int, mode: str = "never") -> List[int]:
    """Cohorts usable as controls for cohort ``g`` at period ``t``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    levels = _cohort_levels(dataset)
    if g == 0 or g not in levels:
        raise ValueError(f"{g} is not a treated cohort")
    if not g <= t <= g_bar(dataset):
        raise ValueError(f"period {t} outside {g}..{g_bar(dataset)}")
    never = [0] if 0 in levels else []
    later = [c for c in levels if c > t]
    out = {"never": never, "not_yet": later, "both": sorted(set(never) | set(later))}[mode]
    if not out:
        raise EmptyControlSet(f"no {mode} controls for cohort {g} at period {t}")
    return out


@dataclass
class CohortCell:
    g: int
    t: int
    att: np.ndarray
    counterfactual: np.ndarray
    controls: list
    n_treated: int
    n_control: int
    partial_support: list = field(default_factory=list)
    dropped_mass: float = 0.0


def cohort_cell(dataset: PanelDataset, g: int, t: int, ell: int = 1, mode: str = "never",
                policy: str = "error") -> CohortCell:
    """ATT of cohort ``g`` at period ``t`` with diagnostics.

    For each history, the counterfactual mean mixes the control cohorts'
    conditional means with weights proportional to cohort size. Cohorts
    lacking the history are left out and the weights renormalized; such
    histories are listed in ``partial_support``. A history no control cohort
    has is an empty cell handled by ``policy``.
    """
    _check_policy(policy)
    controls = control_set(dataset, g, t, mode)
    if ell < 1 or ell > g - 1:
        raise LagExceedsHistory(f"lag {ell} needs {ell} periods before cohort {g}")
    K = dataset.K
    H = K ** ell
    G = dataset.cohorts
    codes = history_codes(dataset.outcomes, g - 1, ell, K)
    y = dataset.outcomes[:, t - 1]
    tr = G == g
    N1 = np.bincount(codes[tr], minlength=H).astype(float)
    S1 = np.bincount(codes[tr] * K + y[tr], minlength=H * K).reshape(H, K).astype(float)
    sizes = np.array([(G == c).sum() for c in controls], dtype=float)
    cw = sizes / sizes.sum()
    num = np.zeros((H, K))
    den = np.zeros(H)
    full = np.ones(H, dtype=bool)
    for w, c in zip(cw, controls):
        sel = G == c
        N0 = np.bincount(codes[sel], minlength=H).astype(float)
        S0 = np.bincount(codes[sel] * K + y[sel], minlength=H * K).reshape(H, K).astype(float)
        has = N0 > 0
        full &= has
        num[has] += w * S0[has] / N0[has, None]
        den[has] += w
    occupied = N1 > 0
    empty = occupied & (den <= CELL_THRESHOLD)
    dropped = 0.0
    if empty.any():
        h = int(np.flatnonzero(empty)[0])
        if policy == "error":
            raise EmptyControlCell(decode_history(h, ell, K))
        dropped = float(N1[empty].sum() / N1.sum())
        occupied &= ~empty
        if not occupied.any():
            raise EmptyControlCell(decode_history(h, ell, K), "no treated history has control support")
    idx = np.flatnonzero(occupied)
    p = N1[idx] / N1[idx].sum()
    cf = p @ (num[idx] / den[idx, None])
    att = p @ (S1[idx] / N1[idx, None]) - cf
    partial = [decode_history(h, ell, K) for h in idx if not full[h]]
    return CohortCell(g, t, att, cf, list(controls), int(tr.sum()), int(sizes.sum()), partial, dropped)


def cohort_att(dataset: PanelDataset, g: int, t: int, ell: int = 1, mode: str = "never",
               policy: str = "error") -> np.ndarray:
    return cohort_cell(dataset, g, t, ell, mode, policy).att


def cohort_weights(dataset: PanelDataset, t: int) -> Dict[int, float]:
    """Pr(G = g | G != 0, g <= t) over treated cohorts already started by ``t``."""
    G = dataset.cohorts
    started = [g for g in _cohort_levels(dataset) if g != 0 and g <= t]
    if not started:
        raise ValueError(f"no cohort is treated by period {t}")
    sizes = np.array([(G == g).sum() for g in started], dtype=float)
    return dict(zip(started, sizes / sizes.sum()))


def aggregate_staggered(dataset: PanelDataset, t: int, ell: int = 1, mode: str = "never",
                        policy: str = "error"):
    """Cohort-size-weighted ATT at calendar period ``t``; returns ``(att, weights)``."""
    weights = cohort_weights(dataset, t)
    att = sum(w * cohort_att(dataset, g, t, ell, mode, policy) for g, w in weights.items())
    return att, weights


@dataclass
class CohortEffectTable:
    mode: str
    lag: int
    labels: tuple
    entries: Dict[tuple, CohortCell]
    aggregate: Dict[int, tuple]
    skipped: list = field(default_factory=list)

    def rows(self) -> list:
        out = []
        for (g, t), cell in sorted(self.entries.items()):
            for k, lab in enumerate(self.labels):
                out.append({"g": g, "t": t, "category": lab, "att": float(cell.att[k]),
                            "n_treated": cell.n_treated, "n_control": cell.n_control, "mode": self.mode})
        return out

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "lag": self.lag,
            "categories": list(self.labels),
            "cells": [
                {"g": g, "t": t, "att": [float(v) for v in c.att], "controls": c.controls,
                 "n_treated": c.n_treated, "n_control": c.n_control,
                 "partial_support": [list(h) for h in c.partial_support], "dropped_mass": c.dropped_mass}
                for (g, t), c in sorted(self.entries.items())
            ],
            "aggregate": [
                {"t": t, "att": [float(v) for v in att], "weights": {str(g): float(w) for g, w in wts.items()}}
                for t, (att, wts) in sorted(self.aggregate.items())
            ],
            "skipped": [{"g": g, "t": t, "reason": r} for g, t, r in self.skipped],
        }


def estimate_staggered(dataset: PanelDataset, ell: int = 1, mode: str = "never",
                       policy: str = "error") -> CohortEffectTable:
    """Every identified ``(g, t)`` cell plus calendar-period aggregates.

    Cells whose control set is empty are skipped and recorded; a period is
    aggregated only if every cohort started by then has a cell.
    """
    gb = g_bar(dataset)
    cohorts = [g for g in _cohort_levels(dataset) if g != 0]
    entries, skipped = {}, []
    for g in cohorts:
        for t in range(g, gb + 1):
            try:
                entries[(g, t)] = cohort_cell(dataset, g, t, ell, mode, policy)
            except EmptyControlSet as exc:
                skipped.append((g, t, str(exc)))
    aggregate = {}
    for t in range(min(cohorts), gb + 1):
        wts = cohort_weights(dataset, t)
        if all((g, t) in entries for g in wts):
            aggregate[t] = (sum(w * entries[(g, t)].att for g, w in wts.items()), wts)
    return CohortEffectTable(mode, ell, dataset.alphabet.labels, entries, aggregate, skipped)
