"""Nonparametric (single-type) effect estimators.

Everything here works on one-hot outcome means, so binary and multi-category
outcomes share one code path. Conditioning histories are the last ``lag``
pre-treatment outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .data import PanelDataset, decode_history, history_codes
from .errors import (
    EmptyControlCell,
    EmptyWeightedCell,
    InsufficientPrePeriods,
    LagExceedsHistory,
    NoControlUnits,
    NoTreatedUnits,
)

POLICIES = ("error", "drop")
CELL_THRESHOLD = 1e-10


@dataclass
class EffectSeries:
    """Per-period K-vectors of effects for post periods ``periods``.

    ``effects`` has shape ``(len(periods), K)``. ``type_effects``, when set,
    has shape ``(J, len(periods), K)`` and ``type_weights`` holds the
    treated-population share of each type.
    """

    method: str
    lag: Optional[int]
    periods: tuple
    effects: np.ndarray
    labels: tuple
    counterfactual: Optional[np.ndarray] = None
    dropped_mass: Optional[np.ndarray] = None
    type_effects: Optional[np.ndarray] = None
    type_weights: Optional[np.ndarray] = None

    def at(self, t: int) -> np.ndarray:
        return self.effects[self.periods.index(t)]

    def to_dict(self) -> dict:
        out = {"method": self.method, "lag": self.lag, "categories": list(self.labels), "periods": []}
        for s, t in enumerate(self.periods):
            row = {"t": int(t), "effect": [float(v) for v in self.effects[s]]}
            if self.counterfactual is not None:
                row["counterfactual"] = [float(v) for v in self.counterfactual[s]]
            if self.dropped_mass is not None:
                row["dropped_mass"] = float(self.dropped_mass[s])
            out["periods"].append(row)
        return out


@dataclass
class HistoryTable:
    """Per-history cell summaries for one outcome period.

    Rows are the treated-occupied histories kept under the empty-cell policy.
    ``weights`` are treated shares (summing to ``1 - dropped_mass``);
    ``treated_means`` and ``control_means`` are K-vectors per history.
    """

    lag: int
    codes: np.ndarray
    weights: np.ndarray
    treated_means: np.ndarray
    control_means: np.ndarray
    treated_mass: np.ndarray
    control_mass: np.ndarray
    dropped_mass: float
    K: int

    @property
    def histories(self) -> List[tuple]:
        return [decode_history(c, self.lag, self.K) for c in self.codes]

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    def effect(self) -> np.ndarray:
        p = self.normalized_weights
        return p @ self.treated_means - p @ self.control_means

    def counterfactual(self) -> np.ndarray:
        return self.normalized_weights @ self.control_means


@dataclass
class HistoryContribution:
    history: tuple
    effect: np.ndarray
    weight: float

    @property
    def contribution(self) -> np.ndarray:
        return self.weight * self.effect


@dataclass
class FlowDecomposition:
    """Inflow/outflow split of the effect on a focal category.

    ``inflow[y]`` is the effect coming from state ``y`` into the focal state
    and ``outflow[y]`` the effect going from the focal state to ``y``; both
    are zero at the focal index.
    """

    focal: int
    period: int
    inflow: np.ndarray
    outflow: np.ndarray
    effect: float
    labels: tuple
    type_index: Optional[int] = None

    @property
    def net(self) -> float:
        return float(self.inflow.sum() - self.outflow.sum())

    @property
    def residual(self) -> float:
        return self.effect - self.net

    def rows(self) -> list:
        k = self.labels[self.focal]
        out = []
        for y, lab in enumerate(self.labels):
            if y == self.focal:
                continue
            out.append(("inflow", f"{lab}->{k}", float(self.inflow[y])))
            out.append(("outflow", f"{k}->{lab}", float(self.outflow[y])))
        return out


@dataclass
class PreTrendReport:
    """Pre-period transition probabilities by arm and their treated-control gap.

    Arrays carry a leading layer axis: one layer for the pooled sample, or
    one per latent type. ``probs[l, s, d, a, b]`` is the probability of moving
    from ``a`` to ``b`` at period ``periods[s]`` in arm ``d``; rows whose
    conditioning mass is below ``threshold`` are NaN and listed in ``flags``.
    """

    periods: tuple
    probs: np.ndarray
    mass: np.ndarray
    labels: tuple
    insufficient: bool = False
    types: Optional[tuple] = None
    flags: list = field(default_factory=list)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    @property
    def differences(self) -> np.ndarray:
        return self.probs[:, :, 1] - self.probs[:, :, 0]

    def max_abs_difference(self) -> float:
        d = self.differences
        return float(np.nanmax(np.abs(d))) if np.isfinite(d).any() else float("nan")

    def rows(self) -> list:
        out = []
        diff = self.differences
        for layer in range(self.probs.shape[0]):
            tag = "all" if self.types is None else str(self.types[layer])
            for s, t in enumerate(self.periods):
                for a, la in enumerate(self.labels):
                    for b, lb in enumerate(self.labels):
                        row = {
                            "type": tag, "period": int(t), "from": la, "to": lb,
                            "p_treated": float(self.probs[layer, s, 1, a, b]),
                            "p_control": float(self.probs[layer, s, 0, a, b]),
                            "difference": float(diff[layer, s, a, b]),
                            "n_treated": float(self.mass[layer, s, 1, a]),
                            "n_control": float(self.mass[layer, s, 0, a]),
                        }
                        if self.lower is not None:
                            row["lower"] = float(self.lower[layer, s, a, b])
                            row["upper"] = float(self.upper[layer, s, a, b])
                        out.append(row)
        return out


# --- shared weighted core ------------------------------------------------------


def _check_policy(policy):
    if policy not in POLICIES:
        raise ValueError(f"empty-cell policy must be one of {POLICIES}, got {policy!r}")


def history_table(
    codes: np.ndarray,
    y_t: np.ndarray,
    treated: np.ndarray,
    w_treated: np.ndarray,
    w_control: np.ndarray,
    lag: int,
    K: int,
    policy: str = "error",
    threshold: float = CELL_THRESHOLD,
    weighted: bool = False,
) -> HistoryTable:
    """Summarise outcome means per conditioning history in each arm.

    ``w_treated``/``w_control`` are per-unit weights applied to treated and
    control units respectively (ones for plain frequencies).
    """
    _check_policy(policy)
    H = K ** lag
    tr = treated == 1
    ct = ~tr
    N1 = np.bincount(codes[tr], weights=w_treated[tr], minlength=H)
    N0 = np.bincount(codes[ct], weights=w_control[ct], minlength=H)
    S1 = np.bincount(codes[tr] * K + y_t[tr], weights=w_treated[tr], minlength=H * K).reshape(H, K)
    S0 = np.bincount(codes[ct] * K + y_t[ct], weights=w_control[ct], minlength=H * K).reshape(H, K)
    total = N1.sum()
    if total <= threshold:
        raise NoTreatedUnits("no treated mass to average over")
    occupied = N1 > threshold
    empty = occupied & (N0 <= threshold)
    dropped = 0.0
    if empty.any():
        h = int(np.flatnonzero(empty)[0])
        if policy == "error":
            hist = decode_history(h, lag, K)
            if weighted:
                raise EmptyWeightedCell(hist, 0)
            raise EmptyControlCell(hist)
        dropped = float(N1[empty].sum() / total)
        occupied &= ~empty
        if not occupied.any():
            raise EmptyControlCell(decode_history(h, lag, K), "every treated history lacks control support")
    idx = np.flatnonzero(occupied)
    return HistoryTable(
        lag=lag,
        codes=idx,
        weights=N1[idx] / total,
        treated_means=S1[idx] / N1[idx, None],
        control_means=S0[idx] / N0[idx, None],
        treated_mass=N1[idx],
        control_mass=N0[idx],
        dropped_mass=dropped,
        K=K,
    )


def _post_periods(dataset: PanelDataset):
    return tuple(range(dataset.T0 + 1, dataset.T + 1))


def _check_lag(dataset: PanelDataset, lag: int, anchor: int):
    if lag < 1 or lag > anchor:
        raise LagExceedsHistory(f"lag {lag} needs {lag} pre-treatment periods, only {anchor} available")


def _check_arms(dataset: PanelDataset, need_control=True):
    if not (dataset.treated == 1).any():
        raise NoTreatedUnits("panel has no treated units")
    if need_control and not (dataset.treated == 0).any():
        raise NoControlUnits("panel has no control units")


def _tables(dataset, lag, anchor, periods, policy, weights=None, treated_weights=None):
    _check_lag(dataset, lag, anchor)
    codes = history_codes(dataset.outcomes, anchor, lag, dataset.K)
    w = np.ones(dataset.n) if weights is None else np.asarray(weights, dtype=float)
    w1 = w if treated_weights is None else np.asarray(treated_weights, dtype=float)
    weighted = weights is not None
    return [
        history_table(codes, dataset.outcomes[:, t - 1], dataset.treated, w1, w, lag, dataset.K,
                      policy, weighted=weighted)
        for t in periods
    ]


# --- public estimators ---------------------------------------------------------


def conditional_counterfactual_mean(dataset: PanelDataset, lag: int, t: int, policy: str = "error"):
    """Counterfactual untreated mean of period-``t`` outcomes for the treated.

    Returns ``(counterfactual, table)`` where ``table`` is the
    :class:`HistoryTable` of control means per treated history.
    """
    dataset.require_simultaneous()
    _check_arms(dataset)
    if not dataset.T0 < t <= dataset.T:
        raise ValueError(f"period {t} is not a post-treatment period")
    table = _tables(dataset, lag, dataset.T0, [t], policy)[0]
    return table.counterfactual(), table


def ti_att(dataset: PanelDataset, lag: int = 1, policy: str = "error", weights=None) -> EffectSeries:
    """ATT under transition independence, matching on the last ``lag`` pre-period outcomes."""
    dataset.require_simultaneous()
    _check_arms(dataset)
    periods = _post_periods(dataset)
    tables = _tables(dataset, lag, dataset.T0, periods, policy, weights)
    return EffectSeries(
        method="TI",
        lag=lag,
        periods=periods,
        effects=np.array([tb.effect() for tb in tables]),
        labels=dataset.alphabet.labels,
        counterfactual=np.array([tb.counterfactual() for tb in tables]),
        dropped_mass=np.array([tb.dropped_mass for tb in tables]),
    )


def history_contributions(dataset: PanelDataset, lag: int, t: int, policy: str = "error") -> List[HistoryContribution]:
    """Per-history conditional effects and treated weights at period ``t``.

    Weights sum to one minus the dropped treated mass.
    """
    _, table = conditional_counterfactual_mean(dataset, lag, t, policy)
    eff = table.treated_means - table.control_means
    return [HistoryContribution(h, eff[r], float(table.weights[r])) for r, h in enumerate(table.histories)]


def did_att(dataset: PanelDataset) -> EffectSeries:
    """Difference-in-differences of category shares relative to the last pre period."""
    dataset.require_simultaneous()
    _check_arms(dataset)
    X = dataset.one_hot()
    tr = dataset.treated == 1
    m1 = X[tr].mean(axis=0)
    m0 = X[~tr].mean(axis=0)
    periods = _post_periods(dataset)
    base = dataset.T0 - 1
    eff = np.array([(m1[t - 1] - m1[base]) - (m0[t - 1] - m0[base]) for t in periods])
    return EffectSeries(method="DiD", lag=None, periods=periods, effects=eff, labels=dataset.alphabet.labels)


def did_counterfactual(dataset: PanelDataset) -> np.ndarray:
    """Untreated means implied for the treated by parallel trends.

    Unlike the transition-based counterfactual these can leave [0, 1].
    """
    dataset.require_simultaneous()
    _check_arms(dataset)
    X = dataset.one_hot()
    tr = dataset.treated == 1
    m1 = X[tr].mean(axis=0)
    m0 = X[~tr].mean(axis=0)
    base = dataset.T0 - 1
    return np.array([m1[base] + m0[t - 1] - m0[base] for t in _post_periods(dataset)])


def did_bias(dataset: PanelDataset, lag: int = 1, policy: str = "error") -> np.ndarray:
    """DiD bias relative to the transition-independence ATT, per post period.

    Sums the control trend from each history's last pre-period state times
    the treated-minus-control gap in history frequencies.
    """
    dataset.require_simultaneous()
    _check_arms(dataset)
    _check_policy(policy)
    _check_lag(dataset, lag, dataset.T0)
    K = dataset.K
    H = K ** lag
    codes = history_codes(dataset.outcomes, dataset.T0, lag, K)
    tr = dataset.treated == 1
    N1 = np.bincount(codes[tr], minlength=H).astype(float)
    N0 = np.bincount(codes[~tr], minlength=H).astype(float)
    empty = (N1 > 0) & (N0 == 0)
    if empty.any() and policy == "error":
        raise EmptyControlCell(decode_history(int(np.flatnonzero(empty)[0]), lag, K))
    gap = N1 / N1.sum() - N0 / N0.sum()
    support = N0 > 0
    last = np.eye(K)[np.arange(H) % K]
    out = []
    for t in _post_periods(dataset):
        y = dataset.outcomes[:, t - 1]
        S0 = np.bincount(codes[~tr] * K + y[~tr], minlength=H * K).reshape(H, K).astype(float)
        trend = S0[support] / N0[support, None] - last[support]
        out.append(gap[support] @ trend)
    return np.array(out)


def _flow_from_table(table: HistoryTable, k: int, t: int, labels, type_index=None) -> FlowDecomposition:
    K = table.K
    p = table.normalized_weights
    m1, m0 = table.treated_means, table.control_means
    inflow = np.zeros(K)
    outflow = np.zeros(K)
    for r, y in enumerate(table.codes):
        if y == k:
            outflow = (m1[r] - m0[r]) * p[r]
            outflow[k] = 0.0
        else:
            inflow[y] = (m1[r, k] - m0[r, k]) * p[r]
    effect = float((p @ m1 - p @ m0)[k])
    return FlowDecomposition(int(k), int(t), inflow, outflow, effect, tuple(labels), type_index)


def flow_decomposition(dataset: PanelDataset, k: int, t: int, policy: str = "error") -> FlowDecomposition:
    """Split the one-lag ATT on category ``k`` at period ``t`` into inflows and outflows."""
    if not 0 <= k < dataset.K:
        raise ValueError(f"focal category {k} outside 0..{dataset.K - 1}")
    _, table = conditional_counterfactual_mean(dataset, 1, t, policy)
    return _flow_from_table(table, k, t, dataset.alphabet.labels)


def placebo_att(dataset: PanelDataset, lag: int = 1, policy: str = "error") -> EffectSeries:
    """Pseudo-ATT at the last pre period, conditioning on histories ending one period earlier."""
    dataset.require_simultaneous()
    _check_arms(dataset)
    T0 = dataset.T0
    if T0 < 2 or lag > T0 - 1:
        raise InsufficientPrePeriods(f"placebo with lag {lag} needs T0 >= {lag + 1}, have T0={T0}")
    table = _tables(dataset, lag, T0 - 1, [T0], policy)[0]
    return EffectSeries(
        method="placebo", lag=lag, periods=(T0,), effects=table.effect()[None, :],
        labels=dataset.alphabet.labels, counterfactual=table.counterfactual()[None, :],
        dropped_mass=np.array([table.dropped_mass]),
    )


def transition_tables(outcomes, treated, T0, K, weights, threshold=CELL_THRESHOLD):
    """Arm-specific one-step transition probabilities for periods ``2..T0``.

    ``weights`` has shape ``(L, n)``; returns ``(probs, mass)`` with shapes
    ``(L, T0-1, 2, K, K)`` and ``(L, T0-1, 2, K)``. Rows whose mass is at or
    below ``threshold`` are NaN.
    """
    weights = np.atleast_2d(weights)
    L = weights.shape[0]
    P = T0 - 1
    probs = np.full((L, P, 2, K, K), np.nan)
    mass = np.zeros((L, P, 2, K))
    for s, t in enumerate(range(2, T0 + 1)):
        idx = outcomes[:, t - 2] * K + outcomes[:, t - 1]
        for d in (0, 1):
            sel = treated == d
            for layer in range(L):
                c = np.bincount(idx[sel], weights=weights[layer, sel], minlength=K * K).reshape(K, K)
                m = c.sum(axis=1)
                mass[layer, s, d] = m
                ok = m > threshold
                probs[layer, s, d, ok] = c[ok] / m[ok, None]
    return probs, mass


def pre_transition_differences(dataset: PanelDataset, weights=None) -> PreTrendReport:
    """Treated-minus-control one-step transition probabilities over pre periods."""
    dataset.require_simultaneous()
    labels = dataset.alphabet.labels
    K = dataset.K
    if dataset.T0 < 2:
        return PreTrendReport((), np.zeros((1, 0, 2, K, K)), np.zeros((1, 0, 2, K)), labels, insufficient=True,
                              flags=["InsufficientPrePeriods"])
    w = np.ones(dataset.n) if weights is None else np.asarray(weights, dtype=float)
    probs, mass = transition_tables(dataset.outcomes, dataset.treated, dataset.T0, K, w)
    return _report(probs, mass, dataset.T0, labels, None)


def _report(probs, mass, T0, labels, types) -> PreTrendReport:
    periods = tuple(range(2, T0 + 1))
    flags = []
    for layer, s, d, a in zip(*np.nonzero(np.isnan(probs[..., 0]))):
        tag = "all" if types is None else types[layer]
        flags.append(f"type={tag} period={periods[s]} arm={d} from={labels[a]}: empty conditioning cell")
    return PreTrendReport(periods, probs, mass, tuple(labels), types=types, flags=flags)
