"""Second-stage effects weighted by posterior type probabilities.

Every estimator here is the single-type estimator with unit weights replaced
by ``zeta_i * tau_ij``, so with one type they reduce to the nonparametric
versions exactly.
"""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .data import PanelDataset
from .effects import (
    EffectSeries,
    FlowDecomposition,
    PreTrendReport,
    _check_arms,
    _flow_from_table,
    _post_periods,
    _report,
    _tables,
    transition_tables,
)
from .errors import DimensionMismatch, NoTreatedUnits


def _posteriors(dataset: PanelDataset, posteriors) -> np.ndarray:
    tau = np.asarray(posteriors, dtype=float)
    if tau.ndim != 2 or tau.shape[0] != dataset.n:
        raise DimensionMismatch(f"posteriors must be {dataset.n} x J, got {tau.shape}")
    return tau


def _unit_weights(dataset, weights):
    return np.ones(dataset.n) if weights is None else np.asarray(weights, dtype=float)


def type_weights(dataset: PanelDataset, posteriors, weights=None) -> np.ndarray:
    """Share of each type among treated units, ``sum tau 1{D=1} / sum 1{D=1}``."""
    tau = _posteriors(dataset, posteriors)
    w = _unit_weights(dataset, weights) * (dataset.treated == 1)
    if w.sum() <= 0:
        raise NoTreatedUnits("no treated units to weight types by")
    return (w @ tau) / w.sum()


def ltatt(dataset: PanelDataset, posteriors, j: int, ell: int = 1, policy: str = "error",
          weights=None) -> EffectSeries:
    """Effect on the treated within latent type ``j`` (0-based).

    History shares and arm-specific outcome means are ratios of
    ``zeta * tau_j``-weighted sums over the last ``ell`` pre-period outcomes.
    A weighted denominator at or below ``1e-10`` is an empty cell, handled by
    ``policy`` (``error`` raises :class:`EmptyWeightedCell`).
    """
    dataset.require_simultaneous()
    _check_arms(dataset)
    tau = _posteriors(dataset, posteriors)
    if not 0 <= j < tau.shape[1]:
        raise DimensionMismatch(f"type index {j} outside 0..{tau.shape[1] - 1}")
    w = _unit_weights(dataset, weights) * tau[:, j]
    periods = _post_periods(dataset)
    tables = _tables(dataset, ell, dataset.T0, periods, policy, weights=w)
    return EffectSeries(
        method="mixture", lag=ell, periods=periods,
        effects=np.array([tb.effect() for tb in tables]), labels=dataset.alphabet.labels,
        counterfactual=np.array([tb.counterfactual() for tb in tables]),
        dropped_mass=np.array([tb.dropped_mass for tb in tables]),
    )


def att_aggregate(dataset: PanelDataset, posteriors, ltatts: Sequence[EffectSeries], weights=None) -> EffectSeries:
    """Treated-share-weighted average of the type-specific effects."""
    tau = _posteriors(dataset, posteriors)
    if len(ltatts) != tau.shape[1]:
        raise DimensionMismatch("need one effect series per type")
    wj = type_weights(dataset, tau, weights)
    layers = np.array([s.effects for s in ltatts])
    return EffectSeries(
        method="mixture", lag=ltatts[0].lag, periods=ltatts[0].periods,
        effects=np.tensordot(wj, layers, axes=1), labels=ltatts[0].labels,
        type_effects=layers, type_weights=wj,
    )


def mixture_effects(dataset: PanelDataset, posteriors, ell: int = 1, policy: str = "error",
                    weights=None) -> EffectSeries:
    """All type-specific effects plus their aggregate in one series."""
    tau = _posteriors(dataset, posteriors)
    types = [ltatt(dataset, tau, j, ell, policy, weights) for j in range(tau.shape[1])]
    return att_aggregate(dataset, tau, types, weights)


def theta_vector(series: EffectSeries) -> np.ndarray:
    """Flatten to (type 1..J, aggregate) x post period x category."""
    parts = [] if series.type_effects is None else [series.type_effects.reshape(-1)]
    parts.append(series.effects.reshape(-1))
    return np.concatenate(parts)


def theta_labels(series: EffectSeries) -> List[tuple]:
    """``(series, period, category)`` for every entry of :func:`theta_vector`."""
    names = [] if series.type_effects is None else [f"type{j + 1}" for j in range(series.type_effects.shape[0])]
    names.append("aggregate")
    return [(s, int(t), lab) for s in names for t in series.periods for lab in series.labels]


def type_flow_decomposition(dataset: PanelDataset, posteriors, j: int, k: int, t: int, policy: str = "error",
                            weights=None) -> FlowDecomposition:
    """Inflow/outflow split of type ``j``'s effect on category ``k`` at period ``t``."""
    dataset.require_simultaneous()
    _check_arms(dataset)
    tau = _posteriors(dataset, posteriors)
    if not 0 <= k < dataset.K:
        raise ValueError(f"focal category {k} outside 0..{dataset.K - 1}")
    if not dataset.T0 < t <= dataset.T:
        raise ValueError(f"period {t} is not a post-treatment period")
    w = _unit_weights(dataset, weights) * tau[:, j]
    table = _tables(dataset, 1, dataset.T0, [t], policy, weights=w)[0]
    return _flow_from_table(table, k, t, dataset.alphabet.labels, type_index=j)


def type_pre_transitions(dataset: PanelDataset, posteriors, weights=None) -> PreTrendReport:
    """Posterior-weighted pre-period transition probabilities by type and arm."""
    dataset.require_simultaneous()
    tau = _posteriors(dataset, posteriors)
    K, J = dataset.K, tau.shape[1]
    labels = dataset.alphabet.labels
    types = tuple(range(1, J + 1))
    if dataset.T0 < 2:
        return PreTrendReport((), np.zeros((J, 0, 2, K, K)), np.zeros((J, 0, 2, K)), labels,
                              insufficient=True, types=types, flags=["InsufficientPrePeriods"])
    w = _unit_weights(dataset, weights)[None, :] * tau.T
    probs, mass = transition_tables(dataset.outcomes, dataset.treated, dataset.T0, K, w)
    return _report(probs, mass, dataset.T0, labels, types)
