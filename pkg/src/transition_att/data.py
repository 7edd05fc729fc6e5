"""Discrete-outcome panel container, CSV ingestion and history encoding."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DuplicateObservation,
    IndexOutOfRange,
    InvalidPanel,
    LagExceedsHistory,
    MissingColumn,
    NonAbsorbingTreatment,
    StaggeredAdoption,
    UnbalancedPanel,
    UnknownLabel,
)

REQUIRED_COLUMNS = ("unit", "time", "outcome", "treated")
OPTIONAL_COLUMNS = ("cluster", "cohort")


@dataclass(frozen=True)
class OutcomeAlphabet:
    """Ordered set of outcome category labels."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise InvalidPanel(f"need at least 2 outcome categories, got {len(labels)}")
        if len(set(labels)) != len(labels):
            raise InvalidPanel(f"outcome labels must be distinct: {labels}")
        object.__setattr__(self, "_index", {lab: k for k, lab in enumerate(labels)})

    @property
    def K(self) -> int:
        return len(self.labels)

    @property
    def index(self) -> dict:
        return dict(self._index)

    def index_of(self, label) -> int:
        try:
            return self._index[str(label)]
        except KeyError:
            raise UnknownLabel(f"outcome {label!r} is not in alphabet {self.labels}") from None


@dataclass(frozen=True)
class HistoryKey:
    """Outcome indices over ``lag`` consecutive periods ending at an anchor period."""

    lag: int
    states: tuple

    def __post_init__(self):
        if self.lag < 1 or len(self.states) != self.lag:
            raise LagExceedsHistory(f"history of length {len(self.states)} does not match lag {self.lag}")


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced panel of categorical outcomes with an absorbing binary treatment.

    Periods are indexed ``1..T``; ``outcomes[:, t - 1]`` holds period ``t``.
    ``cohort`` is the first treated period per unit (0 = never treated) and
    is only stored when the input carried it or adoption is staggered; the
    :attr:`cohorts` property always returns it.
    """

    alphabet: OutcomeAlphabet
    outcomes: np.ndarray
    treated: np.ndarray
    T0: int
    unit_ids: tuple = None
    time_values: tuple = None
    cluster_id: Optional[np.ndarray] = None
    cohort: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.array(self.outcomes, dtype=np.int64)
        if y.ndim != 2:
            raise InvalidPanel("outcomes must be an n x T matrix")
        n, T = y.shape
        if n < 1:
            raise InvalidPanel("panel has no units")
        if y.min() < 0 or y.max() >= self.alphabet.K:
            raise IndexOutOfRange("outcome index outside the alphabet")
        d = np.array(self.treated).astype(np.int64).reshape(-1)
        if d.shape != (n,) or not np.isin(d, (0, 1)).all():
            raise InvalidPanel("treated must be a length-n vector of 0/1")
        if not 1 <= self.T0 < T:
            raise InvalidPanel(f"need 1 <= T0 < T, got T0={self.T0}, T={T}")
        units = tuple(str(u) for u in (self.unit_ids if self.unit_ids is not None else range(1, n + 1)))
        times = tuple(str(t) for t in (self.time_values if self.time_values is not None else range(1, T + 1)))
        if len(units) != n or len(set(units)) != n:
            raise InvalidPanel("unit_ids must be n distinct identifiers")
        if len(times) != T:
            raise InvalidPanel("time_values must have length T")
        cl = None
        if self.cluster_id is not None:
            cl = np.array([str(c) for c in self.cluster_id], dtype=object)
            if cl.shape != (n,):
                raise InvalidPanel("cluster_id must have length n")
        g = None
        if self.cohort is not None:
            g = np.array(self.cohort, dtype=np.int64).reshape(-1)
            if g.shape != (n,):
                raise InvalidPanel("cohort must have length n")
            bad = (g != 0) & ((g < 2) | (g > T))
            if bad.any():
                raise InvalidPanel("cohort values must be 0 or lie in 2..T")
            if not np.array_equal(g != 0, d == 1):
                raise InvalidPanel("treated must equal 1 exactly when cohort != 0")
            if (g[g != 0] < self.T0 + 1).any():
                raise InvalidPanel("T0 must be the period before the earliest cohort")
            g.setflags(write=False)
        for arr in (y, d):
            arr.setflags(write=False)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "treated", d)
        object.__setattr__(self, "unit_ids", units)
        object.__setattr__(self, "time_values", times)
        object.__setattr__(self, "cluster_id", cl)
        object.__setattr__(self, "cohort", g)

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def T(self) -> int:
        return self.outcomes.shape[1]

    @property
    def K(self) -> int:
        return self.alphabet.K

    @property
    def cohorts(self) -> np.ndarray:
        if self.cohort is not None:
            return self.cohort
        return np.where(self.treated == 1, self.T0 + 1, 0)

    @property
    def is_staggered(self) -> bool:
        g = self.cohorts
        return bool((g[g != 0] != self.T0 + 1).any())

    def one_hot(self) -> np.ndarray:
        """Return the n x T x K indicator array of outcomes."""
        return np.eye(self.K)[self.outcomes]

    def require_simultaneous(self):
        if self.is_staggered:
            raise StaggeredAdoption(
                "treated units start treatment in different periods; use the staggered estimators"
            )

    def with_treated_swapped(self) -> "PanelDataset":
        """Swap treated and control arms (simultaneous adoption only)."""
        self.require_simultaneous()
        return PanelDataset(
            self.alphabet, self.outcomes, 1 - self.treated, self.T0,
            self.unit_ids, self.time_values, self.cluster_id,
        )

    def relabel(self, labels: Sequence[str]) -> "PanelDataset":
        """Return the same panel indexed under a permuted alphabet."""
        new = OutcomeAlphabet(tuple(labels))
        if set(new.labels) != set(self.alphabet.labels):
            raise UnknownLabel("relabel must use the same set of labels")
        perm = np.array([new.index_of(lab) for lab in self.alphabet.labels])
        return PanelDataset(
            new, perm[self.outcomes], self.treated, self.T0, self.unit_ids,
            self.time_values, self.cluster_id, self.cohort,
        )

    def subset(self, mask) -> "PanelDataset":
        mask = np.asarray(mask, dtype=bool)
        return PanelDataset(
            self.alphabet, self.outcomes[mask], self.treated[mask], self.T0,
            tuple(np.array(self.unit_ids, dtype=object)[mask]), self.time_values,
            None if self.cluster_id is None else self.cluster_id[mask],
            None if self.cohort is None else self.cohort[mask],
        )


def one_hot(y: int, K: int) -> np.ndarray:
    """Indicator vector of length ``K`` with a one at position ``y``."""
    if not 0 <= int(y) < K:
        raise IndexOutOfRange(f"category index {y} outside 0..{K - 1}")
    v = np.zeros(K)
    v[int(y)] = 1.0
    return v


def history_codes(outcomes: np.ndarray, anchor: int, lag: int, K: int) -> np.ndarray:
    """Integer code of each row's outcomes over periods ``anchor-lag+1..anchor``.

    Codes are base-``K`` with the earliest period most significant, so code
    order matches lexicographic order of the state tuples.
    """
    if lag < 1 or lag > anchor:
        raise LagExceedsHistory(f"lag {lag} needs {lag} periods but anchor is {anchor}")
    block = outcomes[:, anchor - lag:anchor]
    code = np.zeros(outcomes.shape[0], dtype=np.int64)
    for s in range(lag):
        code = code * K + block[:, s]
    return code


def decode_history(code: int, lag: int, K: int) -> tuple:
    states = []
    for _ in range(lag):
        code, r = divmod(int(code), K)
        states.append(r)
    return tuple(reversed(states))


def history_key(dataset: PanelDataset, unit: int, anchor: int, lag: int) -> HistoryKey:
    if lag < 1 or lag > anchor:
        raise LagExceedsHistory(f"lag {lag} exceeds the {anchor} periods available up to the anchor")
    if anchor > dataset.T:
        raise LagExceedsHistory(f"anchor {anchor} beyond last period {dataset.T}")
    row = dataset.outcomes[unit, anchor - lag:anchor]
    return HistoryKey(lag, tuple(int(v) for v in row))


# --- CSV ingestion -----------------------------------------------------------


def _time_sort_key(values):
    try:
        return sorted(values, key=lambda v: (float(v), v))
    except ValueError:
        return sorted(values)


def _parse_flag(raw, what, unit, time):
    s = raw.strip()
    if s not in ("0", "1"):
        raise InvalidPanel(f"{what} must be 0 or 1 (unit {unit}, time {time}): {raw!r}")
    return int(s)


def load_panel_csv(
    path,
    schema: Optional[Mapping[str, str]] = None,
    alphabet: Optional[Sequence[str]] = None,
    t0: Optional[int] = None,
) -> PanelDataset:
    """Read a long-format panel ``unit,time,outcome,treated[,cluster][,cohort]``.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV file with a header row.
    schema : mapping, optional
        Maps the canonical column names to the names used in the file.
    alphabet : sequence of str, optional
        Explicit category order. Defaults to the sorted distinct labels.
    t0 : int, optional
        Number of pre-treatment periods. Only needed when ``treated`` is a
        unit-level flag that is 1 in every period, or when no unit is treated.

    ``treated`` is read as the per-period treatment indicator, which must be
    absorbing. Periods are re-indexed ``1..T`` by sorted time value.
    """
    schema = dict(schema or {})
    unknown = set(schema) - set(REQUIRED_COLUMNS + OPTIONAL_COLUMNS)
    if unknown:
        raise InvalidPanel(f"unknown schema keys: {sorted(unknown)}")
    colmap = {c: schema.get(c, c) for c in REQUIRED_COLUMNS + OPTIONAL_COLUMNS}

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for c in REQUIRED_COLUMNS:
            if colmap[c] not in header:
                raise MissingColumn(f"column {colmap[c]!r} ({c}) not found in {path}")
        has_cluster = colmap["cluster"] in header
        has_cohort = colmap["cohort"] in header
        rows = list(reader)

    units: dict = {}
    times = set()
    cells = {}
    for r in rows:
        u = r[colmap["unit"]].strip()
        t = r[colmap["time"]].strip()
        units.setdefault(u, len(units))
        times.add(t)
        if (u, t) in cells:
            raise DuplicateObservation(f"unit {u} has more than one row for time {t}")
        cells[(u, t)] = r
    if not units:
        raise InvalidPanel(f"{path} has no data rows")

    time_order = _time_sort_key(times)
    T = len(time_order)
    labels_seen = sorted({r[colmap["outcome"]].strip() for r in rows})
    alpha = OutcomeAlphabet(tuple(alphabet) if alphabet is not None else tuple(labels_seen))

    n = len(units)
    y = np.empty((n, T), dtype=np.int64)
    dflag = np.empty((n, T), dtype=np.int64)
    clusters = [None] * n
    cohort_col = np.zeros(n, dtype=np.int64)
    for u, i in units.items():
        for s, t in enumerate(time_order):
            r = cells.get((u, t))
            if r is None:
                raise UnbalancedPanel(f"unit {u} has no observation for time {t}")
            y[i, s] = alpha.index_of(r[colmap["outcome"]].strip())
            dflag[i, s] = _parse_flag(r[colmap["treated"]], "treated", u, t)
            if has_cluster:
                c = r[colmap["cluster"]].strip()
                if s and c != clusters[i]:
                    raise InvalidPanel(f"unit {u} changes cluster over time")
                clusters[i] = c
            if has_cohort:
                try:
                    g = int(r[colmap["cohort"]].strip())
                except ValueError:
                    raise InvalidPanel(f"cohort for unit {u} is not an integer") from None
                if s and g != cohort_col[i]:
                    raise InvalidPanel(f"unit {u} changes cohort over time")
                cohort_col[i] = g

    if (np.diff(dflag, axis=1) < 0).any():
        bad = int(np.nonzero((np.diff(dflag, axis=1) < 0).any(axis=1))[0][0])
        unit = list(units)[bad]
        raise NonAbsorbingTreatment(f"treatment of unit {unit} switches off after starting")

    always = dflag.all(axis=1)
    first = np.where(dflag.any(axis=1), dflag.argmax(axis=1) + 1, 0)
    if has_cohort:
        cohort = cohort_col
        per_row = np.arange(1, T + 1)[None, :] >= np.where(cohort > 0, cohort, T + 1)[:, None]
        consistent = (dflag == per_row).all(axis=1) | (always & (cohort != 0)) | (~dflag.any(axis=1) & (cohort == 0))
        if not consistent.all():
            unit = list(units)[int(np.argmin(consistent))]
            raise NonAbsorbingTreatment(f"treated flags of unit {unit} disagree with its cohort")
    else:
        cohort = first.copy()
        if always.any():
            if t0 is None:
                raise InvalidPanel(
                    "some units are treated in every period; pass t0 to read treated as a unit-level flag"
                )
            cohort[always] = t0 + 1

    treated = (cohort != 0).astype(np.int64)
    if treated.any():
        T0 = int(cohort[cohort != 0].min()) - 1
    elif t0 is not None:
        T0 = int(t0)
    else:
        raise InvalidPanel("no treated units; pass t0 to fix the number of pre-treatment periods")
    if t0 is not None and treated.any() and T0 != t0:
        raise InvalidPanel(f"t0={t0} disagrees with the earliest treatment period {T0 + 1}")
    if T0 < 1:
        raise InvalidPanel("units cannot be treated in the first period")
    staggered = bool((cohort[cohort != 0] != T0 + 1).any())

    return PanelDataset(
        alphabet=alpha,
        outcomes=y,
        treated=treated,
        T0=T0,
        unit_ids=tuple(units),
        time_values=tuple(time_order),
        cluster_id=np.array(clusters, dtype=object) if has_cluster else None,
        cohort=cohort if (has_cohort or staggered) else None,
    )


def write_panel_csv(dataset: PanelDataset, path) -> None:
    """Write the normalized long format read by :func:`load_panel_csv`."""
    header = list(REQUIRED_COLUMNS)
    if dataset.cluster_id is not None:
        header.append("cluster")
    if dataset.cohort is not None:
        header.append("cohort")
    g = dataset.cohorts
    labels = dataset.alphabet.labels
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, u in enumerate(dataset.unit_ids):
            for s, t in enumerate(dataset.time_values):
                d = int(g[i] != 0 and s + 1 >= g[i])
                row = [u, t, labels[dataset.outcomes[i, s]], d]
                if dataset.cluster_id is not None:
                    row.append(dataset.cluster_id[i])
                if dataset.cohort is not None:
                    row.append(int(g[i]))
                w.writerow(row)
