"""Synthetic panels with known effects, and exact population truths.

Simulation is seeded per block of units (``default_rng([seed, block])``), so
the output does not depend on how blocks are spread over workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._parallel import pmap
from .data import OutcomeAlphabet, PanelDataset
from .effects import EffectSeries
from .errors import EnumerationTooLarge, InvalidPanel
from .mixture import MarkovMixtureParams

BLOCK = 8192
MAX_HISTORIES = 1_000_000


def _rows_ok(a, name, axis=-1):
    a = np.asarray(a, dtype=float)
    if (a < 0).any() or abs(a.sum(axis=axis) - 1).max() > 1e-9:
        raise InvalidPanel(f"{name} must hold probability rows")
    return a


def _labels(K, labels):
    return tuple(str(k) for k in range(K)) if labels is None else tuple(labels)


def _sample_rows(rng, probs):
    """One categorical draw per row of ``probs`` by inverse CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((u >= cdf).sum(axis=-1), probs.shape[-1] - 1)


def _advance(dist, kernel, H, K):
    """Push a distribution over history codes through one transition."""
    joint = dist[:, None] * kernel           # (H, K)
    new = np.zeros(H)
    codes = (np.arange(H)[:, None] * K + np.arange(K)[None, :]) % H
    np.add.at(new, codes.ravel(), joint.ravel())
    return new, joint.sum(axis=0)


# --- simultaneous adoption ---------------------------------------------------


@dataclass
class DgpSpec:
    """Mixture-of-Markov data-generating process with type-dependent selection.

    ``initial[j, h]`` is the distribution of the first ``ell`` outcomes for
    type ``j``; ``selection[j, h]`` is Pr(D=1 | initial history h, Z=j).
    Kernels follow the :class:`MarkovMixtureParams` layout.
    """

    pi: np.ndarray
    initial: np.ndarray
    selection: np.ndarray
    control_kernel: np.ndarray
    treated_kernel: np.ndarray
    ell: int
    K: int
    T: int
    T0: int
    n: int = 1000
    seed: int = 0
    labels: Optional[tuple] = None
    eps: float = 0.0

    def __post_init__(self):
        self.pi = _rows_ok(self.pi, "pi")
        self.initial = _rows_ok(self.initial, "initial")
        self.selection = np.asarray(self.selection, dtype=float)
        self.control_kernel = _rows_ok(self.control_kernel, "control_kernel")
        self.treated_kernel = _rows_ok(self.treated_kernel, "treated_kernel")
        self.labels = _labels(self.K, self.labels)
        if ((self.selection < self.eps) | (self.selection > 1 - self.eps)).any():
            raise InvalidPanel("selection probabilities must lie in [eps, 1 - eps]")
        self.params  # shape check

    @property
    def J(self) -> int:
        return len(self.pi)

    @property
    def H(self) -> int:
        return self.K ** self.ell

    @property
    def params(self) -> MarkovMixtureParams:
        init = self.initial[:, :, None] * np.stack([1 - self.selection, self.selection], axis=-1)
        return MarkovMixtureParams(self.J, self.ell, self.K, self.T, self.T0, self.pi, init,
                                   self.control_kernel, self.treated_kernel, self.eps)

    def replace(self, **kw) -> "DgpSpec":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return DgpSpec(**d)

    def to_dict(self) -> dict:
        p = self.params.to_dict()
        for j, tp in enumerate(p["types"]):
            del tp["init_joint"]
            tp["initial"] = self.initial[j].tolist()
            tp["selection"] = self.selection[j].tolist()
        p.update({"kind": "mixture", "labels": list(self.labels), "n": self.n, "seed": self.seed})
        return p

    @classmethod
    def from_dict(cls, d) -> "DgpSpec":
        J, ell, K, T, T0 = (int(d[k]) for k in ("J", "ell", "K", "T", "T0"))
        types = d["types"]
        return cls(
            pi=d["pi"],
            initial=[tp["initial"] for tp in types],
            selection=[tp["selection"] for tp in types],
            control_kernel=[[tp["control_kernel"][str(t)] for t in range(ell + 1, T + 1)] for tp in types],
            treated_kernel=[[tp["treated_kernel"][str(t)] for t in range(T0 + 1, T + 1)] for tp in types],
            ell=ell, K=K, T=T, T0=T0, n=int(d.get("n", 1000)), seed=int(d.get("seed", 0)),
            labels=d.get("labels"), eps=float(d.get("eps", 0.0)),
        )


@dataclass
class SimulatedPanel:
    """A simulated panel plus the hidden type of every unit (for tests only)."""

    dataset: PanelDataset
    types: np.ndarray


def _simulate_block(args):
    spec, seed, block, size = args
    rng = np.random.default_rng([int(seed), int(block)])
    H, K, ell, T, T0 = spec.H, spec.K, spec.ell, spec.T, spec.T0
    z = _sample_rows(rng, np.broadcast_to(spec.pi, (size, spec.J)))
    h = _sample_rows(rng, spec.initial[z])
    d = (rng.random(size) < spec.selection[z, h]).astype(np.int64)
    y = np.empty((size, T), dtype=np.int64)
    for s in range(ell):
        y[:, s] = (h // K ** (ell - 1 - s)) % K
    for t in range(ell + 1, T + 1):
        rows = spec.control_kernel[z, t - ell - 1, h]
        if t > T0:
            rows = np.where(d[:, None] == 1, spec.treated_kernel[z, t - T0 - 1, h], rows)
        x = _sample_rows(rng, rows)
        y[:, t - 1] = x
        h = (h * K + x) % H
    return y, d, z


def simulate(spec: DgpSpec, n: Optional[int] = None, seed: Optional[int] = None, workers: int = 1
             ) -> SimulatedPanel:
    """Draw a panel from ``spec``; ``n`` and ``seed`` override the spec's values."""
    n = spec.n if n is None else int(n)
    seed = spec.seed if seed is None else int(seed)
    sizes = [min(BLOCK, n - b) for b in range(0, n, BLOCK)]
    parts = pmap(_simulate_block, [(spec, seed, i, s) for i, s in enumerate(sizes)], workers)
    y = np.concatenate([p[0] for p in parts])
    d = np.concatenate([p[1] for p in parts])
    z = np.concatenate([p[2] for p in parts])
    ds = PanelDataset(OutcomeAlphabet(spec.labels), y, d, spec.T0)
    return SimulatedPanel(ds, z)


def true_att(spec: DgpSpec) -> EffectSeries:
    """Exact population type-specific and aggregate ATTs among the treated."""
    H, K, ell, T, T0 = spec.H, spec.K, spec.ell, spec.T, spec.T0
    if H > MAX_HISTORIES:
        raise EnumerationTooLarge(f"{H} histories exceed the enumeration limit {MAX_HISTORIES}")
    J = spec.J
    mass = spec.pi * (spec.initial * spec.selection).sum(axis=1)
    if mass.sum() <= 0:
        raise InvalidPanel("spec never assigns treatment")
    weights = mass / mass.sum()
    periods = tuple(range(T0 + 1, T + 1))
    layers = np.zeros((J, len(periods), K))
    for j in range(J):
        if mass[j] <= 0:
            continue
        q = spec.initial[j] * spec.selection[j]
        q = q / q.sum()
        for t in range(ell + 1, T0 + 1):
            q, _ = _advance(q, spec.control_kernel[j, t - ell - 1], H, K)
        q1 = q0 = q
        for s, t in enumerate(periods):
            q1, m1 = _advance(q1, spec.treated_kernel[j, t - T0 - 1], H, K)
            q0, m0 = _advance(q0, spec.control_kernel[j, t - ell - 1], H, K)
            layers[j, s] = m1 - m0
    agg = np.tensordot(weights, layers, axes=1)
    return EffectSeries("truth", ell, periods, agg, spec.labels, type_effects=layers, type_weights=weights)


# --- staggered adoption -------------------------------------------------------


@dataclass
class StaggeredSpec:
    """Single-type Markov DGP with several adoption cohorts.

    ``cohorts`` lists first-treatment periods (0 = never treated) with
    probabilities ``cohort_probs``; ``initial[c]`` is the initial-history
    distribution of cohort ``cohorts[c]``. ``treated_kernel[g]`` has one
    slice per period ``g..T``.
    """

    cohorts: tuple
    cohort_probs: np.ndarray
    initial: np.ndarray
    control_kernel: np.ndarray
    treated_kernel: dict
    ell: int
    K: int
    T: int
    n: int = 1000
    seed: int = 0
    labels: Optional[tuple] = None

    def __post_init__(self):
        self.cohorts = tuple(int(g) for g in self.cohorts)
        self.cohort_probs = _rows_ok(self.cohort_probs, "cohort_probs")
        self.initial = _rows_ok(self.initial, "initial")
        self.control_kernel = _rows_ok(self.control_kernel, "control_kernel")
        self.treated_kernel = {int(g): _rows_ok(v, "treated_kernel") for g, v in self.treated_kernel.items()}
        self.labels = _labels(self.K, self.labels)
        treated = [g for g in self.cohorts if g != 0]
        if not treated or min(treated) - 1 < self.ell:
            raise InvalidPanel("every cohort needs at least ell untreated periods")
        for g in treated:
            if self.treated_kernel[g].shape != (self.T - g + 1, self.H, self.K):
                raise InvalidPanel(f"treated kernel for cohort {g} has the wrong shape")

    @property
    def H(self) -> int:
        return self.K ** self.ell

    @property
    def T0(self) -> int:
        return min(g for g in self.cohorts if g != 0) - 1

    def to_dict(self) -> dict:
        return {
            "kind": "staggered", "ell": self.ell, "K": self.K, "T": self.T, "labels": list(self.labels),
            "n": self.n, "seed": self.seed, "cohorts": list(self.cohorts),
            "cohort_probs": self.cohort_probs.tolist(), "initial": self.initial.tolist(),
            "control_kernel": {str(self.ell + 1 + s): r.tolist() for s, r in enumerate(self.control_kernel)},
            "treated_kernel": {str(g): {str(g + s): r.tolist() for s, r in enumerate(v)}
                               for g, v in self.treated_kernel.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "StaggeredSpec":
        ell, T = int(d["ell"]), int(d["T"])
        return cls(
            cohorts=d["cohorts"], cohort_probs=d["cohort_probs"], initial=d["initial"],
            control_kernel=[d["control_kernel"][str(t)] for t in range(ell + 1, T + 1)],
            treated_kernel={int(g): [v[str(t)] for t in range(int(g), T + 1)] for g, v in d["treated_kernel"].items()},
            ell=ell, K=int(d["K"]), T=T, n=int(d.get("n", 1000)), seed=int(d.get("seed", 0)),
            labels=d.get("labels"),
        )


def _simulate_staggered_block(args):
    spec, seed, block, size = args
    rng = np.random.default_rng([int(seed), int(block)])
    H, K, ell, T = spec.H, spec.K, spec.ell, spec.T
    c = _sample_rows(rng, np.broadcast_to(spec.cohort_probs, (size, len(spec.cohorts))))
    g = np.array(spec.cohorts)[c]
    h = _sample_rows(rng, spec.initial[c])
    y = np.empty((size, T), dtype=np.int64)
    for s in range(ell):
        y[:, s] = (h // K ** (ell - 1 - s)) % K
    for t in range(ell + 1, T + 1):
        rows = spec.control_kernel[t - ell - 1, h].copy()
        for gg, kern in spec.treated_kernel.items():
            on = (g == gg) & (t >= gg)
            if on.any():
                rows[on] = kern[t - gg, h[on]]
        x = _sample_rows(rng, rows)
        y[:, t - 1] = x
        h = (h * K + x) % H
    return y, g


def simulate_staggered(spec: StaggeredSpec, n: Optional[int] = None, seed: Optional[int] = None,
                       workers: int = 1) -> PanelDataset:
    n = spec.n if n is None else int(n)
    seed = spec.seed if seed is None else int(seed)
    sizes = [min(BLOCK, n - b) for b in range(0, n, BLOCK)]
    parts = pmap(_simulate_staggered_block, [(spec, seed, i, s) for i, s in enumerate(sizes)], workers)
    y = np.concatenate([p[0] for p in parts])
    g = np.concatenate([p[1] for p in parts])
    treated = (g != 0).astype(np.int64)
    T0 = int(g[g != 0].min()) - 1 if treated.any() else spec.T0
    return PanelDataset(OutcomeAlphabet(spec.labels), y, treated, T0, cohort=g)


def staggered_true_att(spec: StaggeredSpec) -> dict:
    """Exact ATT_{g,t} for every treated cohort and ``g <= t <= T``."""
    H, K, ell = spec.H, spec.K, spec.ell
    out = {}
    for c, g in enumerate(spec.cohorts):
        if g == 0:
            continue
        q = spec.initial[c]
        for t in range(ell + 1, g):
            q, _ = _advance(q, spec.control_kernel[t - ell - 1], H, K)
        q1 = q0 = q
        for t in range(g, spec.T + 1):
            q1, m1 = _advance(q1, spec.treated_kernel[g][t - g], H, K)
            q0, m0 = _advance(q0, spec.control_kernel[t - ell - 1], H, K)
            out[(g, t)] = m1 - m0
    return out


# --- fixtures and shipped specs -------------------------------------------------

MR_LABELS = ("unemployed", "employed")


def mr_example() -> PanelDataset:
    """The 48-unit two-period mean-reversion fixture.

    Treated: 12 employed stay employed, 9 of 12 unemployed find work.
    Control: 6 employed stay employed, 12 of 18 unemployed find work.
    """
    rows = [(1, 1)] * 12 + [(0, 1)] * 9 + [(0, 0)] * 3 + [(1, 1)] * 6 + [(0, 1)] * 12 + [(0, 0)] * 6
    treated = [1] * 24 + [0] * 24
    return PanelDataset(OutcomeAlphabet(MR_LABELS), np.array(rows), np.array(treated), 1,
                        unit_ids=tuple(f"u{i:02d}" for i in range(1, 49)), time_values=("1", "2"))


def mr_spec(n: int = 48, seed: int = 0) -> DgpSpec:
    """Population version of the mean-reversion fixture."""
    return DgpSpec(
        pi=[1.0], initial=[[0.625, 0.375]], selection=[[0.4, 2 / 3]],
        control_kernel=[[[[1 / 3, 2 / 3], [0.0, 1.0]]]],
        treated_kernel=[[[[0.25, 0.75], [0.0, 1.0]]]],
        ell=1, K=2, T=2, T0=1, n=n, seed=seed, labels=MR_LABELS,
    )


def _dominant(perm, K, p):
    m = np.full((K, K), (1 - p) / (K - 1))
    m[np.arange(K), perm] = p
    return m


def separated_spec(n: int = 5000, seed: int = 0) -> DgpSpec:
    """Two well-separated types, K=3, T=6, T0=3.

    Type 1 is sticky and type 2 cycles; after treatment the dominant
    transitions of each type are permuted.
    """
    K, T, T0 = 3, 6, 3
    stay, cycle, back = np.arange(K), (np.arange(K) + 1) % K, (np.arange(K) + 2) % K
    ctrl = np.array([[_dominant(stay, K, 0.95)] * (T - 1), [_dominant(cycle, K, 0.95)] * (T - 1)])
    trt = np.array([[_dominant(back, K, 0.95)] * (T - T0), [_dominant(stay, K, 0.95)] * (T - T0)])
    return DgpSpec(
        pi=[0.4, 0.6], initial=[[0.3, 0.3, 0.4], [0.4, 0.35, 0.25]],
        selection=[[0.35, 0.5, 0.65], [0.6, 0.45, 0.5]],
        control_kernel=ctrl, treated_kernel=trt, ell=1, K=K, T=T, T0=T0, n=n, seed=seed,
        labels=("a", "b", "c"),
    )


def null_spec(n: int = 2000, seed: int = 0, T: int = 4, T0: int = 2) -> DgpSpec:
    """Single-type zero-effect spec with selection on the initial state."""
    K = 2
    base = np.array([[0.7, 0.3], [0.25, 0.75]])
    ctrl = np.array([[base + (0.02 * s) * np.array([[-1, 1], [-1, 1]]) for s in range(T - 1)]])
    return DgpSpec(
        pi=[1.0], initial=[[0.6, 0.4]], selection=[[0.3, 0.6]],
        control_kernel=ctrl, treated_kernel=ctrl[:, T0 - 1:].copy(), ell=1, K=K, T=T, T0=T0,
        n=n, seed=seed, labels=("0", "1"),
    )


def two_type_effect_spec(n: int = 10_000, seed: int = 0) -> DgpSpec:
    """Two types with opposite-signed effects on category 1.

    Treatment raises every transition probability into category 1 by 0.10
    for the sticky type 1 and lowers it by 0.05 for the switching type 2, so
    the type effects in the single post period are exactly +0.10 and -0.05.
    """
    T, T0 = 7, 6
    a0 = np.array([[0.9, 0.1], [0.1, 0.9]])
    a1 = np.array([[0.8, 0.2], [0.0, 1.0]])
    b0 = np.array([[0.15, 0.85], [0.85, 0.15]])
    b1 = np.array([[0.2, 0.8], [0.9, 0.1]])
    return DgpSpec(
        pi=[0.45, 0.55], initial=[[0.5, 0.5], [0.5, 0.5]], selection=[[0.6, 0.4], [0.45, 0.55]],
        control_kernel=[[a0] * (T - 1), [b0] * (T - 1)], treated_kernel=[[a1] * (T - T0), [b1] * (T - T0)],
        ell=1, K=2, T=T, T0=T0, n=n, seed=seed, labels=("0", "1"),
    )


def flow_spec(n: int = 10_000, seed: int = 0) -> DgpSpec:
    """Two types, K=3: treatment only changes exits from category 1 for
    type 1 and only entries into category 1 for type 2."""
    K, T, T0 = 3, 7, 4
    a0 = np.array([[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]])
    a1 = a0.copy()
    a1[1] = [0.25, 0.5, 0.25]
    b0 = np.array([[0.1, 0.1, 0.8], [0.8, 0.1, 0.1], [0.1, 0.8, 0.1]])
    b1 = b0.copy()
    b1[0] = [0.05, 0.5, 0.45]
    b1[2] = [0.05, 0.9, 0.05]
    return DgpSpec(
        pi=[0.4, 0.6], initial=[[0.3, 0.4, 0.3], [0.3, 0.4, 0.3]], selection=[[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]],
        control_kernel=[[a0] * (T - 1), [b0] * (T - 1)], treated_kernel=[[a1] * (T - T0), [b1] * (T - T0)],
        ell=1, K=K, T=T, T0=T0, n=n, seed=seed, labels=("x", "y", "z"),
    )


def staggered_spec(n: int = 100_000, seed: int = 0, effects=(0.0, 0.0)) -> StaggeredSpec:
    """Cohorts {0, 3, 5} over T=6 with selection on the initial state.

    ``effects`` shifts the probability of moving into category 1 for
    cohorts 3 and 5 once treated.
    """
    T, K = 6, 2
    ctrl = np.array([[[0.75 - 0.03 * s, 0.25 + 0.03 * s], [0.3, 0.7]] for s in range(T - 1)])

    def treated(g, a):
        k = ctrl[g - 2:].copy()
        k[:, :, 0] -= a
        k[:, :, 1] += a
        return k

    return StaggeredSpec(
        cohorts=(0, 3, 5), cohort_probs=[0.4, 0.3, 0.3], initial=[[0.7, 0.3], [0.5, 0.5], [0.4, 0.6]],
        control_kernel=ctrl, treated_kernel={3: treated(3, effects[0]), 5: treated(5, effects[1])},
        ell=1, K=K, T=T, n=n, seed=seed, labels=("0", "1"),
    )


SHIPPED = {
    "mr": mr_spec,
    "separated": separated_spec,
    "null": null_spec,
    "null-long": lambda n=100_000, seed=0: null_spec(n, seed, T=8, T0=6),
    "two-type": two_type_effect_spec,
    "flows": flow_spec,
    "staggered": staggered_spec,
    "staggered-effect": lambda n=100_000, seed=0: staggered_spec(n, seed, effects=(0.1, 0.05)),
}


def spec_from_dict(d):
    return StaggeredSpec.from_dict(d) if d.get("kind") == "staggered" else DgpSpec.from_dict(d)


def load_spec(name_or_path):
    """A shipped spec by name, or a spec JSON file."""
    if str(name_or_path) in SHIPPED:
        return SHIPPED[str(name_or_path)]()
    with open(name_or_path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def save_spec(spec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")
