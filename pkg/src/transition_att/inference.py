"""Exponential-weight bootstrap, covariance and sup-t confidence bands."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from ._parallel import chunked, pmap
from .data import PanelDataset
from .effects import EffectSeries, transition_tables
from .errors import EstimationError, InsufficientReplicates, ReplicateFailed, TooManyFailures
from .mixture import DEFAULT_EPS, MarkovMixtureParams, Schedule, log_likelihood, multistart_fit
from .mixture_effects import mixture_effects, theta_labels, theta_vector

MAX_RETRIES = 3
MAX_FAILURE_SHARE = 0.05
REPLICATES_PER_TASK = 25


def draw_weights(n: int, cluster_id=None, seed=0) -> np.ndarray:
    """Bootstrap weights for one replicate.

    Without clusters, ``n`` independent Exp(1) draws. With clusters, one
    Exp(1) draw per cluster (clusters taken in sorted order) normalized to
    sum to one, shared by every unit in the cluster.
    """
    if n < 1:
        raise ValueError("need at least one unit")
    seq = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    rng = np.random.default_rng(seq)
    if cluster_id is None:
        return rng.exponential(1.0, n)
    cl = np.asarray(cluster_id)
    if cl.shape != (n,):
        raise ValueError("cluster_id must have one entry per unit")
    levels, inv = np.unique(cl.astype(str), return_inverse=True)
    w = rng.exponential(1.0, len(levels))
    return (w / w.sum())[inv.reshape(-1)]


@dataclass
class BootstrapConfig:
    """What each replicate re-estimates.

    ``topup`` short random starts are added to the warm start at the point
    estimate; ``full_schedule`` re-runs the complete multistart instead.
    """

    J: int = 1
    ell: int = 1
    schedule: Schedule = field(default_factory=Schedule)
    topup: int = 50
    full_schedule: bool = False
    policy: str = "error"
    eps: float = DEFAULT_EPS
    cluster: bool = False

    def replicate_schedule(self) -> Schedule:
        if self.full_schedule:
            return self.schedule
        n_short = max(self.topup, 1)
        return replace(self.schedule, n_short=n_short, n_long=min(self.schedule.n_long, n_short))


@dataclass
class PointEstimate:
    series: EffectSeries
    params: Optional[MarkovMixtureParams]
    posteriors: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return theta_vector(self.series)


def point_estimate(dataset: PanelDataset, cfg: BootstrapConfig, seed=0, workers: int = 1,
                   weights=None) -> PointEstimate:
    """Fit the mixture (skipped for one type) and compute all effects."""
    if cfg.J == 1:
        post = np.ones((dataset.n, 1))
        return PointEstimate(mixture_effects(dataset, post, cfg.ell, cfg.policy, weights), None, post)
    fit = multistart_fit(dataset, cfg.J, cfg.ell, cfg.schedule, seed, weights, cfg.eps, workers)
    series = mixture_effects(dataset, fit.posteriors, cfg.ell, cfg.policy, weights)
    return PointEstimate(series, fit.params, fit.posteriors)


def bootstrap_replicate(dataset: PanelDataset, zeta, cfg: BootstrapConfig, seed=0,
                        warm: Optional[MarkovMixtureParams] = None) -> tuple:
    """One weighted re-estimation; returns ``(theta, pi)``.

    The weights enter the mixture log-likelihood, every M-step ratio and
    every second-stage average. Types are relabeled by ascending ``pi``.
    Raises :class:`ReplicateFailed` if estimation breaks down.
    """
    zeta = np.asarray(zeta, dtype=float)
    try:
        if cfg.J == 1:
            post = np.ones((dataset.n, 1))
            theta = theta_vector(mixture_effects(dataset, post, cfg.ell, cfg.policy, zeta))
            pi = np.ones(1)
        else:
            fit = multistart_fit(dataset, cfg.J, cfg.ell, cfg.replicate_schedule(), seed, zeta, cfg.eps, 1, warm)
            ll = log_likelihood(dataset, fit.params, zeta)
            if not abs(ll - fit.loglik) <= 1e-10 * max(1.0, abs(ll)):
                raise ReplicateFailed(f"log-likelihood changed under relabeling: {fit.loglik} vs {ll}")
            theta = theta_vector(mixture_effects(dataset, fit.posteriors, cfg.ell, cfg.policy, zeta))
            pi = fit.params.pi
    except ReplicateFailed:
        raise
    except (EstimationError, FloatingPointError) as exc:
        raise ReplicateFailed(str(exc)) from exc
    if not np.isfinite(theta).all():
        raise ReplicateFailed("non-finite replicate estimate")
    return theta, pi


def _replicate_task(args):
    dataset, cfg, seed, indices, warm = args
    cluster = dataset.cluster_id if cfg.cluster else None
    out = []
    for b in indices:
        result = None
        for attempt in range(MAX_RETRIES + 1):
            key = [int(seed), int(b)] + ([attempt] if attempt else [])
            zeta = draw_weights(dataset.n, cluster, key)
            try:
                result = bootstrap_replicate(dataset, zeta, cfg, key + [1], warm)
                break
            except ReplicateFailed:
                continue
        out.append((b, result))
    return out


@dataclass
class BootstrapDraws:
    """Replicate estimates of the flattened effect vector.

    ``draws`` keeps successful replicates in replicate-index order;
    ``sigma`` is their per-coordinate standard deviation (divisor ``B-1``).
    """

    B: int
    theta_hat: np.ndarray
    draws: np.ndarray
    sigma: np.ndarray
    failures: int
    seed: int
    labels: list = field(default_factory=list)
    pi_draws: Optional[np.ndarray] = None

    @property
    def n_success(self) -> int:
        return self.draws.shape[0]

    def pi_gaps(self) -> np.ndarray:
        """Smallest gap between adjacent ordered ``pi`` in each replicate."""
        if self.pi_draws is None or self.pi_draws.shape[1] < 2:
            return np.array([])
        return np.diff(self.pi_draws, axis=1).min(axis=1)

    def select(self, series: str) -> np.ndarray:
        return np.array([i for i, lab in enumerate(self.labels) if lab[0] == series], dtype=int)


def run_bootstrap(dataset: PanelDataset, cfg: BootstrapConfig, B: int = 500, seed: int = 0, workers: int = 1,
                  point: Optional[PointEstimate] = None) -> BootstrapDraws:
    """Draw ``B`` weighted replicates around the point estimate.

    Replicate ``b`` uses weights from ``default_rng([seed, b])``; a failed
    replicate is retried with ``[seed, b, attempt]`` for up to three more
    attempts and then discarded. More than 5% discarded raises
    :class:`TooManyFailures`.
    """
    if B < 2:
        raise InsufficientReplicates("need B >= 2")
    if point is None:
        point = point_estimate(dataset, cfg, seed, workers)
    tasks = [(dataset, cfg, seed, idx, point.params) for idx in chunked(range(B), REPLICATES_PER_TASK)]
    results = [r for chunk in pmap(_replicate_task, tasks, workers) for r in chunk]
    ok = [res for _, res in results if res is not None]
    failures = B - len(ok)
    if failures > MAX_FAILURE_SHARE * B:
        raise TooManyFailures(f"{failures} of {B} replicates failed")
    if len(ok) < 2:
        raise InsufficientReplicates("fewer than two successful replicates")
    draws = np.array([r[0] for r in ok])
    pis = np.array([r[1] for r in ok])
    return BootstrapDraws(B, point.theta, draws, draws.std(axis=0, ddof=1), failures, seed,
                          theta_labels(point.series), pis)


def covariance(draws: BootstrapDraws) -> np.ndarray:
    """Bootstrap covariance with divisor ``B - 1`` around the replicate mean."""
    X = draws.draws
    if X.shape[0] < 2:
        raise InsufficientReplicates("covariance needs at least two replicates")
    dev = X - X.mean(axis=0)
    return dev.T @ dev / (X.shape[0] - 1)


@dataclass
class ConfidenceBands:
    """Pointwise and uniform bands for one family of coordinates."""

    alpha: float
    estimate: np.ndarray
    se: np.ndarray
    pointwise_lower: np.ndarray
    pointwise_upper: np.ndarray
    uniform_lower: np.ndarray
    uniform_upper: np.ndarray
    crit_value: float
    pointwise_crit: np.ndarray
    labels: list = field(default_factory=list)

    def covers(self, truth) -> bool:
        truth = np.asarray(truth, dtype=float)
        return bool(((self.uniform_lower <= truth) & (truth <= self.uniform_upper)).all())

    def rows(self) -> list:
        return [
            {"series": lab[0], "period": lab[1], "category": lab[2], "estimate": float(self.estimate[i]),
             "se": float(self.se[i]), "pw_lo": float(self.pointwise_lower[i]), "pw_hi": float(self.pointwise_upper[i]),
             "unif_lo": float(self.uniform_lower[i]), "unif_hi": float(self.uniform_upper[i]),
             "crit_value": float(self.crit_value)}
            for i, lab in enumerate(self.labels)
        ]


def _order_stat(values, alpha, axis=0):
    """The ``ceil(m (1 - alpha))``-th smallest value along ``axis``."""
    m = values.shape[axis]
    r = min(max(math.ceil(m * (1 - alpha) - 1e-12), 1), m)
    return np.sort(values, axis=axis).take(r - 1, axis=axis)


def uniform_bands(draws: BootstrapDraws, alpha: float = 0.05, coords=None) -> ConfidenceBands:
    """Sup-t bands over ``coords`` (default: every coordinate).

    Coordinates with zero bootstrap spread are left out of the supremum and
    get the degenerate band at the estimate.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if draws.n_success < 2:
        raise InsufficientReplicates("bands need at least two replicates")
    idx = np.arange(len(draws.theta_hat)) if coords is None else np.asarray(coords, dtype=int)
    est = draws.theta_hat[idx]
    se = draws.sigma[idx]
    live = se > 0
    pw = np.zeros(len(idx))
    crit = 0.0
    if live.any():
        t = np.abs(draws.draws[:, idx[live]] - est[live]) / se[live]
        pw[live] = _order_stat(t, alpha, axis=0)
        crit = float(_order_stat(t.max(axis=1), alpha))
    labels = [draws.labels[i] for i in idx] if draws.labels else []
    return ConfidenceBands(alpha, est, se, est - pw * se, est + pw * se, est - crit * se, est + crit * se,
                           crit, pw, labels)


def series_bands(draws: BootstrapDraws, alpha: float = 0.05) -> List[ConfidenceBands]:
    """One band family per effect series (each type, then the aggregate)."""
    names = list(dict.fromkeys(lab[0] for lab in draws.labels))
    return [uniform_bands(draws, alpha, draws.select(s)) for s in names]


def pretrend_bands(dataset: PanelDataset, report, B: int = 500, seed: int = 0, alpha: float = 0.05,
                   cluster: bool = False):
    """Attach sup-t bands for the treated-minus-control pre-period differences.

    Only defined for the pooled (single-type) report; cells that are empty in
    any replicate are left out of the band.
    """
    if report.insufficient:
        return report
    diff = report.differences[0]
    reps = []
    for b in range(B):
        w = draw_weights(dataset.n, dataset.cluster_id if cluster else None, [int(seed), int(b)])
        p, _ = transition_tables(dataset.outcomes, dataset.treated, dataset.T0, dataset.K, w)
        reps.append((p[0, :, 1] - p[0, :, 0]).ravel())
    reps = np.array(reps)
    ok = np.isfinite(reps).all(axis=0) & np.isfinite(diff.ravel())
    sigma = np.zeros(reps.shape[1])
    sigma[ok] = reps[:, ok].std(axis=0, ddof=1)
    fake = BootstrapDraws(B, np.nan_to_num(diff.ravel()), np.nan_to_num(reps), sigma, 0, seed)
    bands = uniform_bands(fake, alpha, np.flatnonzero(ok))
    lo = np.full(diff.size, np.nan)
    hi = np.full(diff.size, np.nan)
    lo[ok], hi[ok] = bands.uniform_lower, bands.uniform_upper
    report.lower = lo.reshape((1,) + diff.shape)
    report.upper = hi.reshape((1,) + diff.shape)
    return report
