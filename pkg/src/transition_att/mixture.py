"""Finite mixtures of non-stationary Markov chains over outcomes and treatment.

Each latent type ``j`` has a joint distribution over the initial ``ell``-period
history and the treatment arm, one control kernel per period ``ell+1..T``
(pre-period transitions pooled over arms) and one treated kernel per post
period. Parameters for a type are stored as one flat probability vector so
that the likelihood of every distinct observation pattern is a sum of
``log theta`` entries picked by a fixed index matrix.

EM runs on a leading batch axis of starts. Every start's arithmetic is
independent of the other starts in its batch, and batches are fixed-size, so
results do not depend on how batches are spread across workers.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ._parallel import chunked, pmap
from .data import PanelDataset, history_codes
from .errors import AllStartsFailed, DegenerateCellWarning, DimensionMismatch

DEFAULT_EPS = 1e-6
CHUNK = 250
LONG_CHUNK = 5

PosteriorMatrix = np.ndarray  # n x J, rows sum to one


@dataclass(frozen=True)
class Schedule:
    """Multistart settings: ``n_short`` random starts run ``short_iters`` EM
    steps, the best ``n_long`` continue for up to ``max_iter`` steps."""

    n_short: int = 6000
    n_long: int = 20
    short_iters: int = 10
    tol: float = 1e-3
    max_iter: int = 100

    def __post_init__(self):
        if self.n_short < 1 or self.n_long < 1:
            raise ValueError("n_short and n_long must be positive")
        if self.n_long > self.n_short:
            raise ValueError("n_long cannot exceed n_short")
        if self.tol <= 0 or self.max_iter < 1 or self.short_iters < 0:
            raise ValueError("tol must be positive, max_iter >= 1, short_iters >= 0")

    @classmethod
    def from_dict(cls, d) -> "Schedule":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class MarkovMixtureParams:
    """Mixture weights and per-type initial distribution and kernels.

    Shapes, with ``H = K**ell``:

    - ``pi``: ``(J,)``
    - ``init_joint``: ``(J, H, 2)`` over (initial history code, arm)
    - ``control_kernel``: ``(J, T - ell, H, K)``, slice ``s`` is period ``ell + 1 + s``
    - ``treated_kernel``: ``(J, T - T0, H, K)``, slice ``s`` is period ``T0 + 1 + s``

    History codes are base ``K`` with the earliest period most significant.
    """

    J: int
    ell: int
    K: int
    T: int
    T0: int
    pi: np.ndarray
    init_joint: np.ndarray
    control_kernel: np.ndarray
    treated_kernel: np.ndarray
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        H = self.K ** self.ell
        self.pi = np.asarray(self.pi, dtype=float)
        self.init_joint = np.asarray(self.init_joint, dtype=float)
        self.control_kernel = np.asarray(self.control_kernel, dtype=float)
        self.treated_kernel = np.asarray(self.treated_kernel, dtype=float)
        if not 1 <= self.ell <= self.T0 < self.T:
            raise DimensionMismatch(f"need 1 <= ell <= T0 < T, got ell={self.ell}, T0={self.T0}, T={self.T}")
        expect = {
            "pi": (self.J,),
            "init_joint": (self.J, H, 2),
            "control_kernel": (self.J, self.T - self.ell, H, self.K),
            "treated_kernel": (self.J, self.T - self.T0, H, self.K),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def H(self) -> int:
        return self.K ** self.ell

    def check(self, atol: float = 1e-9) -> None:
        """Raise ``ValueError`` unless every distribution is normalized and floored."""
        lo = self.eps * (1 - 1e-9)
        if abs(self.pi.sum() - 1) > atol or abs(self.init_joint.sum(axis=(1, 2)) - 1).max() > atol:
            raise ValueError("pi and each init_joint must sum to one")
        for name in ("control_kernel", "treated_kernel"):
            if abs(getattr(self, name).sum(axis=-1) - 1).max() > atol:
                raise ValueError(f"{name} rows must sum to one")
        for name in ("pi", "init_joint", "control_kernel", "treated_kernel"):
            if getattr(self, name).min() < lo:
                raise ValueError(f"{name} has entries below the floor {self.eps}")

    # flat layout: [init (2H) | control ((T-ell) H K) | treated ((T-T0) H K)]
    def flat(self) -> np.ndarray:
        J = self.J
        return np.concatenate(
            [self.init_joint.reshape(J, -1), self.control_kernel.reshape(J, -1), self.treated_kernel.reshape(J, -1)],
            axis=1,
        )

    @classmethod
    def from_flat(cls, pi, theta, J, ell, K, T, T0, eps=DEFAULT_EPS) -> "MarkovMixtureParams":
        H = K ** ell
        a = 2 * H
        b = a + (T - ell) * H * K
        return cls(
            J, ell, K, T, T0, np.array(pi, dtype=float),
            theta[:, :a].reshape(J, H, 2).copy(),
            theta[:, a:b].reshape(J, T - ell, H, K).copy(),
            theta[:, b:].reshape(J, T - T0, H, K).copy(),
            eps,
        )

    def permute(self, order: Sequence[int]) -> "MarkovMixtureParams":
        o = np.asarray(order)
        return MarkovMixtureParams(
            self.J, self.ell, self.K, self.T, self.T0, self.pi[o], self.init_joint[o],
            self.control_kernel[o], self.treated_kernel[o], self.eps,
        )

    def ascending_order(self) -> List[int]:
        """Type order with ``pi`` ascending, ties broken by the flattened ``init_joint``."""
        keys = [(float(self.pi[j]), tuple(self.init_joint[j].ravel())) for j in range(self.J)]
        return sorted(range(self.J), key=lambda j: keys[j])

    def to_dict(self) -> dict:
        types = []
        for j in range(self.J):
            types.append({
                "init_joint": self.init_joint[j].tolist(),
                "control_kernel": {str(self.ell + 1 + s): self.control_kernel[j, s].tolist()
                                   for s in range(self.T - self.ell)},
                "treated_kernel": {str(self.T0 + 1 + s): self.treated_kernel[j, s].tolist()
                                   for s in range(self.T - self.T0)},
            })
        return {"J": self.J, "ell": self.ell, "K": self.K, "T": self.T, "T0": self.T0,
                "eps": self.eps, "pi": self.pi.tolist(), "types": types}

    @classmethod
    def from_dict(cls, d) -> "MarkovMixtureParams":
        J, ell, K, T, T0 = (int(d[k]) for k in ("J", "ell", "K", "T", "T0"))
        types = d["types"]
        if len(types) != J:
            raise DimensionMismatch(f"expected {J} type entries, got {len(types)}")

        def kern(tp, key, first, last):
            return [tp[key][str(t)] for t in range(first, last + 1)]

        return cls(
            J, ell, K, T, T0, d["pi"],
            [tp["init_joint"] for tp in types],
            [kern(tp, "control_kernel", ell + 1, T) for tp in types],
            [kern(tp, "treated_kernel", T0 + 1, T) for tp in types],
            float(d.get("eps", DEFAULT_EPS)),
        )

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "MarkovMixtureParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class EmFit:
    """Result of an EM run.

    ``loglik_trace[k]`` is the log-likelihood at the parameters reached after
    ``k`` M-steps; ``params`` and ``posteriors`` correspond to the last entry.
    """

    params: MarkovMixtureParams
    posteriors: np.ndarray
    loglik_trace: list
    converged: bool
    iterations: int
    start_index: Optional[int] = None
    candidates: list = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    @property
    def J(self) -> int:
        return self.params.J


# --- pattern encoding ---------------------------------------------------------


@dataclass
class _Problem:
    """Distinct observation patterns with summed weights and parameter indices."""

    idx: np.ndarray      # (P, C) flat parameter indices per pattern
    zeta: np.ndarray     # (P,) summed unit weights
    inverse: np.ndarray  # (n,) pattern of each unit
    ell: int
    K: int
    T: int
    T0: int

    @property
    def H(self) -> int:
        return self.K ** self.ell

    @property
    def L(self) -> int:
        H, K = self.H, self.K
        return 2 * H + (self.T - self.ell) * H * K + (self.T - self.T0) * H * K

    def with_weights(self, weights) -> "_Problem":
        z = np.bincount(self.inverse, weights=np.asarray(weights, dtype=float), minlength=len(self.zeta))
        return _Problem(self.idx, z, self.inverse, self.ell, self.K, self.T, self.T0)


def encode(dataset: PanelDataset, ell: int, weights=None) -> _Problem:
    """Compress a panel to its distinct (outcomes, arm) patterns."""
    dataset.require_simultaneous()
    K, T, T0 = dataset.K, dataset.T, dataset.T0
    if not 1 <= ell <= T0:
        raise DimensionMismatch(f"Markov order {ell} must lie in 1..T0={T0}")
    rows = np.column_stack([dataset.outcomes, dataset.treated])
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    y, d = uniq[:, :T], uniq[:, T]
    H = K ** ell
    off_c = 2 * H
    off_t = off_c + (T - ell) * H * K
    cols = [history_codes(y, ell, ell, K) * 2 + d]
    for t in range(ell + 1, T + 1):
        h = history_codes(y, t - 1, ell, K)
        x = y[:, t - 1]
        c = off_c + ((t - ell - 1) * H + h) * K + x
        if t > T0:
            c = np.where(d == 1, off_t + ((t - T0 - 1) * H + h) * K + x, c)
        cols.append(c)
    w = np.ones(dataset.n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (dataset.n,):
        raise DimensionMismatch("weights must have one entry per unit")
    zeta = np.bincount(inverse, weights=w, minlength=len(uniq))
    return _Problem(np.column_stack(cols).astype(np.int64), zeta, inverse, ell, K, T, T0)


def _check_dims(dataset: PanelDataset, params: MarkovMixtureParams):
    if (params.K, params.T, params.T0) != (dataset.K, dataset.T, dataset.T0):
        raise DimensionMismatch(
            f"params are for K={params.K}, T={params.T}, T0={params.T0}; "
            f"data has K={dataset.K}, T={dataset.T}, T0={dataset.T0}"
        )


# --- batched EM core ---------------------------------------------------------


def _logsumexp(a, axis):
    m = a.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _estep(prob: _Problem, logpi, logtheta):
    """Posteriors ``(S, J, P)`` and total log-likelihood ``(S,)``."""
    logp = logtheta[:, :, prob.idx].sum(axis=-1) + logpi[:, :, None]
    ll = _logsumexp(logp, axis=1)
    tau = np.exp(logp - ll[:, None, :])
    total = (ll * prob.zeta).sum(axis=-1)
    return tau, total


def _waterfill(c, eps):
    """Maximise ``sum c log p`` over the simplex subject to ``p >= eps``.

    The solution is ``p_k = max(eps, c_k / lam)``. Rows with zero mass
    become uniform; returns ``(p, degenerate_mask)``.
    """
    total = c.sum(axis=-1, keepdims=True)
    degenerate = total[..., 0] <= 0
    c = np.where(total > 0, c, 1.0)
    total = c.sum(axis=-1, keepdims=True)
    p = c / total
    if eps <= 0:
        return p, degenerate
    fixed = np.zeros(c.shape, dtype=bool)
    for _ in range(c.shape[-1]):
        low = (p < eps) & ~fixed
        if not low.any():
            break
        fixed |= low
        free = np.where(fixed, 0.0, c)
        scale = (1 - eps * fixed.sum(axis=-1, keepdims=True)) / free.sum(axis=-1, keepdims=True)
        p = np.where(fixed, eps, free * scale)
    return p, degenerate


def _mstep(prob: _Problem, tau, eps):
    """Weighted-frequency update; returns ``(pi, theta, n_degenerate)``."""
    S, J, P = tau.shape
    L = prob.L
    H, K, T, T0, ell = prob.H, prob.K, prob.T, prob.T0, prob.ell
    w = tau * prob.zeta
    C = prob.idx.shape[1]
    flat = (np.arange(S * J, dtype=np.int64) * L)[:, None, None] + prob.idx[None]
    counts = np.bincount(
        flat.ravel(), weights=np.broadcast_to(w[..., None], (S, J, P, C)).ravel(), minlength=S * J * L
    ).reshape(S, J, L)
    pi, _ = _waterfill(w.sum(axis=-1), eps)
    a = 2 * H
    b = a + (T - ell) * H * K
    init, d0 = _waterfill(counts[:, :, :a], eps)
    ctrl, d1 = _waterfill(counts[:, :, a:b].reshape(S, J, T - ell, H, K), eps)
    trt, d2 = _waterfill(counts[:, :, b:].reshape(S, J, T - T0, H, K), eps)
    theta = np.concatenate([init, ctrl.reshape(S, J, -1), trt.reshape(S, J, -1)], axis=-1)
    return pi, theta, int(d0.sum() + d1.sum() + d2.sum())


def _em_batch(prob: _Problem, pi, theta, iters, tol, eps, check_tol=True):
    """Run up to ``iters`` EM steps on a batch of starts.

    Starts stop individually once ``|delta loglik| < tol``. Returns final
    ``(pi, theta, tau, traces, converged, iterations, n_degenerate)``.
    """
    S = pi.shape[0]
    with np.errstate(divide="ignore"):
        tau, ll = _estep(prob, np.log(pi), np.log(theta))
    traces = [[float(v)] for v in ll]
    active = np.isfinite(ll)
    converged = np.zeros(S, dtype=bool)
    its = np.zeros(S, dtype=np.int64)
    ndeg = 0
    for _ in range(iters):
        act = np.flatnonzero(active)
        if act.size == 0:
            break
        npi, ntheta, nd = _mstep(prob, tau[act], eps)
        ndeg += nd
        with np.errstate(divide="ignore"):
            ntau, nll = _estep(prob, np.log(npi), np.log(ntheta))
        pi[act], theta[act], tau[act] = npi, ntheta, ntau
        its[act] += 1
        for r, s in enumerate(act):
            prev = traces[s][-1]
            traces[s].append(float(nll[r]))
            if not np.isfinite(nll[r]):
                active[s] = False
            elif check_tol and abs(nll[r] - prev) < tol:
                converged[s] = True
                active[s] = False
    return pi, theta, tau, traces, converged, its, ndeg


def _fit_from_batch(prob, pi, theta, tau, trace, converged, its, J, eps, start=None) -> EmFit:
    params = MarkovMixtureParams.from_flat(pi, theta, J, prob.ell, prob.K, prob.T, prob.T0, eps)
    post = tau.T[prob.inverse].copy()
    return EmFit(params, post, list(trace), bool(converged), int(its), start)


def _warn_degenerate(n):
    if n:
        warnings.warn(
            f"{n} parameter rows had zero weight and were set to uniform", DegenerateCellWarning, stacklevel=3
        )


# --- public single-model API --------------------------------------------------


def log_likelihood(dataset: PanelDataset, params: MarkovMixtureParams, weights=None) -> float:
    """Weighted mixture log-likelihood of the panel."""
    _check_dims(dataset, params)
    prob = encode(dataset, params.ell, weights)
    with np.errstate(divide="ignore"):
        _, ll = _estep(prob, np.log(params.pi)[None], np.log(params.flat())[None])
    return float(ll[0])


def e_step(dataset: PanelDataset, params: MarkovMixtureParams) -> np.ndarray:
    """Posterior type probabilities, one row per unit."""
    _check_dims(dataset, params)
    prob = encode(dataset, params.ell)
    with np.errstate(divide="ignore"):
        tau, _ = _estep(prob, np.log(params.pi)[None], np.log(params.flat())[None])
    return tau[0].T[prob.inverse].copy()


def m_step(dataset: PanelDataset, posteriors, weights=None, eps: float = DEFAULT_EPS, ell: int = 1
           ) -> MarkovMixtureParams:
    """Weighted-frequency parameter update from unit-level posteriors.

    Probabilities are floored at ``eps`` by the exact constrained maximiser
    (entries below the floor are raised to it and the rest rescaled), so the
    update never lowers the likelihood. Rows with no weight become uniform
    and trigger a :class:`DegenerateCellWarning`.
    """
    post = np.asarray(posteriors, dtype=float)
    if post.ndim != 2 or post.shape[0] != dataset.n:
        raise DimensionMismatch("posteriors must be an n x J matrix")
    J = post.shape[1]
    prob = encode(dataset, ell, weights)
    # per-pattern weighted posteriors: sum over units of zeta_i tau_ij / zeta_pattern
    w = np.ones(dataset.n) if weights is None else np.asarray(weights, dtype=float)
    P = len(prob.zeta)
    num = np.stack([np.bincount(prob.inverse, weights=w * post[:, j], minlength=P) for j in range(J)])
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = np.where(prob.zeta > 0, num / prob.zeta, 1.0 / J)
    pi, theta, nd = _mstep(prob, tau[None], eps)
    _warn_degenerate(nd)
    return MarkovMixtureParams.from_flat(pi[0], theta[0], J, ell, dataset.K, dataset.T, dataset.T0, eps)


def run_em(dataset: PanelDataset, init: MarkovMixtureParams, tol: float = 1e-3, max_iter: int = 100,
           weights=None) -> EmFit:
    """EM from ``init`` until the absolute log-likelihood change drops below ``tol``."""
    _check_dims(dataset, init)
    prob = encode(dataset, init.ell, weights)
    pi, theta, tau, traces, conv, its, nd = _em_batch(
        prob, init.pi[None].copy(), init.flat()[None].copy(), max_iter, tol, init.eps
    )
    _warn_degenerate(nd)
    return _fit_from_batch(prob, pi[0], theta[0], tau[0], traces[0], conv[0], its[0], init.J, init.eps)


def empirical_params(dataset: PanelDataset, ell: int = 1, J: int = 1, weights=None,
                     eps: float = DEFAULT_EPS) -> MarkovMixtureParams:
    """Single-type frequency estimates, replicated over ``J`` equal components."""
    p1 = m_step(dataset, np.ones((dataset.n, 1)), weights, eps, ell)
    return _replicate(p1, J)


def _replicate(p1: MarkovMixtureParams, J: int) -> MarkovMixtureParams:
    rep = lambda a: np.repeat(a, J, axis=0)
    return MarkovMixtureParams(J, p1.ell, p1.K, p1.T, p1.T0, np.full(J, 1.0 / J),
                               rep(p1.init_joint), rep(p1.control_kernel), rep(p1.treated_kernel), p1.eps)


def relabel_ascending(fit: EmFit) -> EmFit:
    """Permute types so ``pi`` is non-decreasing.

    Ties in ``pi`` are broken by lexicographic order of each type's flattened
    ``init_joint``, then by current index.
    """
    order = fit.params.ascending_order()
    return EmFit(
        fit.params.permute(order), fit.posteriors[:, order], list(fit.loglik_trace), fit.converged,
        fit.iterations, fit.start_index, list(fit.candidates),
    )


# --- multistart ---------------------------------------------------------------


def _seed_seq(seed) -> list:
    return list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]


def _draw_start(base_theta, J, H, K, ell, T, T0, seed, start):
    """Dirichlet-jittered copy of the single-type frequencies for one start."""
    rng = np.random.default_rng(_seed_seq(seed) + [int(start)])
    a = 2 * H
    b = a + (T - ell) * H * K
    theta = np.repeat(base_theta[None], J, axis=0)
    init = theta[:, :a] * rng.dirichlet(np.ones(a), size=J)
    nrow_c = (T - ell) * H
    nrow_t = (T - T0) * H
    ctrl = theta[:, a:b].reshape(J, nrow_c, K) * rng.dirichlet(np.ones(K), size=(J, nrow_c))
    trt = theta[:, b:].reshape(J, nrow_t, K) * rng.dirichlet(np.ones(K), size=(J, nrow_t))
    init /= init.sum(axis=-1, keepdims=True)
    ctrl /= ctrl.sum(axis=-1, keepdims=True)
    trt /= trt.sum(axis=-1, keepdims=True)
    pi = (1.0 / J + rng.dirichlet(np.ones(J))) / 2
    return pi, np.concatenate([init, ctrl.reshape(J, -1), trt.reshape(J, -1)], axis=1)


def _short_task(args):
    prob, base, J, eps, seed, starts, iters, tol = args
    H, K = prob.H, prob.K
    pis, thetas = [], []
    for s in starts:
        if s == 0:
            pis.append(np.full(J, 1.0 / J))
            thetas.append(np.repeat(base[None], J, axis=0))
        else:
            p, th = _draw_start(base, J, H, K, prob.ell, prob.T, prob.T0, seed, s)
            pis.append(p)
            thetas.append(th)
    pi, theta = np.array(pis), np.array(thetas)
    pi, theta, tau, traces, conv, its, nd = _em_batch(prob, pi, theta, iters, tol, eps)
    return pi, theta, traces, conv, its, nd


def _long_task(args):
    prob, pi, theta, iters, tol, eps = args
    pi, theta, tau, traces, conv, its, nd = _em_batch(prob, pi, theta, iters, tol, eps)
    return pi, theta, tau, traces, conv, its, nd


def multistart_fit(
    dataset: PanelDataset,
    J: int,
    ell: int = 1,
    schedule: Optional[Schedule] = None,
    seed=0,
    weights=None,
    eps: float = DEFAULT_EPS,
    workers: int = 1,
    warm_start: Optional[MarkovMixtureParams] = None,
) -> EmFit:
    """Fit a ``J``-type mixture from many random starts.

    Start 0 is the single-type frequency fit split into ``J`` equal
    components, so the result is never worse than the ``J = 1`` fit. Other
    starts multiply every row of those frequencies by symmetric Dirichlet
    noise and renormalize, with ``pi = (1/J + Dirichlet) / 2``; start ``s``
    draws from ``default_rng([*seed, s])``.

    All starts run ``short_iters`` EM steps; the best ``n_long`` (ties to the
    lower start index) continue to convergence and the best of those is
    returned with types ordered by ascending ``pi``. A ``warm_start``, if
    given, always enters the long phase and is only displaced by a candidate
    that beats it by more than ``tol``.
    """
    schedule = schedule or Schedule()
    prob = encode(dataset, ell, weights)
    base = empirical_params(dataset, ell, 1, weights, eps).flat()[0]
    if J == 1:
        init = empirical_params(dataset, ell, 1, weights, eps)
        pi, theta, tau, traces, conv, its, nd = _em_batch(
            prob, init.pi[None].copy(), init.flat()[None].copy(), schedule.max_iter, schedule.tol, eps)
        _warn_degenerate(nd)
        fit = _fit_from_batch(prob, pi[0], theta[0], tau[0], traces[0], conv[0], its[0], 1, eps, 0)
        fit.candidates = [(0, fit.loglik)]
        return fit

    tasks = [(prob, base, J, eps, seed, c, schedule.short_iters, schedule.tol)
             for c in chunked(range(schedule.n_short), CHUNK)]
    results = pmap(_short_task, tasks, workers)
    pi = np.concatenate([r[0] for r in results])
    theta = np.concatenate([r[1] for r in results])
    short_traces = [t for r in results for t in r[2]]
    short_its = np.concatenate([r[4] for r in results])
    lls = np.array([t[-1] for t in short_traces])
    ndeg = sum(r[5] for r in results)
    finite = np.isfinite(lls)
    if not finite.any() and warm_start is None:
        raise AllStartsFailed(f"all {schedule.n_short} starts gave a non-finite log-likelihood")
    order = sorted(np.flatnonzero(finite), key=lambda s: (-lls[s], s))[: schedule.n_long]
    start_ids = list(order)
    prefix = [short_traces[s][:-1] for s in order]
    prior_its = [int(short_its[s]) for s in order]
    lpi = [pi[s] for s in order]
    ltheta = [theta[s] for s in order]
    if warm_start is not None:
        start_ids.insert(0, -1)
        prefix.insert(0, [])
        prior_its.insert(0, 0)
        lpi.insert(0, warm_start.pi.copy())
        ltheta.insert(0, warm_start.flat())
    lpi, ltheta = np.array(lpi), np.array(ltheta)
    tasks = [(prob, lpi[c].copy(), ltheta[c].copy(), schedule.max_iter, schedule.tol, eps)
             for c in chunked(range(len(start_ids)), LONG_CHUNK)]
    results = pmap(_long_task, tasks, workers)
    fpi = np.concatenate([r[0] for r in results])
    ftheta = np.concatenate([r[1] for r in results])
    ftau = np.concatenate([r[2] for r in results])
    traces = [p + t for p, t in zip(prefix, (t for r in results for t in r[3]))]
    conv = np.concatenate([r[4] for r in results])
    its = np.concatenate([r[5] for r in results]) + np.array(prior_its)
    ndeg += sum(r[6] for r in results)
    final = np.array([tr[-1] for tr in traces])
    if not np.isfinite(final).any():
        raise AllStartsFailed("every long-run candidate ended with a non-finite log-likelihood")
    ok = [r for r in range(len(start_ids)) if np.isfinite(final[r])]
    best = min(ok, key=lambda r: (-final[r], start_ids[r]))
    if warm_start is not None and np.isfinite(final[0]) and final[best] - final[0] <= schedule.tol:
        best = 0
    _warn_degenerate(ndeg)
    fit = _fit_from_batch(prob, fpi[best], ftheta[best], ftau[best], traces[best], conv[best], its[best],
                          J, eps, start_ids[best])
    fit.candidates = [(int(s), float(v)) for s, v in zip(start_ids, final)]
    return relabel_ascending(fit)


# --- model selection ----------------------------------------------------------


def n_params(J: int, ell: int, K: int, T: int, T0: int) -> int:
    """Free parameters of a ``J``-type mixture of order ``ell``."""
    H = K ** ell
    per_type = (2 * H - 1) + (T - ell) * H * (K - 1) + (T - T0) * H * (K - 1)
    return (J - 1) + J * per_type


def bic(dataset: PanelDataset, fit: EmFit) -> float:
    p = fit.params
    return -2.0 * fit.loglik + n_params(p.J, p.ell, p.K, p.T, p.T0) * np.log(dataset.n)


@dataclass
class TypeSelection:
    chosen: int
    table: list
    fits: dict

    def to_dict(self) -> dict:
        return {"chosen_J": self.chosen, "table": self.table}


def select_num_types(dataset: PanelDataset, ell: int = 1, J_max: int = 3, schedule: Optional[Schedule] = None,
                     seed=0, eps: float = DEFAULT_EPS, workers: int = 1) -> TypeSelection:
    """Fit ``J = 1..J_max`` and pick the smallest BIC (ties to fewer types)."""
    table, fits = [], {}
    for J in range(1, J_max + 1):
        fit = multistart_fit(dataset, J, ell, schedule, seed, eps=eps, workers=workers)
        fits[J] = fit
        table.append({
            "J": J, "loglik": fit.loglik, "n_params": n_params(J, ell, dataset.K, dataset.T, dataset.T0),
            "bic": float(bic(dataset, fit)), "converged": fit.converged,
        })
    chosen = min(table, key=lambda r: (r["bic"], r["J"]))["J"]
    return TypeSelection(chosen, table, fits)
