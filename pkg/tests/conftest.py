import numpy as np
import pytest

from transition_att import MarkovMixtureParams, OutcomeAlphabet, PanelDataset, mr_example


@pytest.fixture
def mr():
    return mr_example()


def random_panel(rng, n=None, K=None, T=None, T0=None, full_support_lag=None):
    """Small random panel; optionally redrawn until every treated history
    of length ``full_support_lag`` at ``T0`` also occurs among controls."""
    K = K or int(rng.integers(2, 5))
    T = T or int(rng.integers(2, 7))
    T0 = T0 or int(rng.integers(1, T))
    n = n or int(rng.integers(40, 501))
    labels = tuple(f"c{k}" for k in range(K))
    for _ in range(200):
        y = rng.integers(0, K, size=(n, T))
        d = (rng.random(n) < 0.5).astype(int)
        d[0], d[1] = 1, 0
        if full_support_lag:
            lag = full_support_lag
            codes = np.zeros(n, dtype=int)
            for s in range(T0 - lag, T0):
                codes = codes * K + y[:, s]
            if not set(codes[d == 1]) <= set(codes[d == 0]):
                continue
        return PanelDataset(OutcomeAlphabet(labels), y, d, T0)
    raise RuntimeError("could not draw a full-support panel")


def random_params(rng, J, ell, K, T, T0):
    H = K ** ell
    init = rng.dirichlet(np.ones(2 * H), size=J).reshape(J, H, 2)
    ctrl = rng.dirichlet(np.ones(K), size=(J, T - ell, H))
    trt = rng.dirichlet(np.ones(K), size=(J, T - T0, H))
    return MarkovMixtureParams(J, ell, K, T, T0, rng.dirichlet(np.ones(J)), init, ctrl, trt)


def empirical_frequencies(ds):
    """Hand-rolled single-type frequencies at lag one."""
    K, T, T0 = ds.K, ds.T, ds.T0
    y, d = ds.outcomes, ds.treated
    init = np.zeros((K, 2))
    for i in range(ds.n):
        init[y[i, 0], d[i]] += 1
    init /= ds.n
    ctrl = np.zeros((T - 1, K, K))
    trt = np.zeros((T - T0, K, K))
    for t in range(2, T + 1):
        sel = np.ones(ds.n, bool) if t <= T0 else d == 0
        for a in range(K):
            m = sel & (y[:, t - 2] == a)
            ctrl[t - 2, a] = np.bincount(y[m, t - 1], minlength=K) / m.sum()
            if t > T0:
                m1 = (d == 1) & (y[:, t - 2] == a)
                trt[t - T0 - 1, a] = np.bincount(y[m1, t - 1], minlength=K) / m1.sum()
    return init, ctrl, trt
