"""Bit-identical results regardless of worker count."""

import numpy as np
import pytest

from transition_att import BootstrapConfig, Schedule, multistart_fit, run_bootstrap, simulate
from transition_att.simulate import separated_spec, simulate_staggered, staggered_spec

WORKERS = (1, 4, 8)


@pytest.fixture(scope="module")
def panel():
    return simulate(separated_spec(), 600, 60).dataset


def test_multistart(panel):
    sched = Schedule(n_short=600, n_long=12, short_iters=5, tol=1e-4, max_iter=80)
    fits = [multistart_fit(panel, 2, 1, sched, seed=9, workers=w) for w in WORKERS]
    for f in fits[1:]:
        assert np.array_equal(f.params.flat(), fits[0].params.flat())
        assert np.array_equal(f.params.pi, fits[0].params.pi)
        assert np.array_equal(f.posteriors, fits[0].posteriors)
        assert f.loglik_trace == fits[0].loglik_trace
        assert f.candidates == fits[0].candidates


def test_bootstrap(panel):
    cfg = BootstrapConfig(J=2, schedule=Schedule(40, 3, 5, 1e-4, 80), topup=4)
    runs = [run_bootstrap(panel, cfg, B=60, seed=2, workers=w) for w in WORKERS]
    for r in runs[1:]:
        assert np.array_equal(r.draws, runs[0].draws)
        assert np.array_equal(r.sigma, runs[0].sigma)
        assert np.array_equal(r.pi_draws, runs[0].pi_draws)
        assert r.failures == runs[0].failures


def test_simulation():
    spec = separated_spec()
    sims = [simulate(spec, 30_000, 5, workers=w) for w in WORKERS]
    for s in sims[1:]:
        assert np.array_equal(s.dataset.outcomes, sims[0].dataset.outcomes)
        assert np.array_equal(s.dataset.treated, sims[0].dataset.treated)
        assert np.array_equal(s.types, sims[0].types)
    st = [simulate_staggered(staggered_spec(20_000, 6), workers=w) for w in WORKERS]
    for s in st[1:]:
        assert np.array_equal(s.outcomes, st[0].outcomes) and np.array_equal(s.cohorts, st[0].cohorts)
