import numpy as np
import pytest

from transition_att import (
    mixture_effects,
    simulate,
    simulate_staggered,
    ti_att,
    true_att,
)
from transition_att.errors import InvalidPanel
from transition_att.simulate import (
    SHIPPED,
    load_spec,
    mr_example,
    mr_spec,
    null_spec,
    save_spec,
    staggered_spec,
    staggered_true_att,
    two_type_effect_spec,
)


def test_mr_fixture_rates():
    ds = mr_example()
    tr = ds.treated == 1
    assert ds.n == 48 and tr.sum() == 24
    assert (ds.outcomes[tr, 1] == 1).mean() == 0.875
    unemp0 = ~tr & (ds.outcomes[:, 0] == 0)
    assert (ds.outcomes[unemp0, 1] == 1).mean() == pytest.approx(2 / 3)
    assert (ds.outcomes[tr, 0] == 1).mean() == 0.5
    assert (ds.outcomes[~tr, 0] == 1).mean() == 0.25


def test_mr_spec_truth():
    assert true_att(mr_spec()).at(2)[1] == pytest.approx(1 / 24, abs=1e-15)


def test_zero_effect_truth_and_estimate():
    spec = null_spec()
    assert np.array_equal(true_att(spec).effects, np.zeros((2, 2)))
    ds = simulate(spec, 100_000, 50).dataset
    assert np.abs(ti_att(ds).effects).max() < 0.01


def test_aggregate_truth_is_weighted():
    t = true_att(two_type_effect_spec())
    assert np.abs(t.effects - np.tensordot(t.type_weights, t.type_effects, axes=1)).max() < 1e-15
    assert t.type_effects[:, 0, 1] == pytest.approx([0.10, -0.05], abs=1e-12)


def test_lln_mr_kernels():
    sim = simulate(mr_spec(), 1_000_000, 51)
    ds = sim.dataset
    tr = ds.treated == 1
    y = ds.outcomes
    assert abs((~tr & (y[:, 0] == 0) & (y[:, 1] == 1)).sum() / (~tr & (y[:, 0] == 0)).sum() - 2 / 3) < 0.005
    assert abs((tr & (y[:, 0] == 0) & (y[:, 1] == 1)).sum() / (tr & (y[:, 0] == 0)).sum() - 0.75) < 0.005
    assert abs(tr.mean() - (0.625 * 0.4 + 0.375 * 2 / 3)) < 0.005


def test_truth_matches_monte_carlo():
    spec = two_type_effect_spec()
    sim = simulate(spec, 1_000_000, 52)
    ds = sim.dataset
    tr = ds.treated == 1
    # treated-arm mean minus the same units' untreated paths, simulated separately
    untreated = simulate(spec.replace(treated_kernel=spec.control_kernel[:, spec.T0 - 1:].copy()), 1_000_000, 52)
    m1 = np.eye(2)[ds.outcomes[tr, -1]].mean(axis=0)
    m0 = np.eye(2)[untreated.dataset.outcomes[tr, -1]].mean(axis=0)
    assert np.abs((m1 - m0) - true_att(spec).effects[0]).max() < 0.003


def test_seed_determinism_and_block_independence():
    spec = null_spec()
    a = simulate(spec, 20_000, 9).dataset
    b = simulate(spec, 20_000, 9).dataset
    assert np.array_equal(a.outcomes, b.outcomes) and np.array_equal(a.treated, b.treated)
    c = simulate(spec, 20_000, 10).dataset
    assert not np.array_equal(a.outcomes, c.outcomes)


def test_consistency_harness():
    spec = two_type_effect_spec()
    truth = true_att(spec)
    errs = []
    for n in (2_000, 100_000):
        sim = simulate(spec, n, 53)
        s = mixture_effects(sim.dataset, np.eye(2)[sim.types])
        errs.append(np.abs(s.type_effects - truth.type_effects).max())
    assert errs[1] < 0.02 and errs[1] < errs[0]


def test_selection_bounds():
    with pytest.raises(InvalidPanel):
        null_spec().replace(selection=[[0.0, 0.5]], eps=0.01)


@pytest.mark.parametrize("name", sorted(SHIPPED))
def test_spec_json_roundtrip(tmp_path, name):
    spec = load_spec(name)
    save_spec(spec, tmp_path / "s.json")
    again = load_spec(tmp_path / "s.json")
    assert type(again) is type(spec)
    assert again.to_dict() == spec.to_dict()


def test_staggered_truth_zero():
    truth = staggered_true_att(staggered_spec())
    assert all(np.abs(v).max() < 1e-15 for v in truth.values())
    ds = simulate_staggered(staggered_spec(1000, 1))
    assert set(np.unique(ds.cohorts)) == {0, 3, 5}
