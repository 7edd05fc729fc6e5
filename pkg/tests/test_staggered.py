import numpy as np
import pytest

from transition_att import (
    OutcomeAlphabet,
    PanelDataset,
    aggregate_staggered,
    cohort_att,
    control_set,
    estimate_staggered,
    simulate,
    simulate_staggered,
    ti_att,
)
from transition_att.errors import EmptyControlCell, EmptyControlSet, StaggeredAdoption
from transition_att.simulate import null_spec, staggered_spec, staggered_true_att
from transition_att.staggered import cohort_cell, cohort_weights, g_bar


def _cohort_panel(cohorts, T=6, seed=0, n_per=30):
    rng = np.random.default_rng(seed)
    g = np.repeat(cohorts, n_per)
    y = rng.integers(0, 2, size=(len(g), T))
    return PanelDataset(OutcomeAlphabet(("0", "1")), y, (g != 0).astype(int), min(c for c in cohorts if c) - 1,
                        cohort=g)


def test_control_set_examples():
    ds = _cohort_panel([0, 3, 5])
    assert control_set(ds, 3, 3, "both") == [0, 5]
    assert control_set(ds, 3, 3, "never") == [0]
    assert control_set(ds, 3, 4, "not_yet") == [5]
    nn = _cohort_panel([3, 5])
    assert g_bar(nn) == 4
    assert control_set(nn, 3, 4, "not_yet") == [5]
    with pytest.raises(ValueError):
        control_set(nn, 5, 5, "not_yet")  # 5 > g_bar
    with pytest.raises(EmptyControlSet):
        control_set(nn, 3, 4, "never")


def test_estimate_skips_empty_sets():
    tab = estimate_staggered(_cohort_panel([0, 3, 5]), mode="not_yet")
    assert (3, 3) in tab.entries and (3, 5) not in tab.entries
    assert any(g == 3 and t == 5 for g, t, _ in tab.skipped)
    assert 5 not in tab.aggregate


def test_single_cohort_reduction():
    ds = simulate(null_spec(5000, 40, T=5, T0=2)).dataset
    st = PanelDataset(ds.alphabet, ds.outcomes, ds.treated, ds.T0, cohort=ds.cohorts)
    ti = ti_att(ds, 1)
    for t in ti.periods:
        assert np.abs(cohort_att(st, 3, t) - ti.at(t)).max() < 1e-12
        att, w = aggregate_staggered(st, t)
        assert w == {3: 1.0} and np.array_equal(att, cohort_att(st, 3, t))


def test_rejected_by_simultaneous_estimators():
    with pytest.raises(StaggeredAdoption):
        ti_att(_cohort_panel([0, 3, 5]))


def test_cohort_weights_and_simplex():
    ds = simulate_staggered(staggered_spec(20_000, 41))
    for t in range(3, 7):
        w = cohort_weights(ds, t)
        assert abs(sum(w.values()) - 1) < 1e-12
    tab = estimate_staggered(ds, mode="both")
    for cell in tab.entries.values():
        assert abs(cell.att.sum()) < 1e-10
        assert (cell.counterfactual >= 0).all() and abs(cell.counterfactual.sum() - 1) < 1e-10


def test_mode_enlarges_controls():
    ds = simulate_staggered(staggered_spec(5000, 42))
    for g, t in [(3, 3), (3, 4)]:
        never = cohort_cell(ds, g, t, mode="never")
        both = cohort_cell(ds, g, t, mode="both")
        assert both.n_control >= never.n_control


def test_partial_support_flagged():
    # cohort 5 controls never start in state 1
    g = np.array([3] * 4 + [0] * 4 + [5] * 2)
    y = np.array([[0, 1, 0, 1, 1, 0], [1, 0, 1, 1, 0, 1], [0, 0, 1, 0, 1, 1], [1, 1, 0, 0, 1, 0],
                  [0, 1, 0, 1, 0, 1], [1, 1, 1, 0, 0, 0], [0, 0, 0, 1, 1, 1], [1, 0, 1, 0, 1, 0],
                  [0, 0, 0, 1, 1, 0], [1, 0, 0, 0, 0, 1]])
    ds = PanelDataset(OutcomeAlphabet(("0", "1")), y, (g != 0).astype(int), 2, cohort=g)
    cell = cohort_cell(ds, 3, 3, mode="both")
    assert cell.partial_support == [(1,)]
    # counterfactual for history (1,) uses cohort 0 only
    tr = g == 3
    p1 = np.bincount(y[tr, 1], minlength=2) / tr.sum()
    m0 = {h: y[(g == 0) & (y[:, 1] == h), 2].mean() for h in (0, 1)}
    m5 = y[(g == 5) & (y[:, 1] == 0), 2].mean()
    w0, w5 = 4 / 6, 2 / 6
    cf1 = p1[0] * (w0 * m0[0] + w5 * m5) + p1[1] * m0[1]
    assert cell.counterfactual[1] == pytest.approx(cf1, abs=1e-12)


def test_empty_control_cell_policy():
    g = np.array([3, 3, 0, 0])
    y = np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0], [0, 0, 1]])
    ds = PanelDataset(OutcomeAlphabet(("0", "1")), y, (g != 0).astype(int), 2, cohort=g)
    with pytest.raises(EmptyControlCell):
        cohort_att(ds, 3, 3)
    cell = cohort_cell(ds, 3, 3, policy="drop")
    assert cell.dropped_mass == 0.5


def test_zero_effect_oracle():
    ds = simulate_staggered(staggered_spec(100_000, 43))
    tab = estimate_staggered(ds, mode="never")
    assert max(np.abs(c.att).max() for c in tab.entries.values()) < 0.01


def test_effect_oracle_and_aggregate():
    spec = staggered_spec(100_000, 44, effects=(0.1, 0.05))
    ds = simulate_staggered(spec)
    truth = staggered_true_att(spec)
    tab = estimate_staggered(ds, mode="never")
    for key, cell in tab.entries.items():
        assert np.abs(cell.att - truth[key]).max() < 0.02
    att, w = aggregate_staggered(ds, 5)
    expect = sum(w[g] * truth[(g, 5)] for g in w)
    assert np.abs(att - expect).max() < 0.02


def test_to_dict_and_rows():
    ds = simulate_staggered(staggered_spec(3000, 45))
    tab = estimate_staggered(ds, mode="both")
    d = tab.to_dict()
    assert d["mode"] == "both" and len(d["cells"]) == len(tab.entries)
    assert list(tab.rows()[0]) == ["g", "t", "category", "att", "n_treated", "n_control", "mode"]
