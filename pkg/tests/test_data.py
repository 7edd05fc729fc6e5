import numpy as np
import pytest
from hypothesis import given, strategies as st

from transition_att import OutcomeAlphabet, PanelDataset, history_key, load_panel_csv, one_hot, write_panel_csv
from transition_att.data import decode_history, history_codes
from transition_att.errors import (
    DuplicateObservation,
    IndexOutOfRange,
    InvalidPanel,
    LagExceedsHistory,
    MissingColumn,
    NonAbsorbingTreatment,
    UnbalancedPanel,
    UnknownLabel,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_alphabet_rules():
    a = OutcomeAlphabet(("x", "y", "z"))
    assert a.K == 3 and a.index == {"x": 0, "y": 1, "z": 2}
    with pytest.raises(InvalidPanel):
        OutcomeAlphabet(("x",))
    with pytest.raises(InvalidPanel):
        OutcomeAlphabet(("x", "x"))
    with pytest.raises(UnknownLabel):
        a.index_of("w")


def test_one_hot_examples():
    assert one_hot(0, 2).tolist() == [1, 0]
    assert one_hot(2, 3).tolist() == [0, 0, 1]
    assert sum(one_hot(k, 4) for k in range(4)).tolist() == [1, 1, 1, 1]
    with pytest.raises(IndexOutOfRange):
        one_hot(3, 3)


def test_history_key_examples(mr):
    unit = int(np.flatnonzero(mr.outcomes[:, 0] == 0)[0])
    assert history_key(mr, unit, 1, 1).states == (0,)
    ds = PanelDataset(OutcomeAlphabet(("a", "b", "c", "d")), [[0, 1, 2, 3, 0], [0, 0, 0, 0, 0]], [1, 0], 4)
    assert history_key(ds, 0, 4, 2).states == (2, 3)
    with pytest.raises(LagExceedsHistory):
        history_key(ds, 0, 4, 5)


@given(st.integers(2, 4), st.integers(1, 3), st.data())
def test_history_codes_roundtrip(K, lag, data):
    states = data.draw(st.lists(st.integers(0, K - 1), min_size=lag, max_size=lag))
    y = np.array([states + [0]])
    code = history_codes(y, lag, lag, K)[0]
    assert decode_history(int(code), lag, K) == tuple(states)


def test_mr_roundtrip(tmp_path, mr):
    path = tmp_path / "mr.csv"
    write_panel_csv(mr, path)
    ds = load_panel_csv(path, alphabet=list(mr.alphabet.labels))
    assert (ds.n, ds.T, ds.T0, ds.K) == (48, 2, 1, 2)
    assert np.array_equal(ds.outcomes, mr.outcomes) and np.array_equal(ds.treated, mr.treated)
    again = tmp_path / "again.csv"
    write_panel_csv(ds, again)
    assert again.read_bytes() == path.read_bytes()


def test_unbalanced(tmp_path):
    rows = ["unit,time,outcome,treated"]
    for u in ("a", "b"):
        for t in (1, 2, 3, 4):
            if u == "a" and t == 3:
                continue
            rows.append(f"{u},{t},{'xy'[t % 2]},{int(u == 'a' and t > 2)}")
    with pytest.raises(UnbalancedPanel):
        load_panel_csv(_write(tmp_path / "p.csv", "\n".join(rows) + "\n"))


def test_non_absorbing(tmp_path):
    text = "unit,time,outcome,treated\na,1,x,0\na,2,x,1\na,3,y,0\nb,1,x,0\nb,2,y,0\nb,3,y,0\n"
    with pytest.raises(NonAbsorbingTreatment):
        load_panel_csv(_write(tmp_path / "p.csv", text))


def test_missing_column_and_unknown_label(tmp_path):
    with pytest.raises(MissingColumn):
        load_panel_csv(_write(tmp_path / "a.csv", "unit,time,outcome\na,1,x\n"))
    text = "unit,time,outcome,treated\na,1,x,0\na,2,z,1\nb,1,x,0\nb,2,y,0\n"
    with pytest.raises(UnknownLabel):
        load_panel_csv(_write(tmp_path / "b.csv", text), alphabet=["x", "y"])


def test_duplicates_rejected(tmp_path):
    text = "unit,time,outcome,treated\na,1,x,0\na,1,y,0\na,2,x,1\nb,1,x,0\nb,2,y,0\n"
    with pytest.raises(DuplicateObservation):
        load_panel_csv(_write(tmp_path / "p.csv", text))


def test_time_reindex_and_schema(tmp_path):
    text = ("id,date,state,d\n"
            "a,2020-03,y,1\na,2020-01,x,0\na,2020-02,x,0\n"
            "b,2020-02,y,0\nb,2020-03,y,0\nb,2020-01,x,0\n")
    ds = load_panel_csv(_write(tmp_path / "p.csv", text),
                        schema={"unit": "id", "time": "date", "outcome": "state", "treated": "d"})
    assert ds.time_values == ("2020-01", "2020-02", "2020-03")
    assert ds.T0 == 2
    assert ds.outcomes.tolist() == [[0, 0, 1], [0, 1, 1]]


def test_unit_level_flag_needs_t0(tmp_path):
    text = "unit,time,outcome,treated\na,1,x,1\na,2,y,1\nb,1,x,0\nb,2,y,0\n"
    path = _write(tmp_path / "p.csv", text)
    with pytest.raises(InvalidPanel):
        load_panel_csv(path)
    assert load_panel_csv(path, t0=1).treated.tolist() == [1, 0]


def test_explicit_alphabet_permutes_one_hot(tmp_path, mr):
    path = tmp_path / "mr.csv"
    write_panel_csv(mr, path)
    a = load_panel_csv(path, alphabet=["unemployed", "employed"])
    b = load_panel_csv(path, alphabet=["employed", "unemployed"])
    assert np.array_equal(a.one_hot()[..., ::-1], b.one_hot())


def test_cohort_and_cluster_columns(tmp_path):
    rows = ["unit,time,outcome,treated,cluster,cohort"]
    spec = {"a": 3, "b": 4, "c": 0}
    for u, g in spec.items():
        for t in range(1, 5):
            rows.append(f"{u},{t},{'x' if t % 2 else 'y'},{int(g and t >= g)},k{u},{g}")
    ds = load_panel_csv(_write(tmp_path / "p.csv", "\n".join(rows) + "\n"))
    assert ds.cohorts.tolist() == [3, 4, 0] and ds.is_staggered and ds.T0 == 2
    assert ds.cluster_id.tolist() == ["ka", "kb", "kc"]
    out = tmp_path / "out.csv"
    write_panel_csv(ds, out)
    assert out.read_text() == "\n".join(rows) + "\n"


def test_dataset_is_immutable(mr):
    with pytest.raises(ValueError):
        mr.outcomes[0, 0] = 1
