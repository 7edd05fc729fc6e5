import io
import json
from importlib import resources

import jsonschema
import pytest

from transition_att import mr_example, write_panel_csv
from transition_att.cli import CONFIG_KEYS, SUBCOMMANDS, _SUBCOMMAND_KEYS, _DATA_KEYS, RunConfig, build_parser, run
from transition_att.simulate import null_spec, save_spec, simulate, staggered_spec, simulate_staggered

FAST = ["--n-short", "30", "--n-long", "3", "--max-iter", "200"]


def _schema(name):
    return json.loads(resources.files("transition_att").joinpath(f"schemas/{name}.schema.json").read_text())


def _run(args, environ=None):
    buf = io.StringIO()
    code = run(args, environ or {}, buf)
    return code, buf.getvalue()


@pytest.fixture(scope="module")
def panels(tmp_path_factory):
    root = tmp_path_factory.mktemp("panels")
    mr = root / "mr.csv"
    write_panel_csv(mr_example(), mr)
    sim = root / "sim.csv"
    write_panel_csv(simulate(null_spec(), 1500, 1).dataset, sim)
    stag = root / "stag.csv"
    write_panel_csv(simulate_staggered(staggered_spec(3000, 2)), stag)
    return {"mr": mr, "sim": sim, "stag": stag}


def _check_outputs(out, name):
    payload = json.loads((out / f"{name}.json").read_text())
    jsonschema.validate(payload, _schema(name))
    manifest = json.loads((out / "manifest.json").read_text())
    jsonschema.validate(manifest, _schema("manifest"))
    for entry in manifest["files"]:
        data = (out / entry["path"]).read_bytes()
        assert data.endswith(b"\n")
        assert len(data) == entry["bytes"]
    return payload


def test_att_mr(panels, tmp_path):
    code, text = _run(["att", "--input", str(panels["mr"]), "--alphabet", "unemployed,employed",
                       "--lag", "1", "--types", "1", "--out", str(tmp_path)])
    assert code == 0
    assert "0.0417" in text
    p = _check_outputs(tmp_path, "att")
    assert p["periods"][0]["effect"][1] == pytest.approx(1 / 24, abs=1e-12)
    header = (tmp_path / "att.csv").read_text().splitlines()[0]
    assert header == "series,period,category,effect"


def test_did_mr(panels, tmp_path):
    code, text = _run(["did", "--input", str(panels["mr"]), "--out", str(tmp_path)])
    assert code == 0 and "-0.1250" in text
    p = _check_outputs(tmp_path, "did")
    assert p["did"]["categories"] == ["employed", "unemployed"]
    assert p["did"]["periods"][0]["effect"] == [-0.125, 0.125]


@pytest.mark.parametrize("name,extra", [
    ("validate", []),
    ("mixture", ["--types", "2"] + FAST),
    ("att", ["--types", "2"] + FAST),
    ("select-types", ["--max-types", "2"] + FAST),
    ("bootstrap", ["--bootstrap-B", "20"]),
    ("pretest", ["--bands", "--bootstrap-B", "30"]),
    ("pretest", ["--types", "2"] + FAST),
    ("placebo", []),
    ("flows", ["--focal", "1"]),
    ("flows", ["--types", "2"] + FAST),
])
def test_subcommands_emit_valid_json(panels, tmp_path, name, extra):
    code, _ = _run([name, "--input", str(panels["sim"]), "--out", str(tmp_path)] + extra)
    assert code == 0
    _check_outputs(tmp_path, name)


def test_bootstrap_csv_columns(panels, tmp_path):
    assert _run(["bootstrap", "--input", str(panels["sim"]), "--bootstrap-B", "20", "--out", str(tmp_path)])[0] == 0
    header = (tmp_path / "bootstrap.csv").read_text().splitlines()[0]
    assert header == "series,period,category,estimate,se,pw_lo,pw_hi,unif_lo,unif_hi,crit_value"
    assert (tmp_path / "bootstrap_draws.csv").exists()


def test_staggered(panels, tmp_path):
    code, _ = _run(["staggered", "--input", str(panels["stag"]), "--mode", "both", "--out", str(tmp_path)])
    assert code == 0
    _check_outputs(tmp_path, "staggered")
    header = (tmp_path / "staggered.csv").read_text().splitlines()[0]
    assert header == "g,t,category,att,n_treated,n_control,mode"


def test_flows_csv_columns(panels, tmp_path):
    assert _run(["flows", "--input", str(panels["sim"]), "--out", str(tmp_path)])[0] == 0
    assert (tmp_path / "flows.csv").read_text().splitlines()[0] == "type,period,channel,direction,effect"


def test_simulate_then_att(tmp_path):
    spec = tmp_path / "null.json"
    save_spec(null_spec(), spec)
    panel = tmp_path / "panel.csv"
    assert _run(["simulate", "--spec", str(spec), "--n", "1000", "--seed", "7", "--out", str(panel)])[0] == 0
    code, _ = _run(["att", "--input", str(panel), "--out", str(tmp_path / "res")])
    assert code == 0
    p = json.loads((tmp_path / "res" / "att.json").read_text())
    effects = [v for row in p["periods"] for v in row["effect"]]
    assert all(abs(v) < 0.15 for v in effects)


def test_simulate_shipped_name(tmp_path):
    out = tmp_path / "s.csv"
    assert _run(["simulate", "--spec", "staggered", "--n", "500", "--out", str(out)])[0] == 0
    assert out.read_text().splitlines()[0] == "unit,time,outcome,treated,cohort"


def test_outputs_are_byte_identical(panels, tmp_path):
    args = ["bootstrap", "--input", str(panels["sim"]), "--bootstrap-B", "20", "--seed", "3"]
    _run(args + ["--out", str(tmp_path / "a")])
    _run(args + ["--out", str(tmp_path / "b")])
    for f in ("bootstrap.json", "bootstrap.csv", "bootstrap_draws.csv", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_exit_codes(panels, tmp_path):
    assert _run(["att", "--bogus"])[0] == 64
    assert _run([])[0] == 64
    assert _run(["att", "--input", str(tmp_path / "missing.csv")])[0] == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("unit,time,outcome\na,1,x\n")
    assert _run(["validate", "--input", str(bad)])[0] == 2
    # a treated history with no controls at all
    gap = tmp_path / "gap.csv"
    gap.write_text("unit,time,outcome,treated\na,1,x,0\na,2,x,1\nb,1,y,0\nb,2,x,1\nc,1,x,0\nc,2,y,0\n")
    assert _run(["att", "--input", str(gap), "--out", str(tmp_path)])[0] == 3
    assert _run(["att", "--input", str(gap), "--empty-cell", "drop", "--out", str(tmp_path)])[0] == 0


def test_config_precedence_and_env(panels, tmp_path):
    parser = build_parser()
    from transition_att.cli import resolve_config
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"lag": 2, "alpha": 0.1, "seed": 5}))
    ns = parser.parse_args(["att", "--config", str(cfg_file), "--lag", "1"])
    cfg = resolve_config(ns, {})
    assert cfg.lag == 1 and cfg.alpha == 0.1 and cfg.seed == 5
    ns = parser.parse_args(["att"])
    assert resolve_config(ns, {"TRANSITION_ATT_SEED": "42"}).seed == 42
    ns = parser.parse_args(["att", "--seed", "1"])
    assert resolve_config(ns, {"TRANSITION_ATT_SEED": "42"}).seed == 1
    cfg_file.write_text(json.dumps({"nonsense": 1}))
    assert _run(["att", "--config", str(cfg_file)])[0] == 64


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_help_documents_keys(name, capsys):
    assert run([name, "--help"], {}, io.StringIO()) == 0
    text = " ".join(capsys.readouterr().out.split())
    keys = ([] if name == "simulate" else _DATA_KEYS) + _SUBCOMMAND_KEYS[name] + ["out"]
    for key in keys:
        assert f"config key: {key}; default: {getattr(RunConfig(), key)}" in text


def test_every_config_key_reachable():
    used = set(_DATA_KEYS) | {"out"} | {k for v in _SUBCOMMAND_KEYS.values() for k in v}
    assert used == CONFIG_KEYS
