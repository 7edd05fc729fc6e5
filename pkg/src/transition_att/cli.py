"""Command-line interface: ``transition-att <subcommand> [flags]``.

Exit codes: 0 success, 2 invalid input data, 3 estimation failure, 64 bad
usage. Settings come from flags, then an optional JSON ``--config`` file,
then defaults; the seed falls back to ``TRANSITION_ATT_SEED``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import PanelDataset, load_panel_csv, write_panel_csv
from .effects import (
    did_att,
    did_bias,
    flow_decomposition,
    history_contributions,
    placebo_att,
    pre_transition_differences,
    ti_att,
)
from .errors import DataError, EstimationError
from .inference import BootstrapConfig, point_estimate, pretrend_bands, run_bootstrap, series_bands
from .mixture import Schedule, bic, multistart_fit, n_params, select_num_types
from .mixture_effects import mixture_effects, type_flow_decomposition, type_pre_transitions
from .simulate import DgpSpec, load_spec, simulate, simulate_staggered
from .staggered import MODES, estimate_staggered

EXIT_OK, EXIT_DATA, EXIT_ESTIMATION, EXIT_USAGE = 0, 2, 3, 64
SUBCOMMANDS = ("validate", "did", "att", "mixture", "select-types", "bootstrap", "pretest", "placebo",
               "flows", "staggered", "simulate")
SEED_ENV = "TRANSITION_ATT_SEED"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Every setting a subcommand reads. Keys double as config-file keys."""

    input: Optional[str] = None
    schema: dict = field(default_factory=dict)
    alphabet: Optional[list] = None
    t0: Optional[int] = None
    types: int = 1
    lag: int = 1
    eps: float = 1e-6
    n_short: int = 6000
    n_long: int = 20
    short_iters: int = 10
    tol: float = 1e-3
    max_iter: int = 100
    bootstrap_B: int = 500
    alpha: float = 0.05
    cluster: bool = False
    topup: int = 50
    seed: int = 0
    workers: int = 1
    empty_cell: str = "error"
    mode: str = "never"
    max_types: int = 3
    focal: Optional[str] = None
    period: Optional[int] = None
    bands: bool = False
    spec: Optional[str] = None
    n: Optional[int] = None
    out: str = "results"

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.n_short, self.n_long, self.short_iters, self.tol, self.max_iter)

    def bootstrap_config(self) -> BootstrapConfig:
        return BootstrapConfig(J=self.types, ell=self.lag, schedule=self.schedule, topup=self.topup,
                               policy=self.empty_cell, eps=self.eps, cluster=self.cluster)

    def validate(self):
        if self.empty_cell not in ("error", "drop"):
            raise UsageError("empty_cell must be 'error' or 'drop'")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}")
        if self.types < 1 or self.lag < 1 or self.max_types < 1:
            raise UsageError("types, lag and max_types must be positive")
        if not 0 < self.alpha < 1:
            raise UsageError("alpha must lie in (0, 1)")
        try:
            self.schedule
        except ValueError as exc:
            raise UsageError(str(exc)) from None


CONFIG_KEYS = {f.name for f in fields(RunConfig)}
_DEFAULTS = RunConfig()

_HELP = {
    "input": "panel CSV with columns unit,time,outcome,treated[,cluster][,cohort]",
    "schema": "JSON object (or path to one) mapping unit/time/outcome/treated/cluster/cohort to file column names",
    "alphabet": "comma-separated outcome labels in index order (default: sorted labels)",
    "t0": "number of pre-treatment periods when treated is a unit-level flag",
    "types": "number of latent types J",
    "lag": "history length ell used for matching and the Markov order",
    "eps": "probability floor in the mixture M-step",
    "n_short": "multistart: number of short random starts",
    "n_long": "multistart: starts continued to convergence",
    "short_iters": "multistart: EM steps per short start",
    "tol": "EM stops when the log-likelihood changes by less than this",
    "max_iter": "EM step cap for long runs",
    "bootstrap_B": "bootstrap replicates",
    "alpha": "band level: 1 - alpha coverage",
    "cluster": "draw bootstrap weights per cluster",
    "topup": "short random starts added to the warm start in each replicate",
    "seed": f"base random seed (falls back to ${SEED_ENV})",
    "workers": "worker processes",
    "empty_cell": "treated history without controls: error or drop",
    "mode": "staggered control cohorts: never, not_yet or both",
    "max_types": "largest J tried by select-types",
    "focal": "flows: focal category label (default: last label)",
    "period": "flows: post period (default: first post period)",
    "bands": "pretest: add bootstrap sup-t bands",
    "spec": "simulate: shipped spec name or spec JSON file",
    "n": "simulate: number of units (default: the spec's n)",
    "out": "output directory (simulate: output CSV path)",
}

_FLAG_NAMES = {"bootstrap_B": "--bootstrap-B", "empty_cell": "--empty-cell", "n_short": "--n-short",
               "n_long": "--n-long", "short_iters": "--short-iters", "max_iter": "--max-iter",
               "max_types": "--max-types"}

_SUBCOMMAND_KEYS = {
    "validate": [],
    "did": ["lag", "empty_cell"],
    "att": ["types", "lag", "eps", "n_short", "n_long", "short_iters", "tol", "max_iter", "seed", "workers",
            "empty_cell"],
    "mixture": ["types", "lag", "eps", "n_short", "n_long", "short_iters", "tol", "max_iter", "seed", "workers",
                "empty_cell"],
    "select-types": ["lag", "eps", "max_types", "n_short", "n_long", "short_iters", "tol", "max_iter", "seed",
                     "workers"],
    "bootstrap": ["types", "lag", "eps", "n_short", "n_long", "short_iters", "tol", "max_iter", "bootstrap_B",
                  "alpha", "cluster", "topup", "seed", "workers", "empty_cell"],
    "pretest": ["types", "lag", "eps", "n_short", "n_long", "short_iters", "tol", "max_iter", "seed", "workers",
                "bands", "bootstrap_B", "alpha", "cluster"],
    "placebo": ["lag", "empty_cell"],
    "flows": ["types", "lag", "eps", "n_short", "n_long", "short_iters", "tol", "max_iter", "seed", "workers",
              "empty_cell", "focal", "period"],
    "staggered": ["lag", "empty_cell", "mode"],
    "simulate": ["spec", "n", "seed", "workers"],
}
_DATA_KEYS = ["input", "schema", "alphabet", "t0"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_flag(p, key):
    default = getattr(_DEFAULTS, key)
    flag = _FLAG_NAMES.get(key, "--" + key.replace("_", "-"))
    help_ = f"{_HELP[key]} [config key: {key}; default: {default}]"
    kinds = {int: int, float: float, str: str}
    if isinstance(default, bool):
        p.add_argument(flag, dest=key, action="store_const", const=True, default=argparse.SUPPRESS, help=help_)
    elif key == "empty_cell":
        p.add_argument(flag, dest=key, choices=("error", "drop"), default=argparse.SUPPRESS, help=help_)
    elif key == "mode":
        p.add_argument(flag, dest=key, choices=MODES, default=argparse.SUPPRESS, help=help_)
    elif key in ("schema", "alphabet", "input", "focal", "spec", "out"):
        p.add_argument(flag, dest=key, default=argparse.SUPPRESS, help=help_)
    elif key in ("t0", "period", "n"):
        p.add_argument(flag, dest=key, type=int, default=argparse.SUPPRESS, help=help_)
    else:
        p.add_argument(flag, dest=key, type=kinds[type(default)], default=argparse.SUPPRESS, help=help_)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transition-att", description="ATT estimation for discrete panel outcomes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    blurbs = {
        "validate": "check and summarise a panel file",
        "did": "difference-in-differences and its bias relative to the transition-based ATT",
        "att": "transition-independence ATT (or mixture ATTs when --types > 1)",
        "mixture": "fit the latent-type Markov mixture",
        "select-types": "choose the number of types by BIC",
        "bootstrap": "weighted bootstrap with pointwise and uniform bands",
        "pretest": "pre-period transition differences between arms",
        "placebo": "placebo ATT at the last pre-treatment period",
        "flows": "inflow/outflow decomposition of the ATT on one category",
        "staggered": "cohort-by-period ATTs under staggered adoption",
        "simulate": "draw a synthetic panel from a spec",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=blurbs[name], description=blurbs[name])
        p.add_argument("--config", default=argparse.SUPPRESS,
                       help="JSON file of config keys; flags override it [default: none]")
        keys = ([] if name == "simulate" else _DATA_KEYS) + _SUBCOMMAND_KEYS[name] + ["out"]
        for key in keys:
            _add_flag(p, key)
    return parser


def _parse_schema(value):
    if isinstance(value, dict):
        return value
    text = Path(value).read_text(encoding="utf-8") if Path(value).is_file() else value
    try:
        out = json.loads(text)
    except json.JSONDecodeError:
        raise UsageError(f"--schema is neither a JSON object nor a JSON file: {value!r}") from None
    if not isinstance(out, dict):
        raise UsageError("--schema must be a JSON object")
    return out


def resolve_config(ns: argparse.Namespace, environ=None) -> RunConfig:
    """Merge flags over the config file over defaults."""
    environ = os.environ if environ is None else environ
    values = {}
    cfg_path = getattr(ns, "config", None)
    if cfg_path is not None:
        try:
            with open(cfg_path, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {cfg_path}: {exc}") from None
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(file_values) - CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    flags = {k: v for k, v in vars(ns).items() if k in CONFIG_KEYS}
    values.update(flags)
    if "seed" not in values and environ.get(SEED_ENV):
        try:
            values["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer") from None
    if isinstance(values.get("alphabet"), str):
        values["alphabet"] = [s.strip() for s in values["alphabet"].split(",")]
    if "schema" in values:
        values["schema"] = _parse_schema(values["schema"])
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    cfg.validate()
    return cfg


# --- report emission ----------------------------------------------------------


def _finite(obj):
    """Replace NaN and infinities by ``None`` so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _json_bytes(obj) -> bytes:
    return (json.dumps(_finite(obj), indent=2, ensure_ascii=False, allow_nan=False) + "\n").encode("utf-8")


def _csv_bytes(rows, columns) -> bytes:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="raise")
    w.writeheader()
    for r in rows:
        w.writerow({c: _fmt(r[c]) for c in columns})
    return buf.getvalue().encode("utf-8")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def emit_report(name: str, payload: dict, out_dir, rows=None, columns=None, extra=None) -> dict:
    """Write ``<name>.json`` (and ``<name>.csv`` if rows are given) plus a manifest.

    ``extra`` maps additional file names to ``(rows, columns)``. The manifest
    lists every written file with its SHA-256 digest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {f"{name}.json": _json_bytes(payload)}
    if rows is not None:
        files[f"{name}.csv"] = _csv_bytes(rows, columns)
    for fname, (r, c) in (extra or {}).items():
        files[fname] = _csv_bytes(r, c)
    manifest = {"command": name, "files": []}
    for fname, data in files.items():
        (out / fname).write_bytes(data)
        manifest["files"].append({"path": fname, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    (out / "manifest.json").write_bytes(_json_bytes(manifest))
    return manifest


# --- subcommands --------------------------------------------------------------


def _load(cfg: RunConfig) -> PanelDataset:
    if not cfg.input:
        raise UsageError("--input is required")
    try:
        return load_panel_csv(cfg.input, cfg.schema or None, cfg.alphabet, cfg.t0)
    except FileNotFoundError:
        raise DataError(f"input file not found: {cfg.input}") from None


def _series_rows(series, name="aggregate"):
    rows = []
    for s, t in enumerate(series.periods):
        for k, lab in enumerate(series.labels):
            rows.append({"series": name, "period": int(t), "category": lab, "effect": float(series.effects[s, k])})
    if series.type_effects is not None:
        typed = []
        for j in range(series.type_effects.shape[0]):
            for s, t in enumerate(series.periods):
                for k, lab in enumerate(series.labels):
                    typed.append({"series": f"type{j + 1}", "period": int(t), "category": lab,
                                  "effect": float(series.type_effects[j, s, k])})
        rows = typed + rows
    return rows


def _table(title, header, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    lines = [title, "  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(str(v).ljust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def _effect_summary(title, rows):
    return _table(title, ["series", "t", "category", "effect"],
                  [(r["series"], r["period"], r["category"], f"{r['effect']:.4f}") for r in rows])


def _config_payload(cfg, keys):
    return {k: getattr(cfg, k) for k in keys}


def cmd_validate(cfg):
    ds = _load(cfg)
    g = ds.cohorts
    payload = {
        "n": ds.n, "T": ds.T, "T0": ds.T0, "K": ds.K, "labels": list(ds.alphabet.labels),
        "time_values": list(ds.time_values), "n_treated": int((ds.treated == 1).sum()),
        "n_control": int((ds.treated == 0).sum()), "staggered": ds.is_staggered,
        "cohorts": {str(int(c)): int((g == c).sum()) for c in np.unique(g)},
        "clusters": None if ds.cluster_id is None else int(len(set(ds.cluster_id))),
    }
    text = _table("panel", ["field", "value"], [(k, v) for k, v in payload.items() if k != "time_values"])
    return payload, None, None, text


def cmd_did(cfg):
    ds = _load(cfg)
    did = did_att(ds)
    ti = ti_att(ds, cfg.lag, cfg.empty_cell)
    bias = did_bias(ds, cfg.lag, cfg.empty_cell)
    rows = []
    for s, t in enumerate(did.periods):
        for k, lab in enumerate(ds.alphabet.labels):
            rows.append({"period": int(t), "category": lab, "did": float(did.effects[s, k]),
                         "ti_att": float(ti.effects[s, k]), "bias": float(bias[s, k])})
    payload = {"did": did.to_dict(), "ti_att": ti.to_dict(),
               "bias": [{"t": int(t), "bias": [float(v) for v in bias[s]]} for s, t in enumerate(did.periods)]}
    text = _table("difference-in-differences", ["t", "category", "DiD", "TI ATT", "bias"],
                  [(r["period"], r["category"], f"{r['did']:.4f}", f"{r['ti_att']:.4f}", f"{r['bias']:.4f}")
                   for r in rows])
    return payload, rows, ["period", "category", "did", "ti_att", "bias"], text


def _fit(cfg, ds):
    return multistart_fit(ds, cfg.types, cfg.lag, cfg.schedule, cfg.seed, eps=cfg.eps, workers=cfg.workers)


def cmd_att(cfg):
    ds = _load(cfg)
    if cfg.types == 1:
        series = ti_att(ds, cfg.lag, cfg.empty_cell)
        payload = series.to_dict()
        payload["histories"] = [
            {"t": int(t), "history": [ds.alphabet.labels[x] for x in c.history], "weight": c.weight,
             "effect": [float(v) for v in c.effect]}
            for t in series.periods for c in history_contributions(ds, cfg.lag, t, cfg.empty_cell)
        ]
    else:
        fit = _fit(cfg, ds)
        series = mixture_effects(ds, fit.posteriors, cfg.lag, cfg.empty_cell)
        payload = _mixture_payload(series)
        payload["loglik"] = fit.loglik
    rows = _series_rows(series)
    return payload, rows, ["series", "period", "category", "effect"], _effect_summary("ATT", rows)


def _mixture_payload(series):
    return {
        "method": "mixture", "lag": series.lag, "categories": list(series.labels),
        "weights": [float(w) for w in series.type_weights],
        "types": [{"j": j + 1, "periods": [{"t": int(t), "effect": [float(v) for v in series.type_effects[j, s]]}
                                           for s, t in enumerate(series.periods)]}
                  for j in range(series.type_effects.shape[0])],
        "aggregate": {"periods": [{"t": int(t), "effect": [float(v) for v in series.effects[s]]}
                                  for s, t in enumerate(series.periods)]},
    }


def cmd_mixture(cfg):
    ds = _load(cfg)
    fit = _fit(cfg, ds)
    series = mixture_effects(ds, fit.posteriors, cfg.lag, cfg.empty_cell)
    payload = {
        "params": fit.params.to_dict(), "loglik": fit.loglik, "bic": float(bic(ds, fit)),
        "n_params": n_params(cfg.types, cfg.lag, ds.K, ds.T, ds.T0), "converged": fit.converged,
        "iterations": fit.iterations, "loglik_trace": [float(v) for v in fit.loglik_trace],
        "effects": _mixture_payload(series),
    }
    rows = [{"unit": u, **{f"type{j + 1}": float(fit.posteriors[i, j]) for j in range(cfg.types)}}
            for i, u in enumerate(ds.unit_ids)]
    cols = ["unit"] + [f"type{j + 1}" for j in range(cfg.types)]
    text = _table("mixture fit", ["type", "pi", "treated share"],
                  [(j + 1, f"{fit.params.pi[j]:.4f}", f"{series.type_weights[j]:.4f}") for j in range(cfg.types)])
    text += f"\nloglik {fit.loglik:.4f}  BIC {payload['bic']:.4f}  iterations {fit.iterations}"
    text += "\n" + _effect_summary("effects", _series_rows(series))
    return payload, rows, cols, text


def cmd_select_types(cfg):
    ds = _load(cfg)
    sel = select_num_types(ds, cfg.lag, cfg.max_types, cfg.schedule, cfg.seed, cfg.eps, cfg.workers)
    payload = sel.to_dict()
    cols = ["J", "loglik", "n_params", "bic", "converged"]
    text = _table(f"BIC by number of types (chosen J = {sel.chosen})", cols,
                  [(r["J"], f"{r['loglik']:.4f}", r["n_params"], f"{r['bic']:.4f}", r["converged"])
                   for r in sel.table])
    return payload, sel.table, cols, text


BAND_COLUMNS = ["series", "period", "category", "estimate", "se", "pw_lo", "pw_hi", "unif_lo", "unif_hi",
                "crit_value"]


def cmd_bootstrap(cfg):
    ds = _load(cfg)
    bcfg = cfg.bootstrap_config()
    if cfg.cluster and ds.cluster_id is None:
        raise DataError("--cluster needs a cluster column in the input")
    point = point_estimate(ds, bcfg, cfg.seed, cfg.workers)
    draws = run_bootstrap(ds, bcfg, cfg.bootstrap_B, cfg.seed, cfg.workers, point)
    fams = series_bands(draws, cfg.alpha)
    rows = [r for b in fams for r in b.rows()]
    gaps = draws.pi_gaps()
    payload = {
        "B": draws.B, "failures": draws.failures, "alpha": cfg.alpha, "seed": draws.seed,
        "series": [{"name": b.labels[0][0], "crit_value": b.crit_value} for b in fams],
        "bands": rows,
        "pi_gap": None if gaps.size == 0 else {"min": float(gaps.min()), "median": float(np.median(gaps))},
    }
    draw_cols = ["replicate"] + [f"{s}:{t}:{k}" for s, t, k in draws.labels]
    draw_rows = [{"replicate": b, **{c: float(v) for c, v in zip(draw_cols[1:], row)}}
                 for b, row in enumerate(draws.draws)]
    text = _table(f"bootstrap bands (B={draws.B}, failures={draws.failures})",
                  ["series", "t", "category", "estimate", "se", "uniform band"],
                  [(r["series"], r["period"], r["category"], f"{r['estimate']:.4f}", f"{r['se']:.4f}",
                    f"[{r['unif_lo']:.4f}, {r['unif_hi']:.4f}]") for r in rows])
    return payload, rows, BAND_COLUMNS, text, {"bootstrap_draws.csv": (draw_rows, draw_cols)}


PRETEST_COLUMNS = ["type", "period", "from", "to", "p_treated", "p_control", "difference", "n_treated",
                   "n_control"]


def cmd_pretest(cfg):
    ds = _load(cfg)
    if cfg.types == 1:
        report = pre_transition_differences(ds)
        if cfg.bands:
            report = pretrend_bands(ds, report, cfg.bootstrap_B, cfg.seed, cfg.alpha, cfg.cluster)
    else:
        report = type_pre_transitions(ds, _fit(cfg, ds).posteriors)
    rows = report.rows()
    cols = PRETEST_COLUMNS + (["lower", "upper"] if report.lower is not None else [])
    payload = {"insufficient": report.insufficient, "flags": report.flags,
               "max_abs_difference": None if report.insufficient else report.max_abs_difference(), "cells": rows}
    if report.insufficient:
        text = "pretest: fewer than two pre-treatment periods, no transitions to compare"
    else:
        text = _table("pre-period transition differences (treated - control)",
                      ["type", "t", "from", "to", "difference"],
                      [(r["type"], r["period"], r["from"], r["to"], f"{r['difference']:.4f}") for r in rows])
    return payload, rows, cols, text


def cmd_placebo(cfg):
    ds = _load(cfg)
    series = placebo_att(ds, cfg.lag, cfg.empty_cell)
    rows = _series_rows(series, "placebo")
    return series.to_dict(), rows, ["series", "period", "category", "effect"], _effect_summary("placebo", rows)


FLOW_COLUMNS = ["type", "period", "channel", "direction", "effect"]


def _flow_rows(f, tag):
    return [{"type": tag, "period": f.period, "channel": ch, "direction": d, "effect": v}
            for d, ch, v in f.rows()]


def cmd_flows(cfg):
    ds = _load(cfg)
    labels = ds.alphabet.labels
    k = ds.K - 1 if cfg.focal is None else ds.alphabet.index_of(cfg.focal)
    t = ds.T0 + 1 if cfg.period is None else cfg.period
    if cfg.types == 1:
        decs = [("all", flow_decomposition(ds, k, t, cfg.empty_cell), 1.0)]
    else:
        post = _fit(cfg, ds).posteriors
        from .mixture_effects import type_weights
        w = type_weights(ds, post)
        decs = [(str(j + 1), type_flow_decomposition(ds, post, j, k, t, cfg.empty_cell), float(w[j]))
                for j in range(cfg.types)]
    rows = [r for tag, f, _ in decs for r in _flow_rows(f, tag)]
    payload = {"focal": labels[k], "period": t, "types": [
        {"type": tag, "weight": w, "effect": f.effect, "net": f.net, "residual": f.residual,
         "inflow": {labels[y]: float(f.inflow[y]) for y in range(ds.K) if y != k},
         "outflow": {labels[y]: float(f.outflow[y]) for y in range(ds.K) if y != k}}
        for tag, f, w in decs]}
    text = _table(f"flows into and out of {labels[k]} at t={t}", ["type", "direction", "channel", "effect"],
                  [(r["type"], r["direction"], r["channel"], f"{r['effect']:.4f}") for r in rows])
    return payload, rows, FLOW_COLUMNS, text


STAGGERED_COLUMNS = ["g", "t", "category", "att", "n_treated", "n_control", "mode"]


def cmd_staggered(cfg):
    ds = _load(cfg)
    table = estimate_staggered(ds, cfg.lag, cfg.mode, cfg.empty_cell)
    rows = table.rows()
    text = _table(f"cohort ATTs (mode={cfg.mode})", ["g", "t", "category", "att"],
                  [(r["g"], r["t"], r["category"], f"{r['att']:.4f}") for r in rows])
    return table.to_dict(), rows, STAGGERED_COLUMNS, text


def cmd_simulate(cfg):
    if not cfg.spec:
        raise UsageError("--spec is required")
    try:
        spec = load_spec(cfg.spec)
    except FileNotFoundError:
        raise UsageError(f"spec not found: {cfg.spec}") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"invalid spec {cfg.spec}: {exc}") from None
    if isinstance(spec, DgpSpec):
        ds = simulate(spec, cfg.n, cfg.seed, cfg.workers).dataset
    else:
        ds = simulate_staggered(spec, cfg.n, cfg.seed, cfg.workers)
    out = Path(cfg.out if cfg.out != _DEFAULTS.out else "panel.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_panel_csv(ds, out)
    return None, None, None, f"wrote {ds.n} units x {ds.T} periods to {out}"


COMMANDS = {
    "validate": cmd_validate, "did": cmd_did, "att": cmd_att, "mixture": cmd_mixture,
    "select-types": cmd_select_types, "bootstrap": cmd_bootstrap, "pretest": cmd_pretest,
    "placebo": cmd_placebo, "flows": cmd_flows, "staggered": cmd_staggered, "simulate": cmd_simulate,
}


def run(argv=None, environ=None, stdout=None) -> int:
    """Execute one CLI invocation and return its exit code."""
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        try:
            ns = parser.parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        if ns.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(SUBCOMMANDS))
        cfg = resolve_config(ns, environ)
        result = COMMANDS[ns.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"estimation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    payload, rows, cols, text = result[:4]
    extra = result[4] if len(result) > 4 else None
    if payload is not None:
        emit_report(ns.command, payload, cfg.out, rows, cols, extra)
    print(text, file=stdout)
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
