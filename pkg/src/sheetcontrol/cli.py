"""``sheetcontrol <experiment> [options]``: run one experiment and write its artifacts.

Every experiment writes ``params.json`` (the resolved configuration) and
``results.csv`` (one row per metric) into ``--out``.  Exit status is 0 when
every gated metric passes and 1 on a failed metric or numerical failure;
usage errors exit with 2.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__, acceptance, control
from .grid import Field2D, GridSpec, sample_sheet
from .io import write_node_csv, write_params_json, write_rows_csv

EXPERIMENTS = ("sheet-check", "isometry", "ibp", "positivity", "negativity", "lq", "harvest", "ml", "r0")

# per-experiment defaults; flags and the config file override these
DEFAULTS = {
    "sheet-check": dict(grid_nt=16, grid_nx=16, paths=10_000, seed=20240, T=1.0, X=1.0),
    "isometry": dict(grid_nt=64, grid_nx=64, paths=10_000, seed=20241, T=1.0, X=1.0),
    "ibp": dict(grid_nt=32, grid_nx=32, paths=10_000, seed=20243, T=1.0, X=1.0,
                alpha0=0.5, beta0=0.5, y0=1.0),
    "positivity": dict(eta=3.0, y0=1.0),
    "negativity": dict(grid_nt=64, grid_nx=64, paths=10_000, seed=20249, T=1.0, X=1.0,
                       alpha0=0.0, beta0=1.0, y0=1.0),
    "lq": dict(grid_nt=64, paths=10_000, seed=20248, T=0.5, theta=1.0, beta0=1.0, X=None),
    "harvest": dict(grid_nt=16, grid_nx=16, T=1.0, X=1.0, theta=1.0, alpha0=0.1, beta0=0.5, y0=1.0),
    "ml": dict(grid_nt=32, grid_nx=32, T=1.0, X=1.0, theta=1.0, beta0=0.0, y0=1.0,
               gamma=0.5, max_sweeps=200, tol=1e-6),
    "r0": dict(tol=1e-3),
}

KEYS = {
    "grid_nt": int, "grid_nx": int, "paths": int, "seed": int, "T": float, "X": float,
    "theta": float, "alpha0": float, "beta0": float, "y0": float, "tol": float, "eta": float,
    "gamma": float, "max_sweeps": int, "out": str,
}


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    values: dict
    out: Path

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)


def _coerce(key: str, value):
    if key not in KEYS:
        raise UsageError(f"unknown configuration key {key!r}")
    kind = KEYS[key]
    if value is None:
        return None
    try:
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise UsageError(f"{key} must be {kind.__name__}, got {value!r}") from None


def _validate(v: dict) -> None:
    for key in ("grid_nt", "grid_nx", "paths", "max_sweeps"):
        if v.get(key) is not None and v[key] < 1:
            raise UsageError(f"{key} must be >= 1")
    if v.get("paths") is not None and v["paths"] < 2:
        raise UsageError("paths must be >= 2")
    for key in ("T", "X", "tol"):
        if v.get(key) is not None and not (v[key] > 0 and math.isfinite(v[key])):
            raise UsageError(f"{key} must be positive")
    if v.get("seed") is not None and not 0 <= v["seed"] < 2 ** 64:
        raise UsageError("seed must be a 64-bit unsigned integer")
    if v.get("gamma") is not None and not 0 < v["gamma"] <= 1:
        raise UsageError("gamma must lie in (0, 1]")


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    values = dict(DEFAULTS[args.experiment])
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in data.items():
            key = key.replace("-", "_")
            if key == "experiment":
                continue
            values[key] = _coerce(key, value)
    for key in KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = _coerce(key, flag)
    out = values.pop("out", None) or f"runs/{args.experiment}"
    _validate(values)
    if args.experiment == "sheet-check":
        for key in ("grid_nt", "grid_nx"):
            if values.get(key) is not None and values[key] % 8:
                raise UsageError(f"sheet-check probes eighths of the domain; {key} must be a multiple of 8")
    return ExperimentConfig(args.experiment, values, Path(out))


# ----------------------------------------------------------------------------
# experiments: each returns rows and writes any extra artifacts into cfg.out


def _grid(cfg: ExperimentConfig) -> GridSpec:
    nt = cfg["grid_nt"]
    return GridSpec(cfg["T"], cfg["X"], nt, cfg.get("grid_nx") or nt)


def _exp_sheet_check(cfg):
    res = acceptance.check_2(cfg["paths"], cfg["seed"], cfg["grid_nt"], cfg["grid_nx"], cfg["T"], cfg["X"])
    sample_sheet(_grid(cfg), cfg["seed"], 0).to_csv(cfg.out / "path_0.csv")
    return res.rows


def _exp_isometry(cfg):
    return acceptance.check_3(cfg["paths"], cfg["seed"], cfg["grid_nt"], cfg["grid_nx"], cfg["T"], cfg["X"]).rows


def _exp_ibp(cfg):
    return acceptance.check_5(cfg["paths"], cfg["seed"], cfg["grid_nt"], cfg["grid_nx"], cfg["alpha0"],
                              cfg["beta0"], cfg["T"], cfg["X"], cfg["y0"]).rows


def _exp_positivity(cfg):
    rows = []
    probe = acceptance.positivity_rows(rows, cfg["eta"], cfg["y0"])
    probe.to_csv(cfg.out / "probe.csv")
    return rows


def _exp_negativity(cfg):
    rows = []
    acceptance.negativity_rows(rows, cfg["alpha0"], cfg["beta0"], cfg["y0"], _grid(cfg),
                               cfg["paths"], cfg["seed"])
    return rows


def _exp_lq(cfg):
    rows = []
    rep = acceptance.lq_rows(rows, cfg["T"], cfg["theta"], cfg.get("X"), cfg["beta0"], cfg["paths"],
                             cfg["seed"], n_mc=cfg["grid_nt"], riccati=True)
    spec = control.LQSpec(cfg["T"], rep.X, cfg["theta"], beta=cfg["beta0"])
    lam = Field2D.from_function(rep.grid_mc, lambda t, x: control.lq_lambda_closed_form(spec, t, x))
    write_node_csv(cfg.out / "field_lambda.csv", rep.grid_mc, {"value": lam.values})
    return rows


def _exp_harvest(cfg):
    rows = []
    spec = control.HarvestSpec(cfg["alpha0"], cfg["beta0"], cfg["theta"], cfg["T"], cfg["X"], cfg["y0"])
    u, adj = acceptance.harvest_rows(rows, spec, cfg["grid_nt"], cfg["grid_nx"])
    for name, f in (("u", u), ("p", adj.p), ("L", adj.L)):
        write_node_csv(cfg.out / f"field_{name}.csv", u.grid, {"value": f.values})
    adj.to_csv(cfg.out / "adjoint.csv")
    return rows


def _exp_ml(cfg):
    rows = []
    spec = control.MLSpec(beta0=cfg["beta0"], theta=cfg["theta"], T=cfg["T"], X=cfg["X"], y0=cfg["y0"],
                          gamma=cfg["gamma"], max_sweeps=cfg["max_sweeps"], tol=cfg["tol"])
    res = acceptance.ml_rows(rows, spec, cfg["grid_nt"], cfg["grid_nx"], diagnose=False)
    for name, f in (("u", res.u), ("p", res.p), ("L", res.L), ("Y", res.Y)):
        write_node_csv(cfg.out / f"field_{name}.csv", res.u.grid, {"value": f.values})
    return rows


def _exp_r0(cfg):
    return acceptance.check_1(tol=cfg["tol"]).rows


RUNNERS = {
    "sheet-check": _exp_sheet_check,
    "isometry": _exp_isometry,
    "ibp": _exp_ibp,
    "positivity": _exp_positivity,
    "negativity": _exp_negativity,
    "lq": _exp_lq,
    "harvest": _exp_harvest,
    "ml": _exp_ml,
    "r0": _exp_r0,
}

RESULT_HEADER = ["metric", "value", "standard_error", "target", "tolerance", "pass", "note"]


def _row_tuple(r, prefix=""):
    return (prefix + r.metric, r.value, r.standard_error, r.target, r.tolerance,
            r.passed if r.gating else None, r.note)


def write_results(path: Path, rows, prefix_of=None) -> None:
    """``results.csv`` without wall-clock rows, so reruns are byte-identical."""
    table = []
    for r in rows:
        if r.volatile:
            continue
        table.append(_row_tuple(r, prefix_of(r) if prefix_of else ""))
    write_rows_csv(path, RESULT_HEADER, table)


def run(cfg: ExperimentConfig, echo=print) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    params = {"experiment": cfg.experiment, "version": __version__,
              "seed_rule": "path k uses Philox(SeedSequence(seed, spawn_key=(k,)))"}
    params.update(cfg.values)
    write_params_json(cfg.out / "params.json", params)
    try:
        rows = RUNNERS[cfg.experiment](cfg)
    except (ArithmeticError, FloatingPointError) as exc:
        echo(f"numerical failure: {exc}")
        return 1
    write_results(cfg.out / "results.csv", rows)
    failed = [r for r in rows if r.gating and not r.passed]
    for r in rows:
        flag = "" if not r.gating else ("pass" if r.passed else "FAIL")
        echo(f"{r.metric:40s} {r.value: .10g} {flag}")
    if failed:
        echo("failing metric: " + ", ".join(r.metric for r in failed))
        return 1
    return 0


def selftest(out: Path | None = None, echo=print) -> int:
    results = acceptance.run_all(echo=echo)
    n_pass = sum(r.passed for r in results)
    echo(f"{n_pass}/{len(results)} criteria passed")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        rows, owner = [], {}
        for res in results:
            for r in res.rows:
                owner[id(r)] = f"c{res.number}:"
                rows.append(r)
        write_results(out / "results.csv", rows, prefix_of=lambda r: owner[id(r)])
    return 0 if n_pass == len(results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sheetcontrol", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("experiment", choices=EXPERIMENTS + ("selftest",))
    p.add_argument("--config", help="JSON file with configuration keys; flags win")
    p.add_argument("--grid-nt", dest="grid_nt", type=int)
    p.add_argument("--grid-nx", dest="grid_nx", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--T", dest="T", type=float)
    p.add_argument("--X", dest="X", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--alpha0", type=float)
    p.add_argument("--beta0", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--out", help="output directory (default runs/<experiment>)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.experiment == "selftest":
        return selftest(Path(args.out) if args.out else None)
    try:
        cfg = load_config(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except ValueError as exc:
        # domain violations surface as ValueError from the library
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
