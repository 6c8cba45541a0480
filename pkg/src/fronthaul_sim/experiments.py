"""Experiment specs, canonical figure presets and sweep execution.

A spec is a JSON document. Powers are given in dB and converted to linear
scale here; backhaul capacities are in bits/s/Hz. Results are written as
CSV, one row per (sweep value, strategy), in sweep order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import multibs, ratecore, semicoherent
from .model import PowerSplit, SystemConfig
from .montecarlo import McConfig
from .optimizer import SearchSpec, SolverError
from .ratecore import AdaptiveNoise, RateReport, ScalarNoise

__all__ = [
    "AXES",
    "CSV_HEADER",
    "ExperimentSpec",
    "PRESETS",
    "Row",
    "SEED_ENV",
    "STRATEGIES",
    "Scenario",
    "SpecError",
    "evaluate_point",
    "format_rows",
    "parse_spec",
    "preset",
    "run_experiment",
    "spec_to_dict",
    "write_results",
]

STRATEGIES = ("noncoherent", "cutset", "cfe", "ecf_sep", "ecf_joint", "ecf_jac", "semi_const", "semi_select")
SINGLE_LINK_ONLY = frozenset({"noncoherent", "cutset", "semi_const", "semi_select"})
AXES = ("backhaul", "coherence", "power", "intercell", "rician")
SEED_ENV = "FRONTHAUL_SIM_SEED"
CSV_HEADER = (
    "sweep_axis",
    "sweep_value",
    "strategy",
    "rate",
    "se",
    "c_pilot",
    "c_data",
    "sigma_p2",
    "sigma_d2_or_mu",
    "p_pilot",
    "permutation",
    "trials",
    "seed",
    "wall_ms",
)
_MULTI_SCHEMES = {"ecf_sep": "separate", "ecf_joint": "joint", "ecf_jac": "adaptive"}


class SpecError(ValueError):
    """Invalid experiment spec; ``where`` names the offending field or line."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass(frozen=True)
class Scenario:
    nt_per_ms: tuple[int, ...] = (1,)
    nr_per_bs: tuple[int, ...] = (1,)
    coherence_len: int = 10
    power_db: float = 20.0
    backhaul: float = 6.0
    rician_k: float = 0.0
    intercell_gain: float = 1.0


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    scenario: Scenario
    strategies: tuple[str, ...]
    axis: str
    values: tuple[float, ...]
    trials: int = 10_000
    seed: int | None = None
    batch: int = 10_000
    optimize_power: bool = True
    grid_points: int = 64
    refine_iters: int = 40
    power_grid_points: int = 16
    power_refine_iters: int = 30
    output: str | None = None

    @property
    def multi(self) -> bool:
        return len(self.scenario.nr_per_bs) > 1 or len(self.scenario.nt_per_ms) > 1


@dataclass(frozen=True)
class Row:
    axis: str
    value: float
    strategy: str
    report: RateReport
    wall_ms: float


# --------------------------------------------------------------------------
# Parsing and validation


def _require(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise SpecError(where, message)


def _number(raw: Any, where: str, integer: bool = False, minimum: float | None = None) -> float:
    ok = isinstance(raw, (int, float)) and not isinstance(raw, bool) and math.isfinite(raw)
    _require(ok, where, "expected a finite number")
    if integer:
        _require(float(raw).is_integer(), where, "expected an integer")
        raw = int(raw)
    if minimum is not None:
        _require(raw >= minimum, where, f"must be >= {minimum}")
    return raw


def _counts(raw: Any, where: str) -> tuple[int, ...]:
    if isinstance(raw, int) and not isinstance(raw, bool):
        raw = [raw]
    _require(isinstance(raw, list) and len(raw) > 0, where, "expected a non-empty list of antenna counts")
    return tuple(int(_number(v, f"{where}[{i}]", integer=True, minimum=1)) for i, v in enumerate(raw))


def _section(doc: dict, key: str) -> dict:
    sec = doc.get(key, {})
    _require(isinstance(sec, dict), key, "expected an object")
    return sec


def _unknown(section: dict, allowed: set[str], prefix: str) -> None:
    for key in section:
        _require(key in allowed, f"{prefix}{key}", "unknown field")


def parse_spec(text: str | dict) -> ExperimentSpec:
    """Parse and validate a JSON spec, raising :class:`SpecError` with the failing location."""
    if isinstance(text, str):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from None
    else:
        doc = text
    _require(isinstance(doc, dict), "spec", "top level must be an object")
    _unknown(doc, {"name", "scenario", "strategies", "sweep", "mc", "optimize_power", "search", "output"}, "")

    sc = _section(doc, "scenario")
    _unknown(sc, {f.name for f in Scenario.__dataclass_fields__.values()} | {"train_len"}, "scenario.")
    scenario = Scenario(
        nt_per_ms=_counts(sc.get("nt_per_ms", [1]), "scenario.nt_per_ms"),
        nr_per_bs=_counts(sc.get("nr_per_bs", [1]), "scenario.nr_per_bs"),
        coherence_len=int(_number(sc.get("coherence_len", 10), "scenario.coherence_len", integer=True, minimum=1)),
        power_db=float(_number(sc.get("power_db", 20.0), "scenario.power_db")),
        backhaul=float(_number(sc.get("backhaul", 6.0), "scenario.backhaul", minimum=0)),
        rician_k=float(_number(sc.get("rician_k", 0.0), "scenario.rician_k", minimum=0)),
        intercell_gain=float(_number(sc.get("intercell_gain", 1.0), "scenario.intercell_gain", minimum=0)),
    )
    nt = sum(scenario.nt_per_ms)
    if "train_len" in sc:
        _require(sc["train_len"] == nt, "scenario.train_len", f"training length is fixed to the number of transmit antennas ({nt})")

    strategies = doc.get("strategies")
    _require(isinstance(strategies, list) and len(strategies) > 0, "strategies", "expected a non-empty list")
    for i, s in enumerate(strategies):
        _require(s in STRATEGIES, f"strategies[{i}]", f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
    _require(len(set(strategies)) == len(strategies), "strategies", "duplicate entries")

    sweep = doc.get("sweep")
    _require(isinstance(sweep, dict), "sweep", "expected an object with 'axis' and 'values'")
    _unknown(sweep, {"axis", "values"}, "sweep.")
    axis = sweep.get("axis")
    _require(axis in AXES, "sweep.axis", f"expected one of {', '.join(AXES)}")
    raw_values = sweep.get("values")
    _require(isinstance(raw_values, list) and len(raw_values) > 0, "sweep.values", "expected a non-empty list")
    values = tuple(_check_value(axis, v, f"sweep.values[{i}]", nt) for i, v in enumerate(raw_values))

    mc = _section(doc, "mc")
    _unknown(mc, {"trials", "seed", "batch"}, "mc.")
    seed = mc.get("seed")
    if seed is not None:
        seed = int(_number(seed, "mc.seed", integer=True, minimum=0))
    search = _section(doc, "search")
    _unknown(search, {"grid_points", "refine_iters", "power_grid_points", "power_refine_iters"}, "search.")
    optimize = doc.get("optimize_power", True)
    _require(isinstance(optimize, bool), "optimize_power", "expected true or false")
    output = doc.get("output")
    _require(output is None or isinstance(output, str), "output", "expected a path string")
    name = doc.get("name", "experiment")
    _require(isinstance(name, str), "name", "expected a string")

    spec = ExperimentSpec(
        name=name,
        scenario=scenario,
        strategies=tuple(strategies),
        axis=axis,
        values=values,
        trials=int(_number(mc.get("trials", 10_000), "mc.trials", integer=True, minimum=1)),
        seed=seed,
        batch=int(_number(mc.get("batch", 10_000), "mc.batch", integer=True, minimum=1)),
        optimize_power=optimize,
        grid_points=int(_number(search.get("grid_points", 64), "search.grid_points", integer=True, minimum=2)),
        refine_iters=int(_number(search.get("refine_iters", 40), "search.refine_iters", integer=True, minimum=0)),
        power_grid_points=int(_number(search.get("power_grid_points", 16), "search.power_grid_points", integer=True, minimum=2)),
        power_refine_iters=int(_number(search.get("power_refine_iters", 30), "search.power_refine_iters", integer=True, minimum=0)),
        output=output,
    )
    _check_compatibility(spec)
    return spec


def _check_value(axis: str, raw: Any, where: str, nt: int) -> float:
    if axis == "coherence":
        return int(_number(raw, where, integer=True, minimum=1))
    if axis == "power":
        return float(_number(raw, where))
    return float(_number(raw, where, minimum=0))


def _check_compatibility(spec: ExperimentSpec) -> None:
    sc = spec.scenario
    if spec.multi:
        for i, s in enumerate(spec.strategies):
            _require(s not in SINGLE_LINK_ONLY, f"strategies[{i}]", f"{s} needs a single MS and BS")
    elif {"noncoherent", "cutset"} & set(spec.strategies):
        _require(sc.nt_per_ms == (1,) and sc.nr_per_bs == (1,), "scenario", "the non-coherent baseline needs single-antenna terminals")
    if spec.axis == "intercell":
        _require(spec.multi, "sweep.axis", "an inter-cell sweep needs several BSs and MSs")
    nt = sum(sc.nt_per_ms)
    coherent = [s for s in spec.strategies if s not in ("noncoherent", "cutset")]
    for i, point in enumerate(spec.values):
        cfg = _config(spec, point)
        if coherent:
            _require(cfg.coherence_len >= nt, f"sweep.values[{i}]" if spec.axis == "coherence" else "scenario.coherence_len",
                     f"coherent schemes need at least {nt} training symbols per block")
        if "semi_select" in spec.strategies:
            _require(cfg.coherence_len * cfg.backhaul[0] > 1.0, f"sweep.values[{i}]" if spec.axis in ("backhaul", "coherence") else "scenario.backhaul",
                     "selective weights need C > 1/T")


# --------------------------------------------------------------------------
# Serialisation


def spec_to_dict(spec: ExperimentSpec) -> dict:
    sc = asdict(spec.scenario)
    sc["nt_per_ms"] = list(sc["nt_per_ms"])
    sc["nr_per_bs"] = list(sc["nr_per_bs"])
    out = {
        "name": spec.name,
        "scenario": sc,
        "strategies": list(spec.strategies),
        "sweep": {"axis": spec.axis, "values": list(spec.values)},
        "mc": {"trials": spec.trials, "seed": spec.seed, "batch": spec.batch},
        "optimize_power": spec.optimize_power,
        "search": {
            "grid_points": spec.grid_points,
            "refine_iters": spec.refine_iters,
            "power_grid_points": spec.power_grid_points,
            "power_refine_iters": spec.power_refine_iters,
        },
    }
    if spec.output is not None:
        out["output"] = spec.output
    return out


def _preset_dict(name, scenario, strategies, axis, values, trials, search=None) -> dict:
    doc = {
        "name": name,
        "scenario": scenario,
        "strategies": strategies,
        "sweep": {"axis": axis, "values": values},
        "mc": {"trials": trials, "seed": None, "batch": 10_000},
        "optimize_power": True,
    }
    if search:
        doc["search"] = search
    return doc


_SINGLE = {"nt_per_ms": [1], "nr_per_bs": [1], "coherence_len": 10, "power_db": 20.0, "backhaul": 6.0, "rician_k": 0.0, "intercell_gain": 1.0}
_MULTI = {"nt_per_ms": [2, 2], "nr_per_bs": [2, 2], "coherence_len": 10, "power_db": 20.0, "backhaul": 6.0, "rician_k": 0.0, "intercell_gain": 1.0}
_MULTI_STRATEGIES = ["cfe", "ecf_sep", "ecf_joint", "ecf_jac"]
_MULTI_SEARCH = {"grid_points": 16, "refine_iters": 20, "power_grid_points": 8, "power_refine_iters": 12}

PRESETS: dict[str, dict] = {
    "fig2": _preset_dict("fig2", _SINGLE, list(STRATEGIES), "backhaul", [float(c) for c in range(1, 11)], 100_000),
    "fig3": _preset_dict("fig3", _SINGLE, list(STRATEGIES), "coherence", [1, 2, 5, 10, 20, 50], 100_000),
    "fig4": _preset_dict("fig4", _MULTI, _MULTI_STRATEGIES, "power", [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0], 10_000, _MULTI_SEARCH),
    "fig5": _preset_dict("fig5", _MULTI, _MULTI_STRATEGIES, "intercell", [round(0.1 * k, 1) for k in range(1, 11)], 10_000, _MULTI_SEARCH),
    "fig6": _preset_dict("fig6", {**_MULTI, "coherence_len": 20}, _MULTI_STRATEGIES, "rician", [0.0, 1.0, 2.0, 5.0, 10.0, 20.0], 10_000, _MULTI_SEARCH),
}


def preset(name: str) -> ExperimentSpec:
    if name not in PRESETS:
        raise SpecError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return parse_spec(json.loads(json.dumps(PRESETS[name])))


# --------------------------------------------------------------------------
# Evaluation


def _config(spec: ExperimentSpec, value: float) -> SystemConfig:
    sc = spec.scenario
    params = {
        "coherence_len": sc.coherence_len,
        "power": 10.0 ** (sc.power_db / 10.0),
        "backhaul": sc.backhaul,
        "rician_k": sc.rician_k,
        "intercell_gain": sc.intercell_gain,
    }
    key = {"backhaul": "backhaul", "coherence": "coherence_len", "rician": "rician_k", "intercell": "intercell_gain"}.get(spec.axis)
    if spec.axis == "power":
        params["power"] = 10.0 ** (value / 10.0)
    else:
        params[key] = int(value) if spec.axis == "coherence" else value
    n_bs, n_ms = len(sc.nr_per_bs), len(sc.nt_per_ms)
    gains = np.full((n_bs, n_ms), params.pop("intercell_gain"))
    for j in range(min(n_bs, n_ms)):
        gains[j, j] = 1.0
    nt = sum(sc.nt_per_ms)
    return SystemConfig(
        nt_per_ms=sc.nt_per_ms,
        nr_per_bs=sc.nr_per_bs,
        train_len=min(nt, params["coherence_len"]),
        gains=gains,
        **params,
    )


def _strategy_fn(spec: ExperimentSpec, strategy: str, cfg: SystemConfig) -> Callable[[PowerSplit, McConfig], RateReport]:
    search = SearchSpec(0.0, 1.0, spec.grid_points, spec.refine_iters)
    if strategy in _MULTI_SCHEMES and cfg.n_bs > 1:
        scheme = _MULTI_SCHEMES[strategy]
        return lambda split, mc: multibs.greedy_order(cfg, split, mc, scheme, search).report(scheme, split, mc)
    single = {
        "ecf_sep": ratecore.ecf_separate_rate,
        "ecf_joint": ratecore.ecf_joint_rate,
        "ecf_jac": ratecore.ecf_joint_adaptive_rate,
        "cfe": ratecore.cfe_rate,
    }
    if strategy in single:
        fn = single[strategy]
        return lambda split, mc: fn(cfg, split, mc, search=search)
    semi = {"semi_const": semicoherent.rate_constant_weights, "semi_select": semicoherent.rate_selective_weights}
    fn = semi[strategy]
    return lambda split, mc: fn(cfg, split, mc)


def evaluate_point(spec: ExperimentSpec, value: float, strategy: str, seed: int, keep_samples: bool = False) -> Row:
    """Rate of one strategy at one sweep value.

    Per-trial samples are dropped unless ``keep_samples`` is set, which keeps
    worker results small.
    """
    start = time.perf_counter()
    cfg = _config(spec, value)
    mc = McConfig(spec.trials, seed, spec.batch)
    try:
        if strategy in ("noncoherent", "cutset"):
            cfg = cfg.replace(train_len=0)
            fn = semicoherent.noncoherent_rate if strategy == "noncoherent" else semicoherent.cutset_bound
            report = fn(cfg, mc)
        else:
            evaluate = _strategy_fn(spec, strategy, cfg)
            if spec.optimize_power:
                power = SearchSpec(1e-3, 1.0 - 1e-3, spec.power_grid_points, spec.power_refine_iters, 1e-4)
                report = ratecore.best_power_split(lambda split: evaluate(split, mc), cfg, power)
            else:
                report = evaluate(PowerSplit.uniform(cfg), mc)
    except SolverError as exc:
        raise SolverError(f"strategy {strategy} at {spec.axis}={value:g}: {exc}") from None
    if not keep_samples:
        report = replace(report, samples=None)
    return Row(spec.axis, value, strategy, report, 1e3 * (time.perf_counter() - start))


def _evaluate_task(args) -> Row:
    return evaluate_point(*args)


def resolve_seed(cli_seed: int | None, spec: ExperimentSpec) -> int:
    """CLI flag, then the experiment file, then the environment, then 0."""
    if cli_seed is not None:
        return cli_seed
    if spec.seed is not None:
        return spec.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise SpecError(SEED_ENV, f"not an integer: {env!r}") from None
    return 0


def run_experiment(spec: ExperimentSpec, seed: int, jobs: int = 1) -> list[Row]:
    """Evaluate every (sweep value, strategy) pair; rows come back in sweep order."""
    tasks = [(spec, v, s, seed) for v in spec.values for s in spec.strategies]
    if jobs <= 1:
        return [evaluate_point(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_evaluate_task, tasks))


# --------------------------------------------------------------------------
# Output


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _joined(values) -> str:
    return ";".join(_fmt(v) for v in values)


def _noise_value(noise) -> float:
    if isinstance(noise, ScalarNoise):
        return noise.variance
    if isinstance(noise, AdaptiveNoise):
        return noise.mu
    return math.nan


def row_fields(row: Row, timing: bool = False) -> list[str]:
    rep = row.report
    params = rep.params
    split = rep.power_split
    perm = "" if rep.permutation is None else ";".join(str(j + 1) for j in rep.permutation)
    return [
        row.axis,
        _fmt(row.value),
        row.strategy,
        _fmt(rep.sum_rate),
        _fmt(rep.se),
        _joined(s.c_pilot for s in rep.split),
        _joined(s.c_data for s in rep.split),
        "" if params is None else _joined(params.csi_noise),
        "" if params is None else _joined(_noise_value(n) for n in params.data_noise),
        "" if split is None else _fmt(split.p_pilot),
        perm,
        str(rep.trials),
        str(rep.seed),
        f"{row.wall_ms:.1f}" if timing else "",
    ]


def format_rows(rows: list[Row], timing: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row_fields(row, timing))
    return buf.getvalue()


def write_results(rows: list[Row], spec: ExperimentSpec, seed: int, path: str | Path, timing: bool = False) -> Path:
    """Write the CSV and a ``.spec.json`` sidecar with the resolved spec; returns the sidecar path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_rows(rows, timing))
    resolved = spec_to_dict(replace(spec, seed=seed))
    sidecar = path.with_suffix(".spec.json")
    sidecar.write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    return sidecar
