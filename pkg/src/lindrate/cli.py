"""Command-line front end: ``run``, ``verify`` and ``sweep``.

Exit status is 0 on success, 2 when a verification fails and 1 on any
error. The environment variable ``LINDRATE_OUTPUT_DIR`` overrides the
output directory named in a config.
"""

from __future__ import annotations

import argparse
import inspect
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .config import ConfigError, RunConfig, get_field, load_config, validate_config, with_field
from .gas import GasParameters, InternalLevels, ScatteringAmplitude
from .integrator import (
    EvolutionConfig,
    IntegrationError,
    TimeSeries,
    evolve,
    integrate_linear,
    marginal_element,
)
from .oracles import ORACLES, GeometricFamily, evaluate_oracle, loglog_slope
from .scenarios import (
    FrictionSpec,
    KickSpec,
    PreparationSpec,
    build_bloch_boltzmann_generator,
    build_internal_coherence_generator,
    build_kick_coherence_ode,
    coherence_decay_curve,
    hermite_grid,
    lattice_rate_table,
    momentum_lattice,
    radial_grid,
    thermal_state,
    visibility_decay,
)
from .state import total_trace

ENV_OUTPUT = "LINDRATE_OUTPUT_DIR"
POWER_LAW_LEVEL = 2.0**-1.5


# -- running scenarios -------------------------------------------------------

@dataclass
class RunResult:
    series: TimeSeries
    invariants: dict
    closed_form: Callable[[np.ndarray], np.ndarray]
    oracle_params: dict = field(default_factory=dict)
    tau: Optional[float] = None
    rerun: Optional[Callable[[int], "RunResult"]] = None
    steps: Optional[int] = None


def _sigma(spec, n: int) -> np.ndarray:
    if spec is None or spec == "plus":
        v = np.ones(n) / math.sqrt(n)
        return np.outer(v, v).astype(complex)
    if spec == "ground":
        s = np.zeros((n, n), dtype=complex)
        s[0, 0] = 1.0
        return s
    if spec == "mixed":
        return np.eye(n, dtype=complex) / n
    a = np.asarray(spec, dtype=float)
    if a.ndim == 3:
        a = a[..., 0] + 1j * a[..., 1]
    if a.shape != (n, n):
        raise ConfigError(f"scenario.preparation.sigma: expected a {n} x {n} matrix")
    return a.astype(complex)


def _steps(integ: dict, t_end: float) -> int:
    if "steps" in integ:
        return int(integ["steps"])
    return max(1, int(round(t_end / float(integ["dt"]))))


def _friction_tau(fr: FrictionSpec, p_beta: float) -> Optional[float]:
    if fr.kind == "quadratic" and fr.a > 0:
        return 1.0 / (fr.a * p_beta**2)
    if fr.kind == "inverse_quadratic" and fr.b > 0:
        return p_beta**2 / (4.0 * fr.b)
    if fr.kind == "constant" and fr.eta > 0:
        return 1.0 / fr.eta
    return None


def _evolve_series(gen, state0, t_end, integ, observers):
    every = int(integ.get("invariant_check_every", 1))
    if integ.get("adaptive", False):
        cfg = EvolutionConfig(0.0, t_end, dt=integ.get("dt"), adaptive=True,
                              rtol=float(integ.get("rtol", 1e-8)), atol=float(integ.get("atol", 1e-10)),
                              observers=observers, invariant_check_every=every)
    else:
        cfg = EvolutionConfig(0.0, t_end, dt=t_end / _steps(integ, t_end), observers=observers,
                              invariant_check_every=every)
    series, final = evolve(gen, state0, cfg)
    return series, final


def _coherence_observers(state0, n):
    obs = {"trace": total_trace}
    if n >= 2:
        ref = marginal_element(0, 1)(state0)
        if ref != 0:
            get = marginal_element(0, 1)
            obs["coherence"] = lambda s: abs(get(s) / ref)
    return obs


def run_internal(cfg: RunConfig, steps_override: Optional[int] = None) -> RunResult:
    sc, integ = cfg.scenario, dict(cfg.integration)
    p_beta = float(sc["p_beta"])
    fr_s = sc["friction"]
    fr = {
        "constant": lambda: FrictionSpec.constant(float(fr_s["eta"])),
        "uniform": lambda: FrictionSpec.uniform(float(fr_s["eta"])),
        "quadratic": lambda: FrictionSpec.quadratic(float(fr_s["a"])),
        "inverse_quadratic": lambda: FrictionSpec.inverse_quadratic(float(fr_s["b"])),
    }[fr_s["kind"]]()
    g = sc.get("grid", {})
    points = int(g.get("points", 64))
    if g.get("kind", "radial") == "radial":
        grid = radial_grid(points, p_beta, float(g.get("cutoff", 4.5)))
    else:
        grid = hermite_grid(points, p_beta)
    tau = _friction_tau(fr, p_beta)
    if "t_end_tau" in integ:
        if tau is None:
            raise ConfigError("integration.t_end_tau: scenario has no natural time scale")
        t_end = float(integ["t_end_tau"]) * tau
    else:
        t_end = float(integ["t_end"])
    if steps_override is not None:
        integ.pop("dt", None)
        integ["steps"] = steps_override
        integ["adaptive"] = False
    sigma = _sigma(sc.get("preparation", {}).get("sigma"), fr.n)
    gen = build_internal_coherence_generator(fr, grid)
    state0 = thermal_state(grid, sigma, p_beta)
    series, _ = _evolve_series(gen, state0, t_end, integ, _coherence_observers(state0, fr.n))

    def closed(t):
        return coherence_decay_curve(fr, p_beta, t, grid=grid).values

    params = {"tau": tau} if tau is not None else {}
    if fr.kind == "constant":
        params = {"rate": fr.eta}
    steps = None if integ.get("adaptive", False) else _steps(integ, t_end)
    return RunResult(series, series.meta["invariants"], closed, params, tau,
                     rerun=lambda k: run_internal(cfg, k), steps=steps)


def _sample_times(integ: dict, t_end: float) -> np.ndarray:
    n = int(integ.get("samples", 201))
    if integ.get("spacing", "linear") == "log":
        t_min = float(integ["t_min"])
        if not t_min < t_end:
            raise ConfigError("integration.t_min: must be below t_end")
        return np.concatenate([[0.0], np.geomspace(t_min, t_end, n)])
    return np.linspace(0.0, t_end, n)


def run_kick(cfg: RunConfig, steps_override=None) -> RunResult:
    sc, integ = cfg.scenario, cfg.integration
    prep_s, kick_s = sc["preparation"], sc["kicks"]
    d = np.asarray(sc["separation"], dtype=float)
    params: dict[str, Any] = {}
    if prep_s["distribution"] == "geometric":
        fam = GeometricFamily(float(prep_s["a"]), float(prep_s["b"]), float(prep_s["lambda0"]))
        weights, rates = fam.weights(), fam.rates()
        sigmas = [float(kick_s["sigma"])] * rates.size
        params = {"a": fam.a, "b": fam.b, "lambda0": fam.lambda0}
        prep = PreparationSpec(distribution="geometric", geometric=fam, sigma=np.eye(1))
    else:
        weights = np.asarray(prep_s["weights"], dtype=float)
        rates = np.asarray(kick_s["rates"], dtype=float)
        sigmas = kick_s["sigmas"]
        prep = PreparationSpec(distribution="weights", weights=tuple(weights), sigma=np.eye(1))
    kicks = KickSpec.gaussian(rates, sigmas)
    A = build_kick_coherence_ode(d, kicks)
    decay = np.array([kicks.rates[r] * (1 - kicks.densities[r].phi(d)) for r in range(kicks.n)])
    params.setdefault("weights", weights.tolist())
    params["rates"] = np.real(decay).tolist()
    t_end = float(integ["t_end"]) if "t_end" in integ else float(integ["t_end_tau"]) / float(rates.max())
    times = _sample_times(integ, t_end)
    dt = float(integ["dt"]) if "dt" in integ else t_end / int(integ.get("steps", 1000))
    _, Y = integrate_linear(A, weights.astype(complex), times, dt=dt)
    vis = Y.sum(axis=1)
    if np.all(vis.imag == 0):
        vis = vis.real
    series = TimeSeries(times, {"visibility": vis})
    closed = lambda t: visibility_decay(prep, kicks, d, t).values
    inv = {"max_trace_drift": 0.0, "max_negativity": 0.0, "checks": 0}
    return RunResult(series, inv, closed, params, None)


def run_bloch(cfg: RunConfig, steps_override=None) -> RunResult:
    sc, integ = cfg.scenario, cfg.integration
    gas = GasParameters(**{k: float(sc["gas"][k]) for k in ("m", "M", "n_gas", "beta")})
    levels = InternalLevels(sc["levels"]["omega"])
    amp = ScatteringAmplitude.from_spec(dict(sc["amplitude"]), levels.n)
    g = sc["grid"]
    lattice = momentum_lattice(g["shape"], float(g["spacing"]), g.get("center", (0.0, 0.0, 0.0)))
    mt = float(g["max_transfer"]) if "max_transfer" in g else None
    table = lattice_rate_table(lattice, amp, levels, gas, int(g.get("order", 12)), mt)
    gen = build_bloch_boltzmann_generator(lattice, table, levels, mt)
    sigma = _sigma(sc.get("preparation", {}).get("sigma"), levels.n)
    state0 = thermal_state(lattice, sigma, gas.P_beta)
    if "t_end_tau" in integ:
        raise ConfigError("integration.t_end_tau: scenario has no natural time scale")
    series, _ = _evolve_series(gen, state0, float(integ["t_end"]), integ,
                               _coherence_observers(state0, levels.n))

    def closed(t):
        raise ConfigError("verify.oracle: no closed form for the lattice scenario")

    return RunResult(series, series.meta["invariants"], closed, {}, None)


RUNNERS = {"internal_coherence": run_internal, "kick_decoherence": run_kick, "bloch_boltzmann": run_bloch}


# -- verification ------------------------------------------------------------

def deviation_report(times, values, reference, tol: float, metric: str = "rel") -> dict:
    values = np.asarray(values)
    reference = np.asarray(reference)
    if values.shape != reference.shape:
        raise ValueError(f"length mismatch: {values.shape[0]} samples vs {reference.shape[0]}")
    absdev = np.abs(values - reference)
    denom = np.abs(reference)
    reldev = np.where(denom > 0, absdev / np.where(denom > 0, denom, 1.0), absdev)
    dev = reldev if metric == "rel" else absdev
    k = int(np.argmax(dev)) if dev.size else 0
    return {
        "max_abs_deviation": float(absdev.max(initial=0.0)),
        "max_rel_deviation": float(reldev.max(initial=0.0)),
        "metric": metric,
        "argmax_index": k,
        "argmax_time": float(np.asarray(times)[k]) if dev.size else None,
        "tol": tol,
        "passed": bool(dev.max(initial=0.0) <= tol),
    }


def _channel(series: TimeSeries, name: Optional[str]):
    if name is None:
        name = next(iter(series.channels))
    if name not in series.channels:
        raise KeyError(f"channel {name!r} not in series; have {sorted(series.channels)}")
    return name, np.asarray(series.channels[name])


def _features(series: TimeSeries, channel: str, result: RunResult, cfg: RunConfig) -> dict:
    out: dict[str, Any] = {}
    v = np.real(np.asarray(series.channels[channel]))
    t = series.times
    below = np.flatnonzero(v <= POWER_LAW_LEVEL)
    if below.size and below[0] > 0:
        k = below[0]
        t0, t1, v0, v1 = t[k - 1], t[k], v[k - 1], v[k]
        out["tau_crossing"] = float(t0 + (POWER_LAW_LEVEL - v0) * (t1 - t0) / (v1 - v0))
    if result.tau is not None:
        out["tau_expected"] = result.tau
    win = cfg.analysis.get("slope_window")
    if win:
        sel = (t >= win[0]) & (t <= win[1])
        if sel.sum() >= 2:
            out["loglog_slope"] = loglog_slope(t[sel], v[sel])
        if "a" in result.oracle_params and "b" in result.oracle_params:
            out["slope_expected"] = -result.oracle_params["a"] / result.oracle_params["b"]
    return out


def _order_check(cfg: RunConfig, result: RunResult, channel: str) -> dict:
    if result.rerun is None or result.steps is None:
        raise ConfigError("verify.order_check: needs a fixed-step evolution scenario")
    fine = result.rerun(2 * result.steps)
    errs = []
    for res in (result, fine):
        vals = np.asarray(res.series.channels[channel])
        errs.append(float(np.abs(vals - res.closed_form(res.series.times)).max()))
    ratio = errs[0] / errs[1] if errs[1] > 0 else math.inf
    return {"steps": [result.steps, 2 * result.steps], "max_error": errs, "ratio": ratio}


def execute(cfg: RunConfig, out_dir: Path, name: str) -> tuple[dict, int]:
    result = RUNNERS[cfg.kind](cfg)
    series = result.series
    chans = cfg.output.get("channels")
    if chans:
        missing = [c for c in chans if c not in series.channels]
        if missing:
            raise ConfigError(f"output.channels: unknown channels {missing}")
        series = TimeSeries(series.times, {c: series.channels[c] for c in chans}, series.meta)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    series.write_csv(csv_path)
    report: dict[str, Any] = {
        "config": cfg.raw,
        "scenario": cfg.kind,
        "invariants": result.invariants,
        "outputs": {"csv": str(csv_path)},
    }
    status = 0
    ver = cfg.verify
    channel = ver.get("channel") if ver else None
    channel, vals = _channel(result.series, channel)
    report["features"] = _features(result.series, channel, result, cfg)
    if ver:
        oracle = ver["oracle"]
        if oracle == "closed_form":
            ref = result.closed_form(result.series.times)
        else:
            params = {**result.oracle_params, **ver.get("params", {})}
            fn_params = {k: v for k, v in params.items()
                         if k in _oracle_param_names(oracle)}
            ref = evaluate_oracle(oracle, result.series.times, fn_params)
        rep = deviation_report(result.series.times, np.real(vals) if np.isrealobj(ref) else vals,
                               ref, float(ver["tol"]), ver.get("metric", "rel"))
        rep.update(oracle=oracle, channel=channel)
        report["verify"] = rep
        if ver.get("order_check", False):
            report["order_check"] = _order_check(cfg, result, channel)
        if not rep["passed"]:
            status = 2
    report_path = out_dir / f"{name}.json"
    report_path.write_text(json.dumps(report, indent=2, default=_json_default))
    report["outputs"]["report"] = str(report_path)
    return report, status


def _oracle_param_names(name: str) -> set:
    if name not in ORACLES:
        raise ConfigError(f"verify.oracle: unknown oracle {name!r}")
    return set(inspect.signature(ORACLES[name][0]).parameters) - {"t"}


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o).__name__)


def _output_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get(ENV_OUTPUT) or cfg.output.get("dir", "out"))


# -- subcommands -------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    report, status = execute(cfg, _output_dir(cfg), cfg.output.get("name", "run"))
    summary = {k: report[k] for k in ("invariants", "outputs") if k in report}
    if "verify" in report:
        summary["verify"] = report["verify"]
    if "order_check" in report:
        summary["order_check"] = report["order_check"]
    print(json.dumps(summary, indent=2, default=_json_default))
    return status


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        for part in _split_top(item):
            if "=" not in part:
                raise ValueError(f"parameter {part!r} is not key=value")
            k, v = part.split("=", 1)
            try:
                out[k.strip()] = json.loads(v)
            except json.JSONDecodeError as exc:
                raise ValueError(f"parameter {k!r}: cannot parse value {v!r}") from exc
    return out


def _split_top(s: str):
    """Split on commas outside brackets."""
    depth, cur, parts = 0, [], []
    for ch in s:
        depth += ch == "["
        depth -= ch == "]"
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return [p for p in parts if p.strip()]


def cmd_verify(args) -> int:
    series = TimeSeries.read_csv(args.csv)
    channel, vals = _channel(series, args.channel)
    if args.reference:
        other = TimeSeries.read_csv(args.reference)
        _, ref = _channel(other, args.channel or channel)
        if ref.shape != vals.shape:
            raise ValueError(f"length mismatch: {vals.size} samples vs {ref.size}")
        if not np.array_equal(other.times, series.times):
            raise ValueError("time grids differ")
        label = str(args.reference)
    else:
        if not args.oracle:
            raise ValueError("give --oracle or --reference")
        ref = evaluate_oracle(args.oracle, series.times, _parse_params(args.params))
        label = args.oracle
    rep = deviation_report(series.times, vals, ref, args.tol, args.metric)
    rep.update(oracle=label, channel=channel)
    print(json.dumps(rep, indent=2))
    return 0 if rep["passed"] else 2


def parse_range(text: str) -> np.ndarray:
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError as exc:
        raise ValueError(f"range {text!r} must be a:b:n") from exc
    if n < 1:
        raise ValueError("range count must be >= 1")
    return np.array([a]) if n == 1 else np.linspace(a, b, n)


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    current = get_field(base.raw, args.axis)
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise ConfigError(f"{args.axis}: sweep axis must be numeric")
    values = parse_range(args.range)
    if isinstance(current, int):
        if not np.all(values == np.round(values)):
            raise ConfigError(f"{args.axis}: integer field needs integer sweep values")
        values = [int(v) for v in values]
    else:
        values = [float(v) for v in values]
    out_dir = _output_dir(base)
    name = base.output.get("name", "run")
    runs, status = [], 0
    for k, v in enumerate(values):
        cfg = validate_config(with_field(base.raw, args.axis, v))
        report, st = execute(cfg, out_dir, name if len(values) == 1 else f"{name}_{k:03d}")
        status = max(status, st)
        entry = {"index": k, "value": v, "csv": report["outputs"]["csv"],
                 "features": report["features"], "invariants": report["invariants"]}
        if "verify" in report:
            entry["verify"] = report["verify"]
        runs.append(entry)
    agg = {"config": base.raw, "axis": args.axis, "values": values, "runs": runs}
    taus = [r["features"].get("tau_crossing") for r in runs]
    if all(t is not None for t in taus):
        agg["tau_crossing_times_value"] = [t * v for t, v in zip(taus, values)]
    (out_dir / f"{name}_sweep.json").write_text(json.dumps(agg, indent=2, default=_json_default))
    print(json.dumps({"runs": len(runs), "sweep": str(out_dir / f"{name}_sweep.json")}, indent=2))
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lindrate", description="Lindblad rate equation simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="compare a CSV channel with an oracle or reference CSV")
    v.add_argument("csv")
    v.add_argument("--oracle")
    v.add_argument("--reference")
    v.add_argument("--params", action="append", help="key=value pairs, values parsed as JSON")
    v.add_argument("--tol", type=float, required=True)
    v.add_argument("--channel")
    v.add_argument("--metric", choices=("rel", "abs"), default="rel")
    v.set_defaults(func=cmd_verify)
    s = sub.add_parser("sweep", help="run a config over a range of one numeric field")
    s.add_argument("config")
    s.add_argument("--axis", required=True, help="dotted field path, e.g. scenario.friction.a")
    s.add_argument("--range", required=True, help="a:b:n")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
