"""Run configuration: TOML documents with a versioned, checked schema.

Errors name the offending field by its dotted path, e.g.
``integration.dt: must be > 0``.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
SCENARIO_KINDS = ("internal_coherence", "kick_decoherence", "bloch_boltzmann")


class ConfigError(ValueError):
    pass


_MISSING = object()


def _get(d: dict, path: str, key: str, kind=None, default=_MISSING):
    full = f"{path}.{key}" if path else key
    if key not in d:
        if default is _MISSING:
            raise ConfigError(f"{full}: required field missing")
        return default
    v = d[key]
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{full}: expected a number, got {type(v).__name__}")
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{full}: expected an integer, got {type(v).__name__}")
        return v
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(f"{full}: expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def _positive(v, full):
    if not v > 0:
        raise ConfigError(f"{full}: must be > 0")
    return v


def _section(d: dict, path: str, key: str, required: bool = True) -> dict:
    full = f"{path}.{key}" if path else key
    if key not in d:
        if required:
            raise ConfigError(f"{full}: required section missing")
        return {}
    if not isinstance(d[key], dict):
        raise ConfigError(f"{full}: expected a table")
    return d[key]


def _numbers(v, full, positive=False):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{full}: expected a nonempty list of numbers")
    out = []
    for k, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{full}[{k}]: expected a number")
        if positive and not x > 0:
            raise ConfigError(f"{full}[{k}]: must be > 0")
        out.append(float(x))
    return out


@dataclass
class RunConfig:
    """Validated configuration; ``raw`` keeps the document as read."""

    raw: dict

    @property
    def scenario(self) -> dict:
        return self.raw["scenario"]

    @property
    def kind(self) -> str:
        return self.raw["scenario"]["kind"]

    @property
    def integration(self) -> dict:
        return self.raw.get("integration", {})

    @property
    def output(self) -> dict:
        return self.raw.get("output", {})

    @property
    def verify(self) -> dict:
        return self.raw.get("verify", {})

    @property
    def analysis(self) -> dict:
        return self.raw.get("analysis", {})


def validate_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a table at top level")
    ver = _get(raw, "", "schema_version", int)
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {ver}, expected {SCHEMA_VERSION}")
    sc = _section(raw, "", "scenario")
    kind = _get(sc, "scenario", "kind", str)
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"scenario.kind: unknown scenario {kind!r}, choose from {SCENARIO_KINDS}")
    {"internal_coherence": _check_internal, "kick_decoherence": _check_kick,
     "bloch_boltzmann": _check_bloch}[kind](sc)

    integ = _section(raw, "", "integration")
    has_end = "t_end" in integ
    has_tau = "t_end_tau" in integ
    if has_end == has_tau:
        raise ConfigError("integration.t_end: give exactly one of t_end and t_end_tau")
    key = "t_end" if has_end else "t_end_tau"
    _positive(_get(integ, "integration", key, float), f"integration.{key}")
    adaptive = _get(integ, "integration", "adaptive", bool, False)
    if "dt" in integ and "steps" in integ:
        raise ConfigError("integration.dt: give either dt or steps, not both")
    if "dt" in integ:
        _positive(_get(integ, "integration", "dt", float), "integration.dt")
    elif "steps" in integ:
        _positive(_get(integ, "integration", "steps", int), "integration.steps")
    elif not adaptive:
        raise ConfigError("integration.dt: fixed-step runs need dt or steps")
    for k in ("rtol", "atol"):
        if k in integ:
            _positive(_get(integ, "integration", k, float), f"integration.{k}")
    if "invariant_check_every" in integ:
        _positive(_get(integ, "integration", "invariant_check_every", int),
                  "integration.invariant_check_every")
    if "samples" in integ:
        _positive(_get(integ, "integration", "samples", int), "integration.samples")
    spacing = _get(integ, "integration", "spacing", str, "linear")
    if spacing not in ("linear", "log"):
        raise ConfigError("integration.spacing: must be 'linear' or 'log'")
    if spacing == "log":
        _positive(_get(integ, "integration", "t_min", float), "integration.t_min")

    out = _section(raw, "", "output", required=False)
    _get(out, "output", "dir", str, "out")
    _get(out, "output", "name", str, "run")
    if "channels" in out:
        ch = _get(out, "output", "channels", list)
        if not all(isinstance(c, str) for c in ch):
            raise ConfigError("output.channels: expected a list of channel names")

    ver_s = _section(raw, "", "verify", required=False)
    if ver_s:
        _get(ver_s, "verify", "oracle", str)
        tol = _get(ver_s, "verify", "tol", float)
        if tol < 0:
            raise ConfigError("verify.tol: must be >= 0")
        if _get(ver_s, "verify", "metric", str, "rel") not in ("rel", "abs"):
            raise ConfigError("verify.metric: must be 'rel' or 'abs'")
        _get(ver_s, "verify", "params", dict, {})
        _get(ver_s, "verify", "order_check", bool, False)

    an = _section(raw, "", "analysis", required=False)
    if "slope_window" in an:
        w = _numbers(an["slope_window"], "analysis.slope_window", positive=True)
        if len(w) != 2 or not w[1] > w[0]:
            raise ConfigError("analysis.slope_window: expected [t0, t1] with t1 > t0")
    return RunConfig(raw)


def _check_sigma(prep: dict, path: str):
    s = prep.get("sigma", "plus")
    if isinstance(s, str):
        if s not in ("plus", "ground", "mixed"):
            raise ConfigError(f"{path}.sigma: unknown named state {s!r}")
    elif not isinstance(s, list):
        raise ConfigError(f"{path}.sigma: expected a name or a matrix")


def _check_internal(sc: dict):
    _positive(_get(sc, "scenario", "p_beta", float), "scenario.p_beta")
    fr = _section(sc, "scenario", "friction")
    fk = _get(fr, "scenario.friction", "kind", str)
    need = {"constant": "eta", "uniform": "eta", "quadratic": "a", "inverse_quadratic": "b"}
    if fk not in need:
        raise ConfigError(f"scenario.friction.kind: unknown friction {fk!r}, choose from {sorted(need)}")
    v = _get(fr, "scenario.friction", need[fk], float)
    if v < 0:
        raise ConfigError(f"scenario.friction.{need[fk]}: must be >= 0")
    grid = _section(sc, "scenario", "grid", required=False)
    gk = _get(grid, "scenario.grid", "kind", str, "radial")
    if gk not in ("radial", "hermite"):
        raise ConfigError(f"scenario.grid.kind: unknown grid {gk!r}")
    _positive(_get(grid, "scenario.grid", "points", int, 64), "scenario.grid.points")
    _positive(_get(grid, "scenario.grid", "cutoff", float, 4.5), "scenario.grid.cutoff")
    _check_sigma(_section(sc, "scenario", "preparation", required=False), "scenario.preparation")


def _check_kick(sc: dict):
    d = _numbers(_get(sc, "scenario", "separation", list), "scenario.separation")
    if len(d) != 3:
        raise ConfigError("scenario.separation: expected a 3-vector")
    kicks = _section(sc, "scenario", "kicks")
    prep = _section(sc, "scenario", "preparation")
    dist = _get(prep, "scenario.preparation", "distribution", str)
    if dist == "geometric":
        for k in ("a", "b", "lambda0"):
            _positive(_get(prep, "scenario.preparation", k, float), f"scenario.preparation.{k}")
        s = _get(kicks, "scenario.kicks", "sigma", float)
        _positive(s, "scenario.kicks.sigma")
    elif dist == "weights":
        w = _numbers(_get(prep, "scenario.preparation", "weights", list), "scenario.preparation.weights")
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise ConfigError("scenario.preparation.weights: must be nonnegative and sum to 1")
        r = _numbers(_get(kicks, "scenario.kicks", "rates", list), "scenario.kicks.rates")
        if any(x < 0 for x in r):
            raise ConfigError("scenario.kicks.rates: must be >= 0")
        s = _numbers(_get(kicks, "scenario.kicks", "sigmas", list), "scenario.kicks.sigmas", positive=True)
        if not len(w) == len(r) == len(s):
            raise ConfigError("scenario.kicks.rates: weights, rates and sigmas must have equal length")
    else:
        raise ConfigError(f"scenario.preparation.distribution: unknown distribution {dist!r}")


def _check_bloch(sc: dict):
    gas = _section(sc, "scenario", "gas")
    for k in ("m", "M", "n_gas", "beta"):
        _positive(_get(gas, "scenario.gas", k, float), f"scenario.gas.{k}")
    lv = _section(sc, "scenario", "levels")
    omega = _numbers(_get(lv, "scenario.levels", "omega", list), "scenario.levels.omega")
    amp = _section(sc, "scenario", "amplitude")
    ak = _get(amp, "scenario.amplitude", "kind", str)
    if ak not in ("constant", "gaussian_envelope", "separable"):
        raise ConfigError(f"scenario.amplitude.kind: unknown amplitude {ak!r}")
    if ak != "constant":
        c = _get(amp, "scenario.amplitude", "coeffs", list)
        if len(c) != len(omega):
            raise ConfigError("scenario.amplitude.coeffs: must be n x n for n levels")
    if ak == "gaussian_envelope":
        _positive(_get(amp, "scenario.amplitude", "width", float), "scenario.amplitude.width")
    grid = _section(sc, "scenario", "grid")
    shape = _get(grid, "scenario.grid", "shape", list)
    if len(shape) != 3 or not all(isinstance(s, int) and s > 0 for s in shape):
        raise ConfigError("scenario.grid.shape: expected three positive integers")
    _positive(_get(grid, "scenario.grid", "spacing", float), "scenario.grid.spacing")
    if "max_transfer" in grid:
        _positive(_get(grid, "scenario.grid", "max_transfer", float), "scenario.grid.max_transfer")
    _positive(_get(grid, "scenario.grid", "order", int, 12), "scenario.grid.order")
    _check_sigma(_section(sc, "scenario", "preparation", required=False), "scenario.preparation")


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path}: {exc}") from exc
    return validate_config(raw)


def get_field(raw: dict, path: str) -> Any:
    node = raw
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"{path}: no such field")
        node = node[part]
    return node


def with_field(raw: dict, path: str, value) -> dict:
    """Deep copy of ``raw`` with the dotted ``path`` set to ``value``."""
    out = copy.deepcopy(raw)
    parts = path.split(".")
    node = out
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"{path}: no such field")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"{path}: no such field")
    node[parts[-1]] = value
    return out
