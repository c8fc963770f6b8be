"""Time stepping for block-diagonal states and plain linear ODEs.

Classical fourth-order Runge-Kutta with fixed steps, or step doubling for
adaptive control. Positivity is only monitored; a state is never projected
back onto the positive cone.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from .generator import GeneralizedLindbladGenerator
from .state import (
    TOL_POS,
    TOL_TRACE,
    BlockDiagonalState,
    hermitize,
    label_weights,
    marginalize,
    total_trace,
)


class IntegrationError(RuntimeError):
    """Raised when stepping fails; carries the step context."""

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        ctx = []
        if step is not None:
            ctx.append(f"step {step}")
        if time is not None:
            ctx.append(f"t={time:.17g}")
        super().__init__(message + (f" ({', '.join(ctx)})" if ctx else ""))
        self.step = step
        self.time = time


class InvariantBreach(IntegrationError):
    """Trace drift or negativity exceeded 100x the configured tolerance."""


Observer = Callable[[BlockDiagonalState], Any]


def matrix_element(label: int, i: int, j: int) -> Observer:
    return lambda s: complex(s.blocks[label, i, j])


def marginal_element(i: int, j: int) -> Observer:
    return lambda s: complex(marginalize(s)[i, j])


def marginal_coherence_ratio(state0: BlockDiagonalState, i: int = 0, j: int = 1) -> Observer:
    """``|w_ij(t) / w_ij(0)|`` for the marginal operator."""
    ref = marginalize(state0)[i, j]
    if ref == 0:
        raise ValueError(f"initial marginal element ({i}, {j}) vanishes")
    return lambda s: abs(marginalize(s)[i, j] / ref)


def label_weight(label: int) -> Observer:
    return lambda s: float(label_weights(s)[label])


@dataclass(frozen=True)
class EvolutionConfig:
    """Integration window and control.

    Exactly one of ``dt`` (fixed step) and ``adaptive=True`` selects the mode.
    In fixed mode the window is split into ``round((t_end - t_start) / dt)``
    equal steps so that ``t_end`` is hit exactly.
    """

    t_start: float
    t_end: float
    dt: Optional[float] = None
    adaptive: bool = False
    rtol: float = 1e-8
    atol: float = 1e-10
    observers: Mapping[str, Observer] = field(default_factory=dict)
    invariant_check_every: int = 1
    tol_trace: float = TOL_TRACE
    tol_pos: float = TOL_POS
    max_steps: int = 10_000_000

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.adaptive:
            if self.rtol <= 0 or self.atol <= 0:
                raise ValueError("rtol and atol must be positive")
            if self.dt is not None and self.dt <= 0:
                raise ValueError("dt must be positive")
        elif self.dt is None or not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.invariant_check_every < 1:
            raise ValueError("invariant_check_every must be >= 1")

    def fixed_steps(self) -> int:
        return max(1, int(round((self.t_end - self.t_start) / self.dt)))


@dataclass
class TimeSeries:
    times: np.ndarray
    channels: dict[str, np.ndarray]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for name, v in self.channels.items():
            if len(v) != len(self.times):
                raise ValueError(f"channel {name!r} length differs from times")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def columns(self) -> dict[str, np.ndarray]:
        """Flat real columns; complex channels split into ``_re``/``_im``."""
        cols = {"t": self.times}
        for name, v in self.channels.items():
            v = np.asarray(v)
            if np.iscomplexobj(v):
                cols[f"{name}_re"] = v.real
                cols[f"{name}_im"] = v.imag
            else:
                cols[name] = v.astype(float)
        return cols

    def to_csv(self) -> str:
        cols = self.columns()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols.keys())
        for row in zip(*cols.values()):
            writer.writerow(repr(float(x)) for x in row)
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def to_json(self, **extra) -> str:
        doc = {"meta": self.meta, **extra, "columns": {k: v.tolist() for k, v in self.columns().items()}}
        return json.dumps(doc, indent=2, default=_json_default)

    @classmethod
    def from_csv(cls, text: str) -> "TimeSeries":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0] != "t":
            raise ValueError("CSV must start with a 't' column")
        header, data = rows[0], np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
        data = data.reshape(-1, len(header))
        chans = {h: data[:, k] for k, h in enumerate(header) if k > 0}
        return cls(data[:, 0], chans)

    @classmethod
    def read_csv(cls, path) -> "TimeSeries":
        with open(path) as fh:
            return cls.from_csv(fh.read())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# -- RK4 core ------------------------------------------------------------

def rk4_increment(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + (0.5 * dt) * k1)
    k3 = f(y + (0.5 * dt) * k2)
    k4 = f(y + dt * k3)
    return (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_finite(dy: np.ndarray, step: int, t: float) -> None:
    if not np.all(np.isfinite(dy)):
        raise IntegrationError("non-finite derivative", step=step, time=t)


def step_rk4(gen: GeneralizedLindbladGenerator, state: BlockDiagonalState, dt: float,
             *, _step: int | None = None, _time: float | None = None) -> BlockDiagonalState:
    """One classical RK4 step of the Schrödinger-picture equations."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    gen._check(state.space, state.blocks)
    dy = rk4_increment(gen.schrodinger_blocks, state.blocks, dt)
    _check_finite(dy, _step, _time)
    return state.replace_blocks(state.blocks + hermitize(dy))


def _step_doubling(f, y, h):
    full = y + rk4_increment(f, y, h)
    half = y + rk4_increment(f, y, 0.5 * h)
    two = half + rk4_increment(f, half, 0.5 * h)
    return full, two


def _adaptive_loop(f, y0, t0, t1, h0, rtol, atol, max_steps, on_accept):
    """Step-doubling driver; ``on_accept(k, t, y)`` is called after each step."""
    span = t1 - t0
    h = h0 if h0 else span / 100.0
    t, y, k = t0, y0, 0
    while t < t1:
        if t + h >= t1 or (t1 - t - h) < 1e-12 * span:
            h = t1 - t
        full, two = _step_doubling(f, y, h)
        if not (np.all(np.isfinite(full)) and np.all(np.isfinite(two))):
            err = math.inf
        else:
            scale = rtol * max(float(np.abs(y).max()), float(np.abs(two).max())) + atol
            err = float(np.abs(two - full).max()) / (15.0 * scale)
        if err <= 1.0:
            t = t1 if h == t1 - t else t + h
            y = two
            k += 1
            on_accept(k, t, y)
            if k >= max_steps:
                raise IntegrationError("maximum number of steps exceeded", step=k, time=t)
            fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            fac = 0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** -0.2)
        h *= fac
        if h < 1e-14 * span:
            raise IntegrationError("step size underflow", step=k, time=t)
    return y


# -- block-state evolution ----------------------------------------------

@dataclass
class InvariantMonitor:
    tol_trace: float
    tol_pos: float
    trace0: float
    max_trace_drift: float = 0.0
    max_negativity: float = 0.0
    checks: int = 0

    def check(self, state: BlockDiagonalState, step: int, t: float) -> None:
        drift = abs(total_trace(state) - self.trace0)
        neg = float(np.linalg.eigvalsh(state.blocks).min())
        self.max_trace_drift = max(self.max_trace_drift, drift)
        self.max_negativity = min(self.max_negativity, neg)
        self.checks += 1
        if drift > 100.0 * self.tol_trace:
            raise InvariantBreach(f"trace drift {drift:.3e} beyond 100x tolerance", step, t)
        if neg < -100.0 * self.tol_pos:
            raise InvariantBreach(f"negative eigenvalue {neg:.3e} beyond 100x tolerance", step, t)

    def summary(self) -> dict[str, float]:
        return {
            "max_trace_drift": self.max_trace_drift,
            "max_negativity": self.max_negativity,
            "checks": self.checks,
        }


def evolve(gen: GeneralizedLindbladGenerator, state0: BlockDiagonalState,
           config: EvolutionConfig) -> tuple[TimeSeries, BlockDiagonalState]:
    """Integrate from ``config.t_start`` to ``config.t_end``.

    Observers are sampled at the initial time and after every accepted step.
    Returns the time series (with the invariant summary in ``meta``) and the
    final state.
    """
    gen._check(state0.space, state0.blocks)
    monitor = InvariantMonitor(config.tol_trace, config.tol_pos, total_trace(state0))
    times = [config.t_start]
    samples = {name: [obs(state0)] for name, obs in config.observers.items()}
    every = config.invariant_check_every
    monitor.check(state0, 0, config.t_start)

    def record(k, t, blocks):
        s = state0.replace_blocks(blocks)
        times.append(t)
        for name, obs in config.observers.items():
            samples[name].append(obs(s))
        if k % every == 0:
            monitor.check(s, k, t)
        return s

    f = gen.schrodinger_blocks
    if config.adaptive:
        def on_accept(k, t, y):
            record(k, t, hermitize(y))
        y = _adaptive_loop(f, state0.blocks, config.t_start, config.t_end, config.dt,
                           config.rtol, config.atol, config.max_steps, on_accept)
        final = state0.replace_blocks(hermitize(y))
        n_steps = len(times) - 1
    else:
        n_steps = config.fixed_steps()
        h = (config.t_end - config.t_start) / n_steps
        y = state0.blocks
        for k in range(1, n_steps + 1):
            dy = rk4_increment(f, y, h)
            t = config.t_start + k * h
            _check_finite(dy, k, t)
            y = y + hermitize(dy)
            record(k, t, y)
        final = state0.replace_blocks(y)
    if n_steps % every:
        monitor.check(final, n_steps, config.t_end)

    channels = {name: np.asarray(v) for name, v in samples.items()}
    series = TimeSeries(np.asarray(times), channels,
                        meta={"steps": n_steps, "invariants": monitor.summary()})
    return series, final


def rk4_propagator(A: np.ndarray, h: float) -> np.ndarray:
    """One RK4 step of ``dy/dt = A y`` as a matrix: the degree-4 Taylor polynomial of ``exp(hA)``."""
    Z = h * np.asarray(A, dtype=complex)
    eye = np.eye(Z.shape[0], dtype=complex)
    return eye + Z @ (eye + Z @ (eye / 2 + Z @ (eye / 6 + Z / 24)))


def integrate_linear(A: np.ndarray, y0, times: Sequence[float] | None = None, *,
                     t_end: float | None = None, dt: float | None = None,
                     adaptive: bool = False, rtol: float = 1e-10, atol: float = 1e-14):
    """Integrate ``dy/dt = A y`` with RK4 from ``t = 0``.

    With ``times`` given, the state is reported at exactly those (increasing,
    nonnegative) times; each gap is split into equal substeps no longer than
    ``dt``; since ``A`` is constant, the substeps of a gap are applied as a
    power of the one-step RK4 matrix. Otherwise fixed mode takes ``dt`` and ``t_end`` and adaptive mode
    records every accepted step. Returns ``(times, Y)``.
    """
    A = np.asarray(A)
    y0 = np.asarray(y0, dtype=complex)
    f = lambda y: A @ y
    if times is not None:
        ts = np.asarray(times, dtype=float)
        if ts.ndim != 1 or ts.size == 0 or ts[0] < 0 or np.any(np.diff(ts) <= 0):
            raise ValueError("times must be nonnegative and strictly increasing")
        if dt is None or not dt > 0:
            raise ValueError("dt must be positive")
        ys, y, t = [], y0, 0.0
        for target in ts:
            gap = target - t
            if gap > 0:
                m = max(1, math.ceil(gap / dt - 1e-12))
                y = np.linalg.matrix_power(rk4_propagator(A, gap / m), m) @ y
                _check_finite(y, None, target)
            t = target
            ys.append(y)
        return ts, np.asarray(ys)
    ts, ys = [0.0], [y0]
    if t_end is None or not t_end > 0:
        raise ValueError("t_end must be positive")
    if adaptive:
        def on_accept(k, t, y):
            ts.append(t)
            ys.append(y)
        _adaptive_loop(f, y0, 0.0, t_end, dt, rtol, atol, 10_000_000, on_accept)
    else:
        if dt is None or not dt > 0:
            raise ValueError("dt must be positive")
        n = max(1, int(round(t_end / dt)))
        h = t_end / n
        y = y0
        for k in range(1, n + 1):
            dy = rk4_increment(f, y, h)
            _check_finite(dy, k, k * h)
            y = y + dy
            ts.append(k * h)
            ys.append(y)
    return np.asarray(ts), np.asarray(ys)
