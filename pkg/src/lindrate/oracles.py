"""Closed-form decay laws used as ground truth.

Everything here is a pure function of its arguments. The curves are evaluated
in vectorized form; scalars in give scalars out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import integrate


class QuadratureFailure(RuntimeError):
    pass


@dataclass
class DecayCurve:
    """Sampled scalar function of time with a free-form descriptor."""

    times: np.ndarray
    values: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")

    def __len__(self) -> int:
        return self.times.size


def _check_times(t, tau=None):
    t = np.asarray(t, dtype=float)
    if tau is not None and not tau > 0:
        raise ValueError("tau must be positive")
    if np.any(t < 0):
        raise ValueError("times must be nonnegative")
    return t


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def lambda_power_law(t, tau: float):
    """``(1 + t/tau)^(-3/2)``: thermal average of ``exp(-a P^2 t)``."""
    t = _check_times(t, tau)
    return _out((1.0 + t / tau) ** -1.5)


def lambda_stretched(t, tau: float):
    """``(1 + s) exp(-s)`` with ``s = sqrt(t/tau)``: thermal average of ``exp(-b t / P^2)``."""
    t = _check_times(t, tau)
    s = np.sqrt(t / tau)
    return _out((1.0 + s) * np.exp(-s))


def exponential(t, rate: float):
    t = _check_times(t)
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    return _out(np.exp(-rate * t))


def gaussian_moment_closed_form(a: float, b: float) -> float:
    """``int_0^inf x^2 exp(-a/x^2 - b x^2) dx`` in closed form."""
    s = 2.0 * math.sqrt(a * b)
    return math.sqrt(math.pi / (16.0 * b**3)) * (1.0 + s) * math.exp(-s)


def gaussian_moment_quadrature(a: float, b: float, epsrel: float = 1e-13) -> float:
    """Adaptive Gauss-Kronrod evaluation, split at the integrand's peak."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    f = lambda x: x * x * math.exp(-a / (x * x) - b * x * x) if x > 0 else 0.0
    peak = (a / b) ** 0.25
    total = 0.0
    for lo, hi in ((0.0, peak), (peak, math.inf)):
        val, err, info = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=epsrel, limit=200,
                                        full_output=1)[:3]
        if err > 1e3 * epsrel * max(abs(val), 1e-300):
            raise QuadratureFailure(
                f"quadrature did not converge for a={a}, b={b} (error estimate {err:.3e})"
            )
        total += val
    return total


def gaussian_moment_identity_residual(a: float, b: float, relative: bool = False) -> float:
    """Absolute (or relative) gap between quadrature and closed form."""
    exact = gaussian_moment_closed_form(a, b)
    gap = abs(gaussian_moment_quadrature(a, b) - exact)
    return gap / exact if relative else gap


def psi_multiexponential(t, weights, rates):
    """Survival function ``sum_r p_r exp(-Lambda_r t)``."""
    p = np.asarray(weights, dtype=float)
    lam = np.asarray(rates, dtype=float)
    if p.shape != lam.shape:
        raise ValueError("weights and rates must have the same length")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
        raise ValueError("weights must be nonnegative and sum to 1")
    if np.any(lam < 0):
        raise ValueError("rates must be nonnegative")
    t = _check_times(t)
    vals = np.exp(-np.multiply.outer(t, lam)) @ p
    return _out(vals)


@dataclass(frozen=True)
class GeometricFamily:
    """Weights ``(1 - p0) p0^r`` and rates ``Lambda0 gamma0^r``, r = 0..r_max."""

    a: float
    b: float
    lambda0: float = 1.0
    tail: float = 1e-14

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.lambda0 > 0):
            raise ValueError("a, b and lambda0 must be positive")

    @property
    def p0(self) -> float:
        return math.exp(-self.a)

    @property
    def gamma0(self) -> float:
        return math.exp(-self.b)

    @property
    def r_max(self) -> int:
        """Smallest ``r`` whose weight drops below ``tail``."""
        r = math.log(self.tail / (1.0 - self.p0)) / math.log(self.p0)
        r_max = max(0, math.ceil(r))
        while (1.0 - self.p0) * self.p0**r_max >= self.tail:
            r_max += 1
        while r_max > 0 and (1.0 - self.p0) * self.p0 ** (r_max - 1) < self.tail:
            r_max -= 1
        return r_max

    def weights(self) -> np.ndarray:
        r = np.arange(self.r_max + 1)
        return (1.0 - self.p0) * self.p0**r

    def rates(self) -> np.ndarray:
        r = np.arange(self.r_max + 1)
        return self.lambda0 * self.gamma0**r

    def psi(self, t):
        return psi_multiexponential(t, self.weights(), self.rates())


def geometric_functional_residual(t, family: GeometricFamily):
    """``|Psi(gamma0 t) - [Psi(t) - (1 - p0) exp(-Lambda0 t)] / p0|``.

    The geometric weights make the survival function self-similar under
    rescaling time by ``gamma0``; the residual is bounded by the truncated
    tail weight.
    """
    t = _check_times(t)
    lhs = family.psi(family.gamma0 * t)
    rhs = (family.psi(t) - (1.0 - family.p0) * np.exp(-family.lambda0 * t)) / family.p0
    return _out(np.abs(lhs - rhs))


def loglog_slope(t, values) -> float:
    """Least-squares slope of ``log values`` against ``log t``."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(t <= 0) or np.any(v <= 0):
        raise ValueError("log-log fit needs positive times and values")
    slope, _ = np.polyfit(np.log(t), np.log(v), 1)
    return float(slope)


def position_solution(d, t, rate: float, phi, initial: complex = 1.0):
    """Off-diagonal position element under diagonal momentum kicks.

    ``phi`` is either the characteristic-function value at ``d`` or a
    callable evaluated at ``d``.
    """
    ph = phi(d) if callable(phi) else phi
    t = _check_times(t)
    val = np.exp(-rate * (1.0 - ph) * t) * initial
    return complex(val) if np.ndim(val) == 0 else val


def is_completely_monotone(t, values, tol: float = 1e-14) -> bool:
    """Nonnegative, nonincreasing and convex on the sample grid."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(v < -tol):
        return False
    slope = np.diff(v) / np.diff(t)
    if np.any(slope > tol):
        return False
    curv = np.diff(slope)
    return bool(np.all(curv >= -tol * np.maximum(1.0, np.abs(slope[:-1]))))


#: Named oracles for command-line verification: name -> (function(t, **p), parameter names).
ORACLES: dict[str, tuple[Callable, tuple[str, ...]]] = {
    "power_law": (lambda t, tau: lambda_power_law(t, tau), ("tau",)),
    "stretched": (lambda t, tau: lambda_stretched(t, tau), ("tau",)),
    "exponential": (lambda t, rate: exponential(t, rate), ("rate",)),
    "multiexponential": (lambda t, weights, rates: psi_multiexponential(t, weights, rates),
                         ("weights", "rates")),
    "geometric": (lambda t, a, b, lambda0=1.0: GeometricFamily(a, b, lambda0).psi(t),
                  ("a", "b")),
}


def evaluate_oracle(name: str, t, params: dict[str, Any]):
    if name not in ORACLES:
        raise KeyError(f"unknown oracle {name!r}; choose from {sorted(ORACLES)}")
    fn, required = ORACLES[name]
    missing = [p for p in required if p not in params]
    if missing:
        raise KeyError(f"oracle {name!r} needs parameters {missing}")
    return np.asarray(fn(np.asarray(t, dtype=float), **params))
