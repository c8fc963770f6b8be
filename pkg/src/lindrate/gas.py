"""Collision ingredients for a test particle in a Maxwell-Boltzmann gas.

Units: hbar = 1. Masses, momenta and energies are taken in one coherent
system chosen by the caller; energies are momentum^2 / mass, level
frequencies equal level energies.

Amplitudes follow the convention ``f_ij(p_out, p_in)``: the amplitude for
scattering from incoming relative momentum ``p_in`` and internal level
``j`` to outgoing ``p_out`` and level ``i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .quadrature import plane_gauss_rule


@dataclass(frozen=True)
class GasParameters:
    """Gas mass ``m``, test-particle mass ``M``, density and inverse temperature."""

    m: float
    M: float
    n_gas: float
    beta: float

    def __post_init__(self):
        for name in ("m", "M", "n_gas", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"gas parameter {name} must be finite and > 0, got {v}")

    @property
    def m_star(self) -> float:
        return self.m * self.M / (self.m + self.M)

    @property
    def p_beta(self) -> float:
        """Most probable momentum of the gas particles."""
        return math.sqrt(2.0 * self.m / self.beta)

    @property
    def P_beta(self) -> float:
        """Most probable momentum of the test particle in equilibrium."""
        return math.sqrt(2.0 * self.M / self.beta)

    def to_dict(self) -> dict[str, float]:
        return {"m": self.m, "M": self.M, "n_gas": self.n_gas, "beta": self.beta}


@dataclass(frozen=True, eq=False)
class InternalLevels:
    """Internal energy levels ``omega_j`` (hbar = 1)."""

    omega: np.ndarray

    def __post_init__(self):
        w = np.array(self.omega, dtype=float).reshape(-1)
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise ValueError("level energies must be a finite, nonempty vector")
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)

    @property
    def n(self) -> int:
        return self.omega.size

    @property
    def transition_energies(self) -> np.ndarray:
        """``eps[i, j] = omega_i - omega_j``; antisymmetric by construction."""
        return np.subtract.outer(self.omega, self.omega)

    def eps(self, i: int, j: int) -> float:
        return float(self.omega[i] - self.omega[j])

    def basis(self, i: int, j: int) -> np.ndarray:
        """Matrix unit ``|i><j|``."""
        E = np.zeros((self.n, self.n), dtype=complex)
        E[i, j] = 1.0
        return E

    def same_energy(self, i, j, k, l, tol: float = 1e-12) -> bool:
        scale = 1.0 + float(np.abs(self.omega).max())
        return abs(self.eps(i, j) - self.eps(k, l)) <= tol * scale

    def allowed_tuples(self) -> list[tuple[int, int, int, int]]:
        """All ``(i, j, k, l)`` with equal transition energies."""
        n = self.n
        return [t for t in product(range(n), repeat=4) if self.same_energy(*t)]


# -- amplitudes ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScatteringAmplitude:
    """Vectorized amplitude ``func(i, j, p_out, p_in)``.

    ``p_out`` and ``p_in`` have shape ``(N, 3)``; the result has shape
    ``(N,)``. ``spec`` records the built-in family and its parameters for
    serialization; it is empty for user callables.
    """

    n: int
    func: Callable[[int, int, np.ndarray, np.ndarray], np.ndarray]
    spec: dict = field(default_factory=dict)

    def __call__(self, i, j, p_out, p_in) -> np.ndarray:
        p_out = np.atleast_2d(np.asarray(p_out, dtype=float))
        p_in = np.atleast_2d(np.asarray(p_in, dtype=float))
        vals = np.asarray(self.func(i, j, p_out, p_in), dtype=complex)
        return np.broadcast_to(vals, (max(len(p_out), len(p_in)),))

    @classmethod
    def constant(cls, f0: complex, n: int = 1) -> "ScatteringAmplitude":
        """Elastic, channel-independent ``f_ij = delta_ij f0``."""
        f0 = complex(f0)

        def func(i, j, p_out, p_in):
            return np.full(len(p_out), f0 if i == j else 0.0, dtype=complex)

        return cls(n, func, {"kind": "constant", "f0": [f0.real, f0.imag]})

    @classmethod
    def gaussian_envelope(cls, coeffs, width: float, shift=None) -> "ScatteringAmplitude":
        """``c_ij exp(-(|p_out|^2 + |p_in|^2) / (2 width^2) + i k . (p_out - p_in))``.

        ``shift`` is an optional 3-vector ``k`` adding a momentum-dependent
        phase, so that entries are genuinely complex.
        """
        c = np.array(coeffs, dtype=complex)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("coefficient matrix must be square")
        if not width > 0:
            raise ValueError("width must be positive")
        k = np.zeros(3) if shift is None else np.asarray(shift, dtype=float)
        s2 = 2.0 * width * width

        def func(i, j, p_out, p_in):
            env = np.exp(-(np.sum(p_out**2, axis=1) + np.sum(p_in**2, axis=1)) / s2)
            return c[i, j] * env * np.exp(1j * ((p_out - p_in) @ k))

        spec = {"kind": "gaussian_envelope", "coeffs": _cplx_list(c), "width": width,
                "shift": k.tolist()}
        return cls(c.shape[0], func, spec)

    @classmethod
    def separable(cls, coeffs, radial: Optional[Callable] = None,
                  length: Optional[float] = None) -> "ScatteringAmplitude":
        """Channel matrix times a function of the momentum transfer.

        ``f_ij = c_ij g(|p_out - p_in|)``. With ``length`` given,
        ``g(q) = exp(-(q length)^2 / 2)``; ``radial`` overrides it; otherwise
        ``g = 1``.
        """
        c = np.array(coeffs, dtype=complex)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("coefficient matrix must be square")
        if radial is None:
            if length is None:
                radial = lambda q: np.ones_like(q)
            else:
                radial = lambda q: np.exp(-0.5 * (q * length) ** 2)

        def func(i, j, p_out, p_in):
            return c[i, j] * radial(np.linalg.norm(p_out - p_in, axis=1))

        spec = {"kind": "separable", "coeffs": _cplx_list(c)}
        if length is not None:
            spec["length"] = length
        return cls(c.shape[0], func, spec)

    @classmethod
    def from_spec(cls, spec: dict, n: int) -> "ScatteringAmplitude":
        kind = spec.get("kind")
        if kind == "constant":
            f0 = spec.get("f0", 1.0)
            f0 = complex(*f0) if isinstance(f0, (list, tuple)) else complex(f0)
            return cls.constant(f0, n)
        if kind == "gaussian_envelope":
            return cls.gaussian_envelope(_cplx_array(spec["coeffs"]), spec["width"],
                                         spec.get("shift"))
        if kind == "separable":
            return cls.separable(_cplx_array(spec["coeffs"]), length=spec.get("length"))
        raise ValueError(f"unknown amplitude kind {kind!r}")


def _cplx_list(c: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in c]


def _cplx_array(data) -> np.ndarray:
    a = np.asarray(data, dtype=float)
    if a.ndim == 3 and a.shape[-1] == 2:
        return a[..., 0] + 1j * a[..., 1]
    return a.astype(complex)


# -- distributions and kinematics -----------------------------------------

def maxwell_boltzmann(p, gas: GasParameters):
    """3D density ``pi^(-3/2) p_beta^(-3) exp(-p^2 / p_beta^2)``; ``p`` has shape (..., 3)."""
    p = np.asarray(p, dtype=float)
    pb = gas.p_beta
    val = np.exp(-np.sum(p * p, axis=-1) / pb**2) / (math.pi**1.5 * pb**3)
    return float(val) if np.ndim(val) == 0 else val


def maxwell_boltzmann_2d(p_perp, gas: GasParameters):
    """Planar density ``pi^(-1) p_beta^(-2) exp(-p^2 / p_beta^2)``."""
    p = np.asarray(p_perp, dtype=float)
    pb = gas.p_beta
    val = np.exp(-np.sum(p * p, axis=-1) / pb**2) / (math.pi * pb**2)
    return float(val) if np.ndim(val) == 0 else val


def rel(p, P, gas: GasParameters) -> np.ndarray:
    """Relative momentum ``(m*/m) p - (m*/M) P``."""
    ms = gas.m_star
    return (ms / gas.m) * np.asarray(p, dtype=float) - (ms / gas.M) * np.asarray(P, dtype=float)


def energy_transfer(Q, P, gas: GasParameters) -> float:
    """Kinetic energy gained when the momentum changes from ``P`` to ``P + Q``."""
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    return float((np.dot(Q, Q) / 2.0 + np.dot(Q, P)) / gas.M)


def dynamic_structure_factor(Q, E: float, gas: GasParameters) -> float:
    """Free-gas structure factor ``S(Q, E)``; undefined at ``Q = 0``."""
    q = float(np.linalg.norm(Q))
    if q == 0.0:
        raise ValueError("dynamic structure factor is singular at Q = 0")
    bm = gas.beta * gas.m
    return math.sqrt(bm / (2.0 * math.pi)) / q * math.exp(
        -gas.beta * (q * q + 2.0 * gas.m * E) ** 2 / (8.0 * gas.m * q * q)
    )


def _parallel(P: np.ndarray, q_hat: np.ndarray) -> np.ndarray:
    return np.dot(P, q_hat) * q_hat


def sdf_identity_residual(p_perp, Q, P, eps_ij: float, gas: GasParameters,
                          relative: bool = False) -> float:
    """Gap between the shifted 3D Maxwellian and planar Maxwellian times ``S``.

    Both sides are evaluated independently. Requires ``p_perp`` orthogonal to
    ``Q`` to ``1e-12`` relative.
    """
    p_perp = np.asarray(p_perp, dtype=float)
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    q = float(np.linalg.norm(Q))
    if q == 0.0:
        raise ValueError("Q must be nonzero")
    if abs(np.dot(p_perp, Q)) > 1e-12 * np.linalg.norm(p_perp) * q:
        raise ValueError("p_perp must be orthogonal to Q")
    m = gas.m
    arg = (p_perp + (m / gas.m_star) * Q / 2.0 + (m / gas.M) * _parallel(P, Q / q)
           + (eps_ij / (q * q / m)) * Q)
    lhs = (m / q) * maxwell_boltzmann(arg, gas)
    rhs = maxwell_boltzmann_2d(p_perp, gas) * dynamic_structure_factor(
        Q, energy_transfer(Q, P, gas) + eps_ij, gas)
    gap = abs(lhs - rhs)
    if relative:
        return gap / max(abs(lhs), abs(rhs)) if max(abs(lhs), abs(rhs)) > 0 else gap
    return gap


# -- rate coefficients ----------------------------------------------------

def _collision_momenta(nodes, P_perp, Q, eps, q2, gas):
    base = rel(nodes, P_perp, gas)
    shift = (eps / (q2 / gas.m_star)) * Q
    return base - Q / 2.0 + shift, base + Q / 2.0 + shift


def rate_coefficient(P, Q, indices, amp: ScatteringAmplitude, levels: InternalLevels,
                     gas: GasParameters, order: int = 24) -> complex:
    """Rate ``M^{jl}_{ik}`` for scattering from ``P`` to ``P + Q``.

    ``indices = (i, j, k, l)``. The planar integral uses a tensor
    Gauss-Hermite rule of ``order`` points per axis on the plane
    perpendicular to ``Q``, whose weight is the planar Maxwellian. Returns
    ``0`` when the transition energies ``eps_ij`` and ``eps_kl`` differ.
    """
    i, j, k, l = indices
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if not levels.same_energy(i, j, k, l):
        return 0j
    q2 = float(np.dot(Q, Q))
    eps_ij, eps_kl = levels.eps(i, j), levels.eps(k, l)
    if q2 == 0.0:
        if eps_ij != 0.0:
            raise ValueError("transitions with nonzero energy need nonzero momentum transfer")
        raise ValueError("rate coefficients are undefined at Q = 0")
    q_hat = Q / math.sqrt(q2)
    P_perp = P - _parallel(P, q_hat)
    nodes, weights = plane_gauss_rule(Q, order, gas.p_beta)
    out1, in1 = _collision_momenta(nodes, P_perp, Q, eps_ij, q2, gas)
    out2, in2 = _collision_momenta(nodes, P_perp, Q, eps_kl, q2, gas)
    f1 = amp(i, j, out1, in1)
    f2 = amp(k, l, out2, in2)
    s = dynamic_structure_factor(Q, energy_transfer(Q, P, gas) + eps_ij, gas)
    integral = np.sum(weights * f1 * np.conj(f2))
    return complex(gas.n_gas / gas.m_star**2 * s * integral)


def coefficient_matrix(P, Q, amp, levels, gas, order: int = 24) -> np.ndarray:
    """``C[(i,j), (k,l)] = M^{jl}_{ik}`` as an ``n^2 x n^2`` Hermitian matrix."""
    n = levels.n
    C = np.zeros((n * n, n * n), dtype=complex)
    for i, j, k, l in levels.allowed_tuples():
        C[i * n + j, k * n + l] = rate_coefficient(P, Q, (i, j, k, l), amp, levels, gas, order)
    return C


@dataclass(eq=False)
class RateCoefficientTable:
    """Rate coefficients on a list of ``(P, Q)`` points.

    ``P`` is the momentum *before* the collision, so each entry is the rate
    from ``P`` to ``P + Q``. ``entries[g]`` maps ``(i, j, k, l)`` to the
    complex coefficient at grid point ``g``; energy-forbidden tuples are
    absent.
    """

    gas: GasParameters
    levels: InternalLevels
    P: np.ndarray
    Q: np.ndarray
    entries: list[dict[tuple[int, int, int, int], complex]]

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float).reshape(-1, 3)
        self.Q = np.asarray(self.Q, dtype=float).reshape(-1, 3)
        if len(self.P) != len(self.Q) or len(self.P) != len(self.entries):
            raise ValueError("P, Q and entries must have equal length")
        for g, ent in enumerate(self.entries):
            for t in ent:
                if not self.levels.same_energy(*t):
                    raise ValueError(f"grid point {g}: entry {t} violates energy matching")

    def __len__(self) -> int:
        return len(self.entries)

    def find(self, P, Q, tol: float = 1e-12) -> int:
        P = np.asarray(P, dtype=float)
        Q = np.asarray(Q, dtype=float)
        scale = tol * (1.0 + np.abs(self.P).max(initial=0.0) + np.abs(self.Q).max(initial=0.0))
        hit = np.flatnonzero((np.abs(self.P - P).max(axis=1) <= scale)
                             & (np.abs(self.Q - Q).max(axis=1) <= scale))
        if hit.size == 0:
            raise KeyError(f"no table entry for P={P.tolist()}, Q={Q.tolist()}")
        return int(hit[0])

    def matrix(self, g: int) -> np.ndarray:
        n = self.levels.n
        C = np.zeros((n * n, n * n), dtype=complex)
        for (i, j, k, l), v in self.entries[g].items():
            C[i * n + j, k * n + l] = v
        return C

    def hermiticity_defect(self) -> float:
        worst = 0.0
        for ent in self.entries:
            for (i, j, k, l), v in ent.items():
                worst = max(worst, abs(v - np.conj(ent.get((k, l, i, j), 0.0))))
        return worst

    def to_dict(self) -> dict[str, Any]:
        return {
            "gas": self.gas.to_dict(),
            "levels": self.levels.omega.tolist(),
            "grid": [
                {
                    "P": self.P[g].tolist(),
                    "Q": self.Q[g].tolist(),
                    "entries": [
                        {"i": i, "j": j, "k": k, "l": l, "re": v.real, "im": v.imag}
                        for (i, j, k, l), v in sorted(self.entries[g].items())
                    ],
                }
                for g in range(len(self))
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RateCoefficientTable":
        grid = d["grid"]
        entries = [
            {(e["i"], e["j"], e["k"], e["l"]): complex(e["re"], e["im"]) for e in pt["entries"]}
            for pt in grid
        ]
        return cls(GasParameters(**d["gas"]), InternalLevels(d["levels"]),
                   [pt["P"] for pt in grid], [pt["Q"] for pt in grid], entries)

    @classmethod
    def from_json(cls, text: str) -> "RateCoefficientTable":
        return cls.from_dict(json.loads(text))


def build_rate_table(points: Sequence[tuple], amp: ScatteringAmplitude, levels: InternalLevels,
                     gas: GasParameters, order: int = 24) -> RateCoefficientTable:
    """Evaluate every energy-allowed tuple at each ``(P, Q)`` point."""
    if amp.n != levels.n:
        raise ValueError("amplitude and levels disagree on the internal dimension")
    tuples = levels.allowed_tuples()
    Ps, Qs, entries = [], [], []
    for P, Q in points:
        Ps.append(P)
        Qs.append(Q)
        entries.append({t: rate_coefficient(P, Q, t, amp, levels, gas, order) for t in tuples})
    return RateCoefficientTable(gas, levels, Ps, Qs, entries)


__all__ = [
    "GasParameters", "InternalLevels", "ScatteringAmplitude", "RateCoefficientTable",
    "maxwell_boltzmann", "maxwell_boltzmann_2d", "rel", "energy_transfer",
    "dynamic_structure_factor", "sdf_identity_residual", "rate_coefficient",
    "coefficient_matrix", "build_rate_table",
]
