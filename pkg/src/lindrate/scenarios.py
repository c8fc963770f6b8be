"""Concrete generators and closed-path analyses for two physical settings.

Internal coherence over a classical momentum label: each momentum block
evolves on its own under a friction matrix ``xi_ik(P)``, and the marginal
coherence is the thermal average of ``exp(-Xi(P) t)``.

Momentum-kick decoherence with a classical internal label: each internal
state ``r`` suffers Poissonian momentum kicks; position-space coherences
decay with the characteristic function of the kick density.

A third builder turns a rate-coefficient table on a momentum lattice into a
fully coupled generator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .gas import InternalLevels, RateCoefficientTable, ScatteringAmplitude, GasParameters, build_rate_table
from .generator import GeneralizedLindbladGenerator, Jump, jumps_from_kossakowski
from .integrator import EvolutionConfig, TimeSeries, evolve, marginal_element
from .oracles import DecayCurve, GeometricFamily
from .quadrature import RADIAL_CUTOFF, hermite_tensor_rule, radial_rule
from .state import BlockDiagonalState, LabelSpace, StructureError

PLUS = 0.5 * np.ones((2, 2), dtype=complex)


# -- label spaces and preparations -----------------------------------------

def radial_grid(n_points: int, p_beta: float, cutoff: float = RADIAL_CUTOFF) -> LabelSpace:
    """Radial shells for isotropic problems, coordinates along ``z``.

    Each label stands for a full shell, and its weight is the shell volume
    ``4 pi P^2 dP``.
    """
    radii, weights = radial_rule(n_points, p_beta, cutoff)
    coords = np.zeros((n_points, 3))
    coords[:, 2] = radii
    return LabelSpace(weights, coords)


def hermite_grid(order: int, p_beta: float) -> LabelSpace:
    nodes, weights = hermite_tensor_rule(order, p_beta)
    return LabelSpace(weights, nodes)


def momentum_lattice(shape, spacing: float, center=(0.0, 0.0, 0.0)) -> LabelSpace:
    """Regular cubic lattice; every site carries the cell volume as weight.

    ``shape`` is ``(nx, ny, nz)``. Sites are symmetric about ``center``.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ValueError("shape must be three positive integers")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    axes = [spacing * (np.arange(s) - (s - 1) / 2.0) for s in shape]
    g = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([a.ravel() for a in g], axis=1) + np.asarray(center, dtype=float)
    return LabelSpace(np.full(coords.shape[0], spacing**3), coords)


def thermal_density(coords: np.ndarray, p_beta: float) -> np.ndarray:
    """``pi^(-3/2) p_beta^(-3) exp(-P^2 / p_beta^2)`` at each coordinate."""
    r2 = np.sum(coords * coords, axis=1) / p_beta**2
    return np.exp(-r2) / (math.pi**1.5 * p_beta**3)


def product_state(space: LabelSpace, sigma, label_probs) -> BlockDiagonalState:
    """Blocks ``(p_a / w_a) sigma`` so that ``w_a Tr rho_a = p_a``."""
    sigma = np.asarray(sigma, dtype=complex)
    p = np.asarray(label_probs, dtype=float)
    if p.shape != (space.size,):
        raise StructureError("one probability per label required")
    if np.any(p < 0) or abs(math.fsum(p) - 1.0) > 1e-12:
        raise ValueError("label probabilities must be nonnegative and sum to 1")
    tr = np.trace(sigma).real
    if abs(tr - 1.0) > 1e-12:
        raise ValueError("sigma must have unit trace")
    blocks = (p / space.weights)[:, None, None] * sigma[None]
    return BlockDiagonalState(space, blocks)


def thermal_state(space: LabelSpace, sigma, p_beta: float) -> BlockDiagonalState:
    """Maxwellian label distribution times a fixed internal state.

    The discrete probabilities ``w_a mu(P_a)`` are renormalized to sum to
    one, so the state is exactly normalized on the grid.
    """
    if space.coordinates is None:
        raise StructureError("thermal preparation needs momentum coordinates")
    p = space.weights * thermal_density(space.coordinates, p_beta)
    return product_state(space, sigma, p / math.fsum(p))


@dataclass(frozen=True)
class PreparationSpec:
    """Internal state ``sigma`` and a label distribution.

    ``distribution`` is ``"thermal"`` (needs a momentum grid and
    ``p_beta``), ``"weights"`` (explicit ``weights``) or ``"geometric"``
    (the truncated family ``(1 - p0) p0^r``).
    """

    sigma: np.ndarray = field(default_factory=lambda: PLUS.copy())
    distribution: str = "thermal"
    weights: Optional[Sequence[float]] = None
    geometric: Optional[GeometricFamily] = None

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=complex)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("sigma must be a square matrix")
        if np.abs(s - s.conj().T).max() > 1e-12 or abs(np.trace(s) - 1.0) > 1e-12:
            raise ValueError("sigma must be Hermitian with unit trace")
        if np.linalg.eigvalsh(s).min() < -1e-12:
            raise ValueError("sigma must be positive semidefinite")
        if self.distribution not in ("thermal", "weights", "geometric"):
            raise ValueError(f"unknown label distribution {self.distribution!r}")
        if self.distribution == "weights":
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
        if self.distribution == "geometric" and self.geometric is None:
            raise ValueError("geometric preparation needs family parameters")

    def label_probabilities(self) -> np.ndarray:
        if self.distribution == "weights":
            return np.asarray(self.weights, dtype=float)
        if self.distribution == "geometric":
            return self.geometric.weights()
        raise ValueError("thermal probabilities depend on the grid; use thermal_state")

    def build(self, space: Optional[LabelSpace] = None, p_beta: Optional[float] = None):
        if self.distribution == "thermal":
            if space is None or p_beta is None:
                raise ValueError("thermal preparation needs a grid and p_beta")
            return thermal_state(space, self.sigma, p_beta)
        p = self.label_probabilities()
        return product_state(space or LabelSpace.discrete(p.size), self.sigma, p)


# -- internal coherence ------------------------------------------------------

FRICTION_KINDS = ("constant", "quadratic", "inverse_quadratic", "uniform", "per_label", "custom")


@dataclass(frozen=True, eq=False)
class FrictionSpec:
    """Friction matrix ``xi_ik(P)`` for the internal-coherence setting.

    Built-ins act as pure dephasing, ``xi = Xi(P) * identity``:

    * ``constant``: ``Xi = eta``
    * ``quadratic``: ``Xi = a P^2``
    * ``inverse_quadratic``: ``Xi = b / P^2``
    * ``uniform``: every entry equal to ``eta``, so ``Xi = 0``
    * ``per_label``: one rate per label from ``values``, no coordinates needed
    * ``custom``: ``func(coords) -> (N, n, n)`` Hermitian PSD matrices

    ``isotropic`` tells the quadrature layer whether ``xi`` depends on
    ``|P|`` only.
    """

    kind: str
    eta: float = 0.0
    a: float = 0.0
    b: float = 0.0
    values: Optional[Sequence[float]] = None
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None
    n: int = 2
    isotropic: bool = True

    def __post_init__(self):
        if self.kind not in FRICTION_KINDS:
            raise ValueError(f"unknown friction kind {self.kind!r}; choose from {FRICTION_KINDS}")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom friction needs a function")
        if self.kind == "per_label" and self.values is None:
            raise ValueError("per-label friction needs values")

    @classmethod
    def constant(cls, eta: float, n: int = 2):
        return cls("constant", eta=eta, n=n)

    @classmethod
    def quadratic(cls, a: float, n: int = 2):
        return cls("quadratic", a=a, n=n)

    @classmethod
    def inverse_quadratic(cls, b: float, n: int = 2):
        return cls("inverse_quadratic", b=b, n=n)

    @classmethod
    def uniform(cls, eta: float, n: int = 2):
        return cls("uniform", eta=eta, n=n)

    @classmethod
    def per_label(cls, values, n: int = 2):
        return cls("per_label", values=tuple(float(v) for v in values), n=n, isotropic=False)

    @classmethod
    def custom(cls, func, n: int = 2, isotropic: bool = False):
        return cls("custom", func=func, n=n, isotropic=isotropic)

    def rate(self, coords: np.ndarray) -> np.ndarray:
        """Dephasing rate of the built-ins at each coordinate."""
        P2 = np.sum(np.asarray(coords, dtype=float) ** 2, axis=-1)
        if self.kind == "constant":
            return np.full(P2.shape, float(self.eta))
        if self.kind == "quadratic":
            return self.a * P2
        if self.kind == "inverse_quadratic":
            if np.any(P2 == 0):
                raise ValueError("inverse-quadratic friction is singular at P = 0")
            return self.b / P2
        raise ValueError(f"{self.kind} friction has no scalar rate")

    def matrices(self, space: LabelSpace) -> np.ndarray:
        """``xi`` at every label, shape ``(L, n, n)``."""
        n, L = self.n, space.size
        if self.kind == "per_label":
            v = np.asarray(self.values, dtype=float)
            if v.shape != (L,):
                raise StructureError("per-label friction needs one value per label")
            return v[:, None, None] * np.eye(n)[None]
        if space.coordinates is None:
            raise StructureError("friction needs momentum coordinates on the grid")
        if self.kind == "uniform":
            return np.full((L, n, n), float(self.eta), dtype=complex)
        if self.kind == "custom":
            xi = np.asarray(self.func(space.coordinates), dtype=complex)
            if xi.shape != (L, n, n):
                raise StructureError(f"custom friction must return shape {(L, n, n)}")
            return xi
        return self.rate(space.coordinates)[:, None, None] * np.eye(n)[None]

    def friction_coefficient(self, space: LabelSpace, i: int = 0, k: int = 1) -> np.ndarray:
        """``Xi = xi_ii / 2 + xi_kk / 2 - xi_ik``, the decay rate of ``rho_ik``."""
        xi = self.matrices(space)
        return 0.5 * xi[:, i, i] + 0.5 * xi[:, k, k] - xi[:, i, k]


def build_internal_coherence_generator(friction: FrictionSpec, grid: LabelSpace,
                                       hamiltonians=None) -> GeneralizedLindbladGenerator:
    """Decoupled generator with ``sum_ik xi_ik E_ii rho E_kk`` gain per label.

    Each label's friction matrix is diagonalized into jumps that start and
    end on that label, scaled by ``1 / w_a`` to cancel the label weight.
    """
    xi = friction.matrices(grid)
    n = friction.n
    diag = np.real(np.einsum("aii->ai", xi))
    bad = np.argwhere(diag < 0)
    if bad.size:
        a, i = bad[0]
        raise ValueError(f"negative diagonal friction xi_{i}{i} = {diag[a, i]:.3e} at label {a}")
    if np.abs(xi - np.conj(np.swapaxes(xi, 1, 2))).max(initial=0.0) > 1e-12 * max(1.0, np.abs(xi).max()):
        raise ValueError("friction matrix must satisfy xi_ik = conj(xi_ki)")
    basis = [np.diag(np.eye(n)[i]).astype(complex) for i in range(n)]
    jumps: list[Jump] = []
    for a in range(grid.size):
        try:
            jumps += jumps_from_kossakowski(a, a, xi[a], basis, scale=1.0 / grid.weights[a])
        except ValueError as exc:
            raise ValueError(f"label {a}: friction matrix not positive semidefinite") from exc
    return GeneralizedLindbladGenerator(grid, n, hamiltonians, jumps)


@dataclass(frozen=True)
class QuadratureSpec:
    """How the thermal average is taken.

    ``kind`` is ``"auto"`` (radial for isotropic friction, tensor Hermite
    otherwise), ``"radial"`` or ``"hermite"``. ``order`` counts radial
    nodes or Hermite nodes per axis.
    """

    kind: str = "auto"
    order: int = 64
    cutoff: float = RADIAL_CUTOFF
    check: bool = True
    tol: float = 1e-8

    def grid(self, friction: FrictionSpec, p_beta: float, order: Optional[int] = None) -> LabelSpace:
        order = self.order if order is None else order
        kind = self.kind
        if kind == "auto":
            kind = "radial" if friction.isotropic else "hermite"
        if kind == "radial":
            return radial_grid(order, p_beta, self.cutoff)
        if kind == "hermite":
            return hermite_grid(order, p_beta)
        raise ValueError(f"unknown quadrature kind {self.kind!r}")


def _thermal_average(friction, grid, p_beta, t, i, k):
    Xi = friction.friction_coefficient(grid, i, k)
    p = grid.weights * thermal_density(grid.coordinates, p_beta)
    p = p / math.fsum(p)
    vals = np.exp(-np.multiply.outer(np.asarray(t, dtype=float), Xi)) @ p
    if np.all(np.imag(Xi) == 0):
        vals = vals.real
    return vals


def coherence_decay_curve(friction: FrictionSpec, p_beta: float, t_grid,
                          quadrature: QuadratureSpec = QuadratureSpec(),
                          grid: Optional[LabelSpace] = None, i: int = 0, k: int = 1) -> DecayCurve:
    """Thermal average ``Lambda(t)`` of ``exp(-Xi(P) t)``.

    With ``grid`` given the average is taken on exactly that grid, which is
    what an evolution on the same grid reproduces. Otherwise the rule from
    ``quadrature`` is used and, if ``quadrature.check`` is set, compared
    with the rule of doubled order; a change above ``quadrature.tol`` is
    reported through a ``RuntimeWarning`` and ``meta["converged"]``.
    """
    t = np.asarray(t_grid, dtype=float)
    meta = {"scenario": "internal_coherence", "friction": friction.kind, "p_beta": p_beta}
    if grid is not None:
        vals = _thermal_average(friction, grid, p_beta, t, i, k)
        meta.update(quadrature="given", order=grid.size)
        return DecayCurve(t, vals, meta)
    vals = _thermal_average(friction, quadrature.grid(friction, p_beta), p_beta, t, i, k)
    meta.update(quadrature=quadrature.kind, order=quadrature.order)
    if quadrature.check:
        fine = _thermal_average(friction, quadrature.grid(friction, p_beta, 2 * quadrature.order),
                                p_beta, t, i, k)
        change = float(np.abs(fine - vals).max(initial=0.0))
        meta["order_doubling_change"] = change
        meta["converged"] = change <= quadrature.tol
        if change > quadrature.tol:
            warnings.warn(
                f"quadrature not converged: doubling the order changes Lambda by {change:.3e}",
                RuntimeWarning, stacklevel=2,
            )
    return DecayCurve(t, vals, meta)


def run_internal_coherence(friction: FrictionSpec, p_beta: float, t_end: float, steps: int,
                           grid: Optional[LabelSpace] = None, n_points: int = 64,
                           sigma=None, every: int = 1):
    """Evolve the thermal preparation and record the marginal coherence ratio.

    Returns ``(series, final_state, generator)``; the series carries the
    channel ``coherence`` = ``|w_01(t) / w_01(0)|``.
    """
    grid = grid if grid is not None else radial_grid(n_points, p_beta)
    sigma = PLUS if sigma is None else sigma
    gen = build_internal_coherence_generator(friction, grid)
    state0 = thermal_state(grid, sigma, p_beta)
    ref = marginal_element(0, 1)(state0)
    if ref == 0:
        raise ValueError("initial state has no coherence to follow")
    cfg = EvolutionConfig(0.0, t_end, dt=t_end / steps, invariant_check_every=every,
                          observers={"coherence": lambda s: abs(marginal_element(0, 1)(s) / ref)})
    series, final = evolve(gen, state0, cfg)
    return series, final, gen


# -- momentum kicks ----------------------------------------------------------

class KickDensity:
    """Normalized density of momentum kicks with its characteristic function."""

    def pdf(self, Q) -> np.ndarray:
        raise NotImplementedError

    def phi(self, d) -> complex:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianKick(KickDensity):
    """Isotropic Gaussian ``(2 pi s^2)^(-3/2) exp(-Q^2 / (2 s^2))``."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("kick width must be positive")

    def pdf(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        s2 = self.sigma**2
        return np.exp(-np.sum(Q * Q, axis=1) / (2 * s2)) / (2 * math.pi * s2) ** 1.5

    def phi(self, d):
        d = np.asarray(d, dtype=float)
        return complex(math.exp(-0.5 * self.sigma**2 * float(np.dot(d, d))))


@dataclass(frozen=True)
class GaussianMixtureKick(KickDensity):
    """Finite mixture of isotropic Gaussians with means ``mu_c`` and widths ``s_c``."""

    weights: tuple
    means: tuple
    sigmas: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if np.asarray(self.means, dtype=float).shape != (w.size, 3) or len(self.sigmas) != w.size:
            raise ValueError("one 3-vector mean and one width per component required")
        if min(self.sigmas) <= 0:
            raise ValueError("kick widths must be positive")

    def pdf(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        out = np.zeros(len(Q))
        for w, mu, s in zip(self.weights, np.asarray(self.means, dtype=float), self.sigmas):
            r2 = np.sum((Q - mu) ** 2, axis=1)
            out += w * np.exp(-r2 / (2 * s * s)) / (2 * math.pi * s * s) ** 1.5
        return out

    def phi(self, d):
        d = np.asarray(d, dtype=float)
        d2 = float(np.dot(d, d))
        return complex(sum(
            w * np.exp(1j * float(np.dot(mu, d)) - 0.5 * s * s * d2)
            for w, mu, s in zip(self.weights, np.asarray(self.means, dtype=float), self.sigmas)
        ))


@dataclass(frozen=True, eq=False)
class CustomKick(KickDensity):
    """User density evaluated by tensor Gauss-Hermite quadrature.

    ``scale`` sets the momentum scale of the rule; the density must be
    normalized to ``1e-10`` on it.
    """

    func: Callable[[np.ndarray], np.ndarray]
    scale: float
    order: int = 40

    def __post_init__(self):
        norm = self.normalization()
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-10:
            raise ValueError(f"kick density integrates to {norm:.12g}, not 1")

    def _rule(self):
        return hermite_tensor_rule(self.order, self.scale)

    def normalization(self) -> float:
        nodes, w = self._rule()
        return float(np.sum(w * self.func(nodes)))

    def pdf(self, Q):
        return np.asarray(self.func(np.atleast_2d(np.asarray(Q, dtype=float))), dtype=float)

    def phi(self, d):
        nodes, w = self._rule()
        return complex(np.sum(w * self.func(nodes) * np.exp(1j * (nodes @ np.asarray(d, dtype=float)))))


@dataclass(frozen=True, eq=False)
class KickSpec:
    """Kick rates ``lambda_jr(Q) = Lambda_jr P_jr(Q)`` for internal labels.

    ``rates`` is either a vector ``Lambda_r`` (no internal transitions) or a
    matrix whose entry ``[j, r]`` is the total rate from ``r`` to ``j``.
    ``densities`` matches: a list of ``KickDensity`` per label, or a nested
    list per matrix entry.
    """

    rates: np.ndarray
    densities: Sequence

    def __post_init__(self):
        r = np.array(self.rates, dtype=float)
        if r.ndim not in (1, 2) or (r.ndim == 2 and r.shape[0] != r.shape[1]):
            raise ValueError("rates must be a vector or a square matrix")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("kick rates must be finite and nonnegative")
        n = r.shape[0]
        dens = list(self.densities)
        if len(dens) != n or (r.ndim == 2 and any(len(row) != n for row in dens)):
            raise ValueError("one kick density per rate entry required")
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "densities", dens)

    @classmethod
    def gaussian(cls, rates, sigmas) -> "KickSpec":
        return cls(rates, [GaussianKick(float(s)) for s in sigmas])

    @property
    def n(self) -> int:
        return self.rates.shape[0]

    @property
    def diagonal(self) -> bool:
        return self.rates.ndim == 1

    def rate_matrix(self) -> np.ndarray:
        return np.diag(self.rates) if self.diagonal else self.rates

    def density(self, j: int, r: int) -> KickDensity:
        if self.diagonal:
            if j != r:
                raise KeyError("diagonal kick model has no cross-label density")
            return self.densities[r]
        return self.densities[j][r]


def characteristic_function(kicks: KickSpec, r: int, d, j: Optional[int] = None) -> complex:
    """Fourier transform of the kick density of label ``r`` at separation ``d``."""
    return kicks.density(r if j is None else j, r).phi(d)


def build_kick_coherence_ode(d, kicks: KickSpec) -> np.ndarray:
    """Matrix ``A`` with ``dc/dt = A c`` for ``c_r = <x|rho_r|y>``, ``d = x - y``."""
    lam = kicks.rate_matrix()
    n = kicks.n
    A = np.zeros((n, n), dtype=complex)
    for r in range(n):
        for j in range(n):
            if lam[r, j] > 0:
                A[r, j] = lam[r, j] * kicks.density(r, j).phi(d)
    A -= np.diag(lam.sum(axis=0))
    return A


def visibility_decay(prep: PreparationSpec, kicks: KickSpec, d, t_grid) -> DecayCurve:
    """``sum_r p_r exp(-Lambda_r [1 - phi_r(d)] t)`` for the diagonal kick model."""
    if not kicks.diagonal:
        raise ValueError("closed-form visibility needs a diagonal kick model")
    p = prep.label_probabilities()
    if p.size != kicks.n:
        raise ValueError("preparation and kick model disagree on the number of labels")
    t = np.asarray(t_grid, dtype=float)
    expo = np.array([kicks.rates[r] * (1.0 - kicks.densities[r].phi(d)) for r in range(kicks.n)])
    vals = np.exp(-np.multiply.outer(t, expo)) @ p
    if np.all(np.imag(expo) == 0):
        vals = vals.real
    return DecayCurve(t, vals, {"scenario": "kick_decoherence", "d": np.asarray(d, float).tolist()})


def build_multiexponential_generator(rates, n: int = 2) -> GeneralizedLindbladGenerator:
    """Discrete labels, each dephasing at its own rate."""
    space = LabelSpace.discrete(len(rates))
    return build_internal_coherence_generator(FrictionSpec.per_label(rates, n), space)


# -- lattice Bloch-Boltzmann -------------------------------------------------

def lattice_pairs(grid: LabelSpace, max_transfer: Optional[float] = None):
    """Ordered site pairs ``(source, target)`` with ``|Q| <= max_transfer``."""
    if grid.coordinates is None:
        raise StructureError("lattice needs momentum coordinates")
    c = grid.coordinates
    out = []
    for s in range(grid.size):
        Q = c - c[s]
        q = np.linalg.norm(Q, axis=1)
        ok = q > 0
        if max_transfer is not None:
            ok &= q <= max_transfer * (1 + 1e-12)
        out += [(s, int(t)) for t in np.flatnonzero(ok)]
    return out


def lattice_rate_table(grid: LabelSpace, amp: ScatteringAmplitude, levels: InternalLevels,
                       gas: GasParameters, order: int = 24,
                       max_transfer: Optional[float] = None) -> RateCoefficientTable:
    """Rates for every lattice transfer, keyed by pre-collision momentum."""
    c = grid.coordinates
    pts = [(c[s], c[t] - c[s]) for s, t in lattice_pairs(grid, max_transfer)]
    return build_rate_table(pts, amp, levels, gas, order)


def build_bloch_boltzmann_generator(grid: LabelSpace, table: RateCoefficientTable,
                                    levels: Optional[InternalLevels] = None,
                                    max_transfer: Optional[float] = None,
                                    tol_herm: float = 1e-12) -> GeneralizedLindbladGenerator:
    """Coupled generator on a momentum lattice.

    Every in-grid transfer ``P -> P + Q`` becomes jumps from the label of
    ``P`` to the label of ``P + Q``, obtained by diagonalizing the
    coefficient matrix over the operator basis ``E_ij``. Loss is generated
    from the same jumps, so transfers leaving the lattice are dropped on
    both sides and discrete trace conservation is exact.
    """
    levels = table.levels if levels is None else levels
    if levels.n != table.levels.n or not np.array_equal(levels.omega, table.levels.omega):
        raise StructureError("levels disagree with the rate table")
    scale = max((abs(v) for ent in table.entries for v in ent.values()), default=1.0)
    if table.hermiticity_defect() > tol_herm * max(scale, 1.0):
        raise ValueError("rate table is not Hermitian")
    n = levels.n
    basis = [levels.basis(i, j) for i in range(n) for j in range(n)]
    c = grid.coordinates
    jumps: list[Jump] = []
    for s, t in lattice_pairs(grid, max_transfer):
        try:
            g = table.find(c[s], c[t] - c[s])
        except KeyError as exc:
            raise StructureError(f"table has no entry for transfer from site {s} to {t}") from exc
        jumps += jumps_from_kossakowski(t, s, table.matrix(g), basis, first_channel=len(jumps))
    return GeneralizedLindbladGenerator(grid, n, None, jumps)


def forward_friction(grid: LabelSpace, table: RateCoefficientTable,
                     max_transfer: Optional[float] = None) -> np.ndarray:
    """Friction matrices ``xi_ik(P)`` seen by a state that is smooth in momentum.

    Sums the elastic diagonal rates ``M^{kk}_{ii}`` into each site, which is
    what the lattice generator reduces to when neighbouring blocks agree.
    """
    n = table.levels.n
    c = grid.coordinates
    xi = np.zeros((grid.size, n, n), dtype=complex)
    for s, t in lattice_pairs(grid, max_transfer):
        C = table.matrix(table.find(c[s], c[t] - c[s]))
        for i in range(n):
            for k in range(n):
                xi[t, i, k] += grid.weights[s] * C[i * n + i, k * n + k]
    return xi
