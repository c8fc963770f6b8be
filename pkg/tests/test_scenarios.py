import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lindrate import (
    EvolutionConfig,
    LabelSpace,
    StructureError,
    apply_schrodinger,
    evolve,
    label_weights,
    marginalize,
    total_trace,
)
from lindrate.gas import GasParameters, InternalLevels, ScatteringAmplitude
from lindrate.integrator import integrate_linear
from lindrate.oracles import GeometricFamily, is_completely_monotone, lambda_power_law, lambda_stretched, loglog_slope
from tests._random import random_state
from lindrate.scenarios import (
    PLUS,
    CustomKick,
    FrictionSpec,
    GaussianKick,
    GaussianMixtureKick,
    KickSpec,
    PreparationSpec,
    QuadratureSpec,
    build_bloch_boltzmann_generator,
    build_internal_coherence_generator,
    build_kick_coherence_ode,
    characteristic_function,
    coherence_decay_curve,
    forward_friction,
    hermite_grid,
    lattice_pairs,
    lattice_rate_table,
    momentum_lattice,
    product_state,
    radial_grid,
    run_internal_coherence,
    thermal_density,
    thermal_state,
    visibility_decay,
)


def random_friction(rng, L, n=2):
    a = rng.normal(size=(L, n, n)) + 1j * rng.normal(size=(L, n, n))
    return a @ np.conj(np.swapaxes(a, 1, 2))


class TestGrids:
    def test_radial_grid_integrates_thermal_density(self):
        g = radial_grid(64, 1.3)
        # the rule stops at 4.5 p_beta, so the Maxwellian tail beyond it is missing
        assert np.dot(g.weights, thermal_density(g.coordinates, 1.3)) == pytest.approx(1.0, abs=1e-8)
        assert np.all(np.linalg.norm(g.coordinates, axis=1) > 0)

    def test_lattice(self):
        g = momentum_lattice((3, 2, 1), 0.5, center=(1.0, 0.0, 0.0))
        assert g.size == 6
        assert np.allclose(g.weights, 0.125)
        assert np.allclose(g.coordinates.mean(axis=0), [1.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            momentum_lattice((0, 1, 1), 0.5)

    def test_lattice_pairs(self):
        g = momentum_lattice((3, 1, 1), 1.0)
        assert sorted(lattice_pairs(g, 1.0)) == [(0, 1), (1, 0), (1, 2), (2, 1)]
        assert len(lattice_pairs(g)) == 6

    def test_thermal_state_normalized(self):
        s = thermal_state(hermite_grid(6, 0.8), PLUS, 0.8)
        assert total_trace(s) == pytest.approx(1.0, abs=1e-15)
        assert np.allclose(marginalize(s), PLUS, atol=1e-15)

    def test_thermal_needs_coordinates(self):
        with pytest.raises(StructureError):
            thermal_state(LabelSpace.discrete(3), PLUS, 1.0)


class TestPreparation:
    def test_weights(self):
        prep = PreparationSpec(PLUS, "weights", weights=[0.25, 0.75])
        s = prep.build()
        assert np.allclose(label_weights(s), [0.25, 0.75])

    def test_geometric(self):
        prep = PreparationSpec(PLUS, "geometric", geometric=GeometricFamily(1.0, 1.0))
        assert math.fsum(prep.label_probabilities()) == pytest.approx(1.0, abs=1e-13)

    def test_invalid(self):
        with pytest.raises(ValueError):
            PreparationSpec(np.diag([1.2, -0.2]), "weights", weights=[1.0])
        with pytest.raises(ValueError):
            PreparationSpec(PLUS, "weights", weights=[0.5, 0.6])
        with pytest.raises(ValueError):
            PreparationSpec(PLUS, "nope")
        with pytest.raises(ValueError):
            PreparationSpec(PLUS).build()


class TestInternalCoherenceGenerator:
    def test_uniform_friction_freezes_coherence(self):
        grid = radial_grid(16, 1.0)
        gen = build_internal_coherence_generator(FrictionSpec.uniform(0.7), grid)
        d = apply_schrodinger(gen, thermal_state(grid, PLUS, 1.0))
        assert np.abs(d.blocks).max() < 1e-14

    def test_pure_dephasing_rate(self):
        grid = LabelSpace.discrete(1)
        eta = 0.9
        gen = build_internal_coherence_generator(FrictionSpec.per_label([eta]), grid)
        s = product_state(grid, np.array([[0.3, 0.2 - 0.1j], [0.2 + 0.1j, 0.7]]), [1.0])
        d = apply_schrodinger(gen, s).blocks[0]
        assert d[0, 1] == pytest.approx(-eta * s.blocks[0, 0, 1])
        assert d[0, 0] == 0 and d[1, 1] == 0

    def test_populations_constant_random_friction(self):
        rng = np.random.default_rng(0)
        grid = radial_grid(12, 1.0)
        xi = random_friction(rng, grid.size)
        gen = build_internal_coherence_generator(FrictionSpec.custom(lambda c: xi), grid)
        s = thermal_state(grid, np.array([[0.4, 0.3], [0.3, 0.6]]), 1.0)
        dt = 1e-2 / gen.norm_estimate()
        _, final = evolve(gen, s, EvolutionConfig(0.0, 200 * dt, dt=dt))
        pops0 = np.einsum("aii->ai", s.blocks)
        pops = np.einsum("aii->ai", final.blocks)
        assert np.abs(pops - pops0).max() < 1e-12 * np.abs(pops0).max()
        assert gen.is_decoupled()

    def test_friction_coefficient_general(self):
        rng = np.random.default_rng(1)
        grid = radial_grid(5, 1.0)
        xi = random_friction(rng, 5)
        gen = build_internal_coherence_generator(FrictionSpec.custom(lambda c: xi), grid)
        s = product_state(grid, PLUS, np.full(5, 0.2))
        d = apply_schrodinger(gen, s).blocks
        Xi = 0.5 * xi[:, 0, 0] + 0.5 * xi[:, 1, 1] - xi[:, 0, 1]
        assert np.allclose(d[:, 0, 1], -Xi * s.blocks[:, 0, 1], atol=1e-14)

    def test_negative_diagonal_rejected(self):
        xi = np.array([[[-0.1, 0.0], [0.0, 1.0]]])
        with pytest.raises(ValueError, match="negative diagonal"):
            build_internal_coherence_generator(FrictionSpec.custom(lambda c: xi), radial_grid(1, 1.0))

    def test_indefinite_rejected(self):
        xi = np.array([[[1.0, 2.0], [2.0, 1.0]]])
        with pytest.raises(ValueError):
            build_internal_coherence_generator(FrictionSpec.custom(lambda c: xi), radial_grid(1, 1.0))


class TestDecayCurve:
    def test_constant(self):
        t = np.linspace(0, 5, 11)
        c = coherence_decay_curve(FrictionSpec.constant(0.6), 1.0, t)
        assert np.allclose(c.values, np.exp(-0.6 * t), rtol=1e-13)

    def test_quadratic_at_tau(self):
        a, pb = 0.8, 1.4
        tau = 1 / (a * pb**2)
        c = coherence_decay_curve(FrictionSpec.quadratic(a), pb, [0.0, tau])
        assert c.values[0] == pytest.approx(1.0, abs=1e-14)
        assert c.values[1] == pytest.approx(2**-1.5, rel=1e-8)
        assert c.values[1] == pytest.approx(0.3535534, abs=1e-7)
        assert c.meta["converged"]

    def test_inverse_quadratic_at_tau(self):
        b, pb = 0.3, 1.2
        tau = pb**2 / (4 * b)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            c = coherence_decay_curve(FrictionSpec.inverse_quadratic(b), pb, [tau],
                                      QuadratureSpec(order=128))
        assert c.values[0] == pytest.approx(2 / math.e, rel=1e-5)
        assert c.values[0] == pytest.approx(0.7357589, abs=1e-5)

    def test_nonconvergence_reported(self):
        with pytest.warns(RuntimeWarning, match="not converged"):
            c = coherence_decay_curve(FrictionSpec.inverse_quadratic(1.0), 1.0, [0.5, 2.0],
                                      QuadratureSpec(order=8))
        assert not c.meta["converged"]

    def test_markovian_limit(self):
        t = np.linspace(0.1, 20, 50)
        v = coherence_decay_curve(FrictionSpec.constant(0.35), 1.0, t).values
        assert np.allclose(-np.log(v), 0.35 * t, rtol=1e-10)

    def test_anisotropic_uses_hermite(self):
        f = FrictionSpec.custom(lambda c: (0.5 * c[:, 0] ** 2)[:, None, None] * np.eye(2), isotropic=False)
        c = coherence_decay_curve(f, 1.0, [1.0], QuadratureSpec(order=30))
        # one Cartesian axis of exp(-t p_x^2/2) averaged over exp(-p_x^2): (1 + t/2)^(-1/2)
        assert c.values[0] == pytest.approx((1 + 0.5) ** -0.5, rel=1e-10)

    def test_matches_evolution_on_same_grid(self):
        grid = radial_grid(32, 1.0)
        f = FrictionSpec.quadratic(1.0)
        series, _, _ = run_internal_coherence(f, 1.0, 5.0, 1000, grid=grid)
        curve = coherence_decay_curve(f, 1.0, series.times, grid=grid)
        assert np.abs(series.channels["coherence"] - curve.values).max() < 1e-8

    @settings(max_examples=20, deadline=None)
    @given(a=st.floats(0.05, 5.0), pb=st.floats(0.3, 3.0))
    def test_power_law_matches_oracle(self, a, pb):
        tau = 1 / (a * pb**2)
        t = tau * np.linspace(0, 10, 21)
        v = coherence_decay_curve(FrictionSpec.quadratic(a), pb, t, QuadratureSpec(check=False)).values
        assert np.abs(v / lambda_power_law(t, tau) - 1).max() < 1e-6
        assert is_completely_monotone(t, v, tol=1e-12)

    def test_stretched_matches_oracle(self):
        b, pb = 1.0, 1.0
        tau = pb**2 / (4 * b)
        t = tau * np.linspace(0, 10, 41)
        v = coherence_decay_curve(FrictionSpec.inverse_quadratic(b), pb, t,
                                  QuadratureSpec(order=128, check=False)).values
        assert np.abs(v / lambda_stretched(t, tau) - 1).max() < 1e-4


class TestKicks:
    def test_zero_separation_diagonal(self):
        kicks = KickSpec.gaussian([0.5, 1.5, 2.0], [1.0, 0.3, 2.0])
        assert np.all(build_kick_coherence_ode(np.zeros(3), kicks) == 0)

    def test_diagonal_entries(self):
        kicks = KickSpec.gaussian([0.5, 1.5], [1.0, 0.3])
        d = np.array([0.4, -1.0, 0.2])
        A = build_kick_coherence_ode(d, kicks)
        for r in range(2):
            phi = math.exp(-0.5 * kicks.densities[r].sigma ** 2 * np.dot(d, d))
            assert A[r, r] == pytest.approx(-kicks.rates[r] * (1 - phi), rel=1e-14)
        assert A[0, 1] == 0 and A[1, 0] == 0

    def test_coupled_column_sums(self):
        g = GaussianKick(1.0)
        kicks = KickSpec([[0.4, 0.7], [0.7, 0.2]], [[g, g], [g, g]])
        A = build_kick_coherence_ode(np.zeros(3), kicks)
        assert np.allclose(A.sum(axis=0), 0.0, atol=1e-15)
        # total coherence at d = 0 is conserved
        _, Y = integrate_linear(A, [0.3, 0.7], times=[0.0, 1.0, 5.0], dt=0.01)
        assert np.allclose(Y.sum(axis=1), 1.0, atol=1e-13)

    def test_characteristic_function(self):
        kicks = KickSpec.gaussian([1.0], [0.8])
        assert characteristic_function(kicks, 0, np.zeros(3)) == 1.0
        d = np.array([1.0, 2.0, -0.5])
        assert characteristic_function(kicks, 0, d) == pytest.approx(math.exp(-0.32 * np.dot(d, d)))
        far = 4.0 / 0.8 * np.array([0.0, 0.0, 1.0])
        assert abs(characteristic_function(kicks, 0, far)) < 1e-3

    def test_gaussian_phi_by_quadrature(self):
        g = GaussianKick(0.7)
        custom = CustomKick(lambda Q: g.pdf(Q), scale=0.7 * math.sqrt(2))
        for d in (np.zeros(3), np.array([0.3, -0.8, 1.1]), np.array([2.0, 0.0, 0.0])):
            assert custom.phi(d) == pytest.approx(g.phi(d), abs=1e-12)

    def test_mixture_phi_by_quadrature(self):
        mix = GaussianMixtureKick((0.3, 0.7), ((0.5, 0.0, 0.0), (0.0, -0.2, 0.1)), (0.6, 0.9))
        custom = CustomKick(mix.pdf, scale=1.0, order=60)
        d = np.array([0.7, 0.2, -0.4])
        assert custom.phi(d) == pytest.approx(mix.phi(d), abs=1e-10)
        assert abs(mix.phi(d)) <= 1.0

    def test_unnormalized_density_rejected(self):
        with pytest.raises(ValueError):
            CustomKick(lambda Q: 2 * GaussianKick(1.0).pdf(Q), scale=math.sqrt(2))

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            KickSpec.gaussian([-1.0], [1.0])
        with pytest.raises(ValueError):
            KickSpec.gaussian([1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            GaussianKick(0.0)


class TestVisibility:
    def test_single_label_exponential(self):
        kicks = KickSpec.gaussian([0.0, 1.3], [1.0, 0.5])
        prep = PreparationSpec(PLUS, "weights", weights=[0.0, 1.0])
        d = np.array([0.0, 1.0, 0.0])
        t = np.linspace(0, 4, 9)
        phi = math.exp(-0.125)
        c = visibility_decay(prep, kicks, d, t)
        assert np.allclose(c.values, np.exp(-1.3 * (1 - phi) * t), rtol=1e-14)

    def test_vanishing_phi(self):
        lam = 0.8
        kicks = KickSpec.gaussian([lam, 2 * lam], [1.0, 1.0])
        prep = PreparationSpec(PLUS, "weights", weights=[0.5, 0.5])
        t = np.linspace(0, 3, 7)
        c = visibility_decay(prep, kicks, np.array([0.0, 0.0, 100.0]), t)
        assert np.allclose(c.values, 0.5 * (np.exp(-lam * t) + np.exp(-2 * lam * t)), atol=1e-15)

    @pytest.mark.parametrize("a,b", [(1.0, 1.0), (1.5, 1.0), (1.0, 2.0)])
    def test_geometric_slope(self, a, b):
        fam = GeometricFamily(a, b)
        assert fam.weights()[-1] < 1e-12
        kicks = KickSpec.gaussian(fam.rates(), np.ones(fam.r_max + 1))
        prep = PreparationSpec(PLUS, "geometric", geometric=fam)
        t = np.logspace(2, 4, 81)
        c = visibility_decay(prep, kicks, np.array([0.0, 0.0, 50.0]), t)
        assert loglog_slope(t, c.values) == pytest.approx(-a / b, rel=0.02)

    def test_many_labels_completely_monotone(self):
        rng = np.random.default_rng(2)
        n = 8
        p = rng.dirichlet(np.ones(n))
        kicks = KickSpec.gaussian(rng.uniform(0.1, 5, n), rng.uniform(0.2, 2, n))
        prep = PreparationSpec(PLUS, "weights", weights=p.tolist())
        t = np.linspace(0, 10, 201)
        c = visibility_decay(prep, kicks, rng.normal(size=3), t)
        assert is_completely_monotone(t, c.values)

    def test_matches_block_evolution(self):
        # the kick ODE agrees with summing label-resolved closed forms
        kicks = KickSpec.gaussian([0.4, 1.1, 2.5], [0.5, 1.0, 1.5])
        p = [0.2, 0.5, 0.3]
        prep = PreparationSpec(PLUS, "weights", weights=p)
        d = np.array([0.3, 0.4, 0.0])
        t = np.linspace(0, 6, 13)
        _, Y = integrate_linear(build_kick_coherence_ode(d, kicks), p, times=t, dt=0.01)
        assert np.abs(Y.sum(axis=1) - visibility_decay(prep, kicks, d, t).values).max() < 1e-9

    def test_rejects_coupled(self):
        g = GaussianKick(1.0)
        kicks = KickSpec([[0.4, 0.7], [0.7, 0.2]], [[g, g], [g, g]])
        with pytest.raises(ValueError):
            visibility_decay(PreparationSpec(PLUS, "weights", weights=[0.5, 0.5]), kicks,
                             np.ones(3), [0.0])


def _lattice_setup(shape, spacing, amp, levels, gas, max_transfer=None, order=12):
    grid = momentum_lattice(shape, spacing)
    table = lattice_rate_table(grid, amp, levels, gas, order=order, max_transfer=max_transfer)
    gen = build_bloch_boltzmann_generator(grid, table, max_transfer=max_transfer)
    return grid, table, gen


class TestBlochBoltzmann:
    def test_trace_derivative_zero(self):
        rng = np.random.default_rng(3)
        gas = GasParameters(1.0, 2.0, 1.0, 1.0)
        lv = InternalLevels([0.0, 0.3])
        c = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        amp = ScatteringAmplitude.gaussian_envelope(c, 1.5)
        grid, _, gen = _lattice_setup((3, 2, 1), 0.6, amp, lv, gas)
        for _ in range(5):
            s = random_state(rng, grid, 2)
            assert abs(apply_schrodinger(gen, s).weighted_trace()) < 1e-13
        assert gen.check_loss_psd()

    def test_thermal_state_stationary(self):
        # single level, constant amplitude: the Maxwellian of the test particle
        gas = GasParameters(1.0, 2.0, 1.0, 1.0)
        lv = InternalLevels([0.0])
        amp = ScatteringAmplitude.constant(0.7, 1)
        for shape, h in (((5, 1, 1), 0.8), ((9, 1, 1), 0.4)):
            grid, _, gen = _lattice_setup(shape, h, amp, lv, gas)
            s = thermal_state(grid, np.eye(1), gas.P_beta)
            d = apply_schrodinger(gen, s).blocks
            scale = np.abs(gen.loss).max() * np.abs(s.blocks).max()
            assert np.abs(d).max() < 1e-12 * scale

    def test_nonthermal_state_moves(self):
        gas = GasParameters(1.0, 2.0, 1.0, 1.0)
        lv = InternalLevels([0.0])
        amp = ScatteringAmplitude.constant(0.7, 1)
        grid, _, gen = _lattice_setup((5, 1, 1), 0.8, amp, lv, gas)
        s = thermal_state(grid, np.eye(1), 0.5 * gas.P_beta)
        assert np.abs(apply_schrodinger(gen, s).blocks).max() > 1e-6

    def test_forward_friction_convergence(self):
        gas = GasParameters(1.0, 1e4, 1.0, 1.0)
        lv = InternalLevels([0.0, 0.0])
        amp = ScatteringAmplitude.separable(np.diag([1.0, 0.6]))
        gaps = []
        for n, h in ((17, 0.25), (33, 0.125)):
            grid, table, gen = _lattice_setup((n, 1, 1), h, amp, lv, gas, max_transfer=h)
            xi = forward_friction(grid, table, max_transfer=h)
            ref = build_internal_coherence_generator(FrictionSpec.custom(lambda c: xi), grid)
            s = thermal_state(grid, PLUS, 1.5)
            a = apply_schrodinger(gen, s).blocks
            b = apply_schrodinger(ref, s).blocks
            gaps.append(np.abs(a - b).max() / np.abs(b).max())
        assert gaps[1] < 0.6 * gaps[0]

    def test_table_mismatch(self):
        gas = GasParameters(1.0, 2.0, 1.0, 1.0)
        lv = InternalLevels([0.0])
        amp = ScatteringAmplitude.constant(1.0, 1)
        grid = momentum_lattice((3, 1, 1), 0.5)
        small = lattice_rate_table(grid, amp, lv, gas, order=8, max_transfer=0.5)
        with pytest.raises(StructureError):
            build_bloch_boltzmann_generator(grid, small)
        with pytest.raises(StructureError):
            build_bloch_boltzmann_generator(grid, small, levels=InternalLevels([0.0, 1.0]),
                                            max_transfer=0.5)


def test_run_internal_coherence_channel():
    series, final, gen = run_internal_coherence(FrictionSpec.quadratic(1.0), 1.0, 1.0, 100, n_points=16)
    assert series.channels["coherence"][0] == 1.0
    assert series.meta["steps"] == 100
    assert final.space.same_as(gen.space)
