import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lindrate import (
    BlockDiagonalObservable,
    BlockDiagonalState,
    GeneralizedLindbladGenerator,
    Jump,
    LabelSpace,
    StructureError,
    apply_heisenberg,
    apply_schrodinger,
    jumps_from_kossakowski,
    pair,
    step_rk4,
    zero_generator,
)
from lindrate.state import validate
from tests._dense import dense_lindbladian_blocks
from tests._random import random_generator, random_hermitian, random_space, random_state

SZ = np.diag([1.0, -1.0]).astype(complex)
PLUS = 0.5 * np.ones((2, 2), dtype=complex)


def classical_transfer(gamma=0.7):
    space = LabelSpace.discrete(2)
    gen = GeneralizedLindbladGenerator(space, 1, jumps=[(1, 0, 0, np.sqrt(gamma) * np.eye(1))])
    state = BlockDiagonalState(space, [[[1.0]], [[0.0]]])
    return gen, state


class TestSchrodinger:
    def test_pure_hamiltonian(self):
        gen = GeneralizedLindbladGenerator(LabelSpace.discrete(1), 2, [SZ])
        d = apply_schrodinger(gen, BlockDiagonalState(LabelSpace.discrete(1), [PLUS]))
        expect = -1j * (SZ @ PLUS - PLUS @ SZ)
        assert np.allclose(d.blocks[0], expect, atol=1e-15)
        assert np.allclose(np.diag(d.blocks[0]), 0.0)

    def test_classical_transfer(self):
        gen, s = classical_transfer(0.7)
        d = apply_schrodinger(gen, s)
        assert d.blocks[0, 0, 0] == pytest.approx(-0.7)
        assert d.blocks[1, 0, 0] == pytest.approx(0.7)

    def test_matches_dense_embedding(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            space = random_space(rng, 3)
            gen = random_generator(rng, space, 2, n_jumps=4)
            s = random_state(rng, space, 2)
            d = apply_schrodinger(gen, s)
            dense, off = dense_lindbladian_blocks(gen, s.blocks)
            assert off == 0.0
            assert np.allclose(d.blocks, dense, atol=1e-12)
            assert abs(d.weighted_trace()) < 1e-12

    def test_space_mismatch(self):
        rng = np.random.default_rng(0)
        gen = random_generator(rng, random_space(rng, 2), 2)
        with pytest.raises(StructureError):
            apply_schrodinger(gen, random_state(rng, random_space(rng, 2), 2))

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(0)
        space = random_space(rng, 2)
        gen = random_generator(rng, space, 2)
        with pytest.raises(StructureError):
            apply_schrodinger(gen, random_state(rng, space, 3))

    def test_non_hermitian_hamiltonian(self):
        with pytest.raises(ValueError):
            GeneralizedLindbladGenerator(LabelSpace.discrete(1), 2, [[[0, 1], [0, 0]]])

    def test_bad_jump_label(self):
        with pytest.raises(StructureError):
            GeneralizedLindbladGenerator(LabelSpace.discrete(2), 1, jumps=[(2, 0, 0, np.eye(1))])


class TestHeisenberg:
    def test_identity_is_fixed(self):
        rng = np.random.default_rng(1)
        space = random_space(rng, 4)
        gen = random_generator(rng, space, 3)
        d = apply_heisenberg(gen, BlockDiagonalObservable.identity(space, 3))
        assert np.abs(d.blocks).max() < 1e-12

    def test_hamiltonian_sign(self):
        space = LabelSpace.discrete(1)
        gen = GeneralizedLindbladGenerator(space, 2, [SZ])
        B = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        d = apply_heisenberg(gen, BlockDiagonalObservable(space, [B]))
        assert np.allclose(d.blocks[0], 1j * (SZ @ B - B @ SZ))

    def test_duality_examples(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            space = random_space(rng, 3)
            gen = random_generator(rng, space, 2)
            s = random_state(rng, space, 2)
            B = BlockDiagonalObservable(space, [random_hermitian(rng, 2) for _ in range(3)])
            lhs = pair(apply_heisenberg(gen, B), s)
            rhs = pair(B, BlockDiagonalState(space, apply_schrodinger(gen, s).blocks))
            assert lhs == pytest.approx(rhs, abs=1e-11)


def test_trace_and_duality_thousand_draws():
    rng = np.random.default_rng(2024)
    worst_tr = worst_dual = 0.0
    for _ in range(1000):
        L, n = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        space = random_space(rng, L)
        gen = random_generator(rng, space, n)
        s = random_state(rng, space, n)
        d = apply_schrodinger(gen, s)
        worst_tr = max(worst_tr, abs(d.weighted_trace()))
        B = BlockDiagonalObservable(space, [random_hermitian(rng, n) for _ in range(L)])
        lhs = pair(apply_heisenberg(gen, B), s)
        rhs = pair(B, BlockDiagonalState(space, d.blocks))
        worst_dual = max(worst_dual, abs(lhs - rhs))
    assert worst_tr < 1e-12
    assert worst_dual < 1e-11


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), L=st.integers(1, 8), n=st.integers(1, 4))
def test_weighted_trace_of_derivative_vanishes(seed, L, n):
    rng = np.random.default_rng(seed)
    space = random_space(rng, L)
    gen = random_generator(rng, space, n)
    d = apply_schrodinger(gen, random_state(rng, space, n))
    assert abs(d.weighted_trace()) < 1e-12
    assert np.abs(d.blocks - np.conj(np.swapaxes(d.blocks, 1, 2))).max() == 0.0


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), L=st.integers(1, 6), n=st.integers(1, 3))
def test_matches_dense_property(seed, L, n):
    rng = np.random.default_rng(seed)
    space = random_space(rng, L)
    gen = random_generator(rng, space, n)
    s = random_state(rng, space, n)
    dense, off = dense_lindbladian_blocks(gen, s.blocks)
    assert off == 0.0
    assert np.allclose(apply_schrodinger(gen, s).blocks, dense, atol=1e-11)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), L=st.integers(1, 6), n=st.integers(1, 4),
       rank=st.integers(1, 2))
def test_short_step_keeps_positivity(seed, L, n, rank):
    rng = np.random.default_rng(seed)
    space = random_space(rng, L)
    gen = random_generator(rng, space, n)
    s = random_state(rng, space, n, rank=min(rank, n))
    dt = 1e-3 / gen.norm_estimate()
    out = step_rk4(gen, s, dt)
    assert validate(out).min_eigenvalue >= -10 * 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), L=st.integers(2, 6))
def test_decoupled_labels_evolve_independently(seed, L):
    rng = np.random.default_rng(seed)
    space = random_space(rng, L)
    jumps = [(a, a, 0, rng.normal(size=(2, 2)) + 0j) for a in range(L)]
    gen = GeneralizedLindbladGenerator(space, 2, jumps=jumps)
    assert gen.is_decoupled()
    s = random_state(rng, space, 2)
    full = apply_schrodinger(gen, s).blocks
    for a in range(L):
        # zeroing every other label must leave this label's derivative untouched
        blocks = np.zeros_like(s.blocks)
        blocks[a] = s.blocks[a]
        alone = gen.schrodinger_blocks(blocks)
        assert np.array_equal(alone[a], full[a])
        others = np.delete(alone, a, axis=0)
        assert np.all(others == 0)


def test_loss_is_psd():
    rng = np.random.default_rng(5)
    for _ in range(50):
        space = random_space(rng, 5)
        assert random_generator(rng, space, 3).check_loss_psd()


def test_zero_generator_derivative():
    rng = np.random.default_rng(6)
    space = random_space(rng, 3)
    d = apply_schrodinger(zero_generator(space, 2), random_state(rng, space, 2))
    assert np.all(d.blocks == 0)


def test_json_roundtrip():
    rng = np.random.default_rng(7)
    space = random_space(rng, 3, continuous=True)
    gen = random_generator(rng, space, 2, n_jumps=5)
    back = GeneralizedLindbladGenerator.from_json(gen.to_json())
    assert back.space.same_as(space)
    assert np.array_equal(back.hamiltonians, gen.hamiltonians)
    assert len(back.jumps) == 5
    for a, b in zip(back.jumps, gen.jumps):
        assert (a.target, a.source, a.channel) == (b.target, b.source, b.channel)
        assert np.array_equal(a.matrix, b.matrix)
    s = random_state(rng, space, 2)
    assert np.array_equal(apply_schrodinger(back, s).blocks, apply_schrodinger(gen, s).blocks)


class TestKossakowski:
    def test_reproduces_quadratic_form(self):
        rng = np.random.default_rng(8)
        basis = [random_hermitian(rng, 2) for _ in range(3)]
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        c = a @ a.conj().T
        jumps = jumps_from_kossakowski(0, 0, c, basis)
        rho = random_hermitian(rng, 2)
        direct = sum(c[p, q] * basis[p] @ rho @ basis[q].conj().T for p in range(3) for q in range(3))
        via = sum(j.matrix @ rho @ j.matrix.conj().T for j in jumps)
        assert np.allclose(direct, via, atol=1e-12)

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            jumps_from_kossakowski(0, 0, np.diag([1.0, -0.5]), [np.eye(2), SZ])

    def test_scale_and_channels(self):
        jumps = jumps_from_kossakowski(1, 0, np.diag([0.0, 2.0]), [np.eye(2), SZ], scale=0.5,
                                       first_channel=3)
        assert len(jumps) == 1
        assert isinstance(jumps[0], Jump)
        assert jumps[0].channel == 3
        assert np.allclose(jumps[0].matrix @ jumps[0].matrix.conj().T, np.eye(2))
