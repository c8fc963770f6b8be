"""Generalized Lindblad generator over a finite label space.

Schrödinger picture, for every label ``a``::

    d rho_a/dt = -i[H_a, rho_a]
                 + sum_{lam, b} w_b [ R^{ab}_lam rho_b R^{ab}_lam^+
                                      - 1/2 {R^{ba}_lam^+ R^{ba}_lam, rho_a} ]

with ``hbar = 1``. The label weights ``w_b`` enter gain and loss alike, so
the weighted trace is conserved exactly on any grid. Jumps are stored
sparsely as ``(target a, source b, channel, R)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .state import (
    TOL_HERM,
    BlockDiagonalObservable,
    BlockDiagonalState,
    LabelSpace,
    StructureError,
    blocks_from_json,
    blocks_to_json,
    hermiticity_defect,
    hermitize,
)


@dataclass(frozen=True)
class Jump:
    """One Lindblad operator moving weight from ``source`` into ``target``."""

    target: int
    source: int
    channel: int
    matrix: np.ndarray


class GeneralizedLindbladGenerator:
    """Per-label Hamiltonians plus cross-label jump operators.

    Parameters
    ----------
    space : LabelSpace
    dim : int
        Internal dimension ``n``.
    hamiltonians : array_like, shape (L, n, n), optional
        Hermitian per-label Hamiltonians; zero if omitted.
    jumps : iterable of Jump or (target, source, channel, matrix) tuples

    The loss operator ``K_a = sum_{b, lam} w_b R^{ba+} R^{ba}`` is computed
    once at construction.
    """

    def __init__(
        self,
        space: LabelSpace,
        dim: int,
        hamiltonians=None,
        jumps: Iterable = (),
        tol_herm: float = TOL_HERM,
    ):
        self.space = space
        self.dim = int(dim)
        L, n = space.size, self.dim
        if hamiltonians is None:
            H = np.zeros((L, n, n), dtype=complex)
        else:
            H = np.array(hamiltonians, dtype=complex)
            if H.shape != (L, n, n):
                raise StructureError(f"hamiltonians must have shape {(L, n, n)}, got {H.shape}")
            bad = np.flatnonzero(hermiticity_defect(H) > tol_herm)
            if bad.size:
                raise ValueError(f"Hamiltonian of label {int(bad[0])} is not Hermitian")
            H = hermitize(H)
        H.setflags(write=False)
        self.hamiltonians = H

        jl = [j if isinstance(j, Jump) else Jump(*j) for j in jumps]
        tgt = np.array([j.target for j in jl], dtype=int)
        src = np.array([j.source for j in jl], dtype=int)
        if jl and (tgt.min() < 0 or src.min() < 0 or max(tgt.max(), src.max()) >= L):
            raise StructureError("jump references a label outside the space")
        mats = np.array([np.asarray(j.matrix, dtype=complex) for j in jl]).reshape(-1, n, n)
        self.jumps = tuple(Jump(int(a), int(b), int(j.channel), m) for a, b, j, m in zip(tgt, src, jl, mats))
        self._tgt, self._src, self._R = tgt, src, mats
        self._Rdag = np.conj(np.swapaxes(mats, -1, -2))

        w = space.weights
        K = np.zeros((L, n, n), dtype=complex)
        if jl:
            np.add.at(K, src, w[tgt][:, None, None] * (self._Rdag @ mats))
        K = hermitize(K)
        K.setflags(write=False)
        self.loss = K

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)

    def norm_estimate(self) -> float:
        """Upper bound on the generator's rate scale, used for step sizing."""
        h = np.linalg.norm(self.hamiltonians, ord=2, axis=(1, 2)).max(initial=0.0)
        k = np.linalg.norm(self.loss, ord=2, axis=(1, 2)).max(initial=0.0)
        return float(2.0 * h + 2.0 * k)

    def check_loss_psd(self, tol: float = 1e-12) -> bool:
        eigs = np.linalg.eigvalsh(self.loss)
        scale = max(1.0, float(np.abs(eigs).max(initial=0.0)))
        return bool(eigs.min(initial=0.0) >= -tol * scale)

    def is_decoupled(self) -> bool:
        return bool(np.all(self._tgt == self._src))

    # -- application -----------------------------------------------------

    def _check(self, space: LabelSpace, blocks: np.ndarray) -> None:
        if not self.space.same_as(space):
            raise StructureError("generator and operand live on different label spaces")
        if blocks.shape[1:] != (self.dim, self.dim):
            raise StructureError("internal dimension mismatch")

    def schrodinger_blocks(self, rho: np.ndarray) -> np.ndarray:
        """Derivative blocks for raw block array ``rho`` (no checks)."""
        H, K = self.hamiltonians, self.loss
        out = -1j * (H @ rho - rho @ H) - 0.5 * (K @ rho + rho @ K)
        if self._R.shape[0]:
            w = self.space.weights
            gain = (self._R @ rho[self._src] @ self._Rdag) * w[self._src][:, None, None]
            np.add.at(out, self._tgt, gain)
        return hermitize(out)

    def heisenberg_blocks(self, B: np.ndarray) -> np.ndarray:
        H, K = self.hamiltonians, self.loss
        out = 1j * (H @ B - B @ H) - 0.5 * (K @ B + B @ K)
        if self._R.shape[0]:
            w = self.space.weights
            gain = (self._Rdag @ B[self._tgt] @ self._R) * w[self._tgt][:, None, None]
            np.add.at(out, self._src, gain)
        return hermitize(out)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "labels": self.space.to_dict(),
            "dim": self.dim,
            "hamiltonians": blocks_to_json(self.hamiltonians),
            "jumps": [
                {
                    "alpha": j.target,
                    "beta": j.source,
                    "lambda": j.channel,
                    "matrix": blocks_to_json(j.matrix[None])[0],
                }
                for j in self.jumps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GeneralizedLindbladGenerator":
        space = LabelSpace.from_dict(d["labels"])
        H = blocks_from_json(d["hamiltonians"])
        jumps = [
            Jump(j["alpha"], j["beta"], j["lambda"], blocks_from_json([j["matrix"]])[0])
            for j in d["jumps"]
        ]
        return cls(space, d.get("dim", H.shape[1]), H, jumps)

    @classmethod
    def from_json(cls, text: str) -> "GeneralizedLindbladGenerator":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class StateDerivative:
    """``d rho_a / dt`` for every label; Hermitian, weighted trace zero."""

    space: LabelSpace
    blocks: np.ndarray

    def weighted_trace(self) -> float:
        tr = np.einsum("aii->a", self.blocks).real
        return float(np.dot(self.space.weights, tr))


def apply_schrodinger(
    gen: GeneralizedLindbladGenerator, state: BlockDiagonalState
) -> StateDerivative:
    gen._check(state.space, state.blocks)
    return StateDerivative(state.space, gen.schrodinger_blocks(state.blocks))


def apply_heisenberg(
    gen: GeneralizedLindbladGenerator, obs: BlockDiagonalObservable
) -> BlockDiagonalObservable:
    gen._check(obs.space, obs.blocks)
    return BlockDiagonalObservable(obs.space, gen.heisenberg_blocks(obs.blocks))


def zero_generator(space: LabelSpace, dim: int) -> GeneralizedLindbladGenerator:
    return GeneralizedLindbladGenerator(space, dim)


def jumps_from_kossakowski(
    target: int,
    source: int,
    coeffs: np.ndarray,
    basis: Sequence[np.ndarray],
    scale: float = 1.0,
    tol: float = 1e-12,
    first_channel: int = 0,
) -> list[Jump]:
    """Diagonalize ``sum_{pq} c_pq A_p rho A_q^+`` into Lindblad jumps.

    ``coeffs`` must be Hermitian positive semidefinite (within ``tol``
    relative to its largest eigenvalue). ``scale`` multiplies every jump
    rate, e.g. ``1 / w`` to cancel a label weight.
    """
    c = np.asarray(coeffs, dtype=complex)
    c = 0.5 * (c + c.conj().T)
    vals, vecs = np.linalg.eigh(c)
    top = float(np.abs(vals).max(initial=0.0))
    if vals.min(initial=0.0) < -tol * top:
        raise ValueError(
            f"coefficient matrix is not positive semidefinite (eigenvalue {vals.min():.3e})"
        )
    basis = np.asarray(basis, dtype=complex)
    out = []
    ch = first_channel
    for val, vec in zip(vals, vecs.T):
        if val <= tol * top:
            continue
        R = np.sqrt(val * scale) * np.tensordot(vec, basis, axes=1)
        out.append(Jump(target, source, ch, R))
        ch += 1
    return out
