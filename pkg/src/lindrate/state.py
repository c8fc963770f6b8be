"""Block-diagonal bipartite states and observables.

A state of a system ``H (x) C^L`` that is diagonal in the label basis is the
family ``(rho_0, ..., rho_{L-1})`` of subcollections. Continuous labels are
always a finite quadrature grid, and every label carries a positive weight
``w_a``. The normalization convention is the weighted trace

    sum_a w_a Tr rho_a = 1,

so a block stores a *density* with respect to the label measure. Discrete
labels simply use unit weights.

Weighted sums run in ascending label order through :func:`math.fsum`
(correctly rounded), which makes them independent of how the terms are
grouped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

TOL_HERM = 1e-10
TOL_POS = 1e-9
TOL_TRACE = 1e-8


class StructureError(ValueError):
    """Inconsistent shapes or mismatched label spaces."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabelSpace:
    """Ordered finite label set with quadrature weights.

    Parameters
    ----------
    weights : array_like, shape (L,)
        Strictly positive weights. For momentum grids they carry the ``d^3P``
        volume element.
    coordinates : array_like, shape (L, 3), optional
        Momentum attached to each label. Either every label has one or none.
    """

    weights: np.ndarray
    coordinates: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise StructureError("label space must contain at least one label")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise StructureError("label weights must be finite and > 0")
        object.__setattr__(self, "weights", _frozen(w))
        if self.coordinates is not None:
            c = np.array(self.coordinates, dtype=float)
            if c.shape != (w.size, 3):
                raise StructureError(
                    f"coordinates must have shape ({w.size}, 3), got {c.shape}"
                )
            object.__setattr__(self, "coordinates", _frozen(c))

    @classmethod
    def discrete(cls, n_labels: int) -> "LabelSpace":
        return cls(np.ones(n_labels))

    @property
    def size(self) -> int:
        return self.weights.size

    def __len__(self) -> int:
        return self.size

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.size)

    def same_as(self, other: "LabelSpace") -> bool:
        if self is other:
            return True
        if self.size != other.size or not np.array_equal(self.weights, other.weights):
            return False
        if (self.coordinates is None) != (other.coordinates is None):
            return False
        return self.coordinates is None or np.array_equal(
            self.coordinates, other.coordinates
        )

    def to_dict(self) -> list[dict[str, Any]]:
        out = []
        for k in range(self.size):
            d: dict[str, Any] = {"index": k}
            if self.coordinates is not None:
                d["coordinate"] = [float(x) for x in self.coordinates[k]]
            d["weight"] = float(self.weights[k])
            out.append(d)
        return out

    @classmethod
    def from_dict(cls, labels: Sequence[dict]) -> "LabelSpace":
        idx = [int(d["index"]) for d in labels]
        if idx != list(range(len(labels))):
            raise StructureError("label indices must be unique and contiguous from 0")
        has = ["coordinate" in d for d in labels]
        if any(has) and not all(has):
            raise StructureError("either all labels carry coordinates or none do")
        coords = [d["coordinate"] for d in labels] if all(has) and labels else None
        return cls([d["weight"] for d in labels], coords)


def _as_blocks(blocks, space: LabelSpace) -> np.ndarray:
    b = np.array(blocks, dtype=complex)
    if b.ndim != 3 or b.shape[1] != b.shape[2]:
        raise StructureError(f"blocks must have shape (L, n, n), got {b.shape}")
    if b.shape[0] != space.size:
        raise StructureError(
            f"{b.shape[0]} blocks for a label space of size {space.size}"
        )
    return _frozen(b)


def hermiticity_defect(blocks: np.ndarray) -> np.ndarray:
    """Per-block ``max |A - A^dagger|``."""
    diff = blocks - np.conj(np.swapaxes(blocks, -1, -2))
    return np.abs(diff).reshape(blocks.shape[0], -1).max(axis=1)


def hermitize(blocks: np.ndarray) -> np.ndarray:
    return 0.5 * (blocks + np.conj(np.swapaxes(blocks, -1, -2)))


@dataclass(frozen=True, eq=False)
class BlockDiagonalState:
    """Family of subcollections ``rho_a``, one ``n x n`` block per label.

    Construction checks shapes only. Physical validity (positivity,
    normalization) is checked by :func:`validate` or :meth:`checked`,
    because evolved states are allowed to drift within tolerance.
    """

    space: LabelSpace
    blocks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "blocks", _as_blocks(self.blocks, self.space))

    @property
    def dim(self) -> int:
        return self.blocks.shape[1]

    def replace_blocks(self, blocks) -> "BlockDiagonalState":
        return BlockDiagonalState(self.space, blocks)

    def checked(self, tol_herm=TOL_HERM, tol_pos=TOL_POS, tol_trace=TOL_TRACE):
        """Return ``self`` or raise ``ValueError`` listing violations."""
        report = validate(self, tol_herm=tol_herm, tol_pos=tol_pos, tol_trace=tol_trace)
        if not report.ok:
            raise ValueError("invalid state: " + "; ".join(report.violations))
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "labels": self.space.to_dict(),
            "blocks": blocks_to_json(self.blocks),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "BlockDiagonalState":
        space = LabelSpace.from_dict(d["labels"])
        return cls(space, blocks_from_json(d["blocks"]))

    @classmethod
    def from_json(cls, text: str) -> "BlockDiagonalState":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class BlockDiagonalObservable:
    """Block-diagonal bounded operator ``B = (B_0, ..., B_{L-1})``."""

    space: LabelSpace
    blocks: np.ndarray

    def __post_init__(self):
        b = _as_blocks(self.blocks, self.space)
        if np.any(hermiticity_defect(b) > TOL_HERM):
            raise ValueError("observable blocks must be Hermitian")
        object.__setattr__(self, "blocks", b)

    @classmethod
    def identity(cls, space: LabelSpace, n: int) -> "BlockDiagonalObservable":
        return cls(space, np.broadcast_to(np.eye(n), (space.size, n, n)))


def blocks_to_json(blocks: np.ndarray) -> list:
    """Row-major nested lists with complex entries as ``[re, im]``."""
    return [
        [[[float(z.real), float(z.imag)] for z in row] for row in block]
        for block in blocks
    ]


def blocks_from_json(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 4 or arr.shape[-1] != 2:
        raise StructureError("blocks must be nested [re, im] pairs of shape (L, n, n, 2)")
    return arr[..., 0] + 1j * arr[..., 1]


def _check_same_space(a: LabelSpace, b: LabelSpace) -> None:
    if not a.same_as(b):
        raise StructureError("label spaces differ")


def _weighted_entry_sum(weights: np.ndarray, values: np.ndarray) -> complex:
    prod = weights * values
    return complex(math.fsum(prod.real), math.fsum(prod.imag))


def marginalize(state: BlockDiagonalState) -> np.ndarray:
    """Label-summed operator ``w = sum_a w_a rho_a``.

    Each entry is a correctly rounded sum in ascending label order.
    """
    w = state.space.weights
    n = state.dim
    out = np.empty((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            out[i, j] = _weighted_entry_sum(w, state.blocks[:, i, j])
    return out


def _trace_of(matrix: np.ndarray) -> float:
    return math.fsum(np.diagonal(matrix).real)


def total_trace(state: BlockDiagonalState) -> float:
    """Weighted total trace ``sum_a w_a Tr rho_a``.

    Computed as the trace of :func:`marginalize`, so the two agree bitwise.
    """
    return _trace_of(marginalize(state))


def label_weights(state: BlockDiagonalState) -> np.ndarray:
    """Classical label distribution ``p_a = w_a Tr rho_a``."""
    tr = np.einsum("aii->a", state.blocks).real
    return state.space.weights * tr


def pair(observable: BlockDiagonalObservable, state: BlockDiagonalState) -> float:
    """Duality pairing ``<B, rho> = sum_a w_a Tr(B_a rho_a)``."""
    _check_same_space(observable.space, state.space)
    if observable.blocks.shape != state.blocks.shape:
        raise StructureError("observable and state block shapes differ")
    per_label = np.einsum("aij,aji->a", observable.blocks, state.blocks)
    return _weighted_entry_sum(state.space.weights, per_label).real


@dataclass(frozen=True)
class ValidationReport:
    """Diagnostics of a state against tolerances. Never raised."""

    min_eigenvalues: np.ndarray
    hermiticity_defects: np.ndarray
    block_traces: np.ndarray
    total_trace: float
    trace_deviation: float
    tol_herm: float
    tol_pos: float
    tol_trace: float
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def min_eigenvalue(self) -> float:
        return float(self.min_eigenvalues.min())

    @property
    def max_hermiticity_defect(self) -> float:
        return float(self.hermiticity_defects.max())


def validate(
    state: BlockDiagonalState,
    tol_herm: float = TOL_HERM,
    tol_pos: float = TOL_POS,
    tol_trace: float = TOL_TRACE,
) -> ValidationReport:
    """Check Hermiticity, positivity and normalization of every block."""
    blocks = state.blocks
    defects = hermiticity_defect(blocks)
    eigs = np.linalg.eigvalsh(hermitize(blocks)).min(axis=1)
    traces = np.einsum("aii->a", blocks).real
    tt = total_trace(state)
    violations = []
    for a in np.flatnonzero(defects > tol_herm):
        violations.append(f"block {a}: hermiticity defect {defects[a]:.3e}")
    for a in np.flatnonzero(eigs < -tol_pos):
        violations.append(f"block {a}: negative eigenvalue {eigs[a]:.3e}")
    # blocks are densities on weighted grids; the bound applies to w_a Tr rho_a
    probs = state.space.weights * traces
    for a in np.flatnonzero(probs > 1.0 + tol_trace):
        violations.append(f"block {a}: weighted trace {probs[a]:.6g} exceeds 1")
    if abs(tt - 1.0) > tol_trace:
        violations.append(f"total trace {tt:.12g} deviates from 1")
    return ValidationReport(
        min_eigenvalues=eigs,
        hermiticity_defects=defects,
        block_traces=traces,
        total_trace=tt,
        trace_deviation=tt - 1.0,
        tol_herm=tol_herm,
        tol_pos=tol_pos,
        tol_trace=tol_trace,
        violations=violations,
    )
