"""Airy stress function of the von Karman plate and the membrane coupling operators.

``phi(u, v)`` solves ``Delta^2 phi = [u, v]`` with clamped boundary data.  The
membrane force acting on the plate is ``[u, psi]`` with ``psi`` a combination
of ``phi(u, u)`` and its time derivative.  Discretely the bracket is
linearised in its second argument, ``v -> [u, v] = B_u v``, and the force is
taken as ``B_u^T psi`` so that ``<E u, u>`` is exactly the discrete biharmonic
energy of ``phi``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid_ops import BCKind, Field, Grid, biharmonic_matrix, second_difference_matrices
from .memory import HistoryBuffer, MemoryKernel, dm_apply


class MemoryMode(str, enum.Enum):
    SHORT = "short"
    SINGULAR = "singular"


@dataclass
class AiryOperator:
    """Clamped biharmonic system on interior nodes with a cached LU factorization."""

    grid: Grid
    matrix: sp.csc_matrix = field(init=False, repr=False)
    d11: sp.csr_matrix = field(init=False, repr=False)
    d22: sp.csr_matrix = field(init=False, repr=False)
    d12: sp.csr_matrix = field(init=False, repr=False)
    _lu: object = field(init=False, repr=False)

    def __post_init__(self):
        self.matrix = biharmonic_matrix(self.grid, BCKind.CLAMPED).tocsc()
        self.d11, self.d22, self.d12 = second_difference_matrices(self.grid)
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:  # singular assembly
            raise ValueError(f"clamped biharmonic factorization failed: {exc}") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """``K_c^{-1} rhs`` for a flat interior vector or a 2-D block of columns."""
        return self._lu.solve(np.asarray(rhs, dtype=float))

    def bracket(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``[u, v]`` on flat interior vectors of fields vanishing on the boundary."""
        u11, u22, u12 = self.d11 @ u, self.d22 @ u, self.d12 @ u
        v11, v22, v12 = self.d11 @ v, self.d22 @ v, self.d12 @ v
        return u11 * v22 + u22 * v11 - 2 * u12 * v12

    def bracket_matrix(self, u: np.ndarray) -> sp.csr_matrix:
        """Sparse ``B_u`` with ``B_u v = [u, v]``."""
        dg = sp.diags
        return (
            dg(self.d11 @ u) @ self.d22 + dg(self.d22 @ u) @ self.d11 - 2 * dg(self.d12 @ u) @ self.d12
        ).tocsr()


def _interior_vec(f: Field, grid: Grid) -> np.ndarray:
    if f.grid != grid:
        raise ValueError("field grid does not match the Airy operator grid")
    vals = f.values
    ring = np.concatenate([vals[0], vals[-1], vals[1:-1, 0], vals[1:-1, -1]])
    if np.ptp(ring) > 1e-12 * max(1.0, np.abs(ring).max()):
        raise ValueError("Airy operator expects fields with a constant boundary trace")
    return (f.interior - ring[0]).ravel()


def solve_airy(op: AiryOperator, u: Field, v: Field) -> Field:
    """``phi(u, v)``: clamped solution of ``Delta^2 phi = [u, v]``."""
    uu, vv = _interior_vec(u, op.grid), _interior_vec(v, op.grid)
    phi = op.solve(op.bracket(uu, vv))
    return Field(op.grid, op.grid.embed(phi))


def evk_operator(
    u: Field,
    udot: Field,
    e0: float,
    e1: float,
    op: AiryOperator,
    mode: MemoryMode | str = MemoryMode.SHORT,
    history: HistoryBuffer | None = None,
    kernel: MemoryKernel | None = None,
) -> Field:
    """Membrane coupling force at interior nodes.

    Short memory: ``B_u^T (e1 * 2 phi(u, udot) + e0 * phi(u, u))``.
    Singular memory: the ``e1`` term becomes ``e1 * d_m phi(u, u)`` with the
    memory operator applied to ``history`` (past ``phi(u, u)`` vectors).
    """
    mode = MemoryMode(mode)
    uu = _interior_vec(u, op.grid)
    phi = op.solve(op.bracket(uu, uu))
    psi = e0 * phi
    if mode is MemoryMode.SHORT:
        if e1 != 0.0:
            ud = _interior_vec(udot, op.grid)
            psi = psi + e1 * 2.0 * op.solve(op.bracket(uu, ud))
    else:
        if history is None or kernel is None:
            raise ValueError("singular memory mode needs a phi history buffer and a kernel")
        psi = psi + e1 * dm_apply(history, phi, kernel)
    out = op.bracket_matrix(uu).T @ psi
    return Field(op.grid, op.grid.embed(out))
