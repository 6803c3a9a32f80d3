"""Observable operators assembled from a small alphabet.

An :class:`Observable` is a set of sparse blocks keyed by ``(source degree,
target degree)`` acting on active cells. Products compose blocks; sums add
them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .forms import contract_basis_operator, wedge_basis_operator
from .grid import Grid


@dataclass(frozen=True, eq=False)
class Observable:
    grid: Grid
    blocks: dict[tuple[int, int], sp.csr_matrix]
    name: str = "O"

    def __matmul__(self, other: "Observable") -> "Observable":
        """Operator product ``self · other`` (other acts first)."""
        out: dict[tuple[int, int], sp.csr_matrix] = {}
        for (s2, m2), B2 in other.blocks.items():
            for (s1, m1), B1 in self.blocks.items():
                if s1 != m2:
                    continue
                key = (s2, m1)
                prod = (B1 @ B2).tocsr()
                out[key] = out[key] + prod if key in out else prod
        return Observable(self.grid, out, f"{self.name}·{other.name}")

    def __add__(self, other: "Observable") -> "Observable":
        out = dict(self.blocks)
        for k, B in other.blocks.items():
            out[k] = (out[k] + B).tocsr() if k in out else B
        return Observable(self.grid, out, f"{self.name}+{other.name}")

    def __mul__(self, c: complex) -> "Observable":
        return Observable(self.grid, {k: (c * B).tocsr() for k, B in self.blocks.items()},
                          f"{c}{self.name}")

    __rmul__ = __mul__

    def conj(self) -> "Observable":
        return Observable(self.grid, {k: B.conj().tocsr() for k, B in self.blocks.items()},
                          f"conj({self.name})")


def _diag_blocks(grid: Grid, values_for: Callable[[int], np.ndarray]) -> dict:
    return {(n, n): sp.diags(values_for(n)).tocsr() for n in range(grid.dim + 1)}


def identity(grid: Grid) -> Observable:
    return Observable(grid, _diag_blocks(grid, lambda n: np.ones(grid.num_active(n))), "1")


def ghost_number_operator(grid: Grid) -> Observable:
    return Observable(grid, _diag_blocks(grid, lambda n: np.full(grid.num_active(n), float(n))), "F")


def multiply(grid: Grid, func: Callable[..., np.ndarray], name: str = "f") -> Observable:
    """Multiplication by ``func(phi^1, ..., phi^D)`` evaluated at cell centers."""

    def vals(n):
        c = grid.centers(n)[grid.active_cells(n)]
        return np.broadcast_to(func(*c.T), (len(c),)).astype(complex if _is_complex(func, grid) else float)

    return Observable(grid, _diag_blocks(grid, vals), name)


def _is_complex(func, grid) -> bool:
    probe = func(*grid.centers(0)[:1].T)
    return np.iscomplexobj(probe)


def wedge_dphi(grid: Grid, axis: int) -> Observable:
    """``α -> dφ^axis ∧ α`` (raises the ghost number)."""
    blocks = {}
    for n in range(grid.dim):
        blocks[(n, n + 1)] = wedge_basis_operator(grid, axis, n).matrix
    return Observable(grid, blocks, f"dφ{axis}∧")


def contract_dphi(grid: Grid, axis: int) -> Observable:
    """``α -> ι_{∂/∂φ^axis} α`` (lowers the ghost number)."""
    blocks = {}
    for n in range(1, grid.dim + 1):
        blocks[(n, n - 1)] = contract_basis_operator(grid, axis, n).matrix
    return Observable(grid, blocks, f"ι{axis}")


def derivative(grid: Grid, axis: int) -> Observable:
    """Centered difference ``∂/∂φ^axis`` applied componentwise (one-sided at line ends)."""
    ax = grid.axes[axis]
    blocks = {}
    for n in range(grid.dim + 1):
        mats = []
        for I in grid.multi_indices(n):
            cnt = ax.count(axis in I)
            D1 = _centered(cnt, ax.spacing, ax.periodic)
            parts = [D1 if a == axis else sp.identity(grid.axes[a].count(a in I))
                     for a in range(grid.dim)]
            M = parts[0]
            for P in parts[1:]:
                M = sp.kron(M, P, format="csr")
            mats.append(M)
        full = sp.block_diag(mats, format="csr")
        act = grid.active_cells(n)
        blocks[(n, n)] = full[act][:, act].tocsr()
    return Observable(grid, blocks, f"∂{axis}")


def _centered(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    if periodic:
        i = np.arange(n)
        return sp.csr_matrix((np.r_[np.full(n, 0.5 / h), np.full(n, -0.5 / h)],
                              (np.r_[i, i], np.r_[(i + 1) % n, (i - 1) % n])), shape=(n, n))
    M = sp.lil_matrix((n, n))
    for i in range(n):
        if i == 0:
            M[i, 0], M[i, 1] = -1 / h, 1 / h
        elif i == n - 1:
            M[i, n - 2], M[i, n - 1] = -1 / h, 1 / h
        else:
            M[i, i - 1], M[i, i + 1] = -0.5 / h, 0.5 / h
    return M.tocsr()
