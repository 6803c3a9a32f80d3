"""Cochains on a cubical grid and the exterior-calculus operator set.

Coefficients are stored as point values attached to cells (a 1-form
``f dx`` has coefficient ``f`` at each x-edge midpoint), so ``d`` is a
forward difference divided by the spacing. All operators are sparse
matrices in the grid's cell ordering restricted to active cells.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from functools import reduce
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .grid import Grid, GridError, Metric, FlowField, build_grid

MultiIndex = tuple[int, ...]


class FormError(ValueError):
    pass


def _perm_sign(seq: Sequence[int]) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] == seq[j]:
                return 0
            if seq[i] > seq[j]:
                sign = -sign
    return sign


# --- fields ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FormField:
    """A degree-n cochain: one coefficient per degree-n cell (full enumeration)."""

    grid: Grid
    degree: int
    values: np.ndarray

    def __post_init__(self):
        if not 0 <= self.degree <= self.grid.dim:
            raise FormError(f"degree {self.degree} outside [0, {self.grid.dim}]")
        v = np.asarray(self.values)
        if v.dtype.kind not in "fc":
            v = v.astype(float)
        if v.shape != (self.grid.num_cells(self.degree),):
            raise FormError(
                f"degree-{self.degree} field needs {self.grid.num_cells(self.degree)} "
                f"coefficients, got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise FormError("form coefficients must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid, degree: int) -> "FormField":
        return cls(grid, degree, np.zeros(grid.num_cells(degree)))

    @classmethod
    def from_components(
        cls, grid: Grid, degree: int, components: Mapping[MultiIndex, object]
    ) -> "FormField":
        """Build from per-multi-index data.

        Each entry is an array of the component shape, a scalar, or a callable
        evaluated at the cell centers (one coordinate array per axis).
        """
        values = np.zeros(grid.num_cells(degree), dtype=complex)
        for idx, data in components.items():
            idx = tuple(idx)
            if len(idx) != degree or list(idx) != sorted(set(idx)) or (idx and idx[-1] >= grid.dim):
                raise FormError(f"bad multi-index {idx} for degree {degree}")
            shape = grid.component_shape(idx)
            if callable(data):
                arr = np.broadcast_to(data(*grid.cell_centers(idx)), shape)
            else:
                arr = np.broadcast_to(np.asarray(data), shape)
            values[grid.component_slice(idx)] = arr.ravel()
        if not np.iscomplexobj(values) or not np.any(values.imag):
            values = values.real
        return cls(grid, degree, values)

    @classmethod
    def from_active(cls, grid: Grid, degree: int, vec: np.ndarray) -> "FormField":
        vec = np.asarray(vec)
        values = np.zeros(grid.num_cells(degree), dtype=vec.dtype if vec.dtype.kind == "c" else float)
        values[grid.active_cells(degree)] = vec
        return cls(grid, degree, values)

    def component(self, idx: Sequence[int]) -> np.ndarray:
        idx = tuple(idx)
        return self.values[self.grid.component_slice(idx)].reshape(self.grid.component_shape(idx))

    def active(self) -> np.ndarray:
        return self.values[self.grid.active_cells(self.degree)]

    def constrained(self) -> "FormField":
        """Copy with inactive (boundary-constrained) coefficients set to zero."""
        return FormField.from_active(self.grid, self.degree, self.active())

    def mass(self) -> float:
        """Quadrature of a top-degree field over the grid."""
        if self.degree != self.grid.dim:
            raise FormError("mass is defined for top-degree fields only")
        return float(np.sum(self.values).real * self.grid.cell_volume)

    def __add__(self, other: "FormField") -> "FormField":
        _check_same(self, other)
        return FormField(self.grid, self.degree, self.values + other.values)

    def __sub__(self, other: "FormField") -> "FormField":
        _check_same(self, other)
        return FormField(self.grid, self.degree, self.values - other.values)

    def __mul__(self, c: complex) -> "FormField":
        return FormField(self.grid, self.degree, c * self.values)

    __rmul__ = __mul__

    # serialization

    def header(self) -> dict:
        return {"degree": self.degree, "grid": self.grid.to_spec(),
                "multi_indices": [list(i) for i in self.grid.multi_indices(self.degree)]}

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", "multi_index", "coefficient"])
        cell = 0
        for idx in self.grid.multi_indices(self.degree):
            label = "-".join(str(i) for i in idx)
            for x in self.component(idx).ravel():
                w.writerow([cell, label, format(float(np.real(x)), ".17g")])
                cell += 1
        return buf.getvalue()

    def save(self, stem: str | Path) -> tuple[Path, Path]:
        stem = Path(stem)
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        csv_path.write_text(self.to_csv(), encoding="utf-8", newline="")
        json_path.write_text(json.dumps(self.header(), sort_keys=True) + "\n", encoding="utf-8")
        return csv_path, json_path

    @classmethod
    def load(cls, stem: str | Path) -> "FormField":
        stem = Path(stem)
        head = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
        grid = build_grid(head["grid"])
        with stem.with_suffix(".csv").open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        values = np.zeros(grid.num_cells(head["degree"]))
        for r in rows:
            values[int(r["cell"])] = float(r["coefficient"])
        return cls(grid, head["degree"], values)


def _check_same(a: FormField, b: FormField):
    if a.grid != b.grid or a.degree != b.degree:
        raise FormError("fields live on different grids or degrees")


def ghost_number(f: FormField) -> int:
    return f.degree


# --- operators ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SectorOperator:
    """Sparse matrix between active cells of two degrees."""

    grid: Grid
    domain: int
    codomain: int
    matrix: sp.csr_matrix
    tag: str

    def __post_init__(self):
        shape = (self.grid.num_active(self.codomain), self.grid.num_active(self.domain))
        if self.matrix.shape != shape:
            raise FormError(f"{self.tag}: matrix shape {self.matrix.shape} != {shape}")

    def __call__(self, f: FormField) -> FormField:
        if f.grid != self.grid:
            raise FormError(f"{self.tag}: field lives on another grid")
        if f.degree != self.domain:
            raise FormError(f"{self.tag}: expects degree {self.domain}, got {f.degree}")
        return FormField.from_active(self.grid, self.codomain, self.matrix @ f.active())

    def __matmul__(self, other: "SectorOperator") -> "SectorOperator":
        if other.codomain != self.domain:
            raise FormError(f"cannot compose {self.tag} after {other.tag}")
        return SectorOperator(self.grid, other.domain, self.codomain,
                              (self.matrix @ other.matrix).tocsr(), f"{self.tag}*{other.tag}")

    def __add__(self, other: "SectorOperator") -> "SectorOperator":
        if (other.domain, other.codomain) != (self.domain, self.codomain):
            raise FormError("sector mismatch in operator sum")
        return SectorOperator(self.grid, self.domain, self.codomain,
                              (self.matrix + other.matrix).tocsr(), f"{self.tag}+{other.tag}")

    def scaled(self, c: float, tag: str | None = None) -> "SectorOperator":
        return SectorOperator(self.grid, self.domain, self.codomain,
                              (c * self.matrix).tocsr(), tag or f"{c}*{self.tag}")

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


# per-axis 1D building blocks


def _diff(axis) -> sp.csr_matrix:
    n, e, h = axis.nodes, axis.edges, axis.spacing
    rows = np.arange(e)
    cols_hi = (rows + 1) % n
    data = np.concatenate([np.full(e, -1.0 / h), np.full(e, 1.0 / h)])
    return sp.csr_matrix((data, (np.concatenate([rows, rows]), np.concatenate([rows, cols_hi]))),
                         shape=(e, n))


def _node_to_edge(axis) -> sp.csr_matrix:
    n, e = axis.nodes, axis.edges
    rows = np.arange(e)
    return sp.csr_matrix((np.full(2 * e, 0.5), (np.concatenate([rows, rows]),
                                                np.concatenate([rows, (rows + 1) % n]))),
                         shape=(e, n))


def _edge_to_node(axis) -> sp.csr_matrix:
    return _node_to_edge(axis).T.tocsr()


def _kron(mats: Sequence[sp.spmatrix]) -> sp.csr_matrix:
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats).tocsr()


def _eye(axis, is_edge: bool) -> sp.csr_matrix:
    return sp.identity(axis.count(is_edge), format="csr")


def _assemble(grid: Grid, n: int, m: int, blocks: Mapping[tuple[MultiIndex, MultiIndex], sp.spmatrix],
              full: bool) -> sp.csr_matrix:
    """Stack component blocks into a (degree m) x (degree n) matrix."""
    rows = grid.multi_indices(m)
    cols = grid.multi_indices(n)
    grid_blocks = [[blocks.get((j, i)) for i in cols] for j in rows]
    for jr, j in enumerate(rows):
        for ic, i in enumerate(cols):
            if grid_blocks[jr][ic] is None:
                shp = (int(np.prod(grid.component_shape(j))), int(np.prod(grid.component_shape(i))))
                grid_blocks[jr][ic] = sp.csr_matrix(shp)
    mat = sp.bmat(grid_blocks, format="csr")
    if not full:
        mat = mat[grid.active_cells(m)][:, grid.active_cells(n)]
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat.tocsr()


def ext_derivative(grid: Grid, full: bool = False) -> dict[int, SectorOperator | sp.csr_matrix]:
    """Cubical coboundary ``d_n`` (degree n -> n+1) for ``n = 0 .. D-1``.

    ``(d f)_J = sum_{k in J} (-1)^{pos(k, J)} (forward difference along k of f_{J - k})``.
    With ``full=True`` the raw matrices on all cells are returned instead.
    """
    out = {}
    for n in range(grid.dim):
        blocks = {}
        for J in grid.multi_indices(n + 1):
            for pos, k in enumerate(J):
                I = tuple(a for a in J if a != k)
                mats = [
                    _diff(ax) if a == k else _eye(ax, a in I)
                    for a, ax in enumerate(grid.axes)
                ]
                blocks[(J, I)] = (-1) ** pos * _kron(mats)
        mat = _assemble(grid, n, n + 1, blocks, full)
        out[n] = mat if full else SectorOperator(grid, n, n + 1, mat, "d")
    return out


def form_weights(grid: Grid, metric: Metric, degree: int) -> np.ndarray:
    """Diagonal of the metric-weighted cell inner product on active degree-n cells."""
    if metric.dim != grid.dim:
        raise FormError("metric dimension does not match grid")
    if not metric.is_diagonal:
        raise FormError("cubical inner product supports diagonal metrics only")
    g = np.diag(metric.matrix)
    parts = [
        np.full(int(np.prod(grid.component_shape(I))), np.prod(g[list(I)]) * grid.cell_volume)
        for I in grid.multi_indices(degree)
    ]
    return np.concatenate(parts)[grid.active_cells(degree)]


def inner(a: FormField, b: FormField, metric: Metric) -> complex:
    _check_same(a, b)
    w = form_weights(a.grid, metric, a.degree)
    return np.sum(w * a.active() * b.active())


def codifferential(grid: Grid, metric: Metric) -> dict[int, SectorOperator]:
    """Metric adjoint ``d†_n`` (degree n -> n-1) of the discrete ``d``, ``n = 1 .. D``."""
    d = ext_derivative(grid)
    out = {}
    for n in range(1, grid.dim + 1):
        w_hi = form_weights(grid, metric, n)
        w_lo = form_weights(grid, metric, n - 1)
        mat = sp.diags(1.0 / w_lo) @ d[n - 1].matrix.T @ sp.diags(w_hi)
        out[n] = SectorOperator(grid, n, n - 1, mat.tocsr(), "d†")
    return out


def _flow_on_cells(flow: FlowField, k: int, J: MultiIndex) -> np.ndarray:
    """Node values of A^k averaged onto the cells of component J."""
    grid = flow.grid
    mats = [_node_to_edge(ax) if a in J else _eye(ax, False)
            for a, ax in enumerate(grid.axes)]
    return _kron(mats) @ flow.values[:, k]


def _contraction_blocks(grid: Grid, coeff: Callable[[int, MultiIndex], np.ndarray | float], n: int):
    blocks = {}
    for I in grid.multi_indices(n):
        for pos, k in enumerate(I):
            J = tuple(a for a in I if a != k)
            mats = [
                _edge_to_node(ax) if a == k else _eye(ax, a in J)
                for a, ax in enumerate(grid.axes)
            ]
            c = coeff(k, J)
            blocks[(J, I)] = (-1) ** pos * (sp.diags(np.broadcast_to(c, mats_rows(mats))) @ _kron(mats))
    return blocks


def mats_rows(mats) -> int:
    return int(np.prod([m.shape[0] for m in mats]))


def interior_product(flow: FlowField, full: bool = False) -> dict[int, SectorOperator]:
    """``ι_A`` (degree n -> n-1) for ``n = 1 .. D``; contraction of the first slot.

    Form coefficients are averaged from the two neighbouring cells along the
    contracted axis, and ``A^k`` is averaged over the nodes of the target cell.
    """
    grid = flow.grid
    out = {}
    for n in range(1, grid.dim + 1):
        blocks = _contraction_blocks(grid, lambda k, J: _flow_on_cells(flow, k, J), n)
        mat = _assemble(grid, n, n - 1, blocks, full)
        out[n] = mat if full else SectorOperator(grid, n, n - 1, mat, "ι_A")
    return out


def lie_derivative(flow: FlowField) -> dict[int, SectorOperator]:
    """``L_A = d ι_A + ι_A d`` per degree (Cartan formula at matrix level)."""
    grid = flow.grid
    d = ext_derivative(grid)
    i = interior_product(flow)
    out = {}
    for n in range(grid.dim + 1):
        N = grid.num_active(n)
        mat = sp.csr_matrix((N, N))
        if n >= 1:
            mat = mat + d[n - 1].matrix @ i[n].matrix
        if n < grid.dim:
            mat = mat + i[n + 1].matrix @ d[n].matrix
        out[n] = SectorOperator(grid, n, n, mat.tocsr(), "L_A")
    return out


def _interp(grid: Grid, src: MultiIndex, dst: MultiIndex) -> sp.csr_matrix:
    """Average a src-component onto dst cells (dst ⊇ src): node->edge on the extra axes."""
    mats = [
        _node_to_edge(ax) if (a in dst and a not in src) else _eye(ax, a in src)
        for a, ax in enumerate(grid.axes)
    ]
    return _kron(mats)


def wedge(a: FormField, b: FormField) -> FormField:
    """Antisymmetrized cell-averaged product ``a ∧ b``."""
    if a.grid != b.grid:
        raise FormError("wedge of fields on different grids")
    p, q = a.degree, b.degree
    grid = a.grid
    if p + q > grid.dim:
        raise FormError(f"degree overflow: {p} + {q} > {grid.dim}")
    dtype = np.result_type(a.values, b.values)
    out = np.zeros(grid.num_cells(p + q), dtype=dtype)
    for K in grid.multi_indices(p + q):
        acc = np.zeros(int(np.prod(grid.component_shape(K))), dtype=dtype)
        for I in grid.multi_indices(p):
            if not set(I) <= set(K):
                continue
            J = tuple(x for x in K if x not in I)
            s = _perm_sign(I + J)
            av = _interp(grid, I, K) @ a.component(I).ravel()
            bv = _interp(grid, J, K) @ b.component(J).ravel()
            acc += s * av * bv
        out[grid.component_slice(K)] = acc
    return FormField(grid, p + q, out)


def pairing(a: FormField, b: FormField) -> complex:
    """``∫_M a ∧ b`` by cell quadrature; degrees must be complementary."""
    if a.degree + b.degree != a.grid.dim:
        raise FormError(f"pairing needs complementary degrees, got {a.degree} and {b.degree}")
    top = wedge(a, b)
    val = np.sum(top.values) * a.grid.cell_volume
    return val.item() if np.iscomplexobj(val) else float(val)


def wedge_basis_operator(grid: Grid, axis: int, degree: int) -> SectorOperator:
    """Matrix of ``α -> dφ^axis ∧ α`` from degree n to n+1 (active cells)."""
    blocks = {}
    for I in grid.multi_indices(degree):
        if axis in I:
            continue
        K = tuple(sorted(I + (axis,)))
        blocks[(K, I)] = _perm_sign((axis,) + I) * _interp(grid, I, K)
    mat = _assemble(grid, degree, degree + 1, blocks, full=False)
    return SectorOperator(grid, degree, degree + 1, mat, f"dφ{axis}∧")


def contract_basis_operator(grid: Grid, axis: int, degree: int) -> SectorOperator:
    """Matrix of ``α -> ι_{∂/∂φ^axis} α`` from degree n to n-1 (active cells)."""
    blocks = _contraction_blocks(grid, lambda k, J: 1.0 if k == axis else 0.0, degree)
    mat = _assemble(grid, degree, degree - 1, blocks, full=False)
    return SectorOperator(grid, degree, degree - 1, mat, f"ι_{axis}")
