"""Cubical phase-space grids, constant noise metrics and flow fields.

Cell enumeration
----------------
A degree-n cell of a D-dimensional grid is a product of per-axis factors:
an *edge* on every axis in its multi-index ``I`` (a strictly increasing
tuple of axes, ``len(I) == n``) and a *node* on every other axis. Cells of
degree n are ordered by multi-index (lexicographic over
``itertools.combinations``) and, within one multi-index, in C order over
the per-axis factor indices (axis 0 slowest). The order only depends on
the grid spec, so rebuilding a grid from ``Grid.to_spec()`` reproduces it.

Truncated ("line") axes carry decay constraints: a cell is *inactive* when
one of its node factors sits on a boundary node of a line axis. Active
cells form a subcomplex (compactly supported cochains); all operators act
on active cells only.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

PERIODIC = "periodic"
LINE = "line"
TOPOLOGIES = (PERIODIC, LINE)

MIN_NODES = 8


class GridError(ValueError):
    """Invalid grid, metric or flow specification."""


@dataclass(frozen=True)
class Axis:
    topology: str
    nodes: int
    lo: float
    hi: float

    @property
    def extent(self) -> float:
        return self.hi - self.lo

    @property
    def periodic(self) -> bool:
        return self.topology == PERIODIC

    @property
    def edges(self) -> int:
        return self.nodes if self.periodic else self.nodes - 1

    @property
    def spacing(self) -> float:
        return self.extent / self.edges

    def node_coords(self) -> np.ndarray:
        return self.lo + self.spacing * np.arange(self.nodes)

    def edge_coords(self) -> np.ndarray:
        return self.lo + self.spacing * (np.arange(self.edges) + 0.5)

    def count(self, is_edge: bool) -> int:
        return self.edges if is_edge else self.nodes


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform cubical complex on a line, circle, square or torus."""

    axes: tuple[Axis, ...]

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(a.spacing for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def compact(self) -> bool:
        return all(a.periodic for a in self.axes)

    def multi_indices(self, degree: int) -> list[tuple[int, ...]]:
        return list(itertools.combinations(range(self.dim), degree))

    def component_shape(self, index: Sequence[int]) -> tuple[int, ...]:
        return tuple(a.count(k in index) for k, a in enumerate(self.axes))

    @cached_property
    def _offsets(self) -> dict[tuple[int, ...], tuple[int, int]]:
        out = {}
        for n in range(self.dim + 1):
            start = 0
            for idx in self.multi_indices(n):
                size = int(np.prod(self.component_shape(idx)))
                out[idx] = (start, start + size)
                start += size
        return out

    def component_slice(self, index: Sequence[int]) -> slice:
        lo, hi = self._offsets[tuple(index)]
        return slice(lo, hi)

    def num_cells(self, degree: int) -> int:
        if degree < 0 or degree > self.dim:
            return 0
        return sum(int(np.prod(self.component_shape(i))) for i in self.multi_indices(degree))

    def euler_characteristic(self) -> int:
        return sum((-1) ** n * self.num_cells(n) for n in range(self.dim + 1))

    def _component_active(self, index: tuple[int, ...]) -> np.ndarray:
        masks = []
        for k, a in enumerate(self.axes):
            m = np.ones(a.count(k in index), dtype=bool)
            if not a.periodic and k not in index:
                m[0] = m[-1] = False
            masks.append(m)
        out = masks[0]
        for m in masks[1:]:
            out = np.logical_and.outer(out, m)
        return out.ravel()

    @cached_property
    def _active(self) -> dict[int, np.ndarray]:
        out = {}
        for n in range(self.dim + 1):
            parts = [self._component_active(i) for i in self.multi_indices(n)]
            out[n] = np.flatnonzero(np.concatenate(parts))
        return out

    def active_cells(self, degree: int) -> np.ndarray:
        """Indices (into the full degree-n enumeration) of unconstrained cells."""
        return self._active[degree]

    def num_active(self, degree: int) -> int:
        if degree < 0 or degree > self.dim:
            return 0
        return len(self._active[degree])

    def cell_centers(self, index: Sequence[int]) -> list[np.ndarray]:
        """Per-axis coordinate arrays (broadcast to the component shape)."""
        coords = [
            a.edge_coords() if k in index else a.node_coords()
            for k, a in enumerate(self.axes)
        ]
        return list(np.meshgrid(*coords, indexing="ij"))

    def centers(self, degree: int) -> np.ndarray:
        """Cell-center coordinates of all degree-n cells, shape (cells, D)."""
        rows = []
        for idx in self.multi_indices(degree):
            rows.append(np.stack([c.ravel() for c in self.cell_centers(idx)], axis=1))
        return np.concatenate(rows, axis=0)

    def node_coords(self) -> np.ndarray:
        return self.centers(0)

    def axis_grid(self, k: int) -> "Grid":
        return Grid((self.axes[k],))

    def to_spec(self) -> dict:
        return {
            "axes": [
                {"topology": a.topology, "nodes": a.nodes, "extent": [a.lo, a.hi]}
                for a in self.axes
            ]
        }

    def metadata(self) -> dict:
        return {
            **self.to_spec(),
            "cells": [self.num_cells(n) for n in range(self.dim + 1)],
            "active_cells": [self.num_active(n) for n in range(self.dim + 1)],
            "cell_order": "degree, then multi-index lexicographic, then C order over axes (axis 0 slowest)",
        }

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Grid) and self.axes == other.axes

    def __hash__(self) -> int:
        return hash(self.axes)


def build_grid(spec: Mapping) -> Grid:
    """Build a grid from ``{"axes": [{"topology", "nodes", "extent"}, ...]}``.

    ``extent`` is either a length (``lo = 0``) or a ``[lo, hi]`` pair; periodic
    axes default to ``2*pi``.
    """
    axes_spec = spec.get("axes")
    if not axes_spec:
        raise GridError("grid spec needs a non-empty 'axes' list")
    if len(axes_spec) > 2:
        raise GridError(f"dimension {len(axes_spec)} not supported (D <= 2)")
    axes = []
    for k, a in enumerate(axes_spec):
        topo = a.get("topology")
        if topo in ("circle", "torus"):
            topo = PERIODIC
        if topo not in TOPOLOGIES:
            raise GridError(f"axis {k}: unknown topology {topo!r}")
        nodes = int(a.get("nodes", 0))
        if nodes < MIN_NODES:
            raise GridError(f"axis {k}: need at least {MIN_NODES} nodes, got {nodes}")
        ext = a.get("extent")
        if ext is None and topo == PERIODIC:
            ext = 2 * math.pi
        if isinstance(ext, (int, float)):
            lo, hi = 0.0, float(ext)
        else:
            try:
                lo, hi = (float(x) for x in ext)
            except (TypeError, ValueError):
                raise GridError(f"axis {k}: extent must be a number or [lo, hi]") from None
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi - lo <= 0:
            raise GridError(f"axis {k}: extent must be positive, got [{lo}, {hi}]")
        axes.append(Axis(topo, nodes, lo, hi))
    return Grid(tuple(axes))


def circle(nodes: int, extent: float = 2 * math.pi) -> Grid:
    return build_grid({"axes": [{"topology": PERIODIC, "nodes": nodes, "extent": extent}]})


def line(nodes: int, lo: float, hi: float) -> Grid:
    return build_grid({"axes": [{"topology": LINE, "nodes": nodes, "extent": [lo, hi]}]})


def torus(nx: int, ny: int | None = None, extent: float = 2 * math.pi) -> Grid:
    ny = nx if ny is None else ny
    return build_grid({"axes": [
        {"topology": PERIODIC, "nodes": nx, "extent": extent},
        {"topology": PERIODIC, "nodes": ny, "extent": extent},
    ]})


def square(nx: int, lo: float, hi: float, ny: int | None = None) -> Grid:
    ny = nx if ny is None else ny
    return build_grid({"axes": [
        {"topology": LINE, "nodes": nx, "extent": [lo, hi]},
        {"topology": LINE, "nodes": ny, "extent": [lo, hi]},
    ]})


@dataclass(frozen=True, eq=False)
class Metric:
    """Constant noise-induced metric ``g^{ij}`` (inverse metric on forms)."""

    matrix: np.ndarray

    def __post_init__(self):
        g = np.array(self.matrix, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise GridError("metric must be a square matrix")
        if not np.allclose(g, g.T, rtol=0, atol=1e-14 * max(1.0, np.abs(g).max())):
            raise GridError("metric must be symmetric")
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            raise GridError("metric must be positive definite") from None
        g.setflags(write=False)
        object.__setattr__(self, "matrix", g)

    @classmethod
    def isotropic(cls, theta: float, dim: int) -> "Metric":
        if not theta > 0:
            raise GridError(f"noise intensity must be positive, got {theta}")
        return cls(theta * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return not np.any(self.matrix - np.diag(np.diag(self.matrix)))

    @property
    def theta(self) -> float:
        """Noise intensity; mean diagonal entry for anisotropic metrics."""
        return float(np.trace(self.matrix) / self.dim)

    @cached_property
    def vielbein(self) -> np.ndarray:
        """Lower-triangular ``e`` with ``e e^T = g^{ij}``; couples noise channels."""
        return np.linalg.cholesky(self.matrix)

    @property
    def vielbein_factor(self) -> float:
        """``det e = sqrt(det g^{ij})``, always positive."""
        return float(math.sqrt(np.linalg.det(self.matrix)))

    @property
    def inverse_vielbein_factor(self) -> float:
        """``det e^{-1} = sqrt(det g_ij)``, the factor relating noise and loop Jacobians."""
        return 1.0 / self.vielbein_factor


# --- flow catalog ---------------------------------------------------------

FlowFunc = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class _CatalogEntry:
    dim: int | None
    params: Mapping[str, tuple[float, float, float]]  # name -> (default, lo, hi)
    build: Callable[..., tuple[FlowFunc, FlowFunc, bool]]
    period: float | None = None


def _ou(omega0):
    def f(x):
        return omega0 * x

    def jac(x):
        return np.broadcast_to(omega0 * np.eye(x.shape[-1]), x.shape + (x.shape[-1],)).copy()

    return f, jac, True


def _double_well(a):
    def f(x):
        return x * x * x - a * x

    def jac(x):
        d = 3 * x * x - a
        return d[..., :, None] * np.eye(x.shape[-1])

    return f, jac, True


def _circle_drive(v, b):
    def f(x):
        return v + b * np.sin(x)

    def jac(x):
        return (b * np.cos(x))[..., None]

    return f, jac, v == 0


def _torus_shear(v, s, w):
    def f(x):
        return np.stack([v + s * np.sin(x[..., 1]), np.full(x.shape[:-1], float(w))], axis=-1)

    def jac(x):
        out = np.zeros(x.shape + (2,))
        out[..., 0, 1] = s * np.cos(x[..., 1])
        return out

    return f, jac, False


def _torus_gradient(a, b, c):
    # A = grad V with V = a cos x + b cos y + c cos(x - y)
    def f(x):
        sx, sy, sxy = np.sin(x[..., 0]), np.sin(x[..., 1]), np.sin(x[..., 0] - x[..., 1])
        return np.stack([-a * sx - c * sxy, -b * sy + c * sxy], axis=-1)

    def jac(x):
        cx, cy, cxy = np.cos(x[..., 0]), np.cos(x[..., 1]), np.cos(x[..., 0] - x[..., 1])
        out = np.empty(x.shape + (2,))
        out[..., 0, 0] = -a * cx - c * cxy
        out[..., 0, 1] = c * cxy
        out[..., 1, 0] = c * cxy
        out[..., 1, 1] = -b * cy - c * cxy
        return out

    return f, jac, True


def _zero():
    def f(x):
        return np.zeros_like(x, dtype=float)

    def jac(x):
        return np.zeros(x.shape + (x.shape[-1],))

    return f, jac, True


CATALOG: dict[str, _CatalogEntry] = {
    "zero": _CatalogEntry(None, {}, _zero),
    "ou": _CatalogEntry(None, {"omega0": (1.0, 1e-6, 1e3)}, _ou),
    "double-well": _CatalogEntry(None, {"a": (1.0, -10.0, 10.0)}, _double_well),
    "circle-drive": _CatalogEntry(
        1, {"v": (1.0, -1e3, 1e3), "b": (0.0, -1e3, 1e3)}, _circle_drive, period=2 * math.pi
    ),
    "torus-shear": _CatalogEntry(
        2, {"v": (1.0, -1e3, 1e3), "s": (0.5, -1e3, 1e3), "w": (0.3, -1e3, 1e3)},
        _torus_shear, period=2 * math.pi,
    ),
    "torus-gradient": _CatalogEntry(
        2, {"a": (1.0, -1e3, 1e3), "b": (0.5, -1e3, 1e3), "c": (0.3, -1e3, 1e3)},
        _torus_gradient, period=2 * math.pi,
    ),
}


@dataclass(frozen=True, eq=False)
class FlowField:
    """Flow vector field ``A`` sampled at grid nodes.

    ``func``/``jacobian`` are the analytic catalog callables (points of shape
    ``(..., D)``); tabulated flows fall back to multilinear interpolation.
    """

    grid: Grid
    values: np.ndarray  # (nodes, D)
    provenance: dict
    gradient: bool = False
    func: FlowFunc | None = field(default=None, repr=False)
    jacobian: FlowFunc | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.num_cells(0), self.grid.dim):
            raise GridError(
                f"flow needs shape {(self.grid.num_cells(0), self.grid.dim)}, got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise GridError("flow values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def component(self, k: int) -> np.ndarray:
        """Node values of ``A^k`` reshaped to the node grid."""
        return self.values[:, k].reshape(self.grid.component_shape(()))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.func is not None:
            return self.func(pts)
        return self._interpolate(pts)

    def derivative(self, points: np.ndarray, step: float = 1e-6) -> np.ndarray:
        """Jacobian ``dA^i/dphi^j`` at ``points``; shape ``(..., D, D)``."""
        pts = np.asarray(points, dtype=float)
        if self.jacobian is not None:
            return self.jacobian(pts)
        D = self.grid.dim
        out = np.empty(pts.shape + (D,))
        for j in range(D):
            e = np.zeros(D)
            e[j] = step
            out[..., :, j] = (self._interpolate(pts + e) - self._interpolate(pts - e)) / (2 * step)
        return out

    def _interpolate(self, pts: np.ndarray) -> np.ndarray:
        from scipy.interpolate import RegularGridInterpolator

        coords, shape = [], self.grid.component_shape(())
        wrapped = pts.copy()
        for k, a in enumerate(self.grid.axes):
            c = a.node_coords()
            if a.periodic:
                c = np.append(c, a.hi)
                wrapped[..., k] = a.lo + np.mod(wrapped[..., k] - a.lo, a.extent)
            coords.append(c)
        vals = self.values.reshape(shape + (self.grid.dim,))
        for k, a in enumerate(self.grid.axes):
            if a.periodic:
                vals = np.concatenate([vals, np.take(vals, [0], axis=k)], axis=k)
        interp = RegularGridInterpolator(coords, vals, bounds_error=False, fill_value=None)
        return interp(wrapped)

    def max_derivative(self) -> float:
        """max |dA^i/dphi^j| over grid nodes."""
        return float(np.abs(self.derivative(self.grid.node_coords())).max())


def builtin_flow(name: str, grid: Grid, **params: float) -> FlowField:
    """Sample a catalog flow on ``grid``.

    Catalog (``phi`` is the point, components act per axis where noted):
      - ``zero``: A = 0.
      - ``ou`` (omega0 > 0): A^i = omega0 phi^i.
      - ``double-well`` (a): A^i = (phi^i)^3 - a phi^i.
      - ``circle-drive`` (v, b): A = v + b sin(phi), periodic 1D only.
      - ``torus-shear`` (v, s, w): A = (v + s sin y, w), periodic 2D only.
      - ``torus-gradient`` (a, b, c): A = grad(a cos x + b cos y + c cos(x - y)).
    """
    entry = CATALOG.get(name)
    if entry is None:
        raise GridError(f"unknown flow {name!r}; catalog: {sorted(CATALOG)}")
    unknown = set(params) - set(entry.params)
    if unknown:
        raise GridError(f"flow {name!r}: unknown parameters {sorted(unknown)}")
    if entry.dim is not None and entry.dim != grid.dim:
        raise GridError(f"flow {name!r} needs a {entry.dim}D grid")
    if entry.period is not None:
        for a in grid.axes:
            ratio = a.extent / entry.period
            if not a.periodic or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise GridError(f"flow {name!r} needs periodic axes of extent k*2pi")
    values = {}
    for p, (default, lo, hi) in entry.params.items():
        x = float(params.get(p, default))
        if not (lo <= x <= hi) or not math.isfinite(x):
            raise GridError(f"flow {name!r}: parameter {p}={x} outside [{lo}, {hi}]")
        values[p] = x
    func, jac, gradient = entry.build(**values)
    nodes = grid.node_coords()
    return FlowField(
        grid=grid,
        values=func(nodes),
        provenance={"name": name, "params": values},
        gradient=bool(gradient),
        func=func,
        jacobian=jac,
    )


def load_flow_csv(path: str | Path, grid: Grid) -> FlowField:
    """Read a tabulated flow: columns ``node, A1[, A2]`` with one header row."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise GridError(f"{path}: empty flow table")
    body = rows[1:] if not _is_number(rows[0][0]) else rows
    n, D = grid.num_cells(0), grid.dim
    values = np.full((n, D), np.nan)
    for r in body:
        if len(r) != D + 1:
            raise GridError(f"{path}: expected {D + 1} columns, got {len(r)}")
        i = int(r[0])
        if not 0 <= i < n:
            raise GridError(f"{path}: node index {i} out of range")
        values[i] = [float(x) for x in r[1:]]
    if np.isnan(values).any():
        raise GridError(f"{path}: missing node rows")
    return FlowField(grid, values, provenance={"csv": str(path)})


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
