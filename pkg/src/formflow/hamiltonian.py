"""Current operator, generalized Fokker-Planck Hamiltonian and time evolution."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import (
    FormError,
    FormField,
    SectorOperator,
    codifferential,
    ext_derivative,
    interior_product,
)
from .grid import FlowField, Grid, Metric

log = logging.getLogger(__name__)


class EvolutionError(RuntimeError):
    pass


class StepRejected(EvolutionError):
    """Local error estimate of a fixed-size step exceeded the tolerance."""


class EvolutionDiverged(EvolutionError):
    pass


def _check(grid: Grid, metric: Metric, flow: FlowField):
    if flow.grid != grid:
        raise FormError("flow is sampled on a different grid")
    if metric.dim != grid.dim:
        raise FormError("metric dimension does not match grid")


def build_current(grid: Grid, metric: Metric, flow: FlowField) -> dict[int, SectorOperator]:
    """``ĵ_n = d†_n / 2 - ι_A`` (degree n -> n-1) for ``n = 1 .. D``."""
    _check(grid, metric, flow)
    ds = codifferential(grid, metric)
    ia = interior_product(flow)
    return {
        n: SectorOperator(grid, n, n - 1, (0.5 * ds[n].matrix - ia[n].matrix).tocsr(), "ĵ")
        for n in range(1, grid.dim + 1)
    }


@dataclass(frozen=True, eq=False)
class HamiltonianSet:
    """Per-degree ``H_n = d_{n-1} ĵ_n + ĵ_{n+1} d_n`` with its factors."""

    grid: Grid
    metric: Metric
    flow: FlowField
    d: dict[int, SectorOperator]
    current: dict[int, SectorOperator]
    sectors: dict[int, sp.csr_matrix] = field(repr=False)

    @property
    def theta(self) -> float:
        return self.metric.theta

    @property
    def dim(self) -> int:
        return self.grid.dim

    def __getitem__(self, n: int) -> sp.csr_matrix:
        return self.sectors[n]

    def operator(self, n: int) -> SectorOperator:
        return SectorOperator(self.grid, n, n, self.sectors[n], "H")

    def intertwining_residual(self) -> float:
        """max_n ||H_{n+1} d_n - d_n H_n||_max / (||H||_max ||d||_max)."""
        worst = 0.0
        for n in range(self.dim):
            dn = self.d[n].matrix
            r = self.sectors[n + 1] @ dn - dn @ self.sectors[n]
            scale = max(abs(self.sectors[n + 1]).max(), abs(self.sectors[n]).max()) * abs(dn).max()
            worst = max(worst, (abs(r).max() if r.nnz else 0.0) / scale)
        return float(worst)

    def nilpotency_residual(self) -> float:
        worst = 0.0
        for n in range(self.dim - 1):
            r = self.d[n + 1].matrix @ self.d[n].matrix
            worst = max(worst, abs(r).max() if r.nnz else 0.0)
        return float(worst)


def build_hamiltonian(grid: Grid, metric: Metric, flow: FlowField) -> HamiltonianSet:
    d = ext_derivative(grid)
    j = build_current(grid, metric, flow)
    sectors = {}
    for n in range(grid.dim + 1):
        N = grid.num_active(n)
        h = sp.csr_matrix((N, N))
        if n >= 1:
            h = h + d[n - 1].matrix @ j[n].matrix
        if n < grid.dim:
            h = h + j[n + 1].matrix @ d[n].matrix
        sectors[n] = h.tocsr()
    return HamiltonianSet(grid, metric, flow, d, j, sectors)


# --- time evolution -------------------------------------------------------


@dataclass
class EvolutionResult:
    field: FormField
    times: np.ndarray
    mass: np.ndarray
    norm: np.ndarray
    max_error: float
    dt: float

    def log_rows(self):
        return zip(self.times, self.mass, self.norm)


class _Midpoint:
    """Implicit midpoint (Crank-Nicolson) propagator for one sector."""

    def __init__(self, H: sp.csr_matrix, dt: float):
        eye = sp.identity(H.shape[0], format="csc")
        self.rhs = (eye - 0.5 * dt * H).tocsr()
        self.solve = spla.factorized((eye + 0.5 * dt * H).tocsc())

    def __call__(self, y: np.ndarray) -> np.ndarray:
        if np.iscomplexobj(y):
            return self.solve(self.rhs @ y.real) + 1j * self.solve(self.rhs @ y.imag)
        return self.solve(self.rhs @ y)


def evolve_logged(
    H: HamiltonianSet,
    psi: FormField,
    t: float,
    dt: float,
    rtol: float = 1e-4,
    check_error: bool = True,
) -> EvolutionResult:
    """Integrate ``∂_t ψ = -H_n ψ`` with fixed-step implicit midpoint.

    Each step is also taken as two half steps; their difference (Richardson
    estimate, divided by 3) relative to ``||ψ||_inf`` must stay below
    ``rtol`` or :class:`StepRejected` is raised. The accepted value is the
    two-half-step result.
    """
    if t < 0:
        raise ValueError("evolution time must be non-negative")
    if not dt > 0:
        raise ValueError("time step must be positive")
    if psi.grid != H.grid:
        raise FormError("field and Hamiltonian live on different grids")
    n = psi.degree
    y = psi.active().astype(psi.values.dtype, copy=True)
    vol = H.grid.cell_volume
    top = n == H.dim
    steps = max(1, math.ceil(t / dt - 1e-12)) if t > 0 else 0
    h = t / steps if steps else dt
    times = [0.0]
    mass = [np.sum(y).real * vol if top else math.nan]
    norm0 = float(np.linalg.norm(y)) or 1.0
    norms = [float(np.linalg.norm(y))]
    max_err = 0.0
    if steps:
        full = _Midpoint(H[n], h)
        half = _Midpoint(H[n], h / 2)
    for k in range(steps):
        y_half = half(half(y))
        if check_error:
            y_full = full(y)
            scale = max(np.abs(y_half).max(), 1e-300)
            err = float(np.abs(y_half - y_full).max() / 3 / scale)
            max_err = max(max_err, err)
            if err > rtol:
                raise StepRejected(
                    f"step {k} at t={k * h:.6g}: error estimate {err:.3g} > {rtol:.3g}; reduce dt"
                )
        y = y_half
        nrm = float(np.linalg.norm(y))
        if nrm > 1e6 * norm0:
            raise EvolutionDiverged(f"norm grew to {nrm:.3g} at t={(k + 1) * h:.6g}")
        times.append((k + 1) * h)
        mass.append(np.sum(y).real * vol if top else math.nan)
        norms.append(nrm)
    out = FormField.from_active(H.grid, n, y)
    return EvolutionResult(out, np.array(times), np.array(mass), np.array(norms), max_err, h)


def evolve(H: HamiltonianSet, psi: FormField, t: float, dt: float, **kw) -> FormField:
    return evolve_logged(H, psi, t, dt, **kw).field


def evolve_exact(H: HamiltonianSet, psi: FormField, t: float) -> FormField:
    """``exp(-t H_n) ψ`` via the scaling-and-squaring Krylov action (no dense exponential)."""
    if t < 0:
        raise ValueError("evolution time must be non-negative")
    y = spla.expm_multiply(-t * H[psi.degree].tocsc(), psi.active())
    return FormField.from_active(H.grid, psi.degree, y)


def stationary_density(H: HamiltonianSet) -> FormField:
    """Normalized null vector of the top-degree Hamiltonian (unit mass)."""
    D = H.dim
    M = H[D].toarray()
    u, s, vt = np.linalg.svd(M)
    v = vt[-1]
    v = v / (np.sum(v) * H.grid.cell_volume)
    return FormField.from_active(H.grid, D, v)
