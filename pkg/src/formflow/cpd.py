"""Conditional densities as forms: factorization, closedness and evolution checks."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .forms import FormError, FormField, _perm_sign, ext_derivative, wedge
from .grid import Grid
from .hamiltonian import HamiltonianSet, evolve_exact

DIV_FLOOR = 1e-12
ILL_FRACTION = 0.01


class ConditioningError(FormError):
    """The marginal vanishes on too much of the grid to condition on it."""


@dataclass(frozen=True, eq=False)
class CpdBundle:
    total: FormField
    marginal: FormField
    conditional: FormField
    known: tuple[int, ...]
    support: np.ndarray  # top cells where the marginal is above the floor

    @property
    def unknown(self) -> tuple[int, ...]:
        return tuple(k for k in range(self.total.grid.dim) if k not in self.known)

    def residual(self) -> float:
        """max |P_cnd ∧ P_mrg - P_tot| on the support, relative to max |P_tot|."""
        return factorization_residual(self.conditional, self.marginal, self.total, self.support)


def factorization_residual(cnd: FormField, mrg: FormField, total: FormField,
                           support: np.ndarray | None = None) -> float:
    diff = np.abs(wedge(cnd, mrg).values - total.values)
    if support is not None:
        diff = diff[support]
    scale = np.abs(total.values).max()
    return float(diff.max() / scale) if scale > 0 and diff.size else 0.0


def _edges_to_nodes(ax, arr: np.ndarray, axis: int) -> np.ndarray:
    """Average cell values onto the nodes along one axis (constants are kept exactly)."""
    if ax.periodic:
        return 0.5 * (arr + np.roll(arr, 1, axis=axis))
    first = np.take(arr, [0], axis=axis)
    last = np.take(arr, [-1], axis=axis)
    inner = 0.5 * (np.take(arr, range(1, arr.shape[axis]), axis=axis)
                   + np.take(arr, range(arr.shape[axis] - 1), axis=axis))
    return np.concatenate([first, inner, last], axis=axis)


def factorize(total: FormField, known: Sequence[int], floor: float = DIV_FLOOR) -> CpdBundle:
    """Split a top-degree density into ``P_cnd ∧ P_mrg``.

    The marginal is the quadrature of ``P_tot`` over the unknown axes (a form
    along the known axes); the conditional is the cellwise ratio, moved onto
    the nodes of the known axes and carrying the orientation sign of the
    split, so that ``wedge(P_cnd, P_mrg)`` reproduces ``P_tot``.
    """
    grid = total.grid
    D = grid.dim
    if total.degree != D:
        raise FormError("factorization needs a top-degree density")
    known = tuple(sorted(set(int(k) for k in known)))
    if not known or len(known) == D or known[-1] >= D or known[0] < 0:
        raise FormError(f"known axes {known} must be a proper non-empty subset of 0..{D - 1}")
    unknown = tuple(k for k in range(D) if k not in known)
    top = total.component(tuple(range(D))).real
    h = grid.spacing

    marg = top.sum(axis=unknown, keepdims=True) * np.prod([h[k] for k in unknown])
    cut = floor * np.abs(marg).max()
    good = np.abs(marg) > cut
    good_cells = np.broadcast_to(good, top.shape)
    if 1 - good_cells.mean() > ILL_FRACTION:
        raise ConditioningError(
            f"marginal below floor on {100 * (1 - good_cells.mean()):.2f}% of cells"
        )
    ratio = np.where(good_cells, top / np.where(good, marg, 1.0), 0.0)
    ratio *= _perm_sign(unknown + known)

    cnd = ratio
    for k in known:
        cnd = _edges_to_nodes(grid.axes[k], cnd, k)
    mrg = marg
    for k in unknown:
        shape = list(mrg.shape)
        shape[k] = grid.axes[k].nodes
        mrg = np.broadcast_to(mrg, shape)
    conditional = FormField.from_components(grid, len(unknown), {unknown: cnd})
    marginal = FormField.from_components(grid, len(known), {known: mrg})
    return CpdBundle(total, marginal, conditional, known, good_cells.ravel().copy())


def marginal_closedness(p: FormField) -> float:
    """``||d P|| / ||P||`` on the full cell complex (0 for top-degree fields)."""
    norm = np.linalg.norm(p.values)
    if p.degree == p.grid.dim or norm == 0:
        return 0.0
    d = ext_derivative(p.grid, full=True)[p.degree]
    return float(np.linalg.norm(d @ p.values) / norm)


def independence_residual(bundle: CpdBundle) -> float:
    """Largest closedness residual of the two factors."""
    return max(marginal_closedness(bundle.marginal), marginal_closedness(bundle.conditional))


# --- chains and Stokes ---------------------------------------------------


Box = tuple[tuple[int, int], ...]


def integrate_box(omega: FormField, box: Box) -> complex:
    """∫ of a top-degree field over a box of top cells ``[(start, stop), ...]``."""
    grid = omega.grid
    if omega.degree != grid.dim:
        raise FormError("box integrals need a top-degree field")
    comp = omega.component(tuple(range(grid.dim)))
    sl = tuple(slice(a, b) for a, b in box)
    return complex(comp[sl].sum() * grid.cell_volume)


def integrate_boundary(psi: FormField, box: Box) -> complex:
    """∫ over the oriented boundary of a box of a degree ``D-1`` field."""
    grid = psi.grid
    D = grid.dim
    if psi.degree != D - 1:
        raise FormError("boundary integrals need a degree D-1 field")
    total = 0j
    for k in range(D):
        idx = tuple(a for a in range(D) if a != k)
        comp = psi.component(idx)
        w = np.prod([grid.spacing[a] for a in idx]) if idx else 1.0
        n = grid.axes[k].nodes
        for end, sgn in ((box[k][1], 1), (box[k][0], -1)):
            sl = tuple(
                (end % n) if a == k else slice(box[a][0], box[a][1]) for a in range(D)
            )
            total += sgn * (-1) ** k * comp[sl].sum() * w
    return complex(total)


def _check_box(grid: Grid, box: Box):
    if len(box) != grid.dim:
        raise FormError("box needs one (start, stop) pair per axis")
    for (a, b), ax in zip(box, grid.axes):
        if not 0 <= a < b <= ax.edges:
            raise FormError(f"box range {(a, b)} outside 0..{ax.edges}")


def stokes_residual(psi: FormField, box: Box) -> float:
    """``|∫_c d ψ - ∫_∂c ψ|`` for a degree ``D-1`` field."""
    _check_box(psi.grid, box)
    d = ext_derivative(psi.grid, full=True)[psi.degree]
    dpsi = FormField(psi.grid, psi.degree + 1, d @ psi.values)
    return abs(integrate_box(dpsi, box) - integrate_boundary(psi, box))


def default_chains(grid: Grid, count: int = 6, seed: int = 0) -> list[Box]:
    """Whole grid plus a few reproducible random sub-boxes."""
    rng = np.random.default_rng(seed)
    boxes: list[Box] = [tuple((0, ax.edges) for ax in grid.axes)]
    for _ in range(count - 1):
        box = []
        for ax in grid.axes:
            a, b = sorted(rng.choice(ax.edges + 1, size=2, replace=False))
            box.append((int(a), int(b)))
        boxes.append(tuple(box))
    return boxes


# --- evolution -----------------------------------------------------------


@dataclass
class CpdReport:
    checks: dict[str, dict] = field(default_factory=dict)

    def add(self, name: str, value: float, limit: float | None, asserted: bool = True, **extra):
        ok = None if limit is None else bool(value <= limit)
        self.checks[name] = {"value": float(value), "limit": limit, "asserted": asserted,
                             "pass": ok, **extra}

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values() if c["asserted"] and c["pass"] is not None)

    def failures(self) -> list[dict]:
        return [{"invariant": k, **v} for k, v in self.checks.items()
                if v["asserted"] and v["pass"] is False]

    def to_json(self) -> str:
        return json.dumps({"checks": self.checks, "pass": self.passed}, sort_keys=True, indent=2) + "\n"


def _outer(parts: list[np.ndarray]) -> np.ndarray:
    out = parts[0]
    for p in parts[1:]:
        out = np.multiply.outer(out, p)
    return out


def evolve_and_check(
    bundle: CpdBundle,
    H_total: HamiltonianSet,
    H_factors: dict[int, HamiltonianSet] | None,
    t: float,
    chains: list[Box] | None = None,
    probe: FormField | None = None,
    factor_tol: float = 1e-8,
    stokes_tol: float = 1e-8,
) -> CpdReport:
    """Evolve ``P_tot`` and (for product flows) each axis factor; check factorization and Stokes.

    ``H_factors`` maps each axis to the Hamiltonian of the one-dimensional
    flow on that axis; with ``None`` the flow is treated as coupled and the
    factorization residual is reported without being asserted. ``probe`` is
    the degree ``D-1`` field used for the Stokes checks (compactly supported
    by construction: only its active coefficients are kept).
    """
    grid = H_total.grid
    D = grid.dim
    if bundle.total.grid != grid:
        raise FormError("bundle and Hamiltonian live on different grids")
    if t <= 0:
        raise ValueError("evolution time must be positive")
    rep = CpdReport()
    rep.add("factorization_t0", bundle.residual(), 1e-10, asserted=H_factors is not None)

    pt = evolve_exact(H_total, bundle.total.constrained(), t)
    if H_factors is not None:
        top = bundle.total.component(tuple(range(D))).real
        factors = []
        for k in range(D):
            Hk = H_factors[k]
            if Hk.grid != grid.axis_grid(k):
                raise FormError(f"factor Hamiltonian {k} is not on axis {k}")
            other = tuple(a for a in range(D) if a != k)
            f = top.sum(axis=other) * np.prod([grid.spacing[a] for a in other])
            fk = evolve_exact(Hk, FormField.from_active(Hk.grid, 1, f[Hk.grid.active_cells(1)]), t)
            factors.append(fk.values.real)
        mass = bundle.total.mass()
        prod = _outer(factors) / mass ** (D - 1)
        got = pt.component(tuple(range(D))).real
        res = np.abs(got - prod).max() / max(np.abs(got).max(), 1e-300)
        rep.add("factorization_preserved", res / t, factor_tol, t=t)
        rep.add("independence", independence_residual(factorize(pt, bundle.known)), factor_tol)
    else:
        res = factorize(pt, bundle.known).residual()
        rep.add("factorization_coupled", res, None, asserted=False, t=t)
        rep.add("independence_coupled", independence_residual(factorize(pt, bundle.known)),
                None, asserted=False)

    if probe is not None:
        psi0 = probe.constrained()
        d = H_total.d[D - 1]
        dpsi0 = FormField.from_active(grid, D, d.matrix @ psi0.active())
        psit = evolve_exact(H_total, psi0, t)
        dpsit = evolve_exact(H_total, dpsi0, t)
        chains = chains or default_chains(grid)
        scale = max(np.abs(psi0.values).max() * max(grid.spacing) * sum(ax.extent for ax in grid.axes), 1e-300)
        s0 = max(stokes_residual(psi0, c) for c in chains) / scale
        st = max(stokes_residual(psit, c) for c in chains) / scale
        drift = max(abs(integrate_box(dpsit, c) - integrate_boundary(psit, c)) for c in chains) / scale
        rep.add("stokes_t0", s0, 1e-12)
        rep.add("stokes_t", st, 1e-12, t=t)
        rep.add("stokes_drift", drift / t, stokes_tol, t=t)
    return rep


def product_density(grid: Grid, factors: Sequence) -> FormField:
    """Top-degree density ``Π_k f_k(φ^k)`` from one callable per axis, unit mass."""
    D = grid.dim
    if len(factors) != D:
        raise FormError("need one factor per axis")
    parts = [np.asarray(f(ax.edge_coords()), dtype=float) for f, ax in zip(factors, grid.axes)]
    vals = _outer(parts)
    out = FormField.from_components(grid, D, {tuple(range(D)): vals})
    return out * (1.0 / out.mass())


def cohomology_pairing(grid: Grid) -> dict[tuple[tuple[int, ...], tuple[int, ...]], float]:
    """``∫ dφ^I ∧ dφ^J`` for constant coordinate forms of complementary degree."""
    D = grid.dim
    out = {}
    for p in range(D + 1):
        for I in itertools.combinations(range(D), p):
            J = tuple(k for k in range(D) if k not in I)
            a = FormField.from_components(grid, p, {I: 1.0})
            b = FormField.from_components(grid, D - p, {J: 1.0})
            out[(I, J)] = float(np.real(np.sum(wedge(a, b).values) * grid.cell_volume))
    return out
