"""Periodic solutions of the noise-driven 1D recursion and their signed count.

At fixed noise the loop equations are
``F_k = (φ_{k+1} - φ_k)/δt + A(φ_k) - √Θ ξ_k = 0`` with ``φ_K ≡ φ_0``
(mod the period on a circle) and ``ξ_k δt = ΔW_k``. Solutions are the fixed
points of the time-T map ``G``; each carries the sign of ``1 - G'``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import FlowField, Metric
from .montecarlo import NoisePath

SCAN = 10_000


class NicolaiError(RuntimeError):
    pass


class ScanResolutionError(NicolaiError):
    """Refining the scan changed the number of roots found."""


class SignMismatch(NicolaiError):
    pass


@dataclass(frozen=True)
class PeriodicSolution:
    loop: np.ndarray       # φ_0 .. φ_{K-1}
    sign: int
    monodromy: float       # G'(φ_0)
    shift: float           # φ_K - φ_0 (0 on the line, multiple of the period on a circle)
    closure: float
    residual: float

    @property
    def start(self) -> float:
        return float(self.loop[0])

    def to_dict(self) -> dict:
        return {"phi0": self.start, "sign": self.sign, "monodromy": self.monodromy,
                "shift": self.shift, "closure": self.closure, "residual": self.residual}


class _Loop:
    def __init__(self, flow: FlowField, theta: float, noise: NoisePath):
        if flow.grid.dim != 1:
            raise NicolaiError("periodic-solution counting is implemented for D = 1 only")
        if noise.channels != 1:
            raise NicolaiError("noise path must have a single channel")
        if theta < 0:
            raise NicolaiError("Θ must be non-negative")
        self.flow = flow
        self.dt = noise.dt
        self.kick = math.sqrt(theta) * noise.increments[:, 0]
        ax = flow.grid.axes[0]
        self.periodic = ax.periodic
        self.period = ax.extent if ax.periodic else 0.0
        self.lo, self.hi = ax.lo, ax.hi

    def a(self, x):
        return self.flow.evaluate(np.asarray(x, dtype=float)[..., None])[..., 0]

    def da(self, x):
        return self.flow.derivative(np.asarray(x, dtype=float)[..., None])[..., 0, 0]

    def trajectory(self, x0) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        out = np.empty((len(self.kick) + 1,) + x0.shape)
        out[0] = x = x0
        with np.errstate(over="ignore", invalid="ignore"):
            for k, w in enumerate(self.kick):
                x = x - self.dt * self.a(x) + w
                out[k + 1] = x
        return out

    def end(self, x0) -> np.ndarray:
        x = np.asarray(x0, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            for w in self.kick:
                x = x - self.dt * self.a(x) + w
        return x

    def log_monodromy(self, traj: np.ndarray) -> tuple[float, int]:
        m = 1.0 - self.dt * self.da(traj[:-1])
        sign = -1 if np.sum(m < 0) % 2 else 1
        if np.any(m == 0):
            return -math.inf, 0
        return float(np.sum(np.log(np.abs(m)))), sign


def _roots(xs: np.ndarray, vals: np.ndarray) -> list[tuple[float, float]]:
    s = np.sign(vals)
    if not np.all(np.isfinite(vals)):
        raise NicolaiError("time-T map diverged inside the scan range; narrow the range or reduce dt")
    brackets = []
    for i in np.flatnonzero(s[:-1] * s[1:] < 0):
        brackets.append((xs[i], xs[i + 1]))
    for i in np.flatnonzero(s == 0):
        brackets.append((xs[i], xs[i]))
    return brackets


def _scan(loop: _Loop, xs: np.ndarray, g: np.ndarray, hi: float) -> list[tuple[float, float, float]]:
    """Brackets (a, b, shift) of all roots of ``G(x) - x - shift`` on the tabulated points."""
    if not loop.periodic:
        return [(a, b, 0.0) for a, b in _roots(xs, g)]
    L = loop.period
    found = []
    for m in range(int(math.floor(g.min() / L)), int(math.ceil(g.max() / L)) + 1):
        for a, b in _roots(xs, g - m * L):
            if a == hi and b == hi:
                continue  # the right end repeats the left end
            found.append((a, b, m * L))
    return found


def _scan_range(loop: _Loop, scan_range) -> tuple[float, float, bool]:
    if loop.periodic:
        return loop.lo, loop.lo + loop.period, True
    lo, hi = scan_range if scan_range is not None else (loop.lo, loop.hi)
    return float(lo), float(hi), False


def find_solutions(
    flow: FlowField,
    theta: float,
    noise: NoisePath,
    resolution: int = SCAN,
    scan_range: tuple[float, float] | None = None,
) -> list[PeriodicSolution]:
    """All loop solutions with starting point in the scan range.

    The time-T map is tabulated on ``resolution`` brackets, sign changes of
    ``G(x) - x`` (minus each integer number of periods on a circle) are
    refined with bracketed Newton steps and each root is checked against a scan at
    twice the resolution.
    """
    loop = _Loop(flow, theta, noise)
    stiff = noise.dt * flow.max_derivative()
    if stiff > 0.1:
        raise NicolaiError(f"dt * max|dA| = {stiff:.3g} exceeds the stability bound 0.1")
    lo, hi, periodic = _scan_range(loop, scan_range)
    # the coarse grid is every other point of the fine one
    xs = np.linspace(lo, hi, 2 * resolution + 1)
    g = loop.end(xs) - xs
    coarse = _scan(loop, xs[::2], g[::2], hi)
    fine = _scan(loop, xs, g, hi)
    if len(coarse) != len(fine):
        raise ScanResolutionError(
            f"{len(coarse)} roots at {resolution} brackets but {len(fine)} at {2 * resolution}"
        )
    if not fine:
        return []
    a, b, shift = (np.array(v, dtype=float) for v in zip(*fine))
    roots = _refine(loop, a, b, shift)
    sols = [_solution(loop, x, sh) for x, sh in zip(roots, shift)]
    sols.sort(key=lambda s: s.start)
    return sols


def _refine(loop: _Loop, a: np.ndarray, b: np.ndarray, shift: np.ndarray, maxiter: int = 100) -> np.ndarray:
    """Bracketed Newton iteration on ``G(x) - x - shift``, all brackets at once.

    The derivative is the monodromy ``G' = Π (1 - δt A'(φ_k))`` integrated
    alongside the trajectory; steps leaving the bracket fall back to bisection.
    """
    def residual(x):
        y, m = x.copy(), np.ones_like(x)
        with np.errstate(over="ignore", invalid="ignore"):
            for w in loop.kick:
                m *= 1.0 - loop.dt * loop.da(y)
                y = y - loop.dt * loop.a(y) + w
        return y - x - shift, m - 1.0

    fa = np.sign(residual(a)[0])
    x = np.where(a == b, a, 0.5 * (a + b))
    best, best_h = x.copy(), np.full_like(x, np.inf)
    for _ in range(maxiter):
        h, dh = residual(x)
        better = np.abs(h) < best_h
        best[better], best_h[better] = x[better], np.abs(h[better])
        done = (best_h <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(best))) | (b - a <= 0)
        if done.all():
            break
        same = np.sign(h) == fa
        a = np.where(same, x, a)
        b = np.where(same, b, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - h / dh
        inside = np.isfinite(xn) & (xn > a) & (xn < b)
        xn = np.where(inside, xn, 0.5 * (a + b))
        stalled = xn == x
        x = np.where(done | stalled, x, xn)
        if np.all(done | stalled):
            break
    return best


def _solution(loop: _Loop, x0: float, shift: float) -> PeriodicSolution:
    traj = loop.trajectory(np.float64(x0))
    closure = abs(traj[-1] - traj[0] - shift)
    nxt = np.append(traj[1:-1], traj[0] + shift)
    F = (nxt - traj[:-1]) / loop.dt + loop.a(traj[:-1]) - loop.kick / loop.dt
    logm, msign = loop.log_monodromy(traj)
    G1 = msign * math.exp(logm) if math.isfinite(logm) else 0.0
    return PeriodicSolution(
        loop=traj[:-1].copy(),
        sign=1 if G1 < 1 else -1,
        monodromy=G1,
        shift=float(shift),
        closure=float(closure),
        residual=float(np.abs(F).max()),
    )


def loop_jacobian(flow: FlowField, sol: PeriodicSolution, dt: float) -> sp.csc_matrix:
    """Sparse ``δF_k/δφ_j`` (cyclic bidiagonal) at a solution."""
    K = len(sol.loop)
    a1 = flow.derivative(sol.loop[:, None])[:, 0, 0]
    idx = np.arange(K)
    rows = np.concatenate([idx, idx])
    cols = np.concatenate([idx, (idx + 1) % K])
    vals = np.concatenate([-1.0 / dt + a1, np.full(K, 1.0 / dt)])
    return sp.csc_matrix((vals, (rows, cols)), shape=(K, K))


def _parity(perm: np.ndarray) -> int:
    seen = np.zeros(len(perm), dtype=bool)
    sign = 1
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def slogdet_sparse(J: sp.spmatrix) -> tuple[int, float]:
    """``(sign, log|det|)`` of a sparse square matrix from its LU factors."""
    try:
        lu = spla.splu(sp.csc_matrix(J))
    except RuntimeError:  # exactly singular
        return 0, -math.inf
    d = lu.U.diagonal()
    if np.any(d == 0):
        return 0, -math.inf
    sign = (-1 if np.sum(d < 0) % 2 else 1) * _parity(lu.perm_r) * _parity(lu.perm_c)
    return sign, float(np.sum(np.log(np.abs(d))))


def jacobian_sign(flow: FlowField, sol: PeriodicSolution, dt: float) -> int:
    """Sign of ``det δF/δφ`` normalized by ``(-1)^{K+1}`` so that attracting loops count +1.

    For the cyclic bidiagonal matrix ``det = (-1/δt)^K (G' - 1)``.
    """
    s, _ = slogdet_sparse(loop_jacobian(flow, sol, dt))
    K = len(sol.loop)
    return s * (-1) ** (K + 1)


def winding_number(solutions: list[PeriodicSolution], flow: FlowField | None = None,
                   dt: float | None = None) -> int:
    """``N+ - N-``; with ``flow``/``dt`` every sign is recomputed from the loop determinant."""
    if flow is not None:
        if dt is None:
            raise ValueError("dt is needed for the determinant cross-check")
        for s in solutions:
            js = jacobian_sign(flow, s, dt)
            if js != s.sign:
                raise SignMismatch(
                    f"solution at φ0={s.start:.12g}: sign(1-G')={s.sign} but det sign {js}; "
                    "reduce dt"
                )
    return int(sum(s.sign for s in solutions))


@dataclass(frozen=True)
class VielbeinCheck:
    ok: bool
    log_ratio: float   # log |det δξ/δφ| - log |det δF/δφ|
    expected: float    # K log sqrt(g_11)


def vielbein_sign_check(flow: FlowField, metric: Metric, sol: PeriodicSolution, dt: float) -> VielbeinCheck:
    """Build ``δξ/δφ = e^{-1} δF/δφ`` and ``δF/δφ`` explicitly and compare determinant signs."""
    JF = loop_jacobian(flow, sol, dt)
    einv = 1.0 / metric.vielbein[0, 0]
    Jxi = einv * JF
    s1, l1 = slogdet_sparse(Jxi)
    s2, l2 = slogdet_sparse(JF)
    K = len(sol.loop)
    return VielbeinCheck(bool(s1 == s2 and s1 != 0), float(l1 - l2), float(K * math.log(einv)))


@dataclass
class DrawResult:
    seed: int
    theta: float
    solutions: list[PeriodicSolution]
    winding: int
    winding_half_step: int | None = None

    @property
    def n_plus(self) -> int:
        return sum(1 for s in self.solutions if s.sign > 0)

    @property
    def n_minus(self) -> int:
        return sum(1 for s in self.solutions if s.sign < 0)

    def to_json(self) -> str:
        body = {"seed": self.seed, "theta": self.theta, "winding": self.winding,
                "winding_half_step": self.winding_half_step,
                "solutions": [s.to_dict() for s in self.solutions]}
        return json.dumps(body, sort_keys=True, indent=2) + "\n"


def analyse_draw(flow: FlowField, theta: float, steps: int, dt: float, seed: int,
                 resolution: int = SCAN, scan_range=None, half_step: bool = True) -> DrawResult:
    """Count solutions for one noise draw; optionally repeat at ``dt/2`` on the refined path."""
    noise = NoisePath.draw(steps, dt, 1, seed)
    sols = find_solutions(flow, theta, noise, resolution, scan_range)
    wn = winding_number(sols, flow, dt)
    half = None
    if half_step:
        fine = noise.refine()
        hs = find_solutions(flow, theta, fine, resolution, scan_range)
        half = winding_number(hs, flow, fine.dt)
    return DrawResult(seed, theta, sols, wn, half)


@dataclass
class WindingSurvey:
    draws: list[DrawResult] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.array([d.winding for d in self.draws])

    @property
    def variance(self) -> float:
        return float(np.var(self.values)) if self.draws else 0.0

    def csv(self) -> str:
        rows = ["seed,theta,n_plus,n_minus,winding"]
        for d in self.draws:
            rows.append(f"{d.seed},{format(d.theta, '.17g')},{d.n_plus},{d.n_minus},{d.winding}")
        return "\n".join(rows) + "\n"


def survey(flow: FlowField, thetas, seeds, steps: int, dt: float, resolution: int = SCAN,
           scan_range=None, half_step: bool = True, threads: int | None = None) -> WindingSurvey:
    jobs = [(th, s) for th in thetas for s in seeds]

    def run(job):
        th, s = job
        return analyse_draw(flow, th, steps, dt, s, resolution, scan_range, half_step)

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            draws = list(pool.map(run, jobs))
    else:
        draws = [run(j) for j in jobs]
    return WindingSurvey(draws)


def parameter_sweep(make_flow, values, theta: float, noise: NoisePath, resolution: int = SCAN,
                    scan_range=None) -> list[tuple[float, int, int]]:
    """``(value, N+, N-)`` for each flow parameter value at a fixed noise draw."""
    out = []
    for v in values:
        flow = make_flow(v)
        sols = find_solutions(flow, theta, noise, resolution, scan_range)
        winding_number(sols, flow, noise.dt)
        out.append((float(v), sum(s.sign > 0 for s in sols), sum(s.sign < 0 for s in sols)))
    return out
