"""Euler-Maruyama ensembles of ``∂_t φ = -A(φ) + e ξ`` for cross-checks."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .forms import FormError, FormField
from .grid import FlowField, Grid, Metric

CHUNK = 8192


class SimulationError(ValueError):
    pass


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Wiener increments ``ΔW_k`` (variance ``dt`` per unit channel) on a time grid."""

    increments: np.ndarray  # (K, D)
    dt: float
    seed: int | None = None

    def __post_init__(self):
        w = np.asarray(self.increments, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.ndim != 2 or not self.dt > 0:
            raise SimulationError("noise increments must be (K, D) with dt > 0")
        w.setflags(write=False)
        object.__setattr__(self, "increments", w)

    @classmethod
    def draw(cls, steps: int, dt: float, channels: int = 1, seed: int = 0) -> "NoisePath":
        if steps < 1:
            raise SimulationError("noise path needs at least one step")
        z = _rng(seed, 0).standard_normal((steps, channels))
        return cls(z * math.sqrt(dt), dt, seed)

    @classmethod
    def zero(cls, steps: int, dt: float, channels: int = 1) -> "NoisePath":
        return cls(np.zeros((steps, channels)), dt, None)

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def channels(self) -> int:
        return self.increments.shape[1]

    @property
    def duration(self) -> float:
        return self.steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def refine(self, seed: int | None = None) -> "NoisePath":
        """Same Brownian path at half the step (Brownian-bridge midpoints)."""
        s = (self.seed if self.seed is not None else 0) if seed is None else seed
        z = _rng(s, 1).standard_normal(self.increments.shape)
        first = 0.5 * self.increments + 0.5 * math.sqrt(self.dt) * z
        second = self.increments - first
        out = np.empty((2 * self.steps, self.channels))
        out[0::2], out[1::2] = first, second
        return NoisePath(out, self.dt / 2, self.seed)

    def moment_check(self, sigmas: float = 5.0) -> bool:
        """Empirical mean and variance of the increments within ``sigmas`` standard errors."""
        w = self.increments.ravel()
        n = len(w)
        mean_ok = abs(w.mean()) <= sigmas * math.sqrt(self.dt / n)
        var_ok = abs(w.var() - self.dt) <= sigmas * self.dt * math.sqrt(2.0 / n)
        return bool(mean_ok and var_ok)


@dataclass
class TrajectoryEnsemble:
    grid: Grid
    final: np.ndarray          # (samples, D); NaN rows for flagged samples
    displacement: np.ndarray   # (samples, D) unwrapped φ(T) - φ(0)
    counts: np.ndarray         # per active top-degree cell
    outside: int               # finite samples that left the grid
    flagged: int               # blown-up samples
    dt: float
    steps: int
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def samples(self) -> int:
        return len(self.final)

    @property
    def duration(self) -> float:
        return self.steps * self.dt

    def histogram(self) -> np.ndarray:
        """Cell masses of the samples that landed on the grid (sum 1)."""
        total = self.counts.sum()
        if total == 0:
            raise SimulationError("no samples landed on the grid")
        return self.counts / total

    def density(self) -> FormField:
        """Histogram as a top-degree field (coefficients = mass / cell volume)."""
        D = self.grid.dim
        return FormField.from_active(self.grid, D, self.histogram() / self.grid.cell_volume)

    def moments(self) -> dict:
        ok = np.all(np.isfinite(self.final), axis=1)
        x = self.final[ok]
        n = len(x)
        mean = x.mean(axis=0)
        c = x - mean
        var = (c**2).mean(axis=0) * n / max(n - 1, 1)
        m4 = (c**4).mean(axis=0)
        rate = self.displacement[ok].mean(axis=0) / self.duration if self.duration else mean * 0
        rate_se = self.displacement[ok].std(axis=0, ddof=1) / self.duration / math.sqrt(n) if n > 1 else rate * 0
        return {
            "samples": n,
            "flagged": self.flagged,
            "outside": self.outside,
            "mean": mean.tolist(),
            "mean_stderr": np.sqrt(var / n).tolist(),
            "variance": var.tolist(),
            "variance_stderr": np.sqrt(np.maximum(m4 - var**2, 0) / n).tolist(),
            "winding_rate": rate.tolist(),
            "winding_rate_stderr": rate_se.tolist(),
        }

    def histogram_csv(self) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", "mass"])
        for i, m in enumerate(self.histogram()):
            w.writerow([i, format(float(m), ".17g")])
        return buf.getvalue()

    def moments_json(self) -> str:
        return json.dumps(self.moments(), sort_keys=True, indent=2) + "\n"


def _initial_points(grid: Grid, init, count: int, rng: np.random.Generator) -> np.ndarray:
    D = grid.dim
    if isinstance(init, FormField):
        if init.degree != D:
            raise SimulationError("initial density must be a top-degree field")
        p = np.clip(init.active().real, 0, None)
        if p.sum() <= 0:
            raise SimulationError("initial density has no positive mass")
        cells = rng.choice(len(p), size=count, p=p / p.sum())
        idx = np.unravel_index(cells, tuple(a.edges for a in grid.axes))
        pts = np.empty((count, D))
        u = rng.random((count, D))
        for k, a in enumerate(grid.axes):
            pts[:, k] = a.lo + (idx[k] + u[:, k]) * a.spacing
        return pts
    x = np.asarray(init, dtype=float)
    if x.shape == (D,) or x.shape == () and D == 1:
        return np.broadcast_to(x.reshape(1, D), (count, D)).copy()
    raise SimulationError(f"initial condition must be a point of dimension {D} or a density")


def _cell_index(grid: Grid, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat top-cell index of each point and a mask of points inside the grid."""
    inside = np.all(np.isfinite(pts), axis=1)
    ids = []
    for k, a in enumerate(grid.axes):
        j = np.floor((pts[:, k] - a.lo) / a.spacing)
        j = np.where(np.isfinite(j), j, -1).astype(np.int64)
        inside &= (j >= 0) & (j < a.edges)
        ids.append(np.clip(j, 0, a.edges - 1))
    flat = np.ravel_multi_index(ids, tuple(a.edges for a in grid.axes))
    return flat, inside


def simulate(
    flow: FlowField,
    metric: Metric,
    init,
    steps: int,
    dt: float,
    samples: int,
    seed: int = 0,
    threads: int | None = None,
) -> TrajectoryEnsemble:
    """Euler-Maruyama ensemble ``φ += -dt A(φ) + e ΔW`` with ``e e^T = g``.

    ``init`` is a point or a top-degree density (cells drawn by mass, uniform
    inside a cell). Samples are split into fixed-size chunks, each with its
    own counter-based stream keyed by ``(seed, chunk)``, so the result does
    not depend on ``threads``.
    """
    grid = flow.grid
    D = grid.dim
    if metric.dim != D:
        raise SimulationError("metric dimension does not match the flow")
    if samples < 1 or steps < 0:
        raise SimulationError("need samples >= 1 and steps >= 0")
    stiff = dt * flow.max_derivative()
    if stiff > 0.1:
        raise SimulationError(f"dt * max|dA| = {stiff:.3g} exceeds the stability bound 0.1")
    e = metric.vielbein
    periodic = np.array([a.periodic for a in grid.axes])
    lo = np.array([a.lo for a in grid.axes])
    ext = np.array([a.extent for a in grid.axes])
    limit = 10 * np.array([max(abs(a.lo), abs(a.hi), a.extent) for a in grid.axes])
    sq = math.sqrt(dt)

    def run(chunk: int):
        n = min(CHUNK, samples - chunk * CHUNK)
        rng = _rng(seed, chunk + 1)
        x = _initial_points(grid, init, n, rng)
        x0 = x.copy()
        dead = np.zeros(n, dtype=bool)
        for _ in range(steps):
            dw = rng.standard_normal((n, D)) * sq
            x = x - dt * flow.evaluate(x) + dw @ e.T
            bad = np.any(~(np.abs(x) <= limit) & ~periodic, axis=1)
            if bad.any():
                dead |= bad
                x[bad] = 0.0
        disp = x - x0
        x = np.where(periodic, lo + np.mod(x - lo, ext), x)
        x[dead] = np.nan
        disp[dead] = np.nan
        return x, disp, int(dead.sum())

    nchunks = math.ceil(samples / CHUNK)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, range(nchunks)))
    else:
        parts = [run(c) for c in range(nchunks)]
    final = np.concatenate([p[0] for p in parts])
    disp = np.concatenate([p[1] for p in parts])
    flagged = sum(p[2] for p in parts)
    flat, inside = _cell_index(grid, final)
    top = grid.num_active(D)
    counts = np.bincount(flat[inside], minlength=top).astype(float)
    outside = int((~inside).sum()) - flagged
    meta = {"integrator": "euler-maruyama", "rng": "philox", "chunk": CHUNK, "dt": dt,
            "steps": steps, "samples": samples, "seed": seed}
    return TrajectoryEnsemble(grid, final, disp, counts, outside, flagged, dt, steps, seed, meta)


def compare_density(ensemble: TrajectoryEnsemble, psi: FormField) -> float:
    """L1 distance between the histogram and the cell masses of ``psi`` (each normalized)."""
    grid = ensemble.grid
    if psi.grid != grid:
        raise FormError("histogram binning does not match the field's grid")
    if psi.degree != grid.dim:
        raise FormError("density comparison needs a top-degree field")
    q = psi.active().real
    if q.sum() == 0:
        raise FormError("reference density has zero mass")
    return float(np.abs(ensemble.histogram() - q / q.sum()).sum())
