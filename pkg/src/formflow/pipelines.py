"""One pipeline per CLI subcommand: compute, check invariants, write artifacts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import cpd as cpdmod
from . import nicolai as nic
from . import observables as ob
from .config import RunConfig
from .forms import FormField
from .grid import Metric, builtin_flow
from .hamiltonian import build_hamiltonian, evolve_logged, stationary_density
from .montecarlo import compare_density, simulate
from .report import write_csv, write_json
from .spectral import (
    ARPACK_TOL,
    SpectralError,
    breaking_diagnosis,
    classify,
    correlate,
    eigensolve,
    pairing_residuals,
    partition_function,
    witten_index,
)


@dataclass
class Outcome:
    results: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    files: list = field(default_factory=list)

    def check(self, name: str, value: float, limit: float, ok: bool | None = None, **detail):
        """Record an asserted invariant ``value <= limit`` (or an explicit ``ok``)."""
        passed = bool(value <= limit) if ok is None else bool(ok)
        self.results.setdefault("invariants", {})[name] = {"value": value, "limit": limit, "pass": passed}
        if not passed:
            self.failures.append({"invariant": name, "measured": value, "limit": limit, **detail})
        return passed

    def error(self, name: str, exc: Exception):
        self.failures.append({"invariant": name, "error": type(exc).__name__, "detail": str(exc)})

    def merge(self, key: str, other: "Outcome"):
        self.results[key] = other.results
        self.failures.extend({**f, "job": key} for f in other.failures)
        self.files.extend(other.files)


# --- spectral ------------------------------------------------------------


def _hamiltonian(cfg: RunConfig, theta: float | None = None):
    metric = cfg.metric if theta is None else cfg.with_theta(theta).metric
    return build_hamiltonian(cfg.grid, metric, cfg.flow)


def _spectrum(cfg: RunConfig, H=None, threads: int | None = None):
    H = H if H is not None else _hamiltonian(cfg)
    job = cfg.job("spectrum")
    raw = eigensolve(H, mode=job.get("mode", "auto"), k=job.get("k", 40),
                     shift=job.get("shift", -1e-3), tol=cfg.tolerances, workers=threads)
    return H, classify(raw)


def conjugation_residual(report) -> float:
    """Largest distance from each eigenvalue to the conjugate spectrum of its sector."""
    worst = 0.0
    for s in report.sectors.values():
        if s.size == 0:
            continue
        cost = np.abs(s.values[:, None] - s.values.conj()[None, :])
        r, c = linear_sum_assignment(cost)
        worst = max(worst, float(cost[r, c].max()))
    return worst


def run_spectrum(cfg: RunConfig, out: Path, threads: int | None = None) -> Outcome:
    o = Outcome()
    H = _hamiltonian(cfg)
    o.check("nilpotency", H.nilpotency_residual(), 1e-12)
    o.check("intertwining", H.intertwining_residual(), 1e-12)
    try:
        H, rep = _spectrum(cfg, H, threads)
    except SpectralError as exc:
        o.error("classification", exc)
        return o
    diag = breaking_diagnosis(rep)
    cond = max((float(s.condition.max()) for s in rep.sectors.values() if s.size), default=1.0)
    bio = max(s.biorthogonality_error() for s in rep.sectors.values())
    o.results.update({
        "grid": cfg.grid.metadata(),
        "theta": cfg.metric.theta,
        "flow": cfg.flow.provenance,
        "sector_sizes": {str(n): s.size for n, s in rep.sectors.items()},
        "complete": rep.complete,
        "theta_counts": {str(n): c for n, c in rep.theta_counts().items()},
        "zero_mode_counts": {str(n): c for n, c in rep.zero_mode_counts().items()},
        "gap": diag.gap,
        "breaking": {"flag": diag.flag, "rationale": diag.rationale, "min_real": diag.min_real},
        "max_condition": cond,
        "biorthogonality": bio,
        "tolerances": vars(cfg.tolerances),
    })
    # roundoff in u^T v grows like eps * kappa for strongly non-normal sectors
    eps = np.finfo(float).eps if rep.complete else ARPACK_TOL
    o.check("biorthogonality", bio, max(1e-8, 100 * eps * cond))
    pr = pairing_residuals(rep)
    o.check("pairing", max(pr, default=0.0), max(rep.tol.pair, 100 * eps * cond))
    o.check("conjugation_closure", conjugation_residual(rep), 1e-8)
    if cfg.flow.gradient and cfg.grid.dim == 1:
        im = max(float(np.abs(s.values.imag).max()) for s in rep.sectors.values() if s.size)
        o.check("gradient_flow_real", im, 1e-8)
    rows = []
    for n, s in rep.sectors.items():
        for i in range(s.size):
            rec = s.record(i)
            rows.append([n, float(rec.value.real), float(rec.value.imag), rec.classification,
                         rec.partner or ""])
    o.files.append(write_csv(out / "spectrum.csv", ["sector", "re", "im", "class", "partner"], rows))
    return o


def run_index(cfg: RunConfig, out: Path, threads: int | None = None) -> Outcome:
    o = Outcome()
    Ts = cfg.job("index").get("T", [0.5, 2.0])
    try:
        _, rep = _spectrum(cfg, threads=threads)
        ws = [witten_index(rep, T) for T in Ts]
    except SpectralError as exc:
        o.error("witten_index", exc)
        return o
    o.results["W"] = [{"T": w.T, "trace": w.trace, "trace_imag": w.trace_imag, "count": w.count,
                       "agreement": w.agreement} for w in ws]
    o.results["euler_characteristic"] = cfg.grid.euler_characteristic() if cfg.grid.compact else None
    o.check("method_agreement", max(w.agreement for w in ws), 1e-6)
    spread = max(w.trace for w in ws) - min(w.trace for w in ws)
    o.check("T_independence", spread, 1e-8)
    if cfg.grid.compact:
        o.check("euler_characteristic", abs(ws[0].trace - cfg.grid.euler_characteristic()), 1e-6)
    return o


def run_partition(cfg: RunConfig, out: Path, threads: int | None = None) -> Outcome:
    o = Outcome()
    Ts = sorted(cfg.job("partition").get("T", [0.5, 1.0, 2.0]))
    try:
        _, rep = _spectrum(cfg, threads=threads)
    except SpectralError as exc:
        o.error("classification", exc)
        return o
    zs = [partition_function(rep, T) for T in Ts]
    o.results["Z"] = [{"T": z.T, "value": z.value, "imag": z.imag, "lower_bound": z.lower_bound} for z in zs]
    vals = [z.value for z in zs]
    o.check("monotone", max(np.diff(vals), default=0.0), 0.0)
    if rep.complete:
        ws = [abs(witten_index(rep, T, agree_tol=math.inf).trace) for T in Ts]
        o.check("Z_ge_W", max(w - z for w, z in zip(ws, vals)), 1e-9)
    prov = cfg.flow.provenance
    ref = None
    if prov.get("name") == "ou" and cfg.grid.dim == 1 and not cfg.grid.compact:
        w0 = prov["params"]["omega0"]
        ref = [1 / math.tanh(T * w0 / 2) for T in Ts]
        err = max(abs(z - r) / r for z, r in zip(vals, ref))
        o.results["reference"] = {"formula": "coth(T omega0 / 2)", "values": ref, "max_rel_error": err}
        o.check("harmonic_reference", err, 0.02)
    rows = [[z.T, z.value, z.imag] + ([r] if ref else []) for z, r in zip(zs, ref or [None] * len(zs))]
    o.files.append(write_csv(out / "zcurve.csv", ["T", "Z", "Z_imag"] + (["reference"] if ref else []), rows))
    return o


# --- evolution & Monte Carlo --------------------------------------------


def _gaussian(cfg: RunConfig, center, width: float) -> FormField:
    g = cfg.grid
    D = g.dim
    c = np.asarray(center if center is not None else [0.0] * D, dtype=float)

    def f(*xs):
        return np.exp(-sum((x - ci) ** 2 for x, ci in zip(xs, c)) / (2 * width**2))

    p = FormField.from_components(g, D, {tuple(range(D)): f})
    return p * (1.0 / p.mass())


def run_evolve(cfg: RunConfig, out: Path, threads: int | None = None) -> Outcome:
    o = Outcome()
    job = cfg.job("evolve")
    t, dt = job.get("t", 10.0), job.get("dt", 0.01)
    H = _hamiltonian(cfg)
    psi = _gaussian(cfg, job.get("center"), job.get("width", 0.5))
    try:
        r = evolve_logged(H, psi, t, dt, rtol=job.get("rtol", 1e-4))
    except Exception as exc:  # StepRejected / EvolutionDiverged carry the offending time
        o.error("evolution", exc)
        return o
    drift = float(np.abs(r.mass - r.mass[0]).max() / max(t, 1e-300))
    z = stationary_density(H)
    l1 = float(np.abs(r.field.values - z.values).sum() * cfg.grid.cell_volume)
    o.results.update({"t": t, "dt": r.dt, "max_step_error": r.max_error, "mass_drift_per_time": drift,
                      "l1_to_zero_mode": l1})
    o.check("mass_conservation", drift, 1e-10)
    if "l1_tol" in job:
        o.check("convergence_to_zero_mode", l1, job["l1_tol"])
    o.files.append(write_csv(out / "evolution.csv", ["t", "mass", "norm"],
                             [[float(a), float(b), float(c)] for a, b, c in r.log_rows()]))
    return o


def run_simulate(cfg: RunConfig, out: Path, threads: int | None = None) -> Outcome:
    o = Outcome()
    job = cfg.job("simulate")
    dt, t = job.get("dt", 0.005), job.get("t", 10.0)
    steps = int(round(t / dt))
    init = job.get("init", [0.0] * cfg.grid.dim)
    ens = simulate(cfg.flow, cfg.metric, init, steps, dt, job.get("samples", 100_000), cfg.seed, threads)
    mom = ens.moments()
    H = _hamiltonian(cfg)
    l1 = compare_density(ens, stationary_density(H))
    o.results.update({"moments": mom, "l1_to_zero_mode": l1, "metadata": ens.metadata})
    o.check("histogram_mass", abs(ens.histogram().sum() - 1), 1e-12)
    o.check("stationary_density", l1, job.get("l1_tol", 0.05))
    prov = cfg.flow.provenance
    if prov.get("name") == "ou":
        ref = cfg.metric.theta / (2 * prov["params"]["omega0"])
        z = [abs(v - ref) / se for v, se in zip(mom["variance"], mom["variance_stderr"])]
        o.results["variance_reference"] = ref
        o.check("stationary_variance_sigmas", max(z), 3.0)
    (out / "histogram.csv").write_text(ens.histogram_csv(), encoding="utf-8", newline="")
    write_json(out / "moments.json", mom)
    o.files += [out / "histogram.csv", out / "moments.json"]
    return o


# --- Nicolai map ---------------------------------------------------------


def run_nicolai(cfg: RunConfig, out: Path, threads: int | None = None) -> Outcome:
    o = Outcome()
    job = cfg.job("nicolai")
    dt, T = job.get("dt", 0.002), job.get("T", 2.0)
    steps = int(round(T / dt))
    seeds = [cfg.seed + i for i in range(job.get("draws", 20))]
    thetas = job.get("thetas", [cfg.metric.theta])
    try:
        sv = nic.survey(cfg.flow, thetas, seeds, steps, dt, job.get("resolution", nic.SCAN),
                        job.get("range"), job.get("half_step", True), threads)
    except nic.NicolaiError as exc:
        o.error("nicolai", exc)
        return o
    vals = sv.values
    o.results.update({"winding": vals.tolist(), "variance": sv.variance, "thetas": thetas,
                      "draws": len(seeds), "steps": steps, "dt": dt})
    o.check("winding_variance", sv.variance, 0.0)
    halves = [d.winding_half_step for d in sv.draws if d.winding_half_step is not None]
    if halves:
        o.check("half_step_agreement", int(sum(h != d.winding for h, d in zip(halves, sv.draws))), 0)
    vb = [nic.vielbein_sign_check(cfg.flow, cfg.with_theta(d.theta).metric, s, dt).ok
          for d in sv.draws for s in d.solutions]
    o.check("vielbein_sign", vb.count(False), 0)
    if "expected" in job:
        o.check("winding_expected", int(np.abs(vals - job["expected"]).max()), 0)
    o.files.append(write_csv(out / "winding.csv", ["seed", "theta", "n_plus", "n_minus", "winding"],
                             [[d.seed, float(d.theta), d.n_plus, d.n_minus, d.winding] for d in sv.draws]))
    sol_dir = out / "solutions"
    sol_dir.mkdir(exist_ok=True)
    for d in sv.draws:
        p = sol_dir / f"theta{d.theta:g}_seed{d.seed}.json"
        p.write_text(d.to_json(), encoding="utf-8", newline="\n")
    return o


# --- CPD -----------------------------------------------------------------

_SEPARABLE = {"ou", "double-well", "zero"}


def run_cpd(cfg: RunConfig, out: Path, threads: int | None = None) -> Outcome:
    o = Outcome()
    g = cfg.grid
    D = g.dim
    if D < 2:
        o.failures.append({"invariant": "cpd", "detail": "conditional densities need D >= 2"})
        return o
    job = cfg.job("cpd")
    known = job.get("known", [D - 1])
    centers = job.get("centers", [0.3 * (k + 1) for k in range(D)])
    widths = job.get("widths", [1.0] * D)
    factors = [
        (lambda x, c=c, w=w: np.exp(np.cos(x - c) / w)) if ax.periodic
        else (lambda x, c=c, w=w: np.exp(-0.5 * ((x - c) / w) ** 2))
        for c, w, ax in zip(centers, widths, g.axes)
    ]
    P = cpdmod.product_density(g, factors)
    bundle = cpdmod.factorize(P, known, cfg.eps_div)
    H = _hamiltonian(cfg)
    name = cfg.flow.provenance.get("name")
    Hf = None
    if name in _SEPARABLE:
        Hf = {k: build_hamiltonian(g.axis_grid(k), Metric.isotropic(cfg.metric.theta, 1),
                                   builtin_flow(name, g.axis_grid(k), **cfg.flow.provenance["params"]))
              for k in range(D)}
    probe = FormField.from_components(
        g, D - 1, {I: (lambda *xs, s=i: np.prod([np.cos(x + 0.3 * s) + 1.5 for x in xs], axis=0))
                   for i, I in enumerate(g.multi_indices(D - 1))})
    rep = cpdmod.evolve_and_check(bundle, H, Hf, job.get("t", 1.0), probe=probe)
    pairing = cpdmod.cohomology_pairing(g) if g.compact else {}
    o.results.update({
        "known": known,
        "separable": Hf is not None,
        "closedness": {"marginal": cpdmod.marginal_closedness(bundle.marginal),
                       "conditional": cpdmod.marginal_closedness(bundle.conditional)},
        "checks": rep.checks,
        "cohomology_pairing": {f"{list(I)}|{list(J)}": v for (I, J), v in pairing.items()},
    })
    for k, c in rep.checks.items():
        if c["asserted"] and c["pass"] is False:
            o.failures.append({"invariant": k, "measured": c["value"], "limit": c["limit"]})
    if pairing:
        o.check("pairing_nondegenerate", -min(abs(v) for v in pairing.values()), 0.0,
                ok=min(abs(v) for v in pairing.values()) > 0)
    o.files.append(out / "cpd_report.json")
    (out / "cpd_report.json").write_text(rep.to_json(), encoding="utf-8", newline="\n")
    return o


# --- correlations --------------------------------------------------------


def _observable(cfg: RunConfig, kind: str, k: int):
    g = cfg.grid
    if kind == "fourier":
        return ob.multiply(g, lambda *xs: np.exp(1j * k * xs[0]), f"e^(i{k}φ)")
    return ob.multiply(g, lambda *xs: xs[0], "φ")


def run_correlate(cfg: RunConfig, out: Path, threads: int | None = None) -> Outcome:
    o = Outcome()
    job = cfg.job("correlate")
    kind = job.get("observable", "fourier" if cfg.grid.compact else "position")
    k = job.get("k", 1)
    t = np.linspace(0.0, job.get("t_max", 4.0), job.get("points", 41))
    try:
        _, rep = _spectrum(cfg, threads=threads)
    except SpectralError as exc:
        o.error("classification", exc)
        return o
    O = _observable(cfg, kind, k)
    c = correlate(rep, O, O, t)
    o.results.update({"observable": O.name, "decay_rate": c.decay_rate, "frequency": c.frequency})
    o.files.append(write_csv(out / "correlation.csv", ["t", "re", "im"],
                             [[float(a), float(b.real), float(b.imag)] for a, b in zip(c.t, c.values)]))
    sweep = job.get("gap_sweep")
    if sweep:
        rows = []
        for th in sweep:
            H = _hamiltonian(cfg, th)
            _, r = _spectrum(cfg, H, threads)
            rows.append([float(th), breaking_diagnosis(r).gap, breaking_diagnosis(r).flag])
        th = np.array([r[0] for r in rows])
        gaps = np.array([r[1] for r in rows])
        slope = float(np.polyfit(th, gaps, 1)[0])
        o.results["gap_sweep"] = {"theta": th.tolist(), "gap": gaps.tolist(), "slope": slope,
                                  "flags": [r[2] for r in rows]}
        o.files.append(write_csv(out / "gap_sweep.csv", ["theta", "gamma1"], [r[:2] for r in rows]))
    return o


PIPELINES = {
    "spectrum": run_spectrum,
    "index": run_index,
    "partition": run_partition,
    "evolve": run_evolve,
    "simulate": run_simulate,
    "nicolai": run_nicolai,
    "cpd-check": run_cpd,
    "correlate": run_correlate,
}
