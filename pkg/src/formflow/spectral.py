"""Eigenanalysis of the per-degree Hamiltonians and the quantities built on it.

Left vectors are row eigenvectors of the real sector matrix: ``u^T H = E u^T``,
normalized so that ``u_i^T v_j = δ_ij`` (bilinear, no conjugation). All
brackets ``<left| O |right>`` below use that convention.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .hamiltonian import HamiltonianSet

log = logging.getLogger(__name__)

DENSE_LIMIT = 4096

THETA = "theta"
LOWER = "paired-lower"
UPPER = "paired-upper"
UNCLASSIFIED = "unclassified"


class SpectralError(RuntimeError):
    pass


class ConvergenceError(SpectralError):
    pass


class PairingViolation(SpectralError):
    pass


class WittenIndexMismatch(SpectralError):
    pass


ARPACK_TOL = 1e-12


@dataclass(frozen=True)
class Tolerances:
    zero: float = 1e-8      # |E| <= zero * max|E| in the sector
    cluster: float = 1e-10  # eigenvalue clusters, relative to max(1, max|E|)
    pair: float = 1e-8      # pairing match, relative to max(1, |E|)
    vector: float = 1e-6    # ||d v|| / (||d|| ||v||) counted as zero
    defective: float = 1e8  # condition number of a cluster overlap block
    eps_gamma: float = 1e-6
    eps_e: float = 1e-6


@dataclass
class EigenRecord:
    id: str
    sector: int
    value: complex
    right: np.ndarray
    left: np.ndarray
    classification: str = UNCLASSIFIED
    partner: str | None = None
    defective: bool = False

    @property
    def gamma(self) -> float:
        return float(self.value.real)

    @property
    def ghost_number(self) -> int:
        return self.sector


@dataclass
class SectorSpectrum:
    degree: int
    values: np.ndarray          # (k,)
    right: np.ndarray           # (N, k), unit 2-norm columns
    left: np.ndarray            # (N, k), left.T @ right ≈ I
    complete: bool
    residuals: np.ndarray
    defective: np.ndarray       # (k,) bool
    condition: np.ndarray       # (k,) ||u|| ||v|| / |u^T v|
    classes: list[str] = field(default_factory=list)
    partners: list[str | None] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.values)

    def record(self, i: int) -> EigenRecord:
        return EigenRecord(
            id=record_id(self.degree, i),
            sector=self.degree,
            value=complex(self.values[i]),
            right=self.right[:, i],
            left=self.left[:, i],
            classification=self.classes[i] if self.classes else UNCLASSIFIED,
            partner=self.partners[i] if self.partners else None,
            defective=bool(self.defective[i]),
        )

    def biorthogonality_error(self) -> float:
        ok = ~self.defective
        G = self.left[:, ok].T @ self.right[:, ok]
        return float(np.abs(G - np.eye(G.shape[0])).max()) if G.size else 0.0


def record_id(sector: int, i: int) -> str:
    return f"{sector}:{i}"


@dataclass
class SpectrumReport:
    H: HamiltonianSet
    sectors: dict[int, SectorSpectrum]
    tol: Tolerances = Tolerances()
    classified: bool = False

    @property
    def complete(self) -> bool:
        return all(s.complete for s in self.sectors.values())

    def records(self, sector: int | None = None) -> list[EigenRecord]:
        keys = [sector] if sector is not None else sorted(self.sectors)
        return [self.sectors[n].record(i) for n in keys for i in range(self.sectors[n].size)]

    def all_values(self) -> np.ndarray:
        return np.concatenate([self.sectors[n].values for n in sorted(self.sectors)])

    def zero_tolerance(self, n: int) -> float:
        vals = self.sectors[n].values
        scale = np.abs(self.H[n].diagonal()).max() if self.H[n].nnz else 1.0
        scale = max(scale, np.abs(vals).max() if len(vals) else 0.0, 1e-300)
        return self.tol.zero * scale

    def zero_mode_counts(self) -> dict[int, int]:
        return {
            n: int(np.sum(np.abs(s.values) <= self.zero_tolerance(n)))
            for n, s in sorted(self.sectors.items())
        }

    def theta_counts(self) -> dict[int, int]:
        if not self.classified:
            raise SpectralError("classify the report first")
        return {n: s.classes.count(THETA) for n, s in sorted(self.sectors.items())}


# --- eigensolve -----------------------------------------------------------


def _clusters(values: np.ndarray, tol: float) -> list[np.ndarray]:
    """Single-linkage groups of eigenvalues closer than ``tol`` in the complex plane."""
    if len(values) == 0:
        return []
    pts = np.column_stack([values.real, values.imag])
    pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    adj = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                        shape=(len(values), len(values)))
    _, labels = connected_components(adj, directed=False)
    order = np.argsort(labels, kind="stable")
    cuts = np.flatnonzero(np.diff(labels[order])) + 1
    return np.split(order, cuts)


def _biorthonormalize(values, right, left, tol: Tolerances):
    right = right / np.linalg.norm(right, axis=0, keepdims=True)
    left = left.copy()
    k = len(values)
    defective = np.zeros(k, dtype=bool)
    scale = max(1.0, float(np.abs(values).max()) if k else 1.0)
    for grp in _clusters(values, tol.cluster * scale):
        M = left[:, grp].T @ right[:, grp]
        cond = np.linalg.cond(M) if M.size else 1.0
        if not np.isfinite(cond) or cond > tol.defective:
            defective[grp] = True
            log.warning("defective eigenvalue cluster near %s (cond %.3g)", values[grp[0]], cond)
            continue
        left[:, grp] = left[:, grp] @ np.linalg.inv(M).T
    return right, left, defective


def _condition(right, left) -> np.ndarray:
    return np.linalg.norm(right, axis=0) * np.linalg.norm(left, axis=0)


def _dense_sector(H: HamiltonianSet, n: int, tol: Tolerances) -> SectorSpectrum:
    A = H[n].toarray()
    if A.shape[0] == 0:
        empty = np.zeros((0, 0))
        return SectorSpectrum(n, np.zeros(0, complex), empty, empty, True, np.zeros(0),
                              np.zeros(0, bool), np.zeros(0))
    w, vl, vr = sla.eig(A, left=True, right=True)
    order = np.lexsort((w.imag, w.real))
    w, vl, vr = w[order], vl[:, order], vr[:, order]
    right, left, defective = _biorthonormalize(w, vr.astype(complex), vl.astype(complex).conj(), tol)
    if not defective.any():
        # the dual basis of the full right matrix repairs badly conditioned
        # clusters, but is useless when the right matrix is numerically
        # singular; keep whichever basis is closer to biorthonormal
        dual = np.linalg.inv(right).T
        eye = np.eye(len(w))
        if np.abs(dual.T @ right - eye).max() < np.abs(left.T @ right - eye).max():
            left = dual
    res = np.linalg.norm(A @ right - right * w, axis=0)
    return SectorSpectrum(n, w, right, left, True, res, defective, _condition(right, left))


def _iterative_sector(H: HamiltonianSet, n: int, k: int, shift: float, tol: Tolerances) -> SectorSpectrum:
    A = H[n].tocsc()
    N = A.shape[0]
    k = min(k, N - 2)
    try:
        w, vr = spla.eigs(A, k=k, sigma=shift, which="LM", tol=ARPACK_TOL)
        wl, vl = spla.eigs(A.T.tocsc(), k=k, sigma=shift, which="LM", tol=ARPACK_TOL)
    except spla.ArpackNoConvergence as exc:
        res = np.linalg.norm(A @ exc.eigenvectors - exc.eigenvectors * exc.eigenvalues, axis=0)
        raise ConvergenceError(f"sector {n}: ARPACK did not converge; residuals {res}") from exc
    order = np.lexsort((w.imag, w.real))
    w, vr = w[order], vr[:, order]
    # match left vectors to right eigenvalues
    cost = np.abs(w[:, None] - wl[None, :])
    ri, ci = linear_sum_assignment(cost)
    left = np.zeros_like(vr)
    left[:, ri] = vl[:, ci]
    bad = np.zeros(len(w), dtype=bool)
    bad[ri] = cost[ri, ci] > 1e-6 * max(1.0, np.abs(w).max())
    if bad.any():
        # the window edge cut through a cluster: keep only eigenvalues closer
        # to the shift than the first unmatched one
        dist = np.abs(w - shift)
        keep = dist < dist[bad].min() * (1 - 1e-9)
        if not keep.any():
            raise ConvergenceError(f"sector {n}: left and right eigenvalues do not match")
        w, vr, left = w[keep], vr[:, keep], left[:, keep]
    right, left, defective = _biorthonormalize(w, vr, left, tol)
    res = np.linalg.norm(A @ right - right * w, axis=0)
    if res.max() > 1e-6 * max(1.0, np.abs(w).max()):
        raise ConvergenceError(f"sector {n}: residual norms {res.max():.3g}")
    return SectorSpectrum(n, w, right, left, k >= N, res, defective, _condition(right, left))


def eigensolve(
    H: HamiltonianSet,
    mode: str = "auto",
    k: int = 40,
    shift: float = -1e-3,
    tol: Tolerances = Tolerances(),
    workers: int | None = None,
) -> SpectrumReport:
    """Right/left eigenpairs of every sector.

    ``mode='dense'`` solves each sector completely (dimension <= 4096);
    ``'iterative'`` finds the ``k`` eigenvalues nearest ``shift`` by
    shift-invert Arnoldi (smallest real parts for these spectra); ``'auto'``
    picks dense where allowed.
    """
    if mode not in ("auto", "dense", "iterative"):
        raise ValueError(f"unknown eigensolve mode {mode!r}")

    def solve(n):
        N = H[n].shape[0]
        use_dense = mode == "dense" or (mode == "auto" and N <= DENSE_LIMIT)
        if use_dense:
            if N > DENSE_LIMIT:
                raise SpectralError(f"sector {n} has dimension {N} > {DENSE_LIMIT}; use iterative mode")
            return _dense_sector(H, n, tol)
        return _iterative_sector(H, n, k, shift, tol)

    degrees = list(range(H.dim + 1))
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(solve, degrees))
    else:
        parts = [solve(n) for n in degrees]
    return SpectrumReport(H, {s.degree: s for s in parts}, tol)


# --- classification -------------------------------------------------------


def _op_norm(M: sp.spmatrix) -> float:
    return float(spla.norm(M, np.inf)) if M.nnz else 0.0


def classify(report: SpectrumReport) -> SpectrumReport:
    """Label every eigenpair as theta, paired-lower/upper or unclassified.

    theta: ``|E| <= tol_zero`` with ``d v = 0`` and ``u^T d = 0``. A state with
    ``d v != 0`` is paired-lower and linked to the eigenvector of the next
    sector that carries its image; :class:`PairingViolation` is raised when
    no eigenvalue of that sector matches.
    """
    H, tol = report.H, report.tol
    D = H.dim
    sectors = {n: replace(s) for n, s in report.sectors.items()}
    for s in sectors.values():
        s.classes = [UNCLASSIFIED] * s.size
        s.partners = [None] * s.size

    split = {}
    for n, s in sectors.items():
        if n < D:
            split[n] = _split_degenerate(s, H.d[n].matrix, tol)

    dv_small, ud_small = {}, {}
    for n, s in sectors.items():
        if n < D:
            dn = H.d[n].matrix
            dv = np.linalg.norm(dn @ s.right, axis=0)
            dv_small[n] = (dv <= tol.vector * max(_op_norm(dn), 1e-300)) | split[n]
        else:
            dv_small[n] = np.ones(s.size, dtype=bool)
        if n > 0:
            dp = H.d[n - 1].matrix
            ud = np.linalg.norm(dp.T @ s.left, axis=0) / np.maximum(np.linalg.norm(s.left, axis=0), 1e-300)
            ud_small[n] = ud <= tol.vector * max(_op_norm(dp.T), 1e-300)
        else:
            ud_small[n] = np.ones(s.size, dtype=bool)

    for n, s in sectors.items():
        zt = report.zero_tolerance(n)
        for i in range(s.size):
            if abs(s.values[i]) <= zt and dv_small[n][i] and ud_small[n][i]:
                s.classes[i] = THETA

    for n in range(D):
        lo, hi = sectors[n], sectors[n + 1]
        if not lo.complete or not hi.complete:
            _link_partial(H, lo, hi, dv_small[n], tol)
            continue
        cand = [i for i in range(lo.size) if not dv_small[n][i] and lo.classes[i] != THETA]
        if not cand:
            continue
        images = H.d[n].matrix @ lo.right[:, cand]
        noise = np.finfo(float).eps * max(_op_norm(H[n]), _op_norm(H[n + 1]))
        coeff = np.abs(hi.left.T @ images)  # (hi.size, len(cand))
        scale = max(1.0, float(np.abs(lo.values).max()))
        for grp in _clusters(lo.values[cand], tol.cluster * scale):
            idx = [cand[g] for g in grp]
            C = coeff[:, grp].T
            rows, cols = linear_sum_assignment(-C)
            for r, c in zip(rows, cols):
                i = idx[r]
                E = lo.values[i]
                allowed = tol.pair * max(1.0, abs(E)) + noise * (lo.condition[i] + hi.condition[c])
                if abs(hi.values[c] - E) > allowed:
                    raise PairingViolation(
                        f"sector {n} eigenvalue {E:.12g} has image d v with no matching "
                        f"eigenvalue in sector {n + 1} (nearest {hi.values[c]:.12g})"
                    )
                lo.classes[i] = LOWER
                lo.partners[i] = record_id(n + 1, c)
                hi.classes[c] = UPPER
                hi.partners[c] = record_id(n, i)
    return SpectrumReport(H, sectors, tol, classified=True)


def _split_degenerate(s: SectorSpectrum, dn: sp.spmatrix, tol: Tolerances) -> np.ndarray:
    """Rotate each degenerate cluster so its basis splits into ``ker d`` and a complement.

    Eigenvectors of a degenerate eigenvalue are only defined up to mixing;
    a d-exact state mixed with a state that maps to the next sector would
    otherwise leave two records with overlapping images.
    """
    scale = max(1.0, float(np.abs(s.values).max()) if s.size else 1.0)
    thresh = tol.vector * max(_op_norm(dn), 1e-300)
    kernel = np.zeros(s.size, dtype=bool)
    s.right = s.right.copy()
    s.left = s.left.copy()
    for grp in _clusters(s.values, tol.cluster * scale):
        if len(grp) < 2 or s.defective[grp].any():
            continue
        Y = dn @ s.right[:, grp]
        _, sig, qh = np.linalg.svd(Y)
        rank = _numerical_rank(sig, thresh)
        if rank in (0, len(grp)):
            continue
        kernel[grp[rank:]] = True
        Q = qh.conj().T
        V = s.right[:, grp] @ Q
        U = s.left[:, grp] @ Q.conj()
        nrm = np.linalg.norm(V, axis=0)
        s.right[:, grp] = V / nrm
        s.left[:, grp] = U * nrm
        s.condition[grp] = _condition(s.right[:, grp], s.left[:, grp])
    return kernel


def _numerical_rank(sig: np.ndarray, thresh: float, jump: float = 1e3) -> int:
    """Rank from singular values, also cutting at a clear jump above ``thresh``.

    Near-degenerate neighbours pollute kernel directions at the level of
    eps * ||H|| / gap, which can sit just above an absolute threshold.
    """
    rank = int(np.sum(sig > thresh))
    if rank >= 2:
        ratios = sig[: rank - 1] / sig[1:rank]
        k = int(np.argmax(ratios))
        if ratios[k] > jump:
            return k + 1
    return rank


def _link_partial(H, lo, hi, dv_small, tol):
    """Partial spectra: link by eigenvalue proximity only where both sides were found."""
    for i in range(lo.size):
        if dv_small[i] or lo.classes[i] == THETA or hi.size == 0:
            continue
        E = lo.values[i]
        c = int(np.argmin(np.abs(hi.values - E)))
        if abs(hi.values[c] - E) <= tol.pair * max(1.0, abs(E)) and hi.partners[c] is None:
            lo.classes[i], lo.partners[i] = LOWER, record_id(hi.degree, c)
            hi.classes[c], hi.partners[c] = UPPER, record_id(lo.degree, i)


def pairing_residuals(report: SpectrumReport) -> list[float]:
    """|E_lower - E_upper| / max(1, |E|) for every linked pair."""
    out = []
    for n, s in report.sectors.items():
        for i, p in enumerate(s.partners):
            if s.classes[i] == LOWER:
                m, j = (int(x) for x in p.split(":"))
                E = s.values[i]
                out.append(abs(report.sectors[m].values[j] - E) / max(1.0, abs(E)))
    return out


# --- traces ---------------------------------------------------------------


@dataclass(frozen=True)
class WittenIndex:
    trace: float
    trace_imag: float
    count: int
    T: float

    @property
    def agreement(self) -> float:
        return abs(self.trace - self.count)


def witten_index(report: SpectrumReport, T: float, agree_tol: float = 1e-6) -> WittenIndex:
    """``Tr (-1)^F e^{-TH}`` from the spectra and the alternating theta count."""
    if not report.complete:
        raise SpectralError("Witten index trace needs complete spectra (dense mode)")
    if not report.classified:
        report = classify(report)
    total = 0j
    for n, s in report.sectors.items():
        total += (-1) ** n * np.sum(np.exp(-T * s.values))
    count = sum((-1) ** n * c for n, c in report.theta_counts().items())
    wi = WittenIndex(float(total.real), float(total.imag), int(count), float(T))
    if wi.agreement > agree_tol:
        unpaired = [r.id for r in report.records() if r.classification == UNCLASSIFIED
                    and abs(r.value) > report.zero_tolerance(r.sector)]
        raise WittenIndexMismatch(
            f"trace {wi.trace:.12g} vs theta count {count} at T={T}; "
            f"unpaired states: {unpaired[:10]}"
        )
    return wi


@dataclass(frozen=True)
class PartitionValue:
    value: float
    imag: float
    T: float
    lower_bound: bool


def partition_function(report: SpectrumReport, T: float) -> PartitionValue:
    """``Tr e^{-TH}``; a truncated (iterative) spectrum gives a flagged lower bound."""
    total = sum(np.sum(np.exp(-T * s.values)) for s in report.sectors.values())
    return PartitionValue(float(total.real), float(total.imag), float(T), not report.complete)


# --- observables & expectation values ------------------------------------


def ground_states(report: SpectrumReport) -> list[tuple[int, int]]:
    """(sector, index) of the states that survive ``T -> ∞``.

    Physical states have ``Re E <= min Re E + tol``; among them the ones with
    the smallest imaginary part are selected.
    """
    vals = [(n, i, v) for n, s in report.sectors.items() for i, v in enumerate(s.values)]
    tz = max(report.zero_tolerance(n) for n in report.sectors)
    gmin = min(v.real for _, _, v in vals)
    phys = [(n, i, v) for n, i, v in vals if v.real <= gmin + tz]
    emin = min(v.imag for _, _, v in phys)
    return [(n, i) for n, i, v in phys if v.imag <= emin + tz]


def _block(O, src: int, dst: int):
    return O.blocks.get((src, dst))


def expectation_value(report: SpectrumReport, O, T: float | None = None) -> complex:
    """Normalized stochastic expectation ``Z^{-1} Σ <α|O|α> e^{-T E_α}``.

    ``T=None`` (or ``inf``) keeps only the ground states.
    """
    _check_observable(report, O)
    if T is None or math.isinf(T):
        gs = ground_states(report)
        acc = 0j
        for n, i in gs:
            B = _block(O, n, n)
            if B is not None:
                s = report.sectors[n]
                acc += s.left[:, i] @ (B @ s.right[:, i])
        return complex(acc / len(gs))
    if not report.complete:
        raise SpectralError("finite-T expectation values need complete spectra")
    num, Z = 0j, 0j
    for n, s in report.sectors.items():
        w = np.exp(-T * s.values)
        Z += np.sum(w)
        B = _block(O, n, n)
        if B is not None:
            diag = np.einsum("ij,ij->j", s.left, B @ s.right)
            num += np.sum(diag * w)
    return complex(num / Z)


def _check_observable(report: SpectrumReport, O):
    if O.grid != report.H.grid:
        raise SpectralError("observable and spectrum live on different grids")


@dataclass
class Correlation:
    t: np.ndarray
    values: np.ndarray
    connected: np.ndarray
    decay_rate: float
    frequency: float


def correlate(report: SpectrumReport, O1, O2, t: Sequence[float], conjugate_first: bool = True) -> Correlation:
    """Ground-state two-time correlation ``<O1(t) O2(0)>`` from spectral sums.

    ``C(t) = Z^{-1} Σ_g Σ_α <g|O1|α><α|O2|g> e^{-t (E_α - E_g)}``. With
    ``conjugate_first`` the first observable is complex-conjugated, which is
    the autocorrelation convention for complex observables such as
    ``e^{iφ}``. The decay rate and oscillation frequency come from a linear
    fit of ``log C_conn(t)`` where ``C_conn`` drops the contributions of
    non-decaying states.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or len(t) == 0 or np.any(t < 0):
        raise ValueError("correlation times must be a non-empty list of t >= 0")
    if not report.complete:
        raise SpectralError("correlations need complete spectra")
    _check_observable(report, O1)
    _check_observable(report, O2)
    O1 = O1.conj() if conjugate_first else O1
    gs = ground_states(report)
    tz = max(report.zero_tolerance(n) for n in report.sectors)
    C = np.zeros(len(t), dtype=complex)
    Cc = np.zeros(len(t), dtype=complex)
    for n, i in gs:
        sg = report.sectors[n]
        vg, ug, Eg = sg.right[:, i], sg.left[:, i], sg.values[i]
        for (src, mid), B2 in O2.blocks.items():
            if src != n:
                continue
            B1 = _block(O1, mid, n)
            if B1 is None:
                continue
            sm = report.sectors[mid]
            c = sm.left.T @ (B2 @ vg)
            y = ug @ (B1 @ sm.right)
            amp = y * c
            dE = sm.values - Eg
            phase = np.exp(-np.outer(t, dE))
            C += phase @ amp
            decaying = dE.real > tz
            Cc += phase[:, decaying] @ amp[decaying]
    C /= len(gs)
    Cc /= len(gs)
    rate, freq = _fit_exponential(t, Cc)
    return Correlation(t, C, Cc, rate, freq)


def _fit_exponential(t: np.ndarray, c: np.ndarray) -> tuple[float, float]:
    mag = np.abs(c)
    if mag.max() == 0:
        return math.nan, math.nan
    ok = mag > 1e-12 * mag.max()
    if ok.sum() < 2:
        return math.nan, math.nan
    tt = t[ok]
    logm = np.log(mag[ok])
    phase = np.unwrap(np.angle(c[ok]))
    slope_m = np.polyfit(tt, logm, 1)[0]
    slope_p = np.polyfit(tt, phase, 1)[0]
    return float(-slope_m), float(abs(slope_p))


# --- breaking diagnosis ---------------------------------------------------


@dataclass(frozen=True)
class BreakingDiagnosis:
    broken: bool
    gap: float
    min_real: float
    rationale: str

    @property
    def flag(self) -> str:
        return "BROKEN" if self.broken else "UNBROKEN"


def breaking_diagnosis(report: SpectrumReport, eps_gamma: float | None = None,
                       eps_e: float | None = None) -> BreakingDiagnosis:
    eg = report.tol.eps_gamma if eps_gamma is None else eps_gamma
    ee = report.tol.eps_e if eps_e is None else eps_e
    vals = report.all_values()
    re, im = vals.real, vals.imag
    min_re = float(re.min())
    resonant = (np.abs(re) <= eg) & (np.abs(im) > ee)
    positive = re[re > eg]
    gap = float(positive.min()) if len(positive) else math.inf
    if resonant.any():
        E = vals[resonant][np.argmin(np.abs(vals[resonant].imag))]
        return BreakingDiagnosis(True, gap, min_re,
                                 f"non-dissipative resonance E = {E.real:.3g}{E.imag:+.3g}i")
    if min_re < -eg:
        return BreakingDiagnosis(True, gap, min_re, f"negative decay rate Re E = {min_re:.3g}")
    return BreakingDiagnosis(False, gap, min_re,
                             f"all physical states are zero modes; gap Γ1 = {gap:.6g}")
