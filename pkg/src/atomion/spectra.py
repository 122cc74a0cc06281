"""Adiabatic energy spectra versus trap separation.

The displaced-trap Hamiltonians are diagonalized in the d = 0 eigenbasis of
`solver`.  In dimensionless units the displacement enters only through

    H(delta) = diag(eps) + beta * (delta^2 - 2 delta X),

where X is the position matrix in the basis (1D: parity-odd couplings of
half-line states; 3D: l <-> l+1 blocks carrying the <l+1,0|cos theta|l,0>
angular factor).  Eigenvectors are tracked across the d grid by
maximum-overlap assignment and gauge-fixed so adjacent overlaps are positive,
which is what the time-dependent module needs for smooth nonadiabatic
couplings.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .solver import EigenBasis, QdtPhases, build_basis_1d, build_basis_radial

__all__ = [
    "AdiabaticSpectrum", "Crossing",
    "position_matrix_1d", "sign_matrix_1d", "weight_matrix",
    "hamiltonian_matrix_1d", "adiabatic_spectrum_1d", "adiabatic_spectrum_3d",
    "adiabatic_spectrum_full1d", "detect_crossings", "refined_d_grid",
    "write_spectrum_csv", "write_spectrum_json",
]


@dataclass
class AdiabaticSpectrum:
    """Energies and eigenvectors on a grid of trap separations.

    ``energies[j]`` is sorted ascending at each d; ``vectors[j]`` holds the
    corresponding eigenvector columns in the d = 0 basis.  ``tracking[j, t]``
    maps track t to its sorted column at d_j (track identity follows maximum
    overlap; breaks below 0.5 overlap are flagged, not fatal).
    """

    kind: str                      # '1d' | '3d' | 'full1d'
    d_grid: np.ndarray             # (nd,)
    energies: np.ndarray           # (nd, ns), sorted per row
    vectors: np.ndarray            # (nd, dim, ns)
    tracking: np.ndarray           # (nd, ns) int
    track_break: np.ndarray        # (nd, ns) bool
    basis: EigenBasis | None
    beta: float
    annotations: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.energies.shape[1]

    def tracked_energies(self) -> np.ndarray:
        """(nd, ns) energies reordered so column t follows track t."""
        out = np.empty_like(self.energies)
        for j in range(len(self.d_grid)):
            out[j] = self.energies[j, self.tracking[j]]
        return out

    def tracked_vectors(self) -> np.ndarray:
        out = np.empty_like(self.vectors)
        for j in range(len(self.d_grid)):
            out[j] = self.vectors[j][:, self.tracking[j]]
        return out

    def tracked_annotation(self, name: str) -> np.ndarray:
        a = self.annotations[name]
        out = np.empty_like(a)
        for j in range(len(self.d_grid)):
            out[j] = a[j, self.tracking[j]]
        return out


@dataclass
class Crossing:
    """Avoided crossing between adjacent sorted levels (n, m = n + 1)."""

    n: int
    m: int
    d_c: float
    delta_e: float
    slope_lower: float
    slope_upper: float
    slope_diff: float          # |dE1/dd - dE2/dd| of the diabatic branches
    unresolved: bool = False   # gap minimum at the scan boundary


# ----------------------------------------------------------------------------
# matrices in the d = 0 basis
# ----------------------------------------------------------------------------

def _half_line_overlap(basis: EigenBasis, f_weight: np.ndarray,
                       bra_sym, ket_sym) -> np.ndarray:
    vb = basis.values_matrix(bra_sym)
    vk = basis.values_matrix(ket_sym)
    return basis.norm_factor * (vb.T * f_weight) @ vk


def position_matrix_1d(basis: EigenBasis) -> np.ndarray:
    """<i|x|j> over the full line; nonzero only between opposite parities."""
    n = basis.size
    syms = [s.symmetry for s in basis.states]
    idx_e = [i for i, s in enumerate(syms) if s == "even"]
    idx_o = [i for i, s in enumerate(syms) if s == "odd"]
    w = basis.grid.weights * basis.grid.x
    block = _half_line_overlap(basis, w, "even", "odd")
    x_mat = np.zeros((n, n))
    x_mat[np.ix_(idx_e, idx_o)] = block
    x_mat[np.ix_(idx_o, idx_e)] = block.T
    return 0.5 * (x_mat + x_mat.T)


def sign_matrix_1d(basis: EigenBasis) -> np.ndarray:
    """<i|sign(x)|j>; couples opposite parities only."""
    n = basis.size
    syms = [s.symmetry for s in basis.states]
    idx_e = [i for i, s in enumerate(syms) if s == "even"]
    idx_o = [i for i, s in enumerate(syms) if s == "odd"]
    block = _half_line_overlap(basis, basis.grid.weights, "even", "odd")
    s_mat = np.zeros((n, n))
    s_mat[np.ix_(idx_e, idx_o)] = block
    s_mat[np.ix_(idx_o, idx_e)] = block.T
    return 0.5 * (s_mat + s_mat.T)


def weight_matrix(basis: EigenBasis, x_cut: float | None = None) -> np.ndarray:
    """<i| P(|x| < x_cut) |j>: probability weight inside the interaction
    region, used for the molecular/vibrational annotation.

    The projector is even, so cross-symmetry entries vanish over the full
    line; the matrix is block diagonal in the symmetry label.
    """
    if x_cut is None:
        x_cut = basis.x_cut
    w = basis.grid.weights * (basis.grid.x < x_cut)
    vals = np.column_stack([s.values for s in basis.states])
    m = basis.norm_factor * (vals.T * w) @ vals
    syms = [s.symmetry for s in basis.states]
    same = np.array([[a == b for b in syms] for a in syms])
    m = np.where(same, m, 0.0)
    return 0.5 * (m + m.T)


def angular_coupling(l: int) -> float:
    """<l+1, 0| cos(theta) |l, 0> = (l+1)/sqrt((2l+1)(2l+3))."""
    return (l + 1) / math.sqrt((2 * l + 1) * (2 * l + 3))


def position_matrix_3d(basis: EigenBasis) -> np.ndarray:
    """<n' l'|x cos(theta)|n l>: radial integral times the angular factor,
    block-tridiagonal in l."""
    n = basis.size
    l_values = sorted({s.symmetry for s in basis.states})
    idx = {l: [i for i, s in enumerate(basis.states) if s.symmetry == l]
           for l in l_values}
    w = basis.grid.weights * basis.grid.x
    x_mat = np.zeros((n, n))
    for l in l_values:
        if l + 1 not in idx:
            continue
        block = angular_coupling(l) * _half_line_overlap(basis, w, l, l + 1)
        x_mat[np.ix_(idx[l], idx[l + 1])] = block
        x_mat[np.ix_(idx[l + 1], idx[l])] = block.T
    return 0.5 * (x_mat + x_mat.T)


def hamiltonian_matrix_1d(basis: EigenBasis, delta: float,
                          x_mat: np.ndarray | None = None) -> np.ndarray:
    """H(delta) = diag(eps) + beta (delta^2 - 2 delta X), exactly symmetric."""
    if x_mat is None:
        x_mat = position_matrix_1d(basis)
    eps = basis.energies()
    h = np.diag(eps + basis.beta * delta**2) - 2.0 * basis.beta * delta * x_mat
    return 0.5 * (h + h.T)


# ----------------------------------------------------------------------------
# tracking and annotations
# ----------------------------------------------------------------------------

def _track_and_gauge(d_grid, energies, vectors):
    """Maximum-overlap state tracking with Hungarian resolution and a
    positive-adjacent-overlap gauge.  Mutates ``vectors`` in place."""
    nd, ns = energies.shape
    tracking = np.zeros((nd, ns), dtype=int)
    track_break = np.zeros((nd, ns), dtype=bool)
    tracking[0] = np.arange(ns)
    for j in range(1, nd):
        ov = vectors[j - 1].T @ vectors[j]
        row, col = linear_sum_assignment(-np.abs(ov))
        # gauge: make the matched overlap positive
        flip = ov[row, col] < 0
        vectors[j][:, col[flip]] *= -1.0
        sorted_map = np.empty(ns, dtype=int)
        sorted_map[row] = col          # sorted index at j-1 -> sorted index at j
        weak = np.zeros(ns, dtype=bool)
        weak[row] = np.abs(ov[row, col]) < 0.5
        track_break[j] = weak[tracking[j - 1]]
        tracking[j] = sorted_map[tracking[j - 1]]
    return tracking, track_break


def _annotate(vectors, mats: dict) -> dict:
    nd = vectors.shape[0]
    out = {}
    for name, m in mats.items():
        vals = np.empty((nd, vectors.shape[2]))
        for j in range(nd):
            vals[j] = np.sum(vectors[j] * (m @ vectors[j]), axis=0)
        out[name] = vals
    return out


def _angular_weights(basis: EigenBasis, vectors) -> np.ndarray:
    l_values = sorted({s.symmetry for s in basis.states})
    nd, _, ns = vectors.shape
    out = np.zeros((nd, ns, len(l_values)))
    for li, l in enumerate(l_values):
        rows = [i for i, s in enumerate(basis.states) if s.symmetry == l]
        out[:, :, li] = np.sum(vectors[:, rows, :] ** 2, axis=1)
    return out


def _truncation_check(vectors, energies_basis, top_fraction=0.1, tol=1e-4,
                      label=""):
    """Warn when reported states lean on the top of the basis (ceiling too
    low for the requested displacement)."""
    eps = np.asarray(energies_basis)
    cut = np.quantile(eps, 1.0 - top_fraction)
    rows = eps >= cut
    top_weight = np.sum(vectors[:, rows, :] ** 2, axis=1)
    # only the lower half of the spectrum is expected to be converged
    ns = vectors.shape[2]
    bad = top_weight[:, : ns // 2] > tol
    if np.any(bad):
        warnings.warn(f"{label}: basis-truncation diagnostic failed for "
                      f"{int(np.count_nonzero(np.any(bad, axis=0)))} of the "
                      f"lowest {ns // 2} states (top-shell weight > {tol:g})")


# ----------------------------------------------------------------------------
# spectra
# ----------------------------------------------------------------------------

def _diagonalize_series(d_grid, eps, beta, x_mat):
    nd, n = len(d_grid), len(eps)
    energies = np.empty((nd, n))
    vectors = np.empty((nd, n, n))
    base = np.diag(eps)
    for j, delta in enumerate(d_grid):
        h = base + beta * delta**2 * np.eye(n) - 2.0 * beta * delta * x_mat
        evals, evecs = np.linalg.eigh(0.5 * (h + h.T))
        energies[j] = evals
        vectors[j] = evecs
    return energies, vectors


def adiabatic_spectrum_1d(phases: QdtPhases, beta: float, d_grid,
                          n_even: int = 50, n_odd: int = 50,
                          basis: EigenBasis | None = None,
                          eps_floor: float | None = None,
                          grid=None) -> AdiabaticSpectrum:
    """Relative-motion spectrum of two displaced 1D traps versus separation."""
    d_grid = np.asarray(d_grid, dtype=float)
    if basis is None:
        basis = build_basis_1d(phases, beta, n_even=n_even, n_odd=n_odd,
                               eps_floor=eps_floor, grid=grid)
    x_mat = position_matrix_1d(basis)
    energies, vectors = _diagonalize_series(d_grid, basis.energies(), beta, x_mat)
    tracking, track_break = _track_and_gauge(d_grid, energies, vectors)
    ann = _annotate(vectors, {
        "localization": sign_matrix_1d(basis),
        "molecular_weight": weight_matrix(basis),
    })
    _truncation_check(vectors, basis.energies(), label="adiabatic_spectrum_1d")
    return AdiabaticSpectrum(kind="1d", d_grid=d_grid, energies=energies,
                             vectors=vectors, tracking=tracking,
                             track_break=track_break, basis=basis, beta=beta,
                             annotations=ann,
                             meta={"phases": phases, "beta": beta})


def adiabatic_spectrum_3d(phi: float, beta: float, d_grid, l_max: int,
                          eps_max: float, basis: EigenBasis | None = None,
                          eps_floor: float | None = None,
                          grid=None) -> AdiabaticSpectrum:
    """Spherical-trap relative-motion spectrum; the displacement couples
    adjacent angular momenta through -2 beta delta x cos(theta)."""
    d_grid = np.asarray(d_grid, dtype=float)
    if basis is None:
        basis = build_basis_radial(phi, beta, l_max=l_max, eps_max=eps_max,
                                   eps_floor=eps_floor, grid=grid)
    x_mat = position_matrix_3d(basis)
    energies, vectors = _diagonalize_series(d_grid, basis.energies(), beta, x_mat)
    tracking, track_break = _track_and_gauge(d_grid, energies, vectors)
    ann = _annotate(vectors, {"molecular_weight": weight_matrix(basis)})
    ann["angular"] = _angular_weights(basis, vectors)
    _truncation_check(vectors, basis.energies(), label="adiabatic_spectrum_3d")
    return AdiabaticSpectrum(kind="3d", d_grid=d_grid, energies=energies,
                             vectors=vectors, tracking=tracking,
                             track_break=track_break, basis=basis, beta=beta,
                             annotations=ann,
                             meta={"phi": phi, "beta": beta, "l_max": l_max,
                                   "eps_max": eps_max})


@dataclass(frozen=True)
class Full1dModel:
    """Dimensionless constants of the coupled COM-relative 1D problem.

    Frequencies are derived from the ratios only; the absolute scale enters
    through l_a/R*.  Energies in E*, lengths in R*.
    """

    m_i: float
    m_a: float
    freq_ratio: float          # omega_i / omega_a
    l_a_rstar: float           # l_a / R*
    beta_rel: float
    hw_rel: float              # hbar omega_rel / E*
    hw_cm: float               # hbar omega_cm / E*
    hw_a: float                # hbar omega_a / E*
    l_cm_rstar: float
    c_zx: float                # coefficient of Z x
    kappa: float               # coefficient of the -kappa d (Z + (m_i/M) x) term

    @classmethod
    def from_ratios(cls, m_i, m_a, freq_ratio, l_a_rstar):
        q = freq_ratio
        m_total = m_i + m_a
        mu = m_i * m_a / m_total
        w_rel = math.sqrt((m_a * q**2 + m_i) / m_total)   # units of omega_a
        w_cm = math.sqrt((m_i * q**2 + m_a) / m_total)
        lam_a = 1.0 / l_a_rstar**2                        # m_a omega_a R*^2/hbar
        lam_rel = (mu / m_a) * w_rel * lam_a              # mu omega_rel R*^2/hbar
        beta_rel = lam_rel**2
        hw_rel = 2.0 * lam_rel
        hw_a = hw_rel / w_rel
        hw_cm = hw_a * w_cm
        lam_cm = (m_total / m_a) * w_cm * lam_a
        c_zx = -2.0 * beta_rel * (q**2 - 1.0) * m_total / (m_a * q**2 + m_i)
        kappa = 2.0 * lam_rel * lam_a / w_rel   # 2 mu m_a w_a^2 R*^4 / hbar^2
        return cls(m_i=m_i, m_a=m_a, freq_ratio=q, l_a_rstar=l_a_rstar,
                   beta_rel=beta_rel, hw_rel=hw_rel, hw_cm=hw_cm, hw_a=hw_a,
                   l_cm_rstar=1.0 / math.sqrt(lam_cm), c_zx=c_zx, kappa=kappa)


def adiabatic_spectrum_full1d(phases: QdtPhases, model: Full1dModel, d_grid,
                              eps_ceiling_hwa: float = 60.0,
                              rel_basis: EigenBasis | None = None,
                              eps_floor: float | None = None,
                              max_states: int = 4000) -> AdiabaticSpectrum:
    """Coupled COM-relative spectrum for omega_i != omega_a.

    The basis is the product of COM harmonic states (frequency omega_cm) and
    the relative d = 0 eigenstates (frequency omega_rel), truncated at total
    energy eps_ceiling_hwa * hbar omega_a.
    """
    d_grid = np.asarray(d_grid, dtype=float)
    ceiling = eps_ceiling_hwa * model.hw_a
    if rel_basis is None:
        n_rel = max(int(ceiling / model.hw_rel) + 2, 4)
        rel_basis = build_basis_1d(phases, model.beta_rel, n_even=n_rel,
                                   n_odd=n_rel, eps_floor=eps_floor)
    eps_rel = rel_basis.energies()
    n_cm_max = max(int(ceiling / model.hw_cm) + 2, 2)
    eps_cm = (np.arange(n_cm_max) + 0.5) * model.hw_cm

    pairs = [(nc, nr) for nc in range(n_cm_max) for nr in range(len(eps_rel))
             if eps_cm[nc] + eps_rel[nr] <= ceiling]
    if not pairs:
        raise ValueError("energy ceiling excludes every product state")
    if len(pairs) > max_states:
        raise ValueError(f"ceiling admits {len(pairs)} product states "
                         f"(> max_states = {max_states}); lower the ceiling "
                         "or raise max_states explicitly")
    pairs.sort(key=lambda p: eps_cm[p[0]] + eps_rel[p[1]])
    n = len(pairs)
    i_cm = np.array([p[0] for p in pairs])
    i_rel = np.array([p[1] for p in pairs])

    x_rel = position_matrix_1d(rel_basis)
    l_cm = model.l_cm_rstar
    # assemble the d-independent pieces in the truncated product basis
    diag0 = eps_cm[i_cm] + eps_rel[i_rel]
    same_cm = (i_cm[:, None] == i_cm[None, :])
    cm_step = np.abs(i_cm[:, None] - i_cm[None, :]) == 1
    z_elem = np.where(cm_step,
                      l_cm * np.sqrt((np.maximum(i_cm[:, None], i_cm[None, :])) / 2.0),
                      0.0)
    x_elem = x_rel[np.ix_(i_rel, i_rel)]
    same_rel = (i_rel[:, None] == i_rel[None, :])

    h_zx = model.c_zx * z_elem * x_elem            # Z couples cm, x couples rel
    h_z = z_elem * same_rel                        # Z term: diagonal in rel
    h_x = x_elem * same_cm                         # x term: diagonal in cm

    m_total = model.m_i + model.m_a
    nd = len(d_grid)
    energies = np.empty((nd, n))
    vectors = np.empty((nd, n, n))
    for j, delta in enumerate(d_grid):
        h = np.diag(diag0 + 0.5 * model.kappa * delta**2) + h_zx \
            - model.kappa * delta * (h_z + (model.m_i / m_total) * h_x)
        evals, evecs = np.linalg.eigh(0.5 * (h + h.T))
        energies[j] = evals
        vectors[j] = evecs
    tracking, track_break = _track_and_gauge(d_grid, energies, vectors)

    # lift relative-sector annotations to the product basis
    w_rel = weight_matrix(rel_basis)
    s_rel = sign_matrix_1d(rel_basis)
    w_full = np.where(same_cm, w_rel[np.ix_(i_rel, i_rel)], 0.0)
    s_full = np.where(same_cm, s_rel[np.ix_(i_rel, i_rel)], 0.0)
    ann = _annotate(vectors, {"molecular_weight": w_full, "localization": s_full})
    _truncation_check(vectors, diag0, label="adiabatic_spectrum_full1d")
    return AdiabaticSpectrum(kind="full1d", d_grid=d_grid, energies=energies,
                             vectors=vectors, tracking=tracking,
                             track_break=track_break, basis=rel_basis,
                             beta=model.beta_rel, annotations=ann,
                             meta={"model": model, "n_states": n,
                                   "eps_ceiling_hwa": eps_ceiling_hwa})


# ----------------------------------------------------------------------------
# avoided crossings
# ----------------------------------------------------------------------------

def detect_crossings(spectrum: AdiabaticSpectrum,
                     pairs=None, min_gap: float = 0.0) -> list:
    """Locate local minima of adjacent-level gaps by parabolic interpolation.

    The two-level model E+- = +-sqrt((a d - b)^2 + c^2) makes gap^2 exactly
    quadratic in d near the crossing, so the parabola is fitted to gap^2; its
    curvature gives the diabatic slope difference directly.
    """
    d = spectrum.d_grid
    if len(d) < 3:
        raise ValueError("need at least 3 separations to locate crossings")
    e = spectrum.energies
    ns = spectrum.n_states
    out = []
    pair_list = pairs if pairs is not None else [(n, n + 1) for n in range(ns - 1)]
    for n, m in pair_list:
        if m != n + 1:
            raise ValueError("crossing detection works on adjacent sorted levels")
        gap = e[:, m] - e[:, n]
        g2 = gap**2
        for j in range(1, len(d) - 1):
            if not (g2[j] <= g2[j - 1] and g2[j] < g2[j + 1]):
                continue
            # parabola through the three points in (d, gap^2); in the
            # two-level model gap^2 = slope_diff^2 (d - d_c)^2 + delta_e^2
            x0, x1, x2 = d[j - 1], d[j], d[j + 1]
            y0, y1, y2 = g2[j - 1], g2[j], g2[j + 1]
            denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
            a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
            b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / denom
            if a <= 0:
                continue   # no parabolic minimum (parallel levels)
            d_c = -b / (2.0 * a)
            if not (x0 <= d_c <= x2):
                d_c = x1
            gap_min2 = max(y1 - a * (x1 - d_c) ** 2, 0.0)
            delta_e = math.sqrt(gap_min2)
            if delta_e < min_gap:
                continue
            slope_diff = math.sqrt(a)
            mid = 0.5 * (e[:, m] + e[:, n])
            s_mid = (mid[j + 1] - mid[j - 1]) / (x2 - x0)
            out.append(Crossing(n=n, m=m, d_c=float(d_c), delta_e=float(delta_e),
                                slope_lower=float(s_mid - 0.5 * slope_diff),
                                slope_upper=float(s_mid + 0.5 * slope_diff),
                                slope_diff=float(slope_diff)))
        # a pair whose gap shrinks into the scan edge saw its crossing escape
        # the window: report it as unresolved rather than silently dropping it
        for j, other in ((0, 1), (len(d) - 1, len(d) - 2)):
            if g2[j] < g2[other] and gap[j] < 0.5 * np.max(gap):
                out.append(Crossing(n=n, m=m, d_c=float(d[j]),
                                    delta_e=float(gap[j]), slope_lower=0.0,
                                    slope_upper=0.0, slope_diff=0.0,
                                    unresolved=True))
    return out


def refined_d_grid(d_grid, crossings, factor: int = 10,
                   halfwidth_points: int = 3) -> np.ndarray:
    """Union of the original grid and factor-times-finer windows around each
    resolved crossing."""
    d_grid = np.asarray(d_grid, dtype=float)
    if len(d_grid) < 2:
        return d_grid
    dd = np.min(np.diff(d_grid))
    extra = []
    for c in crossings:
        if c.unresolved:
            continue
        lo = c.d_c - halfwidth_points * dd
        hi = c.d_c + halfwidth_points * dd
        extra.append(np.arange(lo, hi + dd / factor, dd / factor))
    if not extra:
        return d_grid
    allpts = np.concatenate([d_grid] + extra)
    allpts = allpts[(allpts >= d_grid[0]) & (allpts <= d_grid[-1])]
    return np.unique(np.round(allpts, 12))


# ----------------------------------------------------------------------------
# export
# ----------------------------------------------------------------------------

def write_spectrum_csv(spectrum: AdiabaticSpectrum, path) -> None:
    """Plot-ready table: one row per separation, sorted energy columns."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d"] + [f"e{n}" for n in range(spectrum.n_states)])
        for j, d in enumerate(spectrum.d_grid):
            writer.writerow([repr(float(d))] +
                            [repr(float(v)) for v in spectrum.energies[j]])


def write_spectrum_json(spectrum: AdiabaticSpectrum, path,
                        include_vectors: bool = True) -> None:
    doc = {
        "kind": spectrum.kind,
        "beta": spectrum.beta,
        "d_grid": spectrum.d_grid.tolist(),
        "energies": spectrum.energies.tolist(),
        "tracking": spectrum.tracking.tolist(),
        "track_break": spectrum.track_break.tolist(),
        "annotations": {k: np.asarray(v).tolist()
                        for k, v in spectrum.annotations.items()},
    }
    if include_vectors:
        doc["vectors"] = spectrum.vectors.tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
