"""Schroedinger solvers for the -1/x^4 potential with quantum-defect boundary
conditions.

All quantities are dimensionless: lengths in units of R*, energies in units of
E* = hbar^2/(2 mu R*^2).  In these units the radial / 1D equation reads

    -psi'' + [ l(l+1)/x^2 - 1/x^4 + beta (x - delta)^2 ] psi = eps psi,

and the short-range physics enters only through the boundary form
psi ~ x sin(1/x + phi) as x -> 0 (similarly for the 1D even/odd phases).

Numerics
--------
The -1/x^4 core makes uniform meshes hopeless: the local wavelength is
2 pi x^2.  We therefore propagate with Numerov on a composite grid,

  * inner segment: uniform in t = -1/x.  Substituting psi = x w(t) turns the
    equation into w'' = Qt(t) w with no first-derivative term and Qt -> -1 as
    x -> 0, so the quantum-defect oscillations become a unit-frequency
    sinusoid that a uniform t mesh trivially resolves;
  * outer segment: uniform in x, with the step chosen equal to the image of
    the last t step so the junction triple is exactly equidistant.

Bound states are found by two-sided shooting (outward from the analytic
quantum-defect seed, inward from a decaying WKB seed), node-count bisection
to bracket each level and a bracketed secant polish on the log-derivative
mismatch at the outermost classical turning point.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .scales import reduce_phase

__all__ = [
    "SolverError", "GridResolutionError", "TruncationError", "ConvergenceError",
    "QdtPhases", "RadialGrid", "ScatteringQuery", "BasisState", "EigenBasis",
    "PhaseShiftResult",
    "qdt_seed", "qdt_seed_logderiv", "default_grid", "integrate_outward_1d",
    "integrate_radial", "bound_states_free", "build_basis_1d",
    "build_basis_radial", "phase_shifts", "fit_scattering_asymptote",
]

ENERGY_TOL = 1e-8          # absolute eigenvalue tolerance, units E*
OSC_POINTS = 20.0          # minimum nodes per local de Broglie wavelength
DEGENERACY_GAP = 1e-6      # levels closer than this are flagged degenerate


class SolverError(Exception):
    pass


class GridResolutionError(SolverError):
    """The grid does not resolve the local oscillation of the solution."""


class TruncationError(SolverError):
    """More levels requested than the discretization can support."""


class ConvergenceError(SolverError):
    """An iterative fit or matching procedure failed to converge."""


# ----------------------------------------------------------------------------
# domain types
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class QdtPhases:
    """Short-range quantum-defect phases, reduced to (-pi/2, pi/2].

    ``phi`` is the 3D phase; ``phi_e``/``phi_o`` are the 1D even/odd ones.
    Only the entries a given computation needs have to be set.
    """

    phi: float | None = None
    phi_e: float | None = None
    phi_o: float | None = None

    def __post_init__(self):
        for name in ("phi", "phi_e", "phi_o"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, reduce_phase(float(value)))

    def for_symmetry(self, symmetry) -> float:
        if symmetry == "even":
            if self.phi_e is None:
                raise ValueError("phi_e not set")
            return self.phi_e
        if symmetry == "odd":
            if self.phi_o is None:
                raise ValueError("phi_o not set")
            return self.phi_o
        if self.phi is None:
            raise ValueError("phi not set")
        return self.phi


@dataclass(frozen=True)
class ScatteringQuery:
    """Input for phase-shift extraction: wavenumber k (1/R*), partial wave l,
    and the short-range phase."""

    k: float
    l: int
    phi: float

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        if self.l < 0:
            raise ValueError(f"l must be >= 0, got {self.l}")


@dataclass(frozen=True)
class RadialGrid:
    """Composite radial mesh: t-graded core plus uniform tail.

    ``x`` holds all node positions (strictly increasing).  The first
    ``n_core`` nodes are uniform in t = -1/x with step ``dt``; the remaining
    nodes are uniform in x with step ``h`` equal to the image of the last t
    step, so Numerov can hand over across the junction without interpolation.
    ``n_core = 0`` describes a plain uniform grid (used with the interaction
    masked, where no boundary layer exists).
    """

    x: np.ndarray
    n_core: int
    dt: float
    h: float
    mesh_law: str = "t-graded core + uniform tail"

    @property
    def x_min(self) -> float:
        return float(self.x[0])

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    @property
    def x_join(self) -> float:
        return float(self.x[self.n_core - 1]) if self.n_core else float(self.x[0])

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights on the stored nodes."""
        x = self.x
        w = np.empty_like(x)
        w[1:-1] = 0.5 * (x[2:] - x[:-2])
        w[0] = 0.5 * (x[1] - x[0])
        w[-1] = 0.5 * (x[-1] - x[-2])
        return w

    def check_resolution(self, k_of_x: np.ndarray) -> None:
        """Raise if any node spacing exceeds lambda/OSC_POINTS for local k."""
        dx = np.diff(self.x)
        kmid = 0.5 * (k_of_x[1:] + k_of_x[:-1])
        bad = dx * kmid > 2.0 * math.pi / OSC_POINTS
        if np.any(bad):
            i = int(np.argmax(bad))
            raise GridResolutionError(
                f"grid too coarse near x = {self.x[i]:.4g}: spacing {dx[i]:.3g} "
                f"exceeds lambda/{OSC_POINTS:.0f} = {2 * math.pi / kmid[i] / OSC_POINTS:.3g}")


def default_grid(x_min: float = 0.02, x_max: float = 6.0, dt: float = 0.03,
                 x_join: float = 0.4) -> RadialGrid:
    """Composite grid resolving the quantum-defect oscillations.

    dt fixes both the core resolution (2 pi / dt nodes per core oscillation)
    and, through the junction-matching condition, the uniform tail step
    h = x_join^2 dt / (1 + x_join dt).
    """
    if not 0 < x_min < x_join < x_max:
        raise ValueError("need 0 < x_min < x_join < x_max")
    if dt >= math.pi / 10.0:
        raise GridResolutionError(f"dt = {dt} leaves fewer than {OSC_POINTS:.0f} "
                                  "nodes per core oscillation")
    t0, t1 = -1.0 / x_min, -1.0 / x_join
    n_t = max(int(math.ceil((t1 - t0) / dt)), 8)
    dt = (t1 - t0) / n_t
    t = t0 + dt * np.arange(n_t + 1)
    x_core = -1.0 / t
    x_core[-1] = x_join
    h = x_join - x_core[-2]
    n_x = max(int(math.ceil((x_max - x_join) / h)), 4)
    x_tail = x_join + h * np.arange(1, n_x + 1)
    return RadialGrid(x=np.concatenate([x_core, x_tail]), n_core=n_t + 1,
                      dt=dt, h=h)


def grid_for_basis(beta: float, n_levels: int, x_min: float = 0.02,
                   dt: float = 0.03, x_join: float = 0.4) -> RadialGrid:
    """Grid sized to hold the requested number of trap levels at stiffness
    beta: outer edge = classical turning point of the top level plus a decay
    margin that keeps the missing tail action above ~13."""
    eps_top = (2.0 * n_levels + 7.0) * 2.0 * math.sqrt(beta) * 1.1
    x_turn = math.sqrt(eps_top / beta)
    margin = 5.2 / beta**0.25
    return default_grid(x_min=x_min, x_max=x_turn + margin, dt=dt, x_join=x_join)


@dataclass
class BasisState:
    """One eigenstate on a shared radial grid."""

    energy: float
    symmetry: object            # 'even' | 'odd' for 1D, int l for radial
    values: np.ndarray
    classification: str         # 'molecular' | 'vibrational'
    nodes: int
    bc_residual: float
    degenerate: bool = False


@dataclass
class EigenBasis:
    """Ordered set of d = 0 eigenfunctions with energies and symmetry labels.

    1D parity states are stored on the half line with full-line normalization
    2 * integral f^2 dx = 1 (``norm_factor = 2``); radial states carry
    integral u^2 dx = 1 (``norm_factor = 1``).
    """

    grid: RadialGrid
    states: list
    phases: QdtPhases
    beta: float
    norm_factor: float = 1.0
    x_cut: float | None = None   # molecular/vibrational classifier radius

    def sector(self, symmetry) -> list:
        return [s for s in self.states if s.symmetry == symmetry]

    def energies(self, symmetry=None) -> np.ndarray:
        states = self.states if symmetry is None else self.sector(symmetry)
        return np.array([s.energy for s in states])

    def values_matrix(self, symmetry) -> np.ndarray:
        """(n_nodes, n_states) array for one symmetry sector."""
        states = self.sector(symmetry)
        return np.column_stack([s.values for s in states]) if states else \
            np.zeros((len(self.grid.x), 0))

    @property
    def size(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class PhaseShiftResult:
    k: float
    l: int
    delta: float            # phase shift, radians
    a: float                # a(k) for l = 0, a_p(k) for l = 1 (units R*)
    fit_residual: float
    delta_alt: float        # from the alternative matching window


# ----------------------------------------------------------------------------
# boundary seeds
# ----------------------------------------------------------------------------

def qdt_seed(x, phi: float):
    """Zero-energy quantum-defect solution psi = x sin(1/x + phi).

    Returns (psi, psi', psi''); the identity psi'' = -psi / x^4 holds
    analytically.
    """
    x = np.asarray(x, dtype=float)
    arg = 1.0 / x + phi
    s, c = np.sin(arg), np.cos(arg)
    psi = x * s
    dpsi = s - c / x
    d2psi = -psi / x**4
    return psi, dpsi, d2psi


def qdt_seed_logderiv(x: float, phi: float) -> float:
    """Logarithmic derivative of the radial factor R(x) = sin(1/x + phi):
    R'/R = -cot(1/x + phi) / x^2."""
    return -1.0 / (math.tan(1.0 / x + phi) * x * x)


def _gauss_nodes(n=24):
    y, w = leggauss(n)
    return y, w


_GL_Y, _GL_W = _gauss_nodes()


def _wkb_phase_correction(x: np.ndarray, eps: float, v_ext) -> np.ndarray:
    """Phase accumulated beyond the zero-energy form:

        integral_0^x (k(y) - 1/y^2) dy  +  second-order WKB phase,

    with k^2 = 1/y^4 + eps - v_ext(y).  Both integrands are regular at the
    origin (first ~ c y^2/2, second ~ -(5/2) c y^4 with c = eps - v_ext), so
    fixed-order Gauss-Legendre suffices.  The second-order term vanishes
    identically for the pure -1/x^4 potential at eps = 0, for which the WKB
    form is exact.
    """
    out = np.empty_like(x)
    for i, xi in enumerate(np.atleast_1d(x)):
        y = 0.5 * xi * (_GL_Y + 1.0)
        c = eps - v_ext(y)
        u = c * y**4
        rad = 1.0 + u
        if np.any(rad <= 0):
            raise SolverError("WKB seed invalid: turning point inside the "
                              "seeding region; raise x_min or the energy floor")
        g = c * y**2 / (np.sqrt(rad) + 1.0)
        g2 = -2.5 * u * rad**-2.5
        out[i] = 0.5 * xi * (np.dot(_GL_W, g) + np.dot(_GL_W, g2))
    return out


def _seed_values(x: np.ndarray, phi: float, eps, v_ext, corrected: bool = True):
    """Boundary values of psi at the seeding nodes.

    corrected=True evaluates the WKB form k^{-1/2} sin(W + phi) with
    W = 1/x - integral (k - 1/y^2); it reduces exactly to x sin(1/x + phi)
    for the pure -1/x^4 potential at eps = 0 and keeps the quantum-defect
    condition x_min-independent at finite energy.
    """
    eps_vec = np.atleast_1d(np.asarray(eps, dtype=float))
    vals = np.empty((len(x), len(eps_vec)))
    if not corrected:
        psi = qdt_seed(x, phi)[0]
        vals[:] = psi[:, None]
        return vals
    for j, e in enumerate(eps_vec):
        corr = _wkb_phase_correction(x, e, v_ext)
        c = e - v_ext(x)
        k2 = 1.0 / x**4 + c
        if np.any(k2 <= 0):
            raise SolverError("WKB seed invalid at x_min (classically forbidden)")
        w_arg = 1.0 / x - corr + phi
        vals[:, j] = k2**-0.25 * np.sin(w_arg)
    return vals


# ----------------------------------------------------------------------------
# Numerov propagation on the composite grid
# ----------------------------------------------------------------------------

_RENORM_LIMIT = 1e200


def _numerov_run(q: np.ndarray, h: float, y0: np.ndarray, y1: np.ndarray,
                 out: np.ndarray, start: int, direction: int,
                 nodes: np.ndarray | None, count_seed_pair: bool = True):
    """Propagate y'' = q y over rows of ``out`` starting at ``start``.

    q, out: (n, m); direction +1 propagates toward larger row index, -1 toward
    smaller.  Rows start and start+direction are set to y0, y1.  Columns are
    renormalized (including the rows already recorded) when they overflow.
    """
    n = out.shape[0]
    f = 1.0 - (h * h / 12.0) * q
    out[start] = y0
    out[start + direction] = y1
    if nodes is not None and count_seed_pair:
        nodes += (np.asarray(y0) * np.asarray(y1) < 0.0)
    targets = range(start + 2 * direction, n if direction > 0 else -1, direction)
    for nxt in targets:
        i = nxt - direction
        prv = nxt - 2 * direction
        y2 = ((12.0 - 10.0 * f[i]) * out[i] - f[prv] * out[prv]) / f[nxt]
        out[nxt] = y2
        if nodes is not None:
            nodes += (np.sign(out[i]) * np.sign(y2)) < 0.0
        big = np.abs(y2) > _RENORM_LIMIT
        if np.any(big):
            cols = np.nonzero(big)[0]
            seg = slice(start, nxt + 1) if direction > 0 else slice(nxt, start + 1)
            out[seg, cols] *= 1.0 / np.abs(y2[cols])
    return out


class _QdtProblem:
    """Shooting problem on a composite grid with quantum-defect inner boundary.

    v_ext(x) is the regular part of the potential (centrifugal + trap); the
    -1/x^4 core is implicit.  Everything is vectorized over a batch of trial
    energies.
    """

    def __init__(self, grid: RadialGrid, phi: float, v_ext,
                 corrected_seed: bool = True):
        self.grid = grid
        self.phi = phi
        self.v_ext = v_ext
        self.corrected_seed = corrected_seed
        x = grid.x
        self.vx = v_ext(x)
        nc = grid.n_core
        self._x_core = x[:nc]
        # tail propagation nodes include the last two core nodes (uniform h)
        self._i_tail0 = max(nc - 2, 0)

    # -- potential pieces ----------------------------------------------------
    def _q_core(self, eps_vec: np.ndarray) -> np.ndarray:
        """w'' = Qt w on the t segment: Qt = x^4 (v_ext - eps) - 1."""
        x = self._x_core[:, None]
        return x**4 * (self.vx[:self.grid.n_core, None] - eps_vec[None, :]) - 1.0

    def _q_tail(self, eps_vec: np.ndarray) -> np.ndarray:
        x = self.grid.x[self._i_tail0:]
        v = self.vx[self._i_tail0:]
        return (v - 1.0 / x**4)[:, None] - eps_vec[None, :]

    def local_k(self, eps: float) -> np.ndarray:
        x = self.grid.x
        k2 = eps - self.vx + 1.0 / x**4
        return np.sqrt(np.maximum(k2, 0.0))

    def turning_index(self, eps: float) -> int:
        """Outermost classical turning point, clamped away from the ends and
        from the segment junction."""
        k2 = eps - self.vx + 1.0 / self.grid.x**4
        allowed = np.nonzero(k2 > 0.0)[0]
        if len(allowed) == 0:
            raise SolverError(f"energy {eps} is classically forbidden everywhere")
        idx = int(allowed[-1])
        n = len(self.grid.x)
        idx = min(max(idx, 4), n - 5)
        nc = self.grid.n_core
        if nc and abs(idx - (nc - 1)) < 4:
            idx = nc - 5 if idx <= nc - 1 else nc + 3
            idx = min(max(idx, 4), n - 5)
        return idx

    # -- propagation ---------------------------------------------------------
    def outward(self, eps_vec: np.ndarray):
        """Full outward solution (psi on every node) and node counts."""
        eps_vec = np.atleast_1d(np.asarray(eps_vec, dtype=float))
        m = len(eps_vec)
        n = len(self.grid.x)
        nc = self.grid.n_core
        psi = np.empty((n, m))
        nodes = np.zeros(m, dtype=np.int64)
        x01 = self.grid.x[:2]
        seed = _seed_values(x01, self.phi, eps_vec, self.v_ext,
                            corrected=self.corrected_seed)
        if nc:
            w = np.empty((nc, m))
            qc = self._q_core(eps_vec)
            w0 = seed[0] / x01[0]
            w1 = seed[1] / x01[1]
            _numerov_run(qc, self.grid.dt, w0, w1, w, 0, +1, nodes)
            psi[:nc] = w * self._x_core[:, None]
            if n > nc:
                qt = self._q_tail(eps_vec)
                tail = np.empty((n - self._i_tail0, m))
                _numerov_run(qt, self.grid.h, psi[nc - 2], psi[nc - 1], tail,
                             0, +1, nodes, count_seed_pair=False)
                psi[self._i_tail0:] = tail
        else:
            qt = self._q_tail(eps_vec)
            _numerov_run(qt, self.grid.h, seed[0], seed[1], psi, 0, +1, nodes)
        return psi, nodes

    def inward(self, eps_vec: np.ndarray):
        """Decaying solution propagated from x_max toward the origin."""
        eps_vec = np.atleast_1d(np.asarray(eps_vec, dtype=float))
        m = len(eps_vec)
        n = len(self.grid.x)
        nc = self.grid.n_core
        x = self.grid.x
        qN = (self.vx[-1] - 1.0 / x[-1]**4) - eps_vec
        qN1 = (self.vx[-2] - 1.0 / x[-2]**4) - eps_vec
        kap = 0.5 * (np.sqrt(np.maximum(qN, 0.0)) + np.sqrt(np.maximum(qN1, 0.0)))
        y_end = np.full(m, 1e-120)
        y_next = y_end * np.exp(np.minimum(kap * self.grid.h, 500.0))
        psi = np.empty((n, m))
        i0 = self._i_tail0
        qt = self._q_tail(eps_vec)
        tail = np.empty((n - i0, m))
        _numerov_run(qt, self.grid.h, y_end, y_next, tail,
                     tail.shape[0] - 1, -1, None)
        psi[i0:] = tail
        if nc:
            qc = self._q_core(eps_vec)
            w = np.empty((nc, m))
            w_b = psi[nc - 1] / x[nc - 1]
            w_a = psi[nc - 2] / x[nc - 2]
            _numerov_run(qc, self.grid.dt, w_b, w_a, w, nc - 1, -1, None)
            psi[:nc - 2] = (w * self._x_core[:, None])[:nc - 2]
        return psi

    # -- matching ------------------------------------------------------------
    def _local_logderiv(self, y: np.ndarray, idx: int) -> np.ndarray:
        """d(ln y)/d(local coord) at row idx by the 5-point stencil.  On the
        core segment the local coordinate is t; differences of the two
        branches agree with psi'/psi differences up to the positive factor
        dt/dx, which cancels in the mismatch sign."""
        nc = self.grid.n_core
        h = self.grid.dt if idx < nc - 1 else self.grid.h
        if idx < nc - 1:
            f = y[max(idx - 2, 0):idx + 3] / self._x_core[max(idx - 2, 0):idx + 3, None]
        else:
            f = y[idx - 2:idx + 3]
        d = (-f[4] + 8.0 * f[3] - 8.0 * f[1] + f[0]) / (12.0 * h)
        return d / f[2]

    def mismatch(self, eps_vec: np.ndarray):
        """Log-derivative difference (out - in) at the matching node, plus
        outward node counts.  Zero crossings locate eigenvalues."""
        eps_vec = np.atleast_1d(np.asarray(eps_vec, dtype=float))
        out, nodes = self.outward(eps_vec)
        inw = self.inward(eps_vec)
        dm = np.empty(len(eps_vec))
        for j, e in enumerate(eps_vec):
            idx = self.turning_index(e)
            yo = out[:, j:j + 1]
            yi = inw[:, j:j + 1]
            dm[j] = (self._local_logderiv(yo, idx) - self._local_logderiv(yi, idx))[0]
        return dm, nodes

    def eigenfunctions(self, eps_vec) -> list[tuple[np.ndarray, int, float]]:
        """Glued two-sided solutions for a batch of eigenvalues; returns a
        list of (psi, node count, matching residual)."""
        eps_vec = np.atleast_1d(np.asarray(eps_vec, dtype=float))
        out, _ = self.outward(eps_vec)
        inw = self.inward(eps_vec)
        w = self.grid.weights
        results = []
        for j, eps in enumerate(eps_vec):
            idx = self.turning_index(eps)
            scale = out[idx, j] / inw[idx, j]
            psi = np.concatenate([out[:idx, j], inw[idx:, j] * scale])
            ld_out = self._local_logderiv(out[:, j:j + 1], idx)[0]
            ld_in = self._local_logderiv(inw[:, j:j + 1], idx)[0]
            norm = math.sqrt(np.dot(w, psi * psi))
            psi = psi / norm
            # nodes of the physical solution; drop underflow-level noise
            live = psi[np.abs(psi) > 1e-12 * np.max(np.abs(psi))]
            nodes = int(np.count_nonzero(np.sign(live[1:]) * np.sign(live[:-1]) < 0))
            kloc = max(self.local_k(eps)[idx], 1e-3)
            resid = abs(ld_out - ld_in) / kloc
            results.append((psi, nodes, float(resid)))
        return results

    def eigenfunction(self, eps: float) -> tuple[np.ndarray, int, float]:
        return self.eigenfunctions([eps])[0]


class _RegularProblem(_QdtProblem):
    """Same machinery with the interaction masked: regular boundary at the
    origin (parity in 1D, u ~ x^{l+1} radially) on a plain uniform grid."""

    def __init__(self, grid: RadialGrid, v_ext, parity: str | None = None,
                 l: int | None = None):
        if grid.n_core != 0:
            raise ValueError("masked problems use a uniform grid (n_core = 0)")
        self.grid = grid
        self.phi = None
        self.v_ext = v_ext
        self.corrected_seed = False
        self.parity = parity
        self.l = l
        x = grid.x
        self.vx = v_ext(x)
        self._i_tail0 = 0
        self._x_core = x[:0]

    def _q_tail(self, eps_vec):
        return self.vx[:, None] - eps_vec[None, :]

    def local_k(self, eps):
        return np.sqrt(np.maximum(eps - self.vx, 0.0))

    def turning_index(self, eps):
        k2 = eps - self.vx
        allowed = np.nonzero(k2 > 0.0)[0]
        if len(allowed) == 0:
            raise SolverError(f"energy {eps} is classically forbidden everywhere")
        n = len(self.grid.x)
        return min(max(int(allowed[-1]), 4), n - 5)

    def outward(self, eps_vec):
        eps_vec = np.atleast_1d(np.asarray(eps_vec, dtype=float))
        m = len(eps_vec)
        n = len(self.grid.x)
        psi = np.empty((n, m))
        nodes = np.zeros(m, dtype=np.int64)
        h = self.grid.h
        q = self._q_tail(eps_vec)
        if self.parity == "even":
            # ghost symmetry y(-h) = y(h) across the first node at x = h/2?
            # Grid starts at x0 = 0 for even parity: psi(0) = 1, one-sided step.
            f = 1.0 - (h * h / 12.0) * q
            y0 = np.ones(m)
            y1 = (12.0 - 10.0 * f[0]) * y0 / (2.0 * f[1])
            _numerov_run(q, h, y0, y1, psi, 0, +1, nodes)
        elif self.parity == "odd":
            y0 = np.zeros(m)
            y1 = np.full(m, h)
            _numerov_run(q, h, y0, y1, psi, 0, +1, nodes)
        else:
            x0, x1 = self.grid.x[0], self.grid.x[1]
            y0 = np.full(m, x0 ** (self.l + 1))
            y1 = np.full(m, x1 ** (self.l + 1))
            _numerov_run(q, h, y0, y1, psi, 0, +1, nodes)
        return psi, nodes

    def inward(self, eps_vec):
        eps_vec = np.atleast_1d(np.asarray(eps_vec, dtype=float))
        m = len(eps_vec)
        n = len(self.grid.x)
        q = self._q_tail(eps_vec)
        kap = 0.5 * (np.sqrt(np.maximum(q[-1], 0.0)) + np.sqrt(np.maximum(q[-2], 0.0)))
        y_end = np.full(m, 1e-120)
        y_next = y_end * np.exp(np.minimum(kap * self.grid.h, 500.0))
        psi = np.empty((n, m))
        _numerov_run(q, self.grid.h, y_end, y_next, psi, n - 1, -1, None)
        return psi

    def _local_logderiv(self, y, idx):
        f = y[idx - 2:idx + 3]
        d = (-f[4] + 8.0 * f[3] - 8.0 * f[1] + f[0]) / (12.0 * self.grid.h)
        return d / f[2]


def uniform_grid(x_max: float, h: float, x0: float = 0.0) -> RadialGrid:
    n = int(math.ceil((x_max - x0) / h))
    return RadialGrid(x=x0 + h * np.arange(n + 1), n_core=0, dt=0.0, h=h,
                      mesh_law="uniform")


# ----------------------------------------------------------------------------
# eigenvalue search
# ----------------------------------------------------------------------------

def _eigenvalues_in_window(problem, eps_lo: float, eps_hi: float,
                           max_count: int | None = None,
                           tol: float = ENERGY_TOL) -> np.ndarray:
    """All eigenvalues in (eps_lo, eps_hi), found by batched node-count
    bisection followed by a bracketed secant polish of the matching
    mismatch."""
    _, n_lo = problem.outward(np.array([eps_lo]))
    _, n_hi = problem.outward(np.array([eps_hi]))
    count = int(n_hi[0] - n_lo[0])
    if count <= 0:
        return np.array([])
    if max_count is not None:
        count = min(count, max_count)
    targets = n_lo[0] + np.arange(1, count + 1)   # nodes(eps) >= target above level
    lo = np.full(count, eps_lo)
    hi = np.full(count, eps_hi)
    # batched bisection on node counts (outward propagation only)
    span = eps_hi - eps_lo
    n_iter = int(math.ceil(math.log2(max(span / max(tol, 1e-14), 2.0)))) + 2
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        _, nd = problem.outward(mid)
        above = nd >= targets
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.all(hi - lo < tol):
            break
    # secant polish on the mismatch within each bracket
    eps = 0.5 * (lo + hi)
    fa, _ = problem.mismatch(lo)
    fb, _ = problem.mismatch(hi)
    ok = fa * fb < 0
    a, b = lo.copy(), hi.copy()
    for _ in range(8):
        if not np.any(ok) or np.all(b - a < 0.05 * tol):
            break
        denom = np.where(fb - fa == 0.0, 1.0, fb - fa)
        c = b - fb * (b - a) / denom
        c = np.clip(c, a + 0.1 * (b - a), b - 0.1 * (b - a))
        fc, _ = problem.mismatch(c)
        left = fa * fc < 0
        b = np.where(ok & left, c, b)
        fb = np.where(ok & left, fc, fb)
        a = np.where(ok & ~left, c, a)
        fa = np.where(ok & ~left, fc, fa)
    eps = np.where(ok, 0.5 * (a + b), eps)
    return np.sort(eps)


# ----------------------------------------------------------------------------
# public operations
# ----------------------------------------------------------------------------

def integrate_outward_1d(eps: float, symmetry: str, phi_sym: float,
                         grid: RadialGrid, beta: float = 0.0,
                         corrected_seed: bool = True) -> np.ndarray:
    """Outward Numerov solution of the 1D relative problem on the half line.

    The boundary seed is psi ~ |x| sin(1/|x| + phi_sym); ``symmetry`` selects
    the bookkeeping label only (even and odd share the half-line equation).
    Returns psi on ``grid.x`` normalized to unit maximum.
    """
    if symmetry not in ("even", "odd"):
        raise ValueError(f"symmetry must be 'even' or 'odd', got {symmetry!r}")
    v_ext = _trap_1d(beta)
    problem = _QdtProblem(grid, phi_sym, v_ext, corrected_seed=corrected_seed)
    grid.check_resolution(problem.local_k(max(eps, 0.0)))
    psi, _ = problem.outward(np.array([eps]))
    psi = psi[:, 0]
    return psi / np.max(np.abs(psi))


def integrate_radial(eps: float, l: int, phi: float, grid: RadialGrid,
                     beta: float = 0.0, corrected_seed: bool = True) -> np.ndarray:
    """Outward radial solution u(x) = x R(x) with the quantum-defect seed and
    centrifugal term l(l+1)/x^2 included away from the seed region."""
    v_ext = _trap_radial(beta, l)
    problem = _QdtProblem(grid, phi, v_ext, corrected_seed=corrected_seed)
    grid.check_resolution(problem.local_k(max(eps, 0.0)))
    u, _ = problem.outward(np.array([eps]))
    u = u[:, 0]
    return u / np.max(np.abs(u))


def _trap_1d(beta: float, delta: float = 0.0):
    def v_ext(x):
        x = np.asarray(x, dtype=float)
        return beta * (x - delta) ** 2
    return v_ext


def _trap_radial(beta: float, l: int):
    ll = l * (l + 1)
    def v_ext(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            cent = np.where(x > 0, ll / x**2, np.inf) if ll else np.zeros_like(x)
        return cent + beta * x**2
    return v_ext


def x_min_for_l(l: int, x_min: float = 0.02) -> float:
    """Shrink x_min with l so the -1/x^4 core still dominates the
    centrifugal term by a factor ~25 at the seeding point."""
    if l <= 0:
        return x_min
    return min(x_min, 0.2 / math.sqrt(l * (l + 1)))


def bound_states_free(phi: float, l: int = 0, count: int = 1,
                      grid: RadialGrid | None = None,
                      corrected_seed: bool = True) -> np.ndarray:
    """Binding energies of the pure -1/x^4 potential (no trap), shallowest
    first (sorted ascending in |eps_b|).

    The spectrum deepens quartically (|eps_n|^(1/4) grows linearly), so the
    search proceeds through windows extended by x8 in depth; with no explicit
    grid each window gets its own mesh whose outer edge tracks the decay
    length of the shallowest state in the window.  If the requested depth
    would push the classical turning point into the seeding region, the list
    comes back short (with a warning) rather than fabricated.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    x_min = x_min_for_l(l) if grid is None else grid.x_min
    depth_limit = -0.3 / x_min**4   # keeps the turning point >= 1.35 x_min
    v_ext = _trap_radial(0.0, l)
    # window edges, shallow to deep; windows are narrow near threshold so the
    # large grids that near-threshold states require are only built on demand
    edges = [-1e-9]
    v = 0.05
    while v < -depth_limit:
        edges.append(-v)
        v *= 4.0
    edges.append(depth_limit)
    found: list[float] = []
    for hi, lo in zip(edges, edges[1:]):
        if grid is None:
            # outer edge: turning point of the shallowest possible state in
            # the window plus ~14 decay lengths
            shallow = max(-hi, 0.05)
            x_need = shallow**-0.25 + 14.0 / math.sqrt(shallow)
            g = default_grid(x_min=x_min, x_max=min(max(x_need, 3.0), 450.0),
                             dt=0.03)
        else:
            g = grid
        problem = _QdtProblem(g, phi, v_ext, corrected_seed=corrected_seed)
        evs = _eigenvalues_in_window(problem, lo, hi)
        found.extend(sorted(evs.tolist(), reverse=True))
        if len(found) >= count:
            break
    if len(found) < count:
        warnings.warn(f"only {len(found)} of {count} bound states representable "
                      f"on this grid (depth limit {depth_limit:.3g} E*)")
    return np.array(found[:count])


def _classify(psi: np.ndarray, energy: float, grid: RadialGrid,
              x_cut: float, norm_factor: float) -> str:
    if energy < 0.0:
        return "molecular"
    w = grid.weights
    inside = grid.x < x_cut
    frac = norm_factor * float(np.dot(w[inside], psi[inside] ** 2))
    return "molecular" if frac > 0.5 else "vibrational"


def _lowdin(values: np.ndarray, w: np.ndarray, norm_factor: float) -> np.ndarray:
    """Symmetric orthonormalization under the trapezoid inner product."""
    if values.shape[1] == 0:
        return values
    g = norm_factor * (values.T * w) @ values
    evals, evecs = np.linalg.eigh(g)
    if np.any(evals <= 0):
        raise SolverError("Gram matrix not positive definite; grid too coarse")
    s_inv_half = evecs @ np.diag(evals**-0.5) @ evecs.T
    return values @ s_inv_half


def _flag_degenerate(states: list) -> None:
    for a, b in zip(states, states[1:]):
        if abs(b.energy - a.energy) < DEGENERACY_GAP:
            a.degenerate = b.degenerate = True


def _solve_sector(problem, n_levels: int, eps_floor: float, eps_ceiling: float,
                  symmetry, grid: RadialGrid, x_cut: float,
                  norm_factor: float, eps_max: float | None = None) -> list:
    """Find levels in (eps_floor, eps_ceiling), build normalized states."""
    eigs = _eigenvalues_in_window(problem, eps_floor, eps_ceiling)
    if eps_max is not None:
        eigs = eigs[eigs <= eps_max]
    else:
        if len(eigs) < n_levels:
            raise TruncationError(
                f"sector {symmetry}: requested {n_levels} levels but only "
                f"{len(eigs)} resolvable below eps = {eps_ceiling:.4g}")
        eigs = eigs[:n_levels]
    states = []
    if len(eigs):
        for e, (psi, nodes, resid) in zip(eigs, problem.eigenfunctions(eigs)):
            psi = psi / math.sqrt(norm_factor)
            states.append(BasisState(energy=float(e), symmetry=symmetry,
                                     values=psi, classification="",
                                     nodes=nodes, bc_residual=resid))
    # orthonormalize under the shared quadrature and reclassify
    if states:
        vals = np.column_stack([s.values for s in states])
        vals = _lowdin(vals, grid.weights, norm_factor)
        for i, s in enumerate(states):
            s.values = vals[:, i]
            s.classification = _classify(s.values, s.energy, grid, x_cut,
                                         norm_factor)
    _flag_degenerate(states)
    return states


def build_basis_1d(phases: QdtPhases, beta: float, n_even: int = 50,
                   n_odd: int = 50, grid: RadialGrid | None = None,
                   eps_floor: float | None = None,
                   include_interaction: bool = True,
                   corrected_seed: bool = True) -> EigenBasis:
    """d = 0 eigenbasis of the 1D relative Hamiltonian, split by parity.

    States are stored on the half line with full-line normalization.  The
    molecular part of the spectrum extends to -infinity; ``eps_floor``
    (default -40 sqrt(beta), i.e. 20 harmonic quanta below threshold) sets
    how deep the basis reaches — a knob, since deeper states are irrelevant
    to trap-scale dynamics.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    hw = 2.0 * math.sqrt(beta)
    if eps_floor is None:
        eps_floor = -20.0 * hw
    x_cut = beta ** (-1.0 / 6.0)   # R_rel in units of R*
    if include_interaction:
        if grid is None:
            grid = grid_for_basis(beta, max(n_even, n_odd))
        states = []
        for symmetry, phi, n_want in (("even", phases.for_symmetry("even"), n_even),
                                      ("odd", phases.for_symmetry("odd"), n_odd)):
            problem = _QdtProblem(grid, phi, _trap_1d(beta),
                                  corrected_seed=corrected_seed)
            ceiling = (2.0 * n_want + 7.0) * hw
            states += _solve_sector(problem, n_want, eps_floor, ceiling,
                                    symmetry, grid, x_cut, 2.0)
    else:
        if grid is None:
            n_top = max(n_even, n_odd)
            eps_top = (2 * n_top + 2) * hw
            x_max = math.sqrt(eps_top / beta) + 5.2 / beta**0.25
            grid = uniform_grid(x_max, h=min(0.005, x_max / 2000.0))
        states = []
        for symmetry, n_want in (("even", n_even), ("odd", n_odd)):
            problem = _RegularProblem(grid, _trap_1d(beta), parity=symmetry)
            ceiling = (2.0 * n_want + 3.0) * hw
            states += _solve_sector(problem, n_want, 0.5 * hw * 0.1, ceiling,
                                    symmetry, grid, x_cut, 2.0)
    return EigenBasis(grid=grid, states=states, phases=phases, beta=beta,
                      norm_factor=2.0, x_cut=x_cut)


def build_basis_radial(phi: float, beta: float, l_max: int, eps_max: float,
                       grid: RadialGrid | None = None,
                       eps_floor: float | None = None,
                       include_interaction: bool = True,
                       corrected_seed: bool = True) -> EigenBasis:
    """d = 0 radial eigenbasis for l = 0..l_max, keeping eps <= eps_max."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    hw = 2.0 * math.sqrt(beta)
    if eps_floor is None:
        eps_floor = -20.0 * hw
    x_cut = beta ** (-1.0 / 6.0)
    phases = QdtPhases(phi=phi)
    states = []
    if include_interaction:
        if grid is None:
            n_eff = int(eps_max / hw / 2.0) + 2
            grid = grid_for_basis(beta, n_eff, x_min=x_min_for_l(l_max))
        for l in range(l_max + 1):
            problem = _QdtProblem(grid, phi, _trap_radial(beta, l),
                                  corrected_seed=corrected_seed)
            states += _solve_sector(problem, 0, eps_floor, eps_max, l, grid,
                                    x_cut, 1.0, eps_max=eps_max)
    else:
        if grid is None:
            x_max = math.sqrt(eps_max * 1.5 / beta) + 5.2 / beta**0.25
            grid = uniform_grid(x_max, h=min(0.005, x_max / 2000.0), x0=0.0)
        g2 = RadialGrid(x=grid.x[1:], n_core=0, dt=0.0, h=grid.h,
                        mesh_law="uniform")
        for l in range(l_max + 1):
            problem = _RegularProblem(g2, _trap_radial(beta, l), l=l)
            states += _solve_sector(problem, 0, 0.05 * hw, eps_max, l, g2,
                                    x_cut, 1.0, eps_max=eps_max)
        grid = g2
    return EigenBasis(grid=grid, states=states, phases=phases, beta=beta,
                      norm_factor=1.0, x_cut=x_cut)


# ----------------------------------------------------------------------------
# scattering
# ----------------------------------------------------------------------------

def fit_scattering_asymptote(x: np.ndarray, psi: np.ndarray,
                             window: tuple[float, float]) -> tuple[float, float, float]:
    """Fit psi ~ A (x - a) + B/x + C/x^2 over the window; returns
    (a, A, residual).

    The 1/x and 1/x^2 terms are the exact subleading tail of the zero-energy
    solution of psi'' = -psi/x^4 (psi ~ x - a - 1/(2x) + a/(6x^2) + ...);
    without them the fitted intercept is biased by ~1/(2 x_window).
    """
    lo, hi = window
    mask = (x >= lo) & (x <= hi)
    if np.count_nonzero(mask) < 8:
        raise ConvergenceError(f"fit window [{lo}, {hi}] contains too few nodes")
    xs, ys = x[mask], psi[mask]
    design = np.column_stack([xs, np.ones_like(xs), 1.0 / xs, 1.0 / xs**2])
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    slope, const = coef[0], coef[1]
    resid = np.linalg.norm(design @ coef - ys) / np.linalg.norm(ys)
    if abs(slope) < 1e-300:
        raise ConvergenceError("degenerate asymptote fit (zero slope)")
    return -const / slope, slope, resid


def _riccati(l: int, rho: np.ndarray):
    """Riccati-Bessel pair (S_l, C_l) with S ~ sin(rho - l pi/2),
    C ~ cos(rho - l pi/2) asymptotically."""
    if l == 0:
        return np.sin(rho), np.cos(rho)
    if l == 1:
        return np.sin(rho) / rho - np.cos(rho), np.cos(rho) / rho + np.sin(rho)
    from scipy.special import spherical_jn, spherical_yn
    return rho * spherical_jn(l, rho), -rho * spherical_yn(l, rho)


def phase_shifts(query: ScatteringQuery, grid: RadialGrid | None = None,
                 corrected_seed: bool = True) -> PhaseShiftResult:
    """Scattering phase shift delta_l(k) and the energy-dependent length.

    The solution is matched by least squares to free Riccati-Bessel waves on
    two windows at x >> max(1/k, 1); their disagreement is reported and must
    stay small for the result to be trusted.  Returns a(k) = -tan(delta_0)/k
    for s waves and a_p(k) = (-tan(delta_1))^(1/3)/k for p waves.
    """
    k, l, phi = query.k, query.l, query.phi
    if k <= 0:
        raise ValueError("phase_shifts requires k > 0")
    # matching radius: residual tail phase 1/(6 k x^3) below ~3e-6 rad
    x_fit = (1.0 / (6.0 * k * 3e-6)) ** (1.0 / 3.0)
    x_fit = max(x_fit, 12.0 / k, 20.0)
    x_max = 1.45 * x_fit
    if grid is None:
        grid = default_grid(x_min=x_min_for_l(l), x_max=x_max, dt=0.03)
    elif grid.x_max < x_fit * 1.2:
        raise ConvergenceError(f"grid.x_max = {grid.x_max:.3g} too small for "
                               f"matching radius {x_fit:.3g}")
    eps = k * k
    problem = _QdtProblem(grid, phi, _trap_radial(0.0, l),
                          corrected_seed=corrected_seed)
    grid.check_resolution(problem.local_k(eps))
    u, _ = problem.outward(np.array([eps]))
    u = u[:, 0]

    def fit(lo, hi):
        mask = (grid.x >= lo) & (grid.x <= hi)
        rho = k * grid.x[mask]
        s, c = _riccati(l, rho)
        design = np.column_stack([s, c])
        coef, *_ = np.linalg.lstsq(design, u[mask], rcond=None)
        resid = np.linalg.norm(design @ coef - u[mask]) / np.linalg.norm(u[mask])
        return math.atan2(coef[1], coef[0]), resid

    w_hi = grid.x_max * 0.98
    w_lo = x_fit
    delta, resid = fit(w_lo, w_hi)
    delta_alt, _ = fit(0.5 * (w_lo + w_hi), w_hi)
    if resid > 1e-3:
        raise ConvergenceError(f"free-wave fit residual {resid:.2e} too large; "
                               "increase the matching radius")
    if l == 0:
        a = -math.tan(delta) / k
    elif l == 1:
        t = -math.tan(delta)
        a = math.copysign(abs(t) ** (1.0 / 3.0), t) / k
    else:
        a = float("nan")
    return PhaseShiftResult(k=k, l=l, delta=delta, a=a, fit_residual=resid,
                            delta_alt=delta_alt)
