"""Independent reference solvers used only by the test suite.

These deliberately share nothing with the package numerics: eigenvalues come
from finite differences on a logarithmic mesh (s = ln x), assembled as a
generalized symmetric banded eigenproblem and Richardson-extrapolated in the
mesh step.  With psi = sqrt(x) w(ln x) the radial equation

    -psi'' + V(x) psi = eps psi

becomes

    -w'' + [x^2 V(x) + 1/4] w = eps x^2 w,

which a uniform s mesh resolves at both ends: near the origin the
quantum-defect oscillations have bounded frequency in s, and at large x the
mesh coarsens no faster than the oscillations stretch.

The quantum-defect condition enters as a Robin row built from the
zero-energy boundary form (log-derivative of x sin(1/x + phi)), i.e. the
same physical boundary condition as the package's zero-energy seed mode.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import eig_banded


def _robin_g(x0: float, phi: float) -> float:
    """d(ln w)/ds at the inner boundary for w = psi/sqrt(x),
    psi = x sin(1/x + phi):  g = 1/2 - cot(1/x + phi)/x."""
    return 0.5 - 1.0 / (math.tan(1.0 / x0 + phi) * x0)


def _assemble_blocks(x, ds, potentials, couplings, robin_g):
    """Banded symmetric generalized problem for n_b coupled radial channels.

    potentials: list of V_b(x) arrays; couplings: dict {(b, b'): C(x) array}
    entering as + C f_b' in channel b's equation; robin_g: per-channel inner
    log-derivative (d ln w / ds).  Returns (a_band, b_diag) with channels
    interleaved per node, lower-banded storage.
    """
    n = len(x)
    nb = len(potentials)
    size = n * nb
    x2 = x * x
    inv = 1.0 / ds**2
    diag = np.empty((nb, n))
    for b, v in enumerate(potentials):
        diag[b] = x2 * v + 0.25 + 2.0 * inv
    b_diag = np.tile(x2, (nb, 1))

    # Robin rows (node 0) carry weight 1/2 so the ghost elimination stays
    # symmetric: diagonal, same-node couplings and the B weight are halved,
    # while the neighbor-node entry -1/ds^2 is already symmetric as is.
    for b in range(nb):
        diag[b, 0] = 0.5 * (x2[0] * potentials[b][0] + 0.25) \
            + inv * (1.0 + ds * robin_g[b])
        b_diag[b, 0] = 0.5 * x2[0]

    bw = nb + 1   # same-channel neighbor-node offset
    a_band = np.zeros((bw, size))
    # diagonal
    for b in range(nb):
        a_band[0, b::nb] = diag[b]
    # same-node channel couplings (offset < nb)
    for (b1, b2), c in couplings.items():
        off = abs(b2 - b1)
        lo = min(b1, b2)
        entries = x2 * c
        entries = np.where(np.arange(n) == 0, 0.5 * entries, entries)
        a_band[off, lo::nb] = entries
    # same-channel node neighbors (offset nb)
    for b in range(nb):
        a_band[bw - 1, b: size - nb: nb] = -inv
    return a_band, b_diag.T.ravel()


def _solve_banded(a_band, b_diag, window):
    """Eigenvalues of A w = eps B w (diagonal positive B) inside ``window``.

    The -1/x^4 core supports states all the way down to the x_min cutoff
    scale, so callers must window the physically meaningful range instead of
    asking for the absolute bottom of the spectrum.
    """
    s = 1.0 / np.sqrt(b_diag)
    scaled = a_band.copy()
    size = a_band.shape[1]
    for off in range(a_band.shape[0]):
        if off == 0:
            scaled[0] = a_band[0] * s * s
        else:
            scaled[off, : size - off] = a_band[off, : size - off] * s[:size - off] * s[off:]
    return eig_banded(scaled, lower=True, eigvals_only=True,
                      select="v", select_range=window)


def _log_mesh(x_min, x_max, ds):
    n = int(math.ceil(math.log(x_max / x_min) / ds))
    ds_eff = math.log(x_max / x_min) / n
    s = math.log(x_min) + ds_eff * np.arange(n + 1)
    return np.exp(s), ds_eff


def qdt_levels_1d(phi_e, phi_o, beta, delta, x_min, x_max, window,
                  ds=0.004, richardson=True):
    """Eigenvalues in ``window`` of -psi'' - psi/x^4 + beta (x - delta)^2 psi
    on the full line with even/odd quantum-defect conditions, via the
    parity-pair half-line reduction (channels couple through -2 beta delta x).

    The window edges must stay well away from any eigenvalue so that both
    Richardson meshes capture the same set of states.
    """

    def solve(ds_val):
        x, ds_eff = _log_mesh(x_min, x_max, ds_val)
        x = x[:-1]   # Dirichlet at x_max: drop the boundary node
        v_base = -1.0 / x**4 + beta * (x**2 + delta**2)
        pots = [v_base, v_base]
        coup = {(0, 1): -2.0 * beta * delta * x}
        g = [_robin_g(x[0], phi_e), _robin_g(x[0], phi_o)]
        a_band, b_diag = _assemble_blocks(x, ds_eff, pots, coup, g)
        return _solve_banded(a_band, b_diag, window)

    return _richardson2(solve, ds, richardson)


def _richardson2(solve, ds, enabled=True):
    """Two-stage Richardson in the mesh step (kills the h^2 and h^4 error
    terms of the 3-point stencil; needed because the core oscillations carry
    ~1/x_min radians of phase)."""
    e1 = solve(ds)
    if not enabled:
        return e1
    e2 = solve(ds / 2.0)
    e4 = solve(ds / 4.0)
    if not (len(e1) == len(e2) == len(e4)):
        raise RuntimeError("window edge too close to an eigenvalue for "
                           "Richardson extrapolation; move the window")
    r1 = (4.0 * e2 - e1) / 3.0
    r2 = (4.0 * e4 - e2) / 3.0
    return (16.0 * r2 - r1) / 15.0


def qdt_levels_radial(phi, beta, delta, x_min, x_max, window, l_max=0,
                      ds=0.004, richardson=True):
    """Eigenvalues in ``window`` of the radial problem with the -1/x^4 core,
    trap beta and displacement delta (couples l to l+1 with the
    <l+1,0|cos th|l,0> factor)."""

    def cos_factor(l):
        return (l + 1) / math.sqrt((2 * l + 1) * (2 * l + 3))

    def solve(ds_val):
        x, ds_eff = _log_mesh(x_min, x_max, ds_val)
        x = x[:-1]
        pots = [l * (l + 1) / x**2 - 1.0 / x**4 + beta * (x**2 + delta**2)
                for l in range(l_max + 1)]
        coup = {(l, l + 1): -2.0 * beta * delta * cos_factor(l) * x
                for l in range(l_max)}
        g = [_robin_g(x[0], phi)] * (l_max + 1)
        a_band, b_diag = _assemble_blocks(x, ds_eff, pots, coup, g)
        return _solve_banded(a_band, b_diag, window)

    return _richardson2(solve, ds, richardson)


def hurwitz_zeta_euler_maclaurin(s, a, n_terms=40, n_bernoulli=12):
    """Hurwitz zeta by Euler-Maclaurin with independently chosen truncation
    (oracle for the package implementation, which uses different counts)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if s == 1.0:
        raise ValueError("pole at s = 1")
    from scipy.special import bernoulli
    bern = bernoulli(2 * n_bernoulli)
    total = sum((k + a) ** (-s) for k in range(n_terms))
    big = n_terms + a
    total += big ** (1.0 - s) / (s - 1.0) + 0.5 * big ** (-s)
    poch = s
    fact = 1.0
    for j in range(1, n_bernoulli + 1):
        fact *= (2 * j - 1) * (2 * j)
        total += bern[2 * j] / fact * poch * big ** (-s - 2 * j + 1)
        poch *= (s + 2 * j - 1) * (s + 2 * j)
    return total
