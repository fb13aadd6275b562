"""Polar tensor grid on an annulus with spectral/finite-difference calculus.

The grid covers r in [r_inner, r_outer] with a uniform radial spacing and an
even number of equispaced angles.  Angular derivatives are computed spectrally
via the real FFT; radial derivatives use 6th-order centered stencils in the
interior with one-sided closures of matching order at the first and last rows.
Fields are float64 arrays of shape (n_r, n_theta), row-major in (r, theta).
"""

from __future__ import annotations

import numpy as np


def fd_weights(nodes, x0, maxorder):
    """Finite-difference weights at ``x0`` for derivatives 0..maxorder.

    Fornberg's recursion on an arbitrary node set.  Returns an array of shape
    (maxorder + 1, len(nodes)); row m holds the weights of the m-th derivative.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    if maxorder >= n:
        raise ValueError("need more nodes than the requested derivative order")
    c = np.zeros((maxorder + 1, n))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, maxorder)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for m in range(mn, 0, -1):
                    c[m, i] = c1 * (m * c[m - 1, i - 1] - c5 * c[m, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for m in range(mn, 0, -1):
                c[m, j] = (c4 * c[m, j] - m * c[m - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def derivative_matrix(r, order, stencil=7):
    """Dense differentiation matrix for d^order/dr^order on the nodes ``r``.

    Interior rows use a centered ``stencil``-point formula; rows closer than
    half a stencil to either end fall back to one-sided stencils on the same
    number of nodes, which keeps the formal order at (stencil - order).
    """
    n = len(r)
    if stencil > n:
        raise ValueError("stencil wider than the grid")
    half = stencil // 2
    D = np.zeros((n, n))
    for i in range(n):
        lo = min(max(i - half, 0), n - stencil)
        idx = np.arange(lo, lo + stencil)
        w = fd_weights(r[idx], r[i], order)
        D[i, idx] = w[order]
    return D


class Grid:
    """Annular tensor grid with differentiation and quadrature operators."""

    def __init__(self, n_r=256, n_theta=128, r_inner=1.0, r_outer=8.0,
                 sponge_width=2.0):
        if n_theta % 2:
            raise ValueError("n_theta must be even")
        if not (r_inner > 0 and r_outer > r_inner):
            raise ValueError("need 0 < r_inner < r_outer")
        if not (0.0 <= sponge_width < r_outer - r_inner):
            raise ValueError("sponge_width must fit inside the annulus")
        self.n_r = int(n_r)
        self.n_theta = int(n_theta)
        self.r_inner = float(r_inner)
        self.r_outer = float(r_outer)
        self.sponge_width = float(sponge_width)

        self.r = np.linspace(r_inner, r_outer, n_r)
        self.h_r = self.r[1] - self.r[0]
        self.theta = np.arange(n_theta) * (2.0 * np.pi / n_theta)
        self.d_theta = 2.0 * np.pi / n_theta

        self.R = self.r[:, None] * np.ones((1, n_theta))
        self.TH = np.ones((n_r, 1)) * self.theta[None, :]
        self.cos_t = np.cos(self.TH)
        self.sin_t = np.sin(self.TH)
        self.X = self.R * self.cos_t
        self.Y = self.R * self.sin_t

        self.D1r = derivative_matrix(self.r, 1, stencil=7)
        self.D2r = derivative_matrix(self.r, 2, stencil=8)

        # Spectral wavenumbers for the real FFT along theta.
        self._ik = 1j * np.fft.rfftfreq(n_theta, d=1.0 / n_theta)

        self.sponge_start = self.r_outer - self.sponge_width
        if self.sponge_width > 0.0:
            self.sponge_mask = self.r >= self.sponge_start - 1e-12
        else:
            self.sponge_mask = np.zeros(n_r, dtype=bool)

        self._wq = self._build_quadrature()

    def _build_quadrature(self):
        # Trapezoid in r with metric factor r, exact equispaced rule in theta.
        # Rows inside the sponge get zero weight; the trapezoid closes at the
        # last retained node.
        keep = ~self.sponge_mask
        w_r = np.zeros(self.n_r)
        idx = np.nonzero(keep)[0]
        if len(idx) < 2:
            raise ValueError("sponge leaves fewer than two radial nodes")
        w_r[idx] = self.h_r
        w_r[idx[0]] = 0.5 * self.h_r
        w_r[idx[-1]] = 0.5 * self.h_r
        return (w_r * self.r)[:, None] * self.d_theta

    # -- differentiation -------------------------------------------------

    def dr(self, f):
        """Radial derivative along axis 0."""
        return np.tensordot(self.D1r, f, axes=(1, 0))

    def drr(self, f):
        """Second radial derivative along axis 0."""
        return np.tensordot(self.D2r, f, axes=(1, 0))

    def dtheta(self, f):
        """Spectral angular derivative along axis 1."""
        fh = np.fft.rfft(f, axis=-1)
        return np.fft.irfft(self._ik * fh, n=self.n_theta, axis=-1)

    def dx(self, f):
        """Cartesian x-derivative via the polar chain rule."""
        return self.cos_t * self.dr(f) - (self.sin_t / self.R) * self.dtheta(f)

    def dy(self, f):
        """Cartesian y-derivative via the polar chain rule."""
        return self.sin_t * self.dr(f) + (self.cos_t / self.R) * self.dtheta(f)

    # -- quadrature and norms --------------------------------------------

    def integrate(self, f):
        """Area integral over the annulus, sponge rows excluded."""
        return float(np.sum(self._wq * f))

    def l2(self, f):
        """L2 norm over the annulus minus the sponge.

        Accepts a scalar field or any stacked array whose last two axes are
        (r, theta); leading axes are summed as vector/tensor components.
        """
        f = np.asarray(f)
        return float(np.sqrt(np.sum(self._wq * np.sum(
            f.reshape(-1, self.n_r, self.n_theta) ** 2, axis=0))))

    def max_abs(self, f, mask=None):
        f = np.asarray(f)
        if mask is not None:
            f = f * mask
        return float(np.max(np.abs(f)))

    # -- helpers ---------------------------------------------------------

    def refined(self, factor=2):
        """Grid with ``factor`` times the resolution in both directions."""
        return Grid(self.n_r * factor - (factor - 1), self.n_theta * factor,
                    self.r_inner, self.r_outer, self.sponge_width)

    def collar_mask(self, width):
        """Boolean mask of nodes within ``width`` of the inner boundary."""
        return self.R <= self.r_inner + width + 1e-12

    def sample(self, func):
        """Evaluate a callable of (x, y) on the grid."""
        return func(self.X, self.Y)

    def __repr__(self):
        return (f"Grid(n_r={self.n_r}, n_theta={self.n_theta}, "
                f"r=[{self.r_inner}, {self.r_outer}], "
                f"sponge_width={self.sponge_width})")
