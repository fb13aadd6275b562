"""Elliptic solvers on the annulus: per-mode radial BVPs and div-grad problems.

Constant-coefficient operators decouple over angular Fourier modes into
banded radial systems solved directly.  Variable-coefficient divergence-form
problems div(c grad u) = f are solved matrix-free with GMRES, preconditioned
by the constant-coefficient modal solve at the mean of c.  Boundary rows at
the two rims carry either Dirichlet values or radial-derivative (Neumann)
data; the pure-Neumann problem pins the angular mean on the outer rim to
remove the constant nullspace and is gauged to zero mean afterwards.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack
from scipy.sparse.linalg import LinearOperator, gmres

_BANDWIDTH = 7  # widest one-sided row of the radial operators

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


class EllipticError(RuntimeError):
    """Raised when an elliptic solve fails to converge or is ill-posed."""


def _to_banded(A, bw):
    n = A.shape[0]
    ab = np.zeros((2 * bw + 1, n), dtype=A.dtype)
    for off in range(-bw, bw + 1):
        diag = np.diagonal(A, offset=off)
        if off >= 0:
            ab[bw - off, off:off + len(diag)] = diag
        else:
            ab[bw - off, :len(diag)] = diag
    return ab


def _matrix_bandwidth(A):
    bw = 0
    for off in range(1, A.shape[0]):
        if np.any(np.diagonal(A, off)) or np.any(np.diagonal(A, -off)):
            bw = off
    return bw


class RadialBVP:
    """Banded solver for c2 u'' + c1 u' + c0 u - m^2 z2 u / r^2 per mode.

    The coefficients are radial profiles (scalars broadcast); boundary rows
    at the first and last radial node are Dirichlet identity rows or one-sided
    first-derivative rows.  For the pure-Neumann problem the m = 0 outer row
    is replaced by a Dirichlet pin, which selects the member of the solution
    family with vanishing outer mean.
    """

    def __init__(self, grid, c2, c1, c0, z2, bc=(DIRICHLET, DIRICHLET),
                 base=None):
        for b in bc:
            if b not in (DIRICHLET, NEUMANN):
                raise ValueError(f"unknown boundary condition {b!r}")
        self.grid = grid
        self.bc = tuple(bc)
        r = grid.r
        n = grid.n_r
        ones = np.ones(n)
        if base is None:
            A = (np.diag(np.broadcast_to(c2, (n,)) * ones) @ grid.D2r
                 + np.diag(np.broadcast_to(c1, (n,)) * ones) @ grid.D1r
                 + np.diag(np.broadcast_to(c0, (n,)) * ones))
        else:
            A = np.array(base, dtype=float)
        A[0, :] = grid.D1r[0, :] if bc[0] == NEUMANN else 0.0
        A[-1, :] = grid.D1r[-1, :] if bc[1] == NEUMANN else 0.0
        if bc[0] == DIRICHLET:
            A[0, 0] = 1.0
        if bc[1] == DIRICHLET:
            A[-1, -1] = 1.0
        self._base = A
        self._bw = max(_BANDWIDTH, _matrix_bandwidth(A))
        self._z2 = np.broadcast_to(z2, (n,)) * ones
        self._inv_r2 = 1.0 / r ** 2
        self._pin_outer_mode0 = bc == (NEUMANN, NEUMANN)
        self._cache = {}

    @classmethod
    def from_matrix(cls, grid, base, z2, bc=(DIRICHLET, DIRICHLET)):
        """BVP whose radial part is a prebuilt matrix instead of c2, c1, c0."""
        return cls(grid, 0.0, 0.0, 0.0, z2, bc, base=base)

    def _factor_for_mode(self, m):
        key = m
        if key not in self._cache:
            A = self._base.copy()
            diag = -m ** 2 * self._z2 * self._inv_r2
            diag[0] = 0.0
            diag[-1] = 0.0
            A[np.arange(len(diag)), np.arange(len(diag))] += diag
            if m == 0 and self._pin_outer_mode0:
                A[-1, :] = 0.0
                A[-1, -1] = 1.0
            ab = _to_banded(A, self._bw)
            work = np.vstack([np.zeros((self._bw, A.shape[0])), ab])
            lu, piv, info = lapack.dgbtrf(work, kl=self._bw, ku=self._bw)
            if info != 0:
                raise EllipticError(f"banded factorization failed (mode {m})")
            self._cache[key] = (lu, piv)
        return self._cache[key]

    def solve_mode(self, m, rhs, inner=0.0, outer=0.0):
        """Solve a single angular mode; rhs and data may be complex."""
        b = np.array(rhs, dtype=complex)
        b[0] = inner
        b[-1] = 0.0 if m == 0 and self._pin_outer_mode0 else outer
        lu, piv = self._factor_for_mode(m)
        # real factorization, complex data: solve the two parts together
        x, info = lapack.dgbtrs(lu, self._bw, self._bw,
                                np.column_stack([b.real, b.imag]), piv)
        if info != 0:
            raise EllipticError(f"banded back-substitution failed (mode {m})")
        return x[:, 0] + 1j * x[:, 1]

    def solve(self, f, inner_data=0.0, outer_data=0.0):
        """Solve for a real field f(r, theta) with per-angle boundary data."""
        g = self.grid
        fh = np.fft.rfft(np.asarray(f, dtype=float), axis=1)
        inner = np.broadcast_to(np.asarray(inner_data, dtype=float),
                                (g.n_theta,))
        outer = np.broadcast_to(np.asarray(outer_data, dtype=float),
                                (g.n_theta,))
        ih = np.fft.rfft(inner)
        oh = np.fft.rfft(outer)
        modes = np.fft.rfftfreq(g.n_theta, d=1.0 / g.n_theta)
        uh = np.empty_like(fh)
        for col, m in enumerate(modes):
            uh[:, col] = self.solve_mode(int(m), fh[:, col],
                                         ih[col], oh[col])
        return np.fft.irfft(uh, n=g.n_theta, axis=1)


def poisson_bvp(grid, bc=(DIRICHLET, DIRICHLET)):
    """Radial BVP for the plain Laplacian u'' + u'/r - m^2 u / r^2."""
    return RadialBVP(grid, 1.0, 1.0 / grid.r, 0.0, 1.0, bc)


def full_integral(grid, f):
    """Trapezoid area integral over the whole annulus, sponge included.

    The elliptic problems span the full grid, so their compatibility
    bookkeeping cannot use the sponge-excluded quadrature.
    """
    w = np.full(grid.n_r, grid.h_r)
    w[0] *= 0.5
    w[-1] *= 0.5
    return float(np.sum((w * grid.r)[:, None] * grid.d_theta * f))


class DivGradSolver:
    """Matrix-free solver for div(c grad u) = f with positive variable c.

    Interior rows apply Dx(c Dx u) + Dy(c Dy u) with the composed
    first-derivative operators, the same discrete calculus as curl and
    grad-perp; a stream-function projection built on this solver therefore
    reproduces already-projected fields to solver tolerance instead of to
    discretization order.  Rim rows apply the boundary condition (value, or
    radial derivative).  The problem is posed on angular modes up to
    n_theta/2 - 2; on that subspace the trigonometric mode-shift algebra has
    no aliasing wrap, so for constant c the modal preconditioner inverts the
    operator to round-off and GMRES only has to work off the variation of c.
    The preconditioner also decides the pure-Neumann mode-0 pinning.
    """

    def __init__(self, grid, c, bc=(DIRICHLET, DIRICHLET), tol=1e-12,
                 atol=1e-13, maxiter=400):
        self.grid = grid
        self.bc = tuple(bc)
        self.tol = float(tol)
        # preconditioned residuals live on solution scale, so atol is an
        # absolute floor that stops round-off grinding when the solution is
        # itself tiny (e.g. projecting the tendency of a steady flow)
        self.atol = float(atol)
        self.maxiter = int(maxiter)
        c = np.asarray(c, dtype=float) * np.ones((grid.n_r, grid.n_theta))
        if np.min(c) <= 0.0:
            raise EllipticError("coefficient must be positive")
        self.c = c
        self.cbar = full_integral(grid, c) / full_integral(
            grid, np.ones_like(c))
        self._neumann = self.bc == (NEUMANN, NEUMANN)
        # Per angular mode the composed operator cbar (DxDx + DyDy) is
        # exactly Dr Dr + (1/r) Dr - m^2/r^2 with the composed square Dr Dr,
        # so this preconditioner inverts all non-aliased modes to round-off.
        Dr = grid.D1r
        K = Dr @ Dr + np.diag(1.0 / grid.r) @ Dr
        self._modal = RadialBVP.from_matrix(grid, self.cbar * K, self.cbar,
                                            bc)
        self._mode_cut = max(1, grid.n_theta // 2 - 1)
        self.last_iterations = 0

    def _dealias(self, field):
        """Zero the top two angular modes, where products alias."""
        fh = np.fft.rfft(field, axis=1)
        fh[:, self._mode_cut:] = 0.0
        return np.fft.irfft(fh, n=self.grid.n_theta, axis=1)

    def apply(self, u):
        """Operator rows: composed div(c grad u) inside, BC rows on rims."""
        g = self.grid
        ur = g.dr(u)
        ut = g.dtheta(u)
        ux = g.cos_t * ur - g.sin_t * ut / g.R
        uy = g.sin_t * ur + g.cos_t * ut / g.R
        out = g.dx(self.c * ux) + g.dy(self.c * uy)
        for side, row in ((0, 0), (1, -1)):
            if self.bc[side] == DIRICHLET:
                out[row] = u[row]
            else:
                out[row] = ur[row]
        if self._neumann:
            # Pin the outer angular mean to remove the constant nullspace.
            out[-1] = out[-1] - np.mean(out[-1]) + np.mean(u[-1])
        return self._dealias(out)

    def _assemble_rhs(self, f, inner_data, outer_data):
        g = self.grid
        b = np.array(f, dtype=float)
        inner = np.broadcast_to(np.asarray(inner_data, dtype=float),
                                (g.n_theta,))
        outer = np.broadcast_to(np.asarray(outer_data, dtype=float),
                                (g.n_theta,))
        b[0] = inner
        b[-1] = outer - np.mean(outer) if self._neumann else outer
        return self._dealias(b)

    def compatibility_defect(self, f, inner_data, outer_data):
        """Solvability defect of the pure-Neumann problem, relative scale.

        The divergence theorem requires the area integral of f to match the
        boundary flux of c du/dr; the defect is normalized by the magnitude
        of both sides.
        """
        g = self.grid
        inner = np.broadcast_to(np.asarray(inner_data, dtype=float),
                                (g.n_theta,))
        outer = np.broadcast_to(np.asarray(outer_data, dtype=float),
                                (g.n_theta,))
        vol = full_integral(g, f)
        flux = (np.sum(self.c[-1] * outer) * g.r_outer
                - np.sum(self.c[0] * inner) * g.r_inner) * g.d_theta
        scale = abs(vol) + abs(flux) + full_integral(g, np.abs(f)) + 1e-300
        return abs(vol - flux) / scale

    def solve(self, f, inner_data=0.0, outer_data=0.0, gauge=None):
        """Solve div(c grad u) = f; gauge="mean-zero" subtracts the mean."""
        g = self.grid
        b = self._assemble_rhs(f, inner_data, outer_data)
        shape = (g.n_r, g.n_theta)
        size = g.n_r * g.n_theta

        def psolve(x):
            rv = x.reshape(shape)
            return self._modal.solve(rv, inner_data=rv[0],
                                     outer_data=rv[-1]).ravel()

        def matvec(x):
            # left-preconditioned rows keep the residual on solution scale,
            # so the relative tolerance is meaningful there
            return psolve(self.apply(x.reshape(shape)).ravel())

        op = LinearOperator((size, size), matvec=matvec)
        b2 = psolve(b.ravel())
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = gmres(op, b2, x0=b2, rtol=self.tol, atol=self.atol,
                        maxiter=max(1, self.maxiter // 40), restart=40,
                        callback=cb, callback_type="pr_norm")
        if info != 0:
            raise EllipticError(
                f"GMRES failed to converge (info={info}) after "
                f"{count[0]} iterations")
        self.last_iterations = count[0]
        u = x.reshape(shape)
        if gauge == "mean-zero":
            u = u - full_integral(g, u) / full_integral(g, np.ones_like(u))
        return u
