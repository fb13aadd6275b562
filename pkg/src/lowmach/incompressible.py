"""Stratified incompressible Euler solver and the limit-distance functional.

The zero-Mach limit system transports entropy and evolves a divergence-free
velocity against the variable coefficient r0 = r(S, 0):

    r0 (dv/dt + v . grad v) + grad pi = 0,   div v = 0,   dS/dt + v . grad S = 0.

Velocity updates are realized through a weighted stream-function projection:
any tendency z is replaced by grad^perp phi with div(r0 grad phi) =
curl(r0 z) and phi vanishing on both rims, which enforces div v = 0 and the
wall condition v . nu = 0 to round-off by construction.  Flows with a
non-decaying background (potential flow past the disk) carry the background's
stream trace on the outer rim.  The multiplier pi is recovered on demand from
a pure-Neumann pressure problem gauged to zero mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compressible import EOSCoefficients, RunResult, _grad_pair, \
    perp_gradient
from .elliptic import DivGradSolver, EllipticError, NEUMANN
from .fieldops import boundary_normal_component, build_stack, curl2d, div
from .norms import NormParams, norm_A, norm_X


class AlignmentError(ValueError):
    """Output times of two runs do not match."""


@dataclass
class IncState:
    """Fields of the limit system at one instant."""

    v: np.ndarray
    S: np.ndarray
    pi: np.ndarray
    r0: np.ndarray
    t: float = 0.0

    def copy(self):
        return IncState(self.v.copy(), self.S.copy(), self.pi.copy(),
                        self.r0.copy(), self.t)

    def pack(self):
        """(4, n_r, n_theta) array (p, vx, vy, S) with the limit's p = 0."""
        return np.stack([np.zeros_like(self.S), self.v[0], self.v[1],
                         self.S])


def project_velocity(grid, v, r0, outer_trace=0.0, tol=1e-12):
    """Weighted Leray projection onto divergence-free wall-tangent fields.

    Returns (w, phi) with w = grad^perp phi, div(r0 grad phi) = curl(r0 v),
    phi = 0 on the wall and phi = outer_trace on the outer rim.  Fields that
    already satisfy the constraints are reproduced to solver tolerance.
    """
    solver = DivGradSolver(grid, r0, tol=tol)
    src = curl2d(grid, r0 * v)
    phi = solver.solve(src, inner_data=0.0, outer_data=outer_trace)
    return perp_gradient(grid, phi), phi


def project_initial(v0, S0, grid, eos=None, outer_trace=0.0):
    """Initial-data projection defining the limit velocity.

    The projected field is the unique divergence-free, wall-tangent velocity
    whose r0-weighted curl matches that of v0.
    """
    eos = eos or EOSCoefficients()
    S0 = np.asarray(S0, dtype=float)
    r0 = eos.f2(S0) * eos.g2(0.0)
    if np.min(r0) <= 0.0:
        raise EllipticError("r(S, 0) must be positive")
    w, _ = project_velocity(grid, np.asarray(v0, dtype=float), r0,
                            outer_trace)
    pi = np.zeros_like(S0)
    return IncState(v=w, S=S0.copy(), pi=pi, r0=r0, t=0.0)


def advective_dt(grid, v, cfl=0.4, floor=1e-6):
    h_min = min(grid.h_r, grid.r_inner * grid.d_theta)
    return cfl * h_min / max(float(np.max(np.abs(v))), floor)


def pressure_diagnostic(grid, v, r0, defect_tol=1e-2):
    """Multiplier pi from the Neumann problem div((1/r0) grad pi) = div z.

    z = -v . grad v supplies both the source and the rim data (1/r0)
    dpi/dr = z . e_r, the analytically compatible choice; the remaining
    solvability defect is discretization noise (up to ~1e-3 on coarse grids
    for wall-steep flows), so the tolerance guards against grossly
    incompatible data rather than quadrature error.  A defect beyond it
    raises EllipticError.  The result is gauged to zero mean.
    """
    vxx, vxy = _grad_pair(grid, v[0])
    vyx, vyy = _grad_pair(grid, v[1])
    zx = -(v[0] * vxx + v[1] * vxy)
    zy = -(v[0] * vyx + v[1] * vyy)
    f = div(grid, np.stack([zx, zy]))
    zr = zx * grid.cos_t + zy * grid.sin_t
    g_in = r0[0] * zr[0]
    g_out = r0[-1] * zr[-1]
    solver = DivGradSolver(grid, 1.0 / r0, bc=(NEUMANN, NEUMANN))
    defect = solver.compatibility_defect(f, g_in, g_out)
    if defect > defect_tol:
        raise EllipticError(
            f"Neumann solvability defect {defect:.3e} exceeds tolerance")
    return solver.solve(f, inner_data=g_in, outer_data=g_out,
                        gauge="mean-zero")


class IncompressibleSolver:
    """Owns the projection solvers and advances one IncState.

    A relaxation layer on the sponge rows damps the velocity toward the
    background flow (the weighted-harmonic extension of the outer stream
    trace; zero for decaying data).  It suppresses the slow instability of
    the undamped advection closure at the open outer boundary and sits
    entirely outside the quadrature region used by norms and diagnostics.
    The damping is applied inside the projected tendency, so every RK stage
    remains divergence-free.
    """

    def __init__(self, grid, eos=None, outer_trace=0.0, proj_tol=1e-12,
                 sponge_strength=None):
        self.grid = grid
        self.eos = eos or EOSCoefficients()
        self.outer_trace = outer_trace
        self.proj_tol = proj_tol
        self.sponge_strength = sponge_strength
        self._proj_cache = (None, None)
        self._bg = None
        if grid.sponge_width > 0.0:
            ramp = np.clip((grid.r - grid.sponge_start) / grid.sponge_width,
                           0.0, 1.0)
        else:
            ramp = np.zeros(grid.n_r)
        self._ramp2 = (ramp ** 2)[:, None]

    def r0_of(self, S):
        return self.eos.f2(S) * self.eos.g2(0.0)

    def _projector(self, r0):
        cached_r0, cached = self._proj_cache
        if cached is not None and np.array_equal(cached_r0, r0):
            return cached
        solver = DivGradSolver(self.grid, r0, tol=self.proj_tol)
        self._proj_cache = (r0.copy(), solver)
        return solver

    def _project(self, field, r0, outer_trace=0.0):
        solver = self._projector(r0)
        src = curl2d(self.grid, r0 * field)
        phi = solver.solve(src, inner_data=0.0, outer_data=outer_trace)
        return perp_gradient(self.grid, phi)

    def background(self, r0):
        """Divergence-free extension of the outer trace; damping target."""
        if self._bg is None:
            if np.max(np.abs(self.outer_trace)) == 0.0:
                self._bg = np.zeros((2, self.grid.n_r, self.grid.n_theta))
            else:
                solver = self._projector(r0)
                phi = solver.solve(np.zeros_like(r0), inner_data=0.0,
                                   outer_data=self.outer_trace)
                self._bg = perp_gradient(self.grid, phi)
        return self._bg

    def tendency(self, v, S, sigma, v_bg):
        """Projected velocity tendency and entropy transport rate."""
        grid = self.grid
        vxx, vxy = _grad_pair(grid, v[0])
        vyx, vyy = _grad_pair(grid, v[1])
        Sx, Sy = _grad_pair(grid, S)
        z = np.stack([-(v[0] * vxx + v[1] * vxy),
                      -(v[0] * vyx + v[1] * vyy)])
        z -= sigma * (v - v_bg)
        dv = self._project(z, self.r0_of(S))
        dS = -(v[0] * Sx + v[1] * Sy)
        return dv, dS

    def step(self, state, dt):
        """One RK4 step followed by re-projection of the divergence drift."""
        v, S = state.v, state.S
        v_bg = self.background(state.r0)
        # strength 2 |v| / h_r keeps sigma dt near 0.8 at advective CFL
        strength = self.sponge_strength
        if strength is None:
            strength = 2.0 * float(np.max(np.abs(v))) / self.grid.h_r
        sigma = strength * self._ramp2
        k1 = self.tendency(v, S, sigma, v_bg)
        k2 = self.tendency(v + 0.5 * dt * k1[0], S + 0.5 * dt * k1[1],
                           sigma, v_bg)
        k3 = self.tendency(v + 0.5 * dt * k2[0], S + 0.5 * dt * k2[1],
                           sigma, v_bg)
        k4 = self.tendency(v + dt * k3[0], S + dt * k3[1], sigma, v_bg)
        w = dt / 6.0
        v_new = v + w * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        S_new = S + w * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        r0_new = self.r0_of(S_new)
        v_new = self._project(v_new, r0_new, self.outer_trace)
        return IncState(v=v_new, S=S_new, pi=state.pi, r0=r0_new,
                        t=state.t + dt)

    def pressure(self, state, defect_tol=1e-2):
        return pressure_diagnostic(self.grid, state.v, state.r0, defect_tol)


def kinetic_energy(grid, v, r0):
    """Weighted kinetic energy over the sponge-excluded quadrature region."""
    return 0.5 * grid.integrate(r0 * (v[0] ** 2 + v[1] ** 2))


def run_incompressible(state, t_end, output_every, solver, frame=None,
                       cfl=0.4, norm_params=None, compute_norms=True,
                       on_step=None):
    """Advance the limit system, logging the compressible-run columns.

    Rows carry the shared schema with l2_p = 0 (the limit has no acoustic
    pressure), the analytic norm restricted to its spatial and tangential
    part, and the extra column l2_pi from the Neumann multiplier.
    """
    grid = solver.grid
    n_out = int(round(t_end / output_every))
    if abs(n_out * output_every - t_end) > 1e-12 * max(1.0, t_end):
        raise ValueError("output_every must divide t_end")
    per = max(1, int(np.ceil(output_every / advective_dt(grid, state.v,
                                                         cfl))))
    dt = output_every / per

    params = norm_params or NormParams()
    rows = []
    snapshots = []

    def emit(st):
        st.pi = solver.pressure(st)
        row = {
            "t": st.t,
            "l2_p": 0.0,
            "l2_divv": grid.l2(div(grid, st.v)),
            "normA": 0.0,
            "max_vnu": float(np.max(np.abs(
                boundary_normal_component(grid, st.v)))),
            "min_S": float(np.min(st.S)),
            "max_S": float(np.max(st.S)),
            "l2_pi": grid.l2(st.pi),
        }
        if compute_norms and frame is not None:
            stack = build_stack(grid, frame, [st.pack()], eps=1.0,
                                n_max=params.n_max, i_max=0)
            row["normA"] = norm_A(stack, params,
                                  t=min(st.t, params.horizon)).total
        rows.append(row)
        snapshots.append((st.t, st.copy()))

    emit(state)
    cur = state
    for s in range(1, n_out * per + 1):
        cur = solver.step(cur, dt)
        if on_step is not None:
            on_step(cur)
        if s % per == 0:
            emit(cur)
    return RunResult(rows=rows, snapshots=snapshots, dt=dt)


def limit_distance(comp_run, inc_run, delta, grid, n_max=8):
    """L2-in-time X(delta) distance between a run and the limit run.

    Accepts RunResults or raw snapshot lists of (t, state); output times must
    match.  The integrand sums the squared X norms of the velocity
    difference, the compressible pressure, and the entropy difference;
    integration is by the trapezoid rule over the shared output times.
    """
    comp = comp_run.snapshots if hasattr(comp_run, "snapshots") else comp_run
    inc = inc_run.snapshots if hasattr(inc_run, "snapshots") else inc_run
    if len(comp) != len(inc):
        raise AlignmentError("runs have different numbers of snapshots")
    times = []
    values = []
    for (tc, sc), (ti, si) in zip(comp, inc):
        if abs(tc - ti) > 1e-9:
            raise AlignmentError(f"snapshot times differ: {tc} vs {ti}")
        dv = sc.v - si.v
        dS = sc.S - si.S
        val = (norm_X(grid, dv, delta, n_max).total ** 2
               + norm_X(grid, sc.p[None], delta, n_max).total ** 2
               + norm_X(grid, dS[None], delta, n_max).total ** 2)
        times.append(tc)
        values.append(val)
    return float(np.sqrt(np.trapezoid(values, times)))


def potential_flow(grid, speed=1.0):
    """Steady potential flow past the unit disk.

    Returns (v, outer_trace): the velocity of grad[(r + 1/r) cos theta] and
    the outer-rim trace of its stream function -(r - 1/r) sin theta (signed
    for the (-d/dy, d/dx) perp convention), both scaled by the free-stream
    speed.
    """
    R, TH = grid.R, grid.TH
    v_r = (1.0 - 1.0 / R ** 2) * np.cos(TH)
    v_t = -(1.0 + 1.0 / R ** 2) * np.sin(TH)
    vx = v_r * np.cos(TH) - v_t * np.sin(TH)
    vy = v_r * np.sin(TH) + v_t * np.cos(TH)
    trace = -speed * (grid.r_outer - 1.0 / grid.r_outer) * np.sin(grid.theta)
    return speed * np.stack([vx, vy]), trace
