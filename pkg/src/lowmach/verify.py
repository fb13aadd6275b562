"""Empirical verification of the package's core inequalities and identities.

Each check evaluates both sides of one discrete inequality (or one identity
computed by two independent code paths) on a seeded family of analytic test
fields, fits the empirical constant, and repeats under grid refinement to
confirm the constant is a property of the continuum bound rather than of the
discretization.  Field families are truncated Fourier series in theta with
decaying radial profiles, drawn once from a fixed seed so that every grid
sees the same analytic fields.

Reports serialize to CSV rows ``field_id,quantity,lhs,rhs,ratio`` plus a
one-line plain-text summary per check.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb
import os

import numpy as np

from .fieldops import (apply_tangential, build_stack, commutator_curl_direct,
                       commutator_curl_leibniz, commutator_direct,
                       commutator_div_direct, commutator_div_leibniz,
                       commutator_leibniz, commutator_spatial_direct,
                       commutator_spatial_leibniz, curl2d, div,
                       laplacian, spatial_stack, tangential_power)
from .geometry import (DefiningFunction, ExteriorDomain, build_frame,
                       circle_frame, frame_from_function, signed_distance)
from .grid import Grid
from .norms import _pos_factorial

VERIFY_SEED = 20240601

# relative drift allowed in a fitted constant under one grid refinement
CONSTANT_DRIFT_TOL = 0.20


# ---------------------------------------------------------------------------
# seeded field families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSpec:
    """Analytic test-field recipe, sampled on demand on any grid.

    ``modes`` holds (amplitude, m, phase, center, width) tuples; the scalar
    generator is sum_m amplitude * exp(-((r-center)/width)^2) * cos(m theta
    + phase), multiplied by (r - 1)^wall_power.  Vector kinds differentiate
    the generator discretely so that boundary tangency is inherited from the
    structure of the generator, not imposed after the fact.
    """

    field_id: str
    kind: str            # scalar | stream | potential | rotation | harmonic | constant
    modes: tuple = ()
    wall_power: int = 0

    def _generator(self, grid):
        g = np.zeros((grid.n_r, grid.n_theta))
        for amp, m, phase, center, width in self.modes:
            rad = np.exp(-(((grid.R - center) / width) ** 2))
            g += amp * rad * np.cos(m * grid.TH + phase)
        if self.wall_power:
            g = g * (grid.R - grid.r_inner) ** self.wall_power
        return g

    def sample(self, grid):
        """Field values on ``grid``: (n_r, n_theta) or (2, n_r, n_theta)."""
        if self.kind == "scalar":
            return self._generator(grid)
        if self.kind == "constant":
            return np.full((grid.n_r, grid.n_theta), self.modes[0][0])
        if self.kind == "harmonic":
            amp, m, phase = self.modes[0][:3]
            return amp * grid.R ** (-m) * np.cos(m * grid.TH + phase)
        if self.kind == "stream":
            psi = self._generator(grid)
            return np.stack([-grid.dy(psi), grid.dx(psi)])
        if self.kind == "potential":
            phi = self._generator(grid)
            return np.stack([grid.dx(phi), grid.dy(phi)])
        if self.kind == "rotation":
            g = self._generator(grid)
            return np.stack([-grid.Y * g, grid.X * g])
        raise ValueError(f"unknown field kind {self.kind!r}")


def _draw_modes(rng, n_modes, r_span, w_span, amp=1.0):
    modes = []
    for m in range(n_modes + 1):
        a = amp * rng.uniform(0.35, 1.0) * rng.choice([-1.0, 1.0])
        center = rng.uniform(*r_span)
        width = rng.uniform(*w_span)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        modes.append((a, m, phase, center, width))
    return tuple(modes)


def scalar_family(n_fields=6, seed=VERIFY_SEED, n_modes=3,
                  r_span=(2.6, 4.2), w_span=(0.7, 1.0), tag="scalar"):
    """Mid-annulus scalar fields, wide enough to resolve nine derivatives."""
    rng = np.random.default_rng(seed)
    return [FieldSpec(f"{tag}{i}", "scalar",
                      _draw_modes(rng, n_modes, r_span, w_span))
            for i in range(n_fields)]


def tangential_vector_family(n_fields=10, seed=VERIFY_SEED + 1):
    """Vector fields with vanishing wall-normal trace.

    Stream-function fields carry a (r-1)^2 factor so the wall ring of the
    generator vanishes identically and the discrete tangential trace is
    exactly zero; gradient fields use (r-1)^3 with far-centered profiles so
    the normal trace sits at closure-truncation level; rotation fields are
    pointwise tangential by construction.
    """
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n_fields):
        kind = ("stream", "potential", "rotation")[i % 3]
        if kind == "stream":
            modes = _draw_modes(rng, 3, (1.5, 2.1), (0.55, 0.75))
            specs.append(FieldSpec(f"stream{i}", kind, modes, wall_power=2))
        elif kind == "potential":
            modes = _draw_modes(rng, 3, (2.6, 3.4), (0.38, 0.45))
            specs.append(FieldSpec(f"potential{i}", kind, modes, wall_power=3))
        else:
            modes = _draw_modes(rng, 0, (2.0, 3.5), (0.6, 0.9))
            specs.append(FieldSpec(f"rotation{i}", kind, modes))
    return specs


def sobolev_family(seed=VERIFY_SEED + 2):
    """Second-order-bound family: tangential vectors plus the edge cases."""
    rng = np.random.default_rng(seed)
    specs = list(tangential_vector_family(9, seed=seed + 7))
    specs.append(FieldSpec("harmonic0", "harmonic",
                           ((1.0, 2, rng.uniform(0.0, 2.0 * np.pi), 0.0, 1.0),)))
    specs.append(FieldSpec("radial0", "scalar",
                           _draw_modes(rng, 0, (2.2, 3.8), (0.7, 1.0))))
    specs.append(FieldSpec("constant0", "constant", ((0.7, 0, 0.0, 0.0, 0.0),)))
    return specs


def commutator_family(seed=VERIFY_SEED + 3):
    """Mid-annulus scalars, stream vectors, and one exact-zero constant.

    Commutator identities carry no boundary condition, so the family sits
    away from the wall where every nested stencil is interior and the code
    paths can be compared at truncation level.
    """
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(5):
        specs.append(FieldSpec(f"scalar{i}", "scalar",
                               _draw_modes(rng, 2, (3.0, 3.8), (0.7, 0.9))))
    for i in range(4):
        specs.append(FieldSpec(f"stream{i}", "stream",
                               _draw_modes(rng, 2, (3.0, 3.6), (0.7, 0.9))))
    specs.append(FieldSpec("constant0", "constant", ((1.3, 0, 0.0, 0.0, 0.0),)))
    return specs


# ---------------------------------------------------------------------------
# report plumbing
# ---------------------------------------------------------------------------

@dataclass
class InequalityReport:
    """Outcome of one empirical check.

    ``rows`` holds dicts with keys field_id, quantity, lhs, rhs, ratio; the
    fitted ``constant`` dominates every ratio, so ``consistent()`` holds by
    construction and is exposed for auditing.  ``refinement`` records the
    per-grid constants the stability verdict was derived from.
    """

    name: str
    rows: list
    constant: float
    passed: bool
    slack: float = 0.05
    refinement: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def consistent(self):
        bound = self.constant * (1.0 + self.slack)
        return all(r["ratio"] <= bound for r in self.rows
                   if np.isfinite(r["ratio"]))

    def summary(self):
        status = "pass" if self.passed else "fail"
        return f"{self.name}: {status}, constant={self.constant:.6g}"

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("field_id,quantity,lhs,rhs,ratio\n")
            for r in self.rows:
                fh.write("%s,%s,%.17g,%.17g,%.17g\n"
                         % (r["field_id"], r["quantity"],
                            r["lhs"], r["rhs"], r["ratio"]))


def _drift(values):
    values = [v for v in values if np.isfinite(v)]
    if len(values) < 2:
        return np.inf
    lo, hi = min(values), max(values)
    return (hi - lo) / hi if hi > 0 else 0.0


def _grid_chain(base_shape, refinements):
    grids = [Grid(n_r=base_shape[0], n_theta=base_shape[1])]
    for _ in range(refinements):
        grids.append(grids[-1].refined())
    return grids


def _sobolev_norm(grid, f, order):
    """L2 sum of symmetric derivative tensors up to ``order``."""
    stack = spatial_stack(grid, f, n_max=order)
    return float(np.sqrt(sum(stack.l2(j, 0, 0) ** 2
                             for j in range(order + 1))))


def _tensor_sup(stack, j, k, mask):
    """Pointwise symmetric-tensor magnitude, maximized over ``mask``."""
    e = stack.entry(j, k, 0)
    mag2 = np.zeros(e.shape[2:])
    for m in range(j + 1):
        mag2 += comb(j, m) * np.sum(e[:, m] ** 2, axis=0)
    return float(np.max(np.sqrt(mag2)[mask]))


# ---------------------------------------------------------------------------
# interpolation bound
# ---------------------------------------------------------------------------

def check_interpolation(fields=None, j_max=8, base_shape=(128, 64),
                        refinements=1):
    """Intermediate-derivative bound with a single geometric constant.

    For each field u and 1 <= j <= j_max the ratio rho_j = |d^j u| /
    (|u|^(1/(j+1)) |d^(j+1) u|^(j/(j+1))) is measured; the fitted constant is
    the smallest C with rho_j <= C^j for every field and order.  The j = 0
    ratio is identically 1 and is not reported.
    """
    if j_max > 8:
        raise ValueError("j_max must be at most 8")
    fields = fields if fields is not None else scalar_family()
    rows, notes = [], []
    per_grid = []
    for level, grid in enumerate(_grid_chain(base_shape, refinements)):
        c_level = 0.0
        for spec in fields:
            u = spec.sample(grid)
            stack = spatial_stack(grid, u, n_max=j_max + 1)
            norms = [stack.l2(j, 0, 0) for j in range(j_max + 2)]
            floor = 1e-14 * max(norms[0], norms[1])
            for j in range(1, j_max + 1):
                if norms[j + 1] <= floor or norms[0] <= floor:
                    notes.append(f"{spec.field_id}: order {j} skipped, "
                                 "vanishing denominator")
                    continue
                rhs = norms[0] ** (1.0 / (j + 1)) * \
                    norms[j + 1] ** (j / (j + 1.0))
                rho = norms[j] / rhs
                c_level = max(c_level, rho ** (1.0 / j))
                if level == 0:
                    rows.append({"field_id": spec.field_id,
                                 "quantity": f"rho_{j}",
                                 "lhs": norms[j], "rhs": rhs, "ratio": rho})
        per_grid.append(c_level)
    drift = _drift(per_grid)
    constant = per_grid[0]
    passed = np.isfinite(constant) and constant > 0 and \
        drift <= CONSTANT_DRIFT_TOL
    return InequalityReport(
        name="interpolation", rows=rows, constant=constant, passed=passed,
        refinement={"constants": per_grid, "drift": drift}, notes=notes)


# ---------------------------------------------------------------------------
# gradient bound by divergence and curl
# ---------------------------------------------------------------------------

def check_divcurl(fields=None, base_shape=(128, 64), refinements=2):
    """Full-gradient control by div, curl, and the field itself.

    Requires tangential fields (vanishing wall-normal trace) so that no
    boundary term enters; the per-field ratio is |grad v| / (|div v| +
    |curl v| + |v|).  Zero fields are skipped as degenerate.
    """
    fields = fields if fields is not None else tangential_vector_family()
    rows, notes = [], []
    per_grid, trace_sup = [], 0.0
    for level, grid in enumerate(_grid_chain(base_shape, refinements)):
        c_level = 0.0
        for spec in fields:
            v = spec.sample(grid)
            if v.ndim != 3:
                raise ValueError("divcurl check needs vector fields")
            nrm = grid.l2(v)
            if nrm <= 1e-14:
                notes.append(f"{spec.field_id}: zero field skipped")
                continue
            wall = v[0, 0] * grid.cos_t + v[1, 0] * grid.sin_t
            trace_sup = max(trace_sup, float(np.max(np.abs(wall))) / nrm)
            lhs = spatial_stack(grid, v, n_max=1).l2(1, 0, 0)
            rhs = grid.l2(div(grid, v)) + grid.l2(curl2d(grid, v)) + nrm
            ratio = lhs / rhs
            c_level = max(c_level, ratio)
            if level == 0:
                rows.append({"field_id": spec.field_id, "quantity": "grad",
                             "lhs": lhs, "rhs": rhs, "ratio": ratio})
        per_grid.append(c_level)
    drift = _drift(per_grid)
    constant = per_grid[0]
    passed = np.isfinite(constant) and drift <= CONSTANT_DRIFT_TOL
    return InequalityReport(
        name="divcurl", rows=rows, constant=constant, passed=passed,
        refinement={"constants": per_grid, "drift": drift,
                    "relative_normal_trace_sup": trace_sup}, notes=notes)


# ---------------------------------------------------------------------------
# second-order bound by Laplacian and tangential derivative
# ---------------------------------------------------------------------------

def check_h2(fields=None, base_shape=(128, 64), refinements=2,
             collar_width=0.25):
    """H2 control by the Laplacian, one tangential derivative, and L2.

    Ratio |v|_H2 / (|Lap v| + |Tv|_H1 + |v|) per field; works on scalars and
    on vector fields componentwise through the stacked Sobolev norms.
    """
    fields = fields if fields is not None else sobolev_family()
    rows, notes = [], []
    per_grid = []
    for level, grid in enumerate(_grid_chain(base_shape, refinements)):
        frame = circle_frame(grid, collar_width)
        c_level = 0.0
        for spec in fields:
            v = spec.sample(grid)
            comps = v[None] if v.ndim == 2 else v
            lhs = _sobolev_norm(grid, comps, 2)
            lap = np.stack([laplacian(grid, c) for c in comps])
            tv = np.stack([apply_tangential(grid, frame, c) for c in comps])
            rhs = grid.l2(lap) + _sobolev_norm(grid, tv, 1) + grid.l2(comps)
            if rhs <= 1e-14:
                notes.append(f"{spec.field_id}: zero field skipped")
                continue
            ratio = lhs / rhs
            c_level = max(c_level, ratio)
            if level == 0:
                rows.append({"field_id": spec.field_id, "quantity": "h2",
                             "lhs": lhs, "rhs": rhs, "ratio": ratio})
        per_grid.append(c_level)
    drift = _drift(per_grid)
    constant = per_grid[0]
    passed = np.isfinite(constant) and drift <= CONSTANT_DRIFT_TOL
    return InequalityReport(
        name="h2", rows=rows, constant=constant, passed=passed,
        refinement={"constants": per_grid, "drift": drift}, notes=notes)


# ---------------------------------------------------------------------------
# derivative-reduction inequalities
# ---------------------------------------------------------------------------

def _reduction_rows(grid, frame, nu_sups, spec, v):
    """Measured (quantity, lhs, rhs) triples for one field on one grid."""
    sv = build_stack(grid, frame, [v], 1.0, n_max=5, i_max=0)
    dv = div(grid, v)[None]
    cv = curl2d(grid, v)[None]
    sd = build_stack(grid, frame, [dv], 1.0, n_max=4, i_max=0)
    sc = build_stack(grid, frame, [cv], 1.0, n_max=4, i_max=0)
    out = []

    # plain gradient by div, curl, and the field
    out.append(("grad_by_div_curl", sv.l2(1, 0, 0),
                sd.l2(0, 0, 0) + sc.l2(0, 0, 0) + sv.l2(0, 0, 0)))

    # one tangential derivative costs at most one gradient
    for k in (1, 2):
        out.append((f"tangential_by_grad_k{k}", sv.l2(0, k, 0),
                    sv.l2(1, k - 1, 0)))

    # gradient of a tangential power, with coefficient-sup lower terms
    for k in (1, 2):
        rhs = sd.l2(0, k, 0) + sc.l2(0, k, 0) + sv.l2(0, k, 0)
        for ell in range(1, k + 1):
            ckl = comb(k, ell)
            rhs += ckl * (sv.l2(1, k - ell, 0) * nu_sups[(0, ell)]
                          + sv.l2(0, k - ell, 0) * nu_sups[(1, ell)]
                          + sv.l2(0, k - ell, 0) * nu_sups[(0, ell)])
        rhs += grid.l2(commutator_div_direct(grid, frame, v, k))
        rhs += grid.l2(commutator_curl_direct(grid, frame, v, k))
        out.append((f"first_deriv_reduction_k{k}", sv.l2(1, k, 0), rhs))

    # higher derivatives by one-lower div/curl plus commutator corrections
    for j in (2, 3):
        for k in (0, 1, 2):
            lhs = sv.l2(j, k, 0)
            rhs = sd.l2(j - 1, k, 0) + sc.l2(j - 1, k, 0)
            rhs += np.sqrt(sv.l2(j - 2, k + 1, 0) ** 2
                           + sv.l2(j - 1, k + 1, 0) ** 2)
            rhs += sv.l2(j - 2, k, 0)
            if k > 0:
                cd = commutator_div_direct(grid, frame, v, k)
                cc = commutator_curl_direct(grid, frame, v, k)
                rhs += spatial_stack(grid, cd, n_max=j - 1).l2(j - 1, 0, 0)
                rhs += spatial_stack(grid, cc, n_max=j - 1).l2(j - 1, 0, 0)
            if j == 3:
                tk = np.stack([tangential_power(grid, frame, v[c], k)
                               for c in range(2)])
                block = np.stack([commutator_direct(grid, frame, tk[c], 1, s)
                                  for s in (0, 1) for c in (0, 1)])
                sb = spatial_stack(grid, block, n_max=1)
                rhs += np.sqrt(sb.l2(0, 0, 0) ** 2 + sb.l2(1, 0, 0) ** 2)
            out.append((f"deriv_reduction_j{j}_k{k}", lhs, rhs))
    return out


def check_reductions(fields=None, base_shape=(128, 64), refinements=1,
                     collar_width=0.25):
    """Derivative-count reductions for tangential vector fields.

    Each inequality trades a full spatial derivative or a tangential power
    for divergence, curl, and lower-order terms, with every commutator
    correction evaluated by the field-operator module.  The fitted constant
    is reported per inequality; the pointwise tangential bound must in
    addition stay below the coefficient sup of the frame.
    """
    fields = fields if fields is not None else tangential_vector_family()
    rows, notes = [], []
    per_grid = []
    sup_b = None
    for level, grid in enumerate(_grid_chain(base_shape, refinements)):
        frame = circle_frame(grid, collar_width)
        if level == 0:
            sup_b = frame.sup_b()
        sdf = signed_distance(ExteriorDomain(), grid)
        mask = sdf.d <= collar_width + 1e-12
        snu = build_stack(grid, frame, [-sdf.grad], 1.0, n_max=3, i_max=0)
        nu_sups = {(jj, kk): _tensor_sup(snu, jj, kk, mask)
                   for jj in (0, 1) for kk in (1, 2)}
        c_level = {}
        for spec in fields:
            v = spec.sample(grid)
            for quantity, lhs, rhs in _reduction_rows(grid, frame, nu_sups,
                                                      spec, v):
                if rhs <= 1e-14:
                    notes.append(f"{spec.field_id}/{quantity}: "
                                 "zero right side skipped")
                    continue
                ratio = lhs / rhs
                c_level[quantity] = max(c_level.get(quantity, 0.0), ratio)
                if level == 0:
                    rows.append({"field_id": spec.field_id,
                                 "quantity": quantity,
                                 "lhs": lhs, "rhs": rhs, "ratio": ratio})
        per_grid.append(c_level)
    drift = max(_drift([g[q] for g in per_grid]) for q in per_grid[0])
    constants = per_grid[0]
    constant = max(constants.values())
    pointwise_ok = constants["tangential_by_grad_k1"] <= sup_b + 1e-12
    passed = np.isfinite(constant) and drift <= CONSTANT_DRIFT_TOL \
        and pointwise_ok
    return InequalityReport(
        name="reductions", rows=rows, constant=constant, passed=passed,
        refinement={"constants": per_grid, "drift": drift,
                    "per_inequality": constants, "sup_b": sup_b},
        notes=notes)


# ---------------------------------------------------------------------------
# analyticity of the extended unit normal
# ---------------------------------------------------------------------------

def _falling(a, p):
    out = 1.0
    for q in range(p):
        out *= a - q
    return out


def circle_normal_sups(m_max):
    """Exact collar sups of the mixed normal derivatives for the unit circle.

    With w = nu_1 + i nu_2 = -z^(1/2) zbar^(-1/2) and T = (1/r) d_theta on
    the collar, T^k w = -(i)^k z^((1-k)/2) zbar^(-(1+k)/2); Cartesian partials
    follow from the Wirtinger expansion, every term is homogeneous of degree
    -(j+k), and the rotation-invariant tensor magnitude peaks on the wall
    ring, where it can be read off at z = zbar = 1.
    """
    sups = {}
    for k in range(m_max + 1):
        a, b = 0.5 * (1 - k), -0.5 * (1 + k)
        for j in range(m_max + 1 - k):
            total = 0.0
            for m in range(j + 1):
                c = 0j
                for p1 in range(j - m + 1):
                    for p2 in range(m + 1):
                        c += (comb(j - m, p1) * comb(m, p2)
                              * (-1.0) ** (m - p2)
                              * _falling(a, p1 + p2)
                              * _falling(b, j - p1 - p2))
                c *= -(1j ** k) * (1j ** m)
                total += comb(j, m) * abs(c) ** 2
            sups[(j, k)] = float(np.sqrt(total))
    return sups


def _fit_eta(sups, budget):
    """Largest eta with sum eta^(j+k)/(j+k-3)! * sup_(j,k) <= budget."""
    def total(eta):
        return sum(eta ** (j + k) / _pos_factorial(j + k - 3) * s
                   for (j, k), s in sups.items())
    hi = 1.0
    for _ in range(64):
        if total(hi) > budget:
            break
        hi *= 2.0
    else:
        return hi
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if total(mid) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def check_normal_analyticity(domain=None, m_max=8, base_shape=(128, 64),
                             collar_width=0.25, budget=2.0,
                             cross_check_order=2):
    """Factorially-weighted derivative sums of the extended unit normal.

    Measures sup norms of d^j T^k nu over the boundary collar for
    j + k <= m_max and fits the largest weight eta keeping the factorial
    series within ``budget``.  For the unit circle the sups have a closed
    form; measured values must agree to 1e-6 through order
    ``cross_check_order``, beyond which stencil truncation of the nested
    derivatives dominates and the comparison is reported but not gated.
    """
    if m_max > 8:
        raise ValueError("m_max must be at most 8")
    domain = domain if domain is not None else ExteriorDomain()
    exact = circle_normal_sups(m_max) if domain.is_circle else None
    dfun = DefiningFunction(domain)
    rows, notes = [], []
    etas, cross_err = [], 0.0
    sups_fine = None
    grids = _grid_chain(base_shape, 1)
    for level, grid in enumerate(grids):
        frame = frame_from_function(grid, dfun.seed, collar_width)
        sdf = signed_distance(domain, grid)
        mask = (sdf.d >= -1e-12) & (sdf.d <= collar_width + 1e-12)
        stack = build_stack(grid, frame, [-sdf.grad], 1.0,
                            n_max=m_max, i_max=0)
        sups = {}
        for k in range(m_max + 1):
            for j in range(m_max + 1 - k):
                sups[(j, k)] = _tensor_sup(stack, j, k, mask)
        etas.append(_fit_eta(sups, budget))
        if level == len(grids) - 1:
            sups_fine = sups
    eta = etas[-1]
    # rows record each order's share of the weighted-series budget at the
    # fitted eta; the shares sum to at most 1 by construction of the fit
    for (j, k), measured in sorted(sups_fine.items()):
        share = eta ** (j + k) / _pos_factorial(j + k - 3) * measured / budget
        rows.append({"field_id": "normal", "quantity": f"share_j{j}_k{k}",
                     "lhs": eta ** (j + k) / _pos_factorial(j + k - 3)
                     * measured, "rhs": budget, "ratio": share})
        if exact and j + k <= cross_check_order:
            ref = exact[(j, k)]
            if ref > 0:
                cross_err = max(cross_err, abs(measured / ref - 1.0))
    drift = _drift(etas)
    passed = eta > 0 and drift <= CONSTANT_DRIFT_TOL
    if exact:
        passed = passed and cross_err <= 1e-6
        notes.append(f"closed-form cross-check error {cross_err:.3e} "
                     f"through order {cross_check_order}")
    slack = max(0.05, 1.0 / eta - 1.0) if eta > 0 else 0.05
    return InequalityReport(
        name="normal_analyticity", rows=rows, constant=eta,
        passed=passed, slack=slack,
        refinement={"constants": etas, "drift": drift, "budget": budget,
                    "cross_check_error": cross_err,
                    "measured_sups": sups_fine, "exact_sups": exact},
        notes=notes)


# ---------------------------------------------------------------------------
# commutator code-path agreement
# ---------------------------------------------------------------------------

def _comm_pairs(grid, frame, spec, v, k_max):
    """(quantity, direct, leibniz) triples for one field."""
    out = []
    if v.ndim == 2:
        for k in range(1, k_max + 1):
            for axis in (0, 1):
                out.append((f"tangential{k}_partial{axis}",
                            commutator_direct(grid, frame, v, k, axis),
                            commutator_leibniz(grid, frame, v, k, axis)))
        for alpha in ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1),
                      (1, 2), (0, 3)):
            out.append((f"partial{alpha[0]}{alpha[1]}_tangential",
                        commutator_spatial_direct(grid, frame, v, alpha),
                        commutator_spatial_leibniz(grid, frame, v, alpha)))
    else:
        for k in range(1, k_max + 1):
            out.append((f"tangential{k}_div",
                        commutator_div_direct(grid, frame, v, k),
                        commutator_div_leibniz(grid, frame, v, k)))
            out.append((f"tangential{k}_curl",
                        commutator_curl_direct(grid, frame, v, k),
                        commutator_curl_leibniz(grid, frame, v, k)))
    return out


def _interior_l2(grid, f, skip_rows=4):
    """Quadrature norm with the one-sided closure rows masked out.

    Nested application of the radial stencil amplifies the closure rows'
    truncation by a factor 1/h per extra derivative, which would swamp an
    identity comparison; the first rows are therefore excluded from the
    agreement norm on both code paths alike.
    """
    g = np.array(f, dtype=float)
    g[..., :skip_rows, :] = 0.0
    return grid.l2(g)


def check_commutator_suite(fields=None, k_max=3, base_shape=(128, 64),
                           tol=1e-7):
    """Direct versus product-rule evaluation of the operator commutators.

    The two code paths share no intermediate: the direct path nests the
    operators, the product-rule path sums iterated-adjoint corrections with
    discretely differentiated coefficients.  The frame comes from the uncut
    radial defining function r - 1, whose coefficients are resolvable at
    every node (a flat-step cutoff would pin the comparison to its
    unresolvable tail).  Agreement is relative to the commutator's own size,
    measured above the closure rows; errors must shrink under refinement and
    stay below ``tol`` on the fine grid.
    """
    fields = fields if fields is not None else commutator_family()
    rows, notes = [], []
    per_grid_err, per_grid_ratio = [], []
    for level, grid in enumerate(_grid_chain(base_shape, 1)):
        frame = build_frame(grid, grid.R - grid.r_inner)
        worst_err, worst_ratio = 0.0, 0.0
        for spec in fields:
            v = spec.sample(grid)
            field_scale = max(_interior_l2(grid, v), 1.0)
            for quantity, direct, leibniz in _comm_pairs(grid, frame, spec,
                                                         v, k_max):
                err = _interior_l2(grid, direct - leibniz)
                scale = max(_interior_l2(grid, direct),
                            _interior_l2(grid, leibniz))
                # a commutator at round-off size relative to the field is an
                # exact zero (constant fields); its ratio carries no signal
                ratio = err / scale if scale > 1e-10 * field_scale else 0.0
                worst_err = max(worst_err, err)
                worst_ratio = max(worst_ratio, ratio)
                if level == 1:
                    rows.append({"field_id": spec.field_id,
                                 "quantity": quantity,
                                 "lhs": err, "rhs": scale, "ratio": ratio})
        per_grid_err.append(worst_err)
        per_grid_ratio.append(worst_ratio)
    decays = per_grid_err[1] <= per_grid_err[0] * 1.01
    passed = per_grid_ratio[1] <= tol and decays
    if not decays:
        notes.append("commutator disagreement did not shrink under "
                     "refinement")
    return InequalityReport(
        name="commutators", rows=rows, constant=per_grid_ratio[1],
        passed=passed,
        refinement={"worst_error": per_grid_err,
                    "worst_ratio": per_grid_ratio}, notes=notes)


# ---------------------------------------------------------------------------
# suite driver
# ---------------------------------------------------------------------------

CHECKS = (
    ("interpolation", check_interpolation),
    ("divcurl", check_divcurl),
    ("h2", check_h2),
    ("reductions", check_reductions),
    ("normal_analyticity", check_normal_analyticity),
    ("commutators", check_commutator_suite),
)


def _seeded_kwargs(seed):
    """Per-check field families drawn from ``seed``.

    A different seed changes the random fields (and hence the measured
    constants) but not which inequalities are checked, so pass/fail is
    seed-robust by construction.
    """
    if seed is None:
        return {}
    return {
        check_interpolation: {"fields": scalar_family(seed=seed)},
        check_divcurl: {"fields": tangential_vector_family(seed=seed + 1)},
        check_h2: {"fields": sobolev_family(seed=seed + 2)},
        check_reductions: {"fields": tangential_vector_family(seed=seed + 1)},
        check_commutator_suite: {"fields": commutator_family(seed=seed + 3)},
    }


def run_all(out_dir=None, workers=None, checks=None, seed=None):
    """Run every check (concurrently), optionally writing CSVs + summary."""
    selected = checks if checks is not None else [c for _, c in CHECKS]
    kwargs = _seeded_kwargs(seed)
    with ThreadPoolExecutor(max_workers=workers or len(selected)) as pool:
        reports = list(pool.map(lambda c: c(**kwargs.get(c, {})), selected))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        lines = []
        for rep in reports:
            rep.to_csv(os.path.join(out_dir, f"verify_{rep.name}.csv"))
            lines.append(rep.summary())
        with open(os.path.join(out_dir, "verify_summary.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return reports
