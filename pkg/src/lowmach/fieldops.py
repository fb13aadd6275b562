"""Differential operators, tangential calculus, and mixed derivative stacks.

Scalar fields are (n_r, n_theta) arrays; vector fields carry a leading
component axis.  Cartesian partials come from the grid's polar chain rule.
The tangential operator T acts through the frame coefficients b, and iterated
commutators of T with plain derivatives are available along two independent
routes: direct operator composition and the expanded first-order form, whose
agreement is one of the main consistency checks of the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np


# ---------------------------------------------------------------------------
# basic operators
# ---------------------------------------------------------------------------

def apply_partial(grid, f, axis):
    """Cartesian partial derivative, axis 0 = x, axis 1 = y."""
    if axis == 0:
        return grid.dx(f)
    if axis == 1:
        return grid.dy(f)
    raise ValueError("axis must be 0 or 1")


def grad(grid, f):
    return np.stack([grid.dx(f), grid.dy(f)])


def div(grid, v):
    return grid.dx(v[0]) + grid.dy(v[1])


def curl2d(grid, v):
    return grid.dx(v[1]) - grid.dy(v[0])


def laplacian(grid, f):
    """Laplacian in polar form (exact identity, no nested chain rule)."""
    return grid.drr(f) + grid.dr(f) / grid.R + grid.dtheta(grid.dtheta(f)) / grid.R ** 2


def boundary_normal_component(grid, v):
    """v . nu on the inner boundary ring; nu points into the body."""
    return -(v[0][0] * grid.cos_t[0] + v[1][0] * grid.sin_t[0])


def apply_tangential(grid, frame, f):
    """T f = b . grad f with the frame's tangential coefficients."""
    return frame.b[0] * grid.dx(f) + frame.b[1] * grid.dy(f)


def apply_x0(grid, frame, f):
    """X0 f = grad psi . grad f."""
    return frame.x0[0] * grid.dx(f) + frame.x0[1] * grid.dy(f)


def tangential_power(grid, frame, f, k):
    out = f
    for _ in range(k):
        out = apply_tangential(grid, frame, out)
    return out


# ---------------------------------------------------------------------------
# commutators
# ---------------------------------------------------------------------------

@dataclass
class FirstOrderOperator:
    """Operator c . grad with coefficient fields c of shape (2, n_r, n_theta)."""

    coeffs: np.ndarray

    def apply(self, grid, f):
        return self.coeffs[0] * grid.dx(f) + self.coeffs[1] * grid.dy(f)


def ad_tangential(grid, frame, op):
    """[T, Z] for a first-order Z: again first order, coefficients T c - Z b."""
    new = np.stack([
        apply_tangential(grid, frame, op.coeffs[0]) - op.apply(grid, frame.b[0]),
        apply_tangential(grid, frame, op.coeffs[1]) - op.apply(grid, frame.b[1]),
    ])
    return FirstOrderOperator(new)


def _partial_operator(grid, axis):
    c = np.zeros((2, grid.n_r, grid.n_theta))
    c[axis] = 1.0
    return FirstOrderOperator(c)


def commutator_direct(grid, frame, f, k, axis):
    """[T^k, d_axis] f by composing the discrete operators both ways."""
    return (tangential_power(grid, frame, apply_partial(grid, f, axis), k)
            - apply_partial(grid, tangential_power(grid, frame, f, k), axis))


def commutator_leibniz(grid, frame, f, k, axis):
    """[T^k, d_axis] f through the expanded sum of first-order operators.

    Each iterated bracket (ad T)^m applied to a plain derivative stays first
    order; its coefficient fields are built recursively and applied to the
    lower tangential powers of f with binomial weights.
    """
    out = np.zeros_like(f)
    op = _partial_operator(grid, axis)
    tpow = f
    tpowers = [f]
    for _ in range(k):
        tpow = apply_tangential(grid, frame, tpow)
        tpowers.append(tpow)
    for m in range(1, k + 1):
        op = ad_tangential(grid, frame, op)
        out = out + comb(k, m) * op.apply(grid, tpowers[k - m])
    return out


def commutator_div_direct(grid, frame, v, k):
    tkv = np.stack([tangential_power(grid, frame, v[0], k),
                    tangential_power(grid, frame, v[1], k)])
    return tangential_power(grid, frame, div(grid, v), k) - div(grid, tkv)


def commutator_div_leibniz(grid, frame, v, k):
    return (commutator_leibniz(grid, frame, v[0], k, 0)
            + commutator_leibniz(grid, frame, v[1], k, 1))


def commutator_curl_direct(grid, frame, v, k):
    tkv = np.stack([tangential_power(grid, frame, v[0], k),
                    tangential_power(grid, frame, v[1], k)])
    return tangential_power(grid, frame, curl2d(grid, v), k) - curl2d(grid, tkv)


def commutator_curl_leibniz(grid, frame, v, k):
    return (commutator_leibniz(grid, frame, v[1], k, 0)
            - commutator_leibniz(grid, frame, v[0], k, 1))


def _iter_partials(grid, f, alpha):
    out = f
    for _ in range(alpha[0]):
        out = grid.dx(out)
    for _ in range(alpha[1]):
        out = grid.dy(out)
    return out


def commutator_spatial_direct(grid, frame, f, alpha):
    """[d^alpha, T] f with alpha = (a_x, a_y), by double composition."""
    return (_iter_partials(grid, apply_tangential(grid, frame, f), alpha)
            - apply_tangential(grid, frame, _iter_partials(grid, f, alpha)))


def commutator_spatial_leibniz(grid, frame, f, alpha):
    """[d^alpha, T] f via the product rule on the coefficients of T."""
    out = np.zeros_like(f)
    for b1 in range(alpha[0] + 1):
        for b2 in range(alpha[1] + 1):
            if b1 == 0 and b2 == 0:
                continue
            w = comb(alpha[0], b1) * comb(alpha[1], b2)
            rest = (alpha[0] - b1, alpha[1] - b2)
            fx = grid.dx(_iter_partials(grid, f, rest))
            fy = grid.dy(_iter_partials(grid, f, rest))
            out = out + w * (_iter_partials(grid, frame.b[0], (b1, b2)) * fx
                             + _iter_partials(grid, frame.b[1], (b1, b2)) * fy)
    return out


# ---------------------------------------------------------------------------
# derivative stacks
# ---------------------------------------------------------------------------

class DerivativeStack:
    """Mixed derivatives d_x^j T^k (eps d_t)^i of a multi-component field.

    Entries are indexed by (j, k, i); each is an array of shape
    (n_comp, j + 1, n_r, n_theta) whose second axis runs over the
    symmetric-unique spatial components d_x^(j-m) d_y^m.  L2 norms weight the
    mixed components with their multinomial multiplicities so that the full
    symmetric tensor norm is recovered.
    """

    def __init__(self, grid, eps, n_max, i_max):
        self.grid = grid
        self.eps = float(eps)
        self.n_max = int(n_max)
        self.i_max = int(i_max)
        self.entries = {}

    def keys(self):
        return sorted(self.entries.keys())

    def entry(self, j, k, i):
        return self.entries[(j, k, i)]

    def l2(self, j, k, i):
        e = self.entries[(j, k, i)]
        total = 0.0
        for m in range(j + 1):
            total += comb(j, m) * self.grid.l2(e[:, m]) ** 2
        return float(np.sqrt(total))

    def sup(self, j, k, i, mask=None):
        e = self.entries[(j, k, i)]
        if mask is not None:
            e = e * mask
        return float(np.max(np.abs(e)))


def _spatial_pyramid(grid, base, j_max):
    """Canonical symmetric-unique partials of each component up to order j_max.

    Returns a list over j of arrays (n_comp, j + 1, n_r, n_theta); component m
    of order j is d_x^(j-m) d_y^m, built by one derivative per entry so mixed
    partials are stored once and order exchange is consistent by construction.
    """
    n_comp = base.shape[0]
    levels = [base[:, None, :, :]]
    for j in range(1, j_max + 1):
        prev = levels[-1]
        cur = np.empty((n_comp, j + 1, grid.n_r, grid.n_theta))
        for c in range(n_comp):
            cur[c, 0] = grid.dx(prev[c, 0])
            for m in range(1, j + 1):
                cur[c, m] = grid.dy(prev[c, m - 1])
        levels.append(cur)
    return levels


def build_stack(grid, frame, time_slices, eps, n_max=8, i_max=4):
    """Assemble the derivative stack from time-derivative slices.

    ``time_slices[i]`` holds the plain i-th time derivative of the field,
    shape (n_comp, n_r, n_theta); the stack scales slice i by eps^i and then
    applies tangential and spatial derivatives.  ``frame`` may be None when
    only k = 0 entries are needed.
    """
    time_slices = [np.asarray(s, dtype=float) for s in time_slices]
    i_cap = min(i_max, len(time_slices) - 1)
    stack = DerivativeStack(grid, eps, n_max, i_cap)
    for i in range(i_cap + 1):
        g = (eps ** i) * time_slices[i]
        k_cap = 0 if frame is None else n_max - i
        tk = g
        for k in range(k_cap + 1):
            if k > 0:
                tk = np.stack([apply_tangential(grid, frame, tk[c])
                               for c in range(tk.shape[0])])
            levels = _spatial_pyramid(grid, tk, n_max - i - k)
            for j, lev in enumerate(levels):
                stack.entries[(j, k, i)] = lev
    return stack


def spatial_stack(grid, field, n_max=8):
    """Spatial-only stack (k = i = 0) of a field, eps irrelevant."""
    field = np.asarray(field, dtype=float)
    if field.ndim == 2:
        field = field[None, :, :]
    return build_stack(grid, None, [field], eps=1.0, n_max=n_max, i_max=0)


def time_slices_from_history(states, dt, i_max, at=None):
    """Finite-difference time derivatives from a uniform state history.

    ``states`` is a list of (n_comp, n_r, n_theta) arrays at uniform spacing
    ``dt``; derivatives are taken at entry ``at`` (default: the middle of an
    odd-length history).  Seven states give 4th-order accuracy up to the
    fourth derivative at the middle; end evaluation drops one order.
    """
    from .grid import fd_weights
    n = len(states)
    if at is None:
        if n % 2 == 0:
            raise ValueError("need an odd number of states")
        at = n // 2
    if n < i_max + 1:
        raise ValueError("history too short for the requested derivative")
    t = np.arange(n) * dt
    w = fd_weights(t, t[at], i_max)
    arr = np.stack(states)
    return [np.tensordot(w[i], arr, axes=(0, 0)) for i in range(i_max + 1)]
