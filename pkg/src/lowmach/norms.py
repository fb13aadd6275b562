"""Weighted analytic norms over derivative stacks.

All norms are weighted sums of L2 norms of stack entries.  The primary family
uses a decaying radius tau(t) = tau0 - K t and factorial weights

    kappa^(j-1)+ * kappa_bar^k * tau^(n-3)+ / (n-3)!      (family A)
    kappa^j     * kappa_bar^k * tau^(n-2)+ / (n-2)!       (family B)

with n = j + k + i and the convention that the factorial of a negative
integer is 1.  The low-order sup Y and the spatial-only family X with radius
delta follow the same pattern.  Since kappa <= kappa_bar <= 1 and tau <= 1,
family B is dominated by family A term by term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import factorial


class ParameterError(ValueError):
    pass


def _pos_factorial(n):
    """(n)! extended by 1 on negative integers."""
    return factorial(n) if n > 0 else 1


@dataclass
class NormParams:
    """Weights and caps of the analytic norm family."""

    tau0: float = 0.5
    decay_rate: float = 1.25     # K in tau(t) = tau0 - K t
    kappa: float = 0.5
    kappa_bar: float = 1.0
    delta: float = 0.25
    n_max: int = 8
    i_max: int = 4

    def __post_init__(self):
        if not (0.0 < self.tau0 <= 1.0):
            raise ParameterError("tau0 must lie in (0, 1]")
        if self.decay_rate < 1.0:
            raise ParameterError("decay rate must be at least 1")
        if not (0.0 < self.kappa <= self.kappa_bar <= 1.0):
            raise ParameterError("need 0 < kappa <= kappa_bar <= 1")
        if not (0.0 < self.delta <= 1.0):
            raise ParameterError("delta must lie in (0, 1]")
        if self.n_max < 4 or self.i_max < 0:
            raise ParameterError("derivative caps out of range")

    @property
    def horizon(self):
        """Largest admissible time: tau may decay to half its initial value."""
        return self.tau0 / (2.0 * self.decay_rate)


def tau_at(params, t):
    """Decayed radius tau(t) = tau0 - K t on the admissible window."""
    if t < -1e-15 or t > params.horizon + 1e-12:
        raise ParameterError(
            f"t = {t} outside the admissible window [0, {params.horizon}]")
    return params.tau0 - params.decay_rate * t


@dataclass
class NormBreakdown:
    """Weighted-norm value with its per-entry and per-shell decomposition."""

    total: float
    terms: dict                  # (j, k, i) -> (weight, l2, weighted term)
    shells: dict                 # n -> shell sum
    tail_bound: float
    label: str = ""

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "k", "i", "weight", "l2", "term"])
            for (j, k, i) in sorted(self.terms):
                wt, l2, term = self.terms[(j, k, i)]
                w.writerow([j, k, i, f"{wt:.17g}", f"{l2:.17g}", f"{term:.17g}"])
            w.writerow([])
            w.writerow(["total", f"{self.total:.17g}"])
            w.writerow(["tail_bound", f"{self.tail_bound:.17g}"])


def _tail_from_shells(shells):
    """Geometric continuation of the last two derivative shells."""
    ns = sorted(shells)
    if len(ns) < 2:
        return 0.0
    s_prev, s_last = shells[ns[-2]], shells[ns[-1]]
    if s_last == 0.0:
        return 0.0
    if s_prev <= 0.0 or s_last >= s_prev:
        return float("inf")
    q = s_last / s_prev
    return float(s_last * q / (1.0 - q))


def _weighted_norm(stack, weight_fn, label):
    terms = {}
    shells = {}
    total = 0.0
    for (j, k, i) in stack.keys():
        w = weight_fn(j, k, i)
        if w is None:
            continue
        l2 = stack.l2(j, k, i)
        term = w * l2
        terms[(j, k, i)] = (w, l2, term)
        shells[j + k + i] = shells.get(j + k + i, 0.0) + term
        total += term
    return NormBreakdown(total, terms, shells, _tail_from_shells(shells), label)


def norm_A(stack, params, t=0.0):
    """Primary analytic norm at time t."""
    tau = tau_at(params, t)

    def weight(j, k, i):
        n = j + k + i
        if n > params.n_max or i > params.i_max:
            return None
        return (params.kappa ** max(j - 1, 0) * params.kappa_bar ** k
                * tau ** max(n - 3, 0) / _pos_factorial(n - 3))

    return _weighted_norm(stack, weight, "A")


def norm_B(stack, params, t=0.0):
    """Secondary norm, dominated by norm_A term by term."""
    tau = tau_at(params, t)

    def weight(j, k, i):
        n = j + k + i
        if n > params.n_max or i > params.i_max:
            return None
        return (params.kappa ** j * params.kappa_bar ** k
                * tau ** max(n - 2, 0) / _pos_factorial(n - 2))

    return _weighted_norm(stack, weight, "B")


def norm_Y(stack):
    """Largest unweighted L2 over derivative orders up to four."""
    best = 0.0
    for (j, k, i) in stack.keys():
        if j + k + i <= 4:
            best = max(best, stack.l2(j, k, i))
    return best


def norm_X(grid, fields, delta, n_max=8):
    """Spatial-only analytic norm with radius delta.

    ``fields`` is a component-stacked array; the spatial pyramid is built
    internally, so no frame or time history is required.
    """
    from .fieldops import spatial_stack
    stack = spatial_stack(grid, fields, n_max=n_max)

    def weight(j, k, i):
        return delta ** max(j - 3, 0) / _pos_factorial(j - 3)

    return _weighted_norm(stack, weight, "X")
