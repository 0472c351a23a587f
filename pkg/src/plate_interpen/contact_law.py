"""Barrier contact laws with a strict interpenetration bound and their Lipschitz caps.

A law ``p`` maps the signed distance ``x = u + g`` to a nonnegative contact
pressure.  It vanishes for ``x >= 0``, is nonincreasing, and blows up as ``x``
decreases to the bound ``gamma < 0``.  The regularization of index ``k``
replaces ``p`` below ``gamma + delta_k`` by its tangent line, giving a finite,
globally Lipschitz law ``p_k`` that agrees with ``p`` elsewhere.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class Family(str, enum.Enum):
    RATIONAL = "rational"
    LOG = "log"
    TABULATED = "tabulated"


def _out(values, like):
    """Return a float for scalar input, an array otherwise."""
    if np.ndim(like) == 0:
        return float(values)
    return values


@dataclass(frozen=True)
class ContactLaw:
    """Barrier law ``p`` with interpenetration bound ``gamma``.

    ``RATIONAL``: ``p(x) = kappa * (-x) / (x - gamma)`` on ``(gamma, 0)``.
    ``LOG``: ``p(x) = -kappa * log((x - gamma) / -gamma)`` on ``(gamma, 0)``.
    ``TABULATED``: piecewise-linear through ``table`` samples ``(x, p)`` with
    ``gamma < x <= 0`` and a ``c / (x - gamma)`` head below the first sample.
    The table must be convex, nonincreasing and end at ``(0, 0)``.
    """

    gamma: float
    family: Family = Family.RATIONAL
    kappa: float = 1.0
    table: tuple[tuple[float, float], ...] = ()
    _tx: np.ndarray = field(init=False, repr=False, compare=False)
    _tp: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not (math.isfinite(self.gamma) and self.gamma < 0):
            raise ValueError(f"gamma must be negative, got {self.gamma}")
        if self.family is Family.TABULATED:
            self._check_table()
        elif not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ValueError(f"kappa must be positive, got {self.kappa}")

    def _check_table(self):
        if len(self.table) < 2:
            raise ValueError("tabulated law needs at least two samples")
        tx = np.array([float(s[0]) for s in self.table])
        tp = np.array([float(s[1]) for s in self.table])
        if tx[0] <= self.gamma or np.any(np.diff(tx) <= 0):
            raise ValueError("table abscissae must increase strictly inside (gamma, 0]")
        if tx[-1] != 0.0 or tp[-1] != 0.0:
            raise ValueError("table must end at the sample (0, 0)")
        if np.any(np.diff(tp) > 0) or np.any(tp < 0):
            raise ValueError("table values must be nonnegative and nonincreasing")
        slopes = np.diff(tp) / np.diff(tx)
        head_slope = -tp[0] / (tx[0] - self.gamma)
        if tp[0] <= 0:
            raise ValueError("first table value must be positive (barrier head)")
        if np.any(np.diff(np.concatenate([[head_slope], slopes])) < -1e-12):
            raise ValueError("table must be convex (slopes nondecreasing)")
        object.__setattr__(self, "_tx", tx)
        object.__setattr__(self, "_tp", tp)

    # -- pointwise evaluation -------------------------------------------------

    def _barrier(self, x):
        """p on (gamma, 0); callers mask the other regions."""
        g = self.gamma
        if self.family is Family.RATIONAL:
            return self.kappa * (-x) / (x - g)
        if self.family is Family.LOG:
            return -self.kappa * np.log((x - g) / -g)
        tx, tp = self._tx, self._tp
        head = tp[0] * (tx[0] - g) / (x - g)
        return np.where(x < tx[0], head, np.interp(x, tx, tp))

    def _barrier_slope(self, x):
        g = self.gamma
        if self.family is Family.RATIONAL:
            return self.kappa * g / (x - g) ** 2
        if self.family is Family.LOG:
            return -self.kappa / (x - g)
        tx, tp = self._tx, self._tp
        head = -tp[0] * (tx[0] - g) / (x - g) ** 2
        idx = np.clip(np.searchsorted(tx, x, side="left") - 1, 0, len(tx) - 2)
        lin = (tp[idx + 1] - tp[idx]) / (tx[idx + 1] - tx[idx])
        return np.where(x <= tx[0], head, lin)

    def left_slope(self, x: float) -> float:
        """Left derivative at ``x`` in ``(gamma, 0)``; exact for tables (segment to the left)."""
        return float(self._barrier_slope(np.float64(x)))

    def barrier_integral(self, a, b):
        """Integral of p over ``[a, b]`` inside ``[gamma+, 0]``, cancellation-free."""
        g = self.gamma
        d = b - a
        if self.family is Family.RATIONAL:
            return self.kappa * (-d + (-g) * np.log1p(d / (a - g)))
        if self.family is Family.LOG:
            A = a - g
            return -self.kappa * (d * np.log(A / -g) + (b - g) * np.log1p(d / A) - d)
        tx, tp = self._tx, self._tp
        c = tp[0] * (tx[0] - g)
        ha, hb = np.minimum(a, tx[0]), np.minimum(b, tx[0])
        total = c * np.log1p((hb - ha) / (ha - g))
        for i in range(len(tx) - 1):
            lo, hi = np.clip(a, tx[i], tx[i + 1]), np.clip(b, tx[i], tx[i + 1])
            s = (tp[i + 1] - tp[i]) / (tx[i + 1] - tx[i])
            total = total + (hi - lo) * (tp[i] + s * (0.5 * (lo + hi) - tx[i]))
        return total


def eval_p(law: ContactLaw, x):
    """Contact pressure; ``+inf`` on the forbidden region ``x <= gamma``."""
    xa = np.asarray(x, dtype=float)
    inside = (xa > law.gamma) & (xa < 0)
    safe = np.where(inside, xa, 0.5 * law.gamma)
    val = np.where(inside, law._barrier(safe), 0.0)
    val = np.where(xa <= law.gamma, np.inf, val)
    return _out(val, x)


@dataclass(frozen=True)
class RegularizedLaw:
    base: ContactLaw
    k: int
    delta_k: float
    cap_value: float
    cap_slope: float

    @property
    def cap_point(self) -> float:
        return self.base.gamma + self.delta_k


def default_delta0(law: ContactLaw) -> float:
    return abs(law.gamma) / 2


def build_regularized(law: ContactLaw, k: int, delta0: float | None = None) -> RegularizedLaw:
    """Cap ``law`` at ``gamma + delta0 * 2**-k`` by its tangent line there."""
    if k < 0:
        raise ValueError(f"regularization index must be >= 0, got {k}")
    d0 = default_delta0(law) if delta0 is None else float(delta0)
    if d0 <= 0:
        raise ValueError("delta0 must be positive")
    delta = d0 * 2.0 ** (-k)
    xc = law.gamma + delta
    if xc >= 0:
        raise ValueError(f"gamma + delta_k = {xc} must stay negative")
    return RegularizedLaw(
        base=law,
        k=int(k),
        delta_k=delta,
        cap_value=float(law._barrier(np.float64(xc))),
        cap_slope=law.left_slope(xc),
    )


def _cap_line(reg: RegularizedLaw, x):
    return reg.cap_value + reg.cap_slope * (x - reg.cap_point)


def eval_pk(reg: RegularizedLaw, x):
    xa = np.asarray(x, dtype=float)
    p = np.asarray(eval_p(reg.base, xa))
    below = xa <= reg.cap_point
    val = np.where(below, np.minimum(p, _cap_line(reg, xa)), p)
    return _out(val, x)


def eval_dpk(reg: RegularizedLaw, x):
    """Derivative of the active branch; the cap slope at the junction."""
    xa = np.asarray(x, dtype=float)
    law = reg.base
    mid = (xa > reg.cap_point) & (xa < 0)
    safe = np.where(mid, xa, 0.5 * reg.cap_point)
    val = np.where(mid, law._barrier_slope(safe), 0.0)
    val = np.where(xa <= reg.cap_point, reg.cap_slope, val)
    return _out(val, x)


def integral_pk(reg: RegularizedLaw, a, b):
    """Signed integral of ``p_k`` from ``a`` to ``b``.

    Assumes the base law is convex on ``(gamma, 0)`` so the cap branch is the
    tangent line everywhere below the cap point (validated for tables, true
    for the closed-form families).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    sign = np.where(b >= a, 1.0, -1.0)
    xc = reg.cap_point
    # linear cap branch
    l1, h1 = np.minimum(lo, xc), np.minimum(hi, xc)
    lin = (h1 - l1) * (reg.cap_value + reg.cap_slope * (0.5 * (l1 + h1) - xc))
    # barrier branch
    l2, h2 = np.clip(lo, xc, 0.0), np.clip(hi, xc, 0.0)
    bar = reg.base.barrier_integral(l2, h2)
    return sign * (lin + bar)


def eval_Pk(reg: RegularizedLaw, s):
    """Potential ``P_k(s) = int_s^inf p_k``; zero for ``s >= 0``."""
    sa = np.asarray(s, dtype=float)
    val = integral_pk(reg, np.minimum(sa, 0.0), 0.0)
    return _out(val, s)


def mean_pk(reg: RegularizedLaw, a, b, tiny: float | None = None):
    """Average of ``p_k`` over ``[a, b]`` and its derivative in ``b``.

    The average makes the contact work over a time step equal the exact drop
    of ``P_k``.  The derivative switches to half the midpoint slope when the
    endpoints nearly coincide (the difference quotient cancels there).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    if tiny is None:
        tiny = 1e-6 * abs(reg.base.gamma)
    zero = d == 0.0
    dsafe = np.where(zero, 1.0, d)
    mean = np.where(zero, eval_pk(reg, a), integral_pk(reg, a, b) / dsafe)
    close = np.abs(d) < tiny
    slope = np.where(close, 0.5 * eval_dpk(reg, 0.5 * (a + b)),
                     (eval_pk(reg, b) - mean) / np.where(close, 1.0, d))
    return mean, slope


@dataclass(frozen=True)
class BoundaryLaw:
    """Mirrored law ``q(x) = -p(-x)`` for edge contact of in-plane displacements."""

    inner: ContactLaw


def eval_q(law: BoundaryLaw, x):
    xa = np.asarray(x, dtype=float)
    return _out(-np.asarray(eval_p(law.inner, -xa)), x)


def eval_qk(reg: RegularizedLaw, x):
    xa = np.asarray(x, dtype=float)
    return _out(-np.asarray(eval_pk(reg, -xa)), x)


def eval_Qk(reg: RegularizedLaw, r):
    """Boundary potential ``Q_k(r) = P_k(-r)``; zero for ``r <= 0``."""
    ra = np.asarray(r, dtype=float)
    return _out(eval_Pk(reg, -ra), r)
