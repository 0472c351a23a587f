"""Weakly singular memory kernel and product-integration quadrature of the memory operator.

The memory operator is ``d_m v(t) = int_0^t K(t - s) (v(t) - v(s)) ds`` with
``K(t) = t**(-2 alpha) q(t) + r(t)``, ``q = q0 exp(-lambda t)`` and
``r = r0 exp(-mu t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn


class MemorySmallnessError(ValueError):
    pass


@dataclass(frozen=True)
class MemoryKernel:
    alpha: float
    q0: float = 1.0
    lam: float = 1.0
    r0: float = 0.0
    mu: float = 1.0
    t0: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 1/2), got {self.alpha}")
        if self.q0 < 0 or self.r0 < 0:
            raise ValueError("kernel amplitudes q0, r0 must be nonnegative")
        if self.lam < 0 or self.mu < 0:
            raise ValueError("kernel decay rates must be nonnegative")
        if self.t0 <= 0:
            raise ValueError("positivity interval t0 must be positive")

    @property
    def singular(self) -> bool:
        return self.q0 > 0

    def q(self, t):
        return self.q0 * np.exp(-self.lam * np.asarray(t, dtype=float))

    def r(self, t):
        return self.r0 * np.exp(-self.mu * np.asarray(t, dtype=float))


def kernel_eval(kernel: MemoryKernel, t):
    ta = np.asarray(t, dtype=float)
    pos = ta > 0
    ts = np.where(pos, ta, 1.0)
    val = np.where(pos, ts ** (-2 * kernel.alpha) * kernel.q(ts) + kernel.r(ts), 0.0)
    return float(val) if np.ndim(t) == 0 else val


def total_mass(kernel: MemoryKernel) -> float:
    """``int_0^inf K`` in closed form."""
    mass = 0.0
    if kernel.q0 > 0:
        if kernel.lam <= 0:
            raise ValueError("total mass diverges: q does not decay (lambda = 0)")
        mass += kernel.q0 * gamma_fn(1 - 2 * kernel.alpha) * kernel.lam ** (2 * kernel.alpha - 1)
    if kernel.r0 > 0:
        if kernel.mu <= 0:
            raise ValueError("total mass diverges: r does not decay (mu = 0)")
        mass += kernel.r0 / kernel.mu
    return float(mass)


def smallness_check(kernel: MemoryKernel, e0: float, e1: float) -> bool:
    """True when the memory is small enough: ``int K < e0 / (2 e1)``."""
    if e1 <= 0:
        return True
    return total_mass(kernel) < e0 / (2 * e1)


def require_small_memory(kernel: MemoryKernel, e0: float, e1: float) -> None:
    if not smallness_check(kernel, e0, e1):
        raise MemorySmallnessError(
            f"memory smallness violated: total kernel mass {total_mass(kernel):.6g} "
            f">= e0/(2 e1) = {e0 / (2 * e1):.6g}; the memory quadratic form is not strongly monotone"
        )


def slab_weights(kernel: MemoryKernel, dt: float, n: int) -> np.ndarray:
    """Weights ``w(m)``, ``m = 1..n``, of the slab lying ``m`` steps back.

    The power-law factor is integrated exactly over the slab; ``q`` and ``r``
    are frozen at the slab midpoint.
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    m = np.arange(1, n + 1, dtype=float)
    e = 1.0 - 2.0 * kernel.alpha
    mid = (m - 0.5) * dt
    power = dt**e * (m**e - (m - 1.0) ** e) / e
    return kernel.q(mid) * power + kernel.r(mid) * dt


@dataclass
class HistoryBuffer:
    """Stored states at ``t_j = j * dt``; append-only."""

    dt: float
    states: list = field(default_factory=list)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("time step must be positive")

    def append(self, state) -> None:
        state = np.asarray(state, dtype=float)
        if self.states and state.shape != self.states[0].shape:
            raise ValueError("history states must share one shape")
        self.states.append(state.copy())

    def __len__(self) -> int:
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))


def dm_apply(buf: HistoryBuffer, current, kernel: MemoryKernel) -> np.ndarray:
    """Memory operator at ``t_n = len(buf) * dt`` given the state ``current`` there."""
    current = np.asarray(current, dtype=float)
    n = len(buf)
    if n == 0:
        return np.zeros_like(current)
    if buf.states[0].shape != current.shape:
        raise ValueError("current state does not match the history shape")
    hist = np.stack(buf.states + [current])
    mids = 0.5 * (hist[:-1] + hist[1:])
    w = slab_weights(kernel, buf.dt, n)[::-1]  # slab j lies n - j steps back
    return w.sum() * current - np.tensordot(w, mids, axes=1)


class MemoryIntegrator:
    """Incremental memory operator for a time stepper.

    Keeps the full history of a flat state vector.  For a candidate state at
    the next time level the memory operator is affine: ``c * S_next - h``.
    """

    def __init__(self, kernel: MemoryKernel, dt: float, n_steps: int, dim: int):
        self.kernel = kernel
        self.dt = dt
        self.w = slab_weights(kernel, dt, n_steps)
        self.states = np.zeros((n_steps + 1, dim))
        self.mids = np.zeros((n_steps, dim))
        self.n = 0
        self.current = np.zeros(dim)  # d_m at t_n

    def start(self, s0) -> None:
        self.states[0] = s0
        self.n = 0
        self.current = np.zeros_like(self.current)

    def affine_next(self) -> tuple[float, np.ndarray]:
        """``(c, h)`` with ``d_m(t_{n+1}) = c * S_{n+1} - h``."""
        n = self.n
        w = self.w
        total = w[: n + 1].sum()
        c = total - 0.5 * w[0]
        h = 0.5 * w[0] * self.states[n]
        if n > 0:
            h = h + w[n:0:-1] @ self.mids[:n]
        return c, h

    def accept(self, s_next, dm_next) -> None:
        n = self.n
        self.states[n + 1] = s_next
        self.mids[n] = 0.5 * (self.states[n] + s_next)
        self.current = dm_next
        self.n = n + 1

    def weighted_mids(self) -> tuple[float, np.ndarray]:
        """``(sum w, sum w_j * mid_j)`` for the current time level."""
        n = self.n
        if n == 0:
            return 0.0, np.zeros(self.states.shape[1])
        w = self.w[:n][::-1]
        return float(w.sum()), w @ self.mids[:n]


def frac_norm(series, alpha: float, dt: float, inner=None) -> float:
    """Discrete fractional Sobolev-in-time norm of a uniformly sampled series.

    ``series`` has time along axis 0.  ``inner`` is an optional symmetric
    weight (vector of diagonal weights or matrix) defining the state norm.
    Both integrals use the trapezoid rule; the singular diagonal of the
    double integral contributes zero.
    """
    v = np.asarray(series, dtype=float)
    if v.shape[0] < 2:
        raise ValueError("fractional norm needs at least two time samples")
    if dt <= 0:
        raise ValueError("time step must be positive")
    v = v.reshape(v.shape[0], -1)
    if inner is None:
        gram = v @ v.T
    elif np.ndim(inner) == 1:
        gram = (v * np.asarray(inner)) @ v.T
    else:
        gram = np.asarray(v @ (inner @ v.T))
    sq = np.diag(gram)
    n = v.shape[0]
    wt = np.full(n, dt)
    wt[[0, -1]] *= 0.5
    first = float(wt @ sq)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2 * gram, 0.0)
    idx = np.arange(n)
    gap = np.abs(idx[:, None] - idx[None, :]) * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(gap > 0, dist2 / gap ** (1 + 2 * alpha), 0.0)
    second = float(wt @ integrand @ wt)
    return math.sqrt(first + second)
