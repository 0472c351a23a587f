"""Plate models with limited-interpenetration contact and their time stepper.

Every model is written in one form.  The unknown vector ``x`` collects the
free nodal values, ``M`` is the (weighted) mass matrix, and each internal
force comes from a *channel*: a strain map ``S(x)`` that is affine or
quadratic, paired with a symmetric positive semidefinite weight ``D``.

* elastic channel: energy ``S . D S / 2``
* viscous channel: dissipation rate ``S' . D S'``
* memory channel: force ``J^T D d_m S`` with ``d_m`` the memory operator

Time stepping is the implicit midpoint rule in its energy-consistent form:
channel forces use ``J(x_mid)`` and the average of the end-point strains, the
contact force uses the average of ``p_k`` over the step.  Because the strain
maps are at most quadratic these choices make the discrete energy balance
exact up to the Newton tolerance.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .contact_law import RegularizedLaw, eval_Pk, eval_pk, mean_pk
from .grid_ops import (
    BCKind,
    Field,
    Grid,
    biharmonic_matrix,
    interior_to_full,
    trapezoid_weights,
    vertex_quadrature,
)
from .memory import MemoryIntegrator, MemoryKernel
from .scenario import MemoryKind, ModelKind, Scenario, validate_scenario
from .vonkarman import AiryOperator


class StepFailure(RuntimeError):
    """Newton did not converge within the iteration budget."""

    def __init__(self, step: int, t: float, history: list[float]):
        hist = ", ".join(f"{r:.3e}" for r in history[-8:])
        super().__init__(
            f"Newton failed at step {step} (t = {t:.6g}); residual history [{hist}]; "
            "try a smaller dt or a larger regularization index k"
        )
        self.step = step
        self.residuals = history


class PenetrationError(RuntimeError):
    """An accepted state violates ``u + g > gamma``; the capped law is too weak for the load."""


# -- strain maps and weights ---------------------------------------------------------


@dataclass
class QuadraticMap:
    """``S(x) = A x + c + sum_i coef_i (P_i x) * (Q_i x)`` (products elementwise)."""

    A: sp.csr_matrix
    c: np.ndarray | None = None
    terms: list = field(default_factory=list)  # (coef, P, Q)

    @property
    def linear(self) -> bool:
        return not self.terms

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def value(self, x: np.ndarray) -> np.ndarray:
        s = self.A @ x
        if self.c is not None:
            s = s + self.c
        for coef, P, Q in self.terms:
            s = s + coef * (P @ x) * (Q @ x)
        return s

    def jac_quad(self, x: np.ndarray) -> sp.csr_matrix:
        """Derivative of the quadratic part at ``x``."""
        out = sp.csr_matrix(self.A.shape)
        for coef, P, Q in self.terms:
            out = out + coef * (sp.diags(P @ x) @ Q + sp.diags(Q @ x) @ P)
        return out

    def jac(self, x: np.ndarray) -> sp.csr_matrix:
        if self.linear:
            return self.A
        return (self.A + self.jac_quad(x)).tocsr()

    def hess(self, y: np.ndarray) -> sp.csr_matrix:
        """``d/dx (J(x)^T y)``; constant in ``x``."""
        n = self.A.shape[1]
        out = sp.csr_matrix((n, n))
        for coef, P, Q in self.terms:
            out = out + coef * (P.T @ sp.diags(y) @ Q + Q.T @ sp.diags(y) @ P)
        return out


@dataclass
class SparseWeight:
    D: sp.csr_matrix

    dense = False

    def apply(self, s):
        return self.D @ s

    def sandwich(self, J, K):
        """``J^T D K``."""
        return (J.T @ (self.D @ K)).tocsr()


@dataclass
class AiryWeight:
    """``D = scale * K_c^{-1}`` with ``K_c`` the clamped biharmonic matrix."""

    scale: float
    op: AiryOperator

    dense = True

    def apply(self, s):
        return self.scale * self.op.solve(s)

    def sandwich(self, J, K):
        rhs = K.toarray() if sp.issparse(K) else np.asarray(K)
        return np.asarray(J.T @ (self.scale * self.op.solve(rhs)))


ELASTIC, MEMBRANE, VISCOUS, MEMORY = "elastic", "nonlinear_elastic", "viscous", "memory"


@dataclass
class Channel:
    name: str
    role: str  # ELASTIC, MEMBRANE, VISCOUS or MEMORY
    smap: QuadraticMap
    weight: object

    def __post_init__(self):
        self._lin_block = None

    def quad(self, s) -> float:
        return float(s @ self.weight.apply(s))

    def linear_block(self):
        """``A^T D A`` for affine maps, cached."""
        if self._lin_block is None:
            self._lin_block = self.weight.sandwich(self.smap.A, self.smap.A)
        return self._lin_block


@dataclass
class ContactSet:
    """Contact pairs: arguments ``s = N x + offset`` with quadrature weights.

    ``kind = 'foundation'`` acts with ``p_k(s)``; ``kind = 'boundary'`` is the
    mirrored edge law with potential ``Q_k(r) = P_k(-r)``.
    """

    kind: str
    N: sp.csr_matrix
    offset: np.ndarray
    weights: np.ndarray
    law: RegularizedLaw

    def args(self, x):
        return self.N @ x + self.offset

    def potential(self, x) -> float:
        s = self.args(x)
        if self.kind == "boundary":
            s = -s
        return float(self.weights @ eval_Pk(self.law, s))

    def force_and_slope(self, x0, x1):
        """Residual contribution and its diagonal derivative in ``N``-space."""
        a, b = self.args(x0), self.args(x1)
        if self.kind == "foundation":
            mean, slope = mean_pk(self.law, a, b)
            return -self.weights * mean, -self.weights * slope
        mean, slope = mean_pk(self.law, -a, -b)
        return self.weights * mean, -self.weights * slope

    def min_margin(self, x) -> float:
        """Smallest distance of a contact argument to the bound (positive when admissible)."""
        s = self.args(x)
        if self.kind == "boundary":
            s = -s
        return float(np.min(s) - self.law.base.gamma) if s.size else np.inf


@dataclass
class PlateModel:
    """Assembled discrete model; see the module docstring."""

    scenario: Scenario
    grid: Grid
    blocks: dict  # name -> slice into x
    mass: sp.csr_matrix
    res_weights: np.ndarray
    channels: list
    contacts: list
    load_fn: object  # t -> weak load vector
    kernel: MemoryKernel | None = None
    node_maps: dict = field(default_factory=dict)  # block name -> sparse map into full nodes
    ring: dict = field(default_factory=dict)  # block name -> constant added on the full grid

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    @property
    def dense(self) -> bool:
        return any(ch.weight.dense for ch in self.channels)

    def full(self, x: np.ndarray, block: str) -> np.ndarray:
        """Full node array of one block including its fixed boundary value."""
        vec = self.node_maps[block] @ x[self.blocks[block]]
        return vec.reshape(self.grid.shape) + self.ring.get(block, 0.0)

    def fields(self, x: np.ndarray) -> dict:
        return {name: Field(self.grid, self.full(x, name)) for name in self.blocks}


# -- assembly --------------------------------------------------------------------


def _voigt_weight(scale: float, nu: float, wq: np.ndarray) -> sp.csr_matrix:
    """Block weight of ``C(omega) . omega`` in components (11, 22, 12)."""
    c = scale / (1.0 - nu**2)
    W = sp.diags(wq)
    return (c * sp.bmat([[W, nu * W, None], [nu * W, W, None], [None, None, 2 * (1 - nu) * W]])).tocsr()


def _selector(n_block: int, start: int, n_total: int) -> sp.csr_matrix:
    return sp.csr_matrix(
        (np.ones(n_block), (np.arange(n_block), start + np.arange(n_block))), shape=(n_block, n_total)
    )


def _initial_vectors(model: PlateModel, sc: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Free unknowns of the initial displacement and velocity."""
    x0 = np.zeros(model.n)
    v0 = np.zeros(model.n)
    pairs = {
        "w": ("u0", "u1"),
        "phi1": ("phi0_1", "phi1_1"),
        "phi2": ("phi0_2", "phi1_2"),
        "uvec1": ("uvec0_1", "uvec1_1"),
        "uvec2": ("uvec0_2", "uvec1_2"),
    }
    for block, sl in model.blocks.items():
        name0, name1 = pairs[block]
        P = model.node_maps[block]
        f0 = sc.nodal("initial", name0).ravel() - model.ring.get(block, 0.0)
        f1 = sc.nodal("initial", name1).ravel()
        x0[sl] = P.T @ f0
        v0[sl] = P.T @ f1
    return x0, v0


def build_model(sc: Scenario) -> PlateModel:
    validate_scenario(sc)
    cfg = sc.model
    grid = sc.grid.build()
    bc = cfg.bc
    kind = cfg.kind
    hxhy = grid.cell_area
    nI = grid.n_interior
    E = interior_to_full(grid)
    trap = trapezoid_weights(grid)
    singular = cfg.memory is MemoryKind.SINGULAR
    kernel = sc.memory.build() if singular else None
    u_ring = float(sc.nodal("initial", "u0")[0, 0])

    blocks = {"w": slice(0, nI)}
    node_maps = {"w": E}
    ring = {"w": u_ring}
    if kind is ModelKind.REISSNER_MINDLIN:
        Ephi = E if bc is BCKind.CLAMPED else sp.identity(grid.n_nodes, format="csr")
        m = Ephi.shape[1]
        blocks["phi1"] = slice(nI, nI + m)
        blocks["phi2"] = slice(nI + m, nI + 2 * m)
        node_maps["phi1"] = node_maps["phi2"] = Ephi
    elif kind is ModelKind.FULL_VON_KARMAN:
        Ivec = sp.identity(grid.n_nodes, format="csr")
        m = grid.n_nodes
        blocks["uvec1"] = slice(nI, nI + m)
        blocks["uvec2"] = slice(nI + m, nI + 2 * m)
        node_maps["uvec1"] = node_maps["uvec2"] = Ivec
    n = max(sl.stop for sl in blocks.values())
    sel = {name: node_maps[name] @ _selector(sl.stop - sl.start, sl.start, n) for name, sl in blocks.items()}

    # lumped nodal weights of every unknown
    res_w = np.zeros(n)
    for name, sl in blocks.items():
        res_w[sl] = node_maps[name].T @ trap
    mass = sp.diags(res_w).tocsr()

    channels: list[Channel] = []
    visc_role = MEMORY if singular else VISCOUS

    def add_pair(name, smap, w_el, w_visc, el_role=ELASTIC):
        channels.append(Channel(name, el_role, smap, w_el))
        if cfg.e1 > 0 and w_visc is not None:
            channels.append(Channel(name + "_rate", visc_role, smap, w_visc))

    if kind in (ModelKind.BIHARMONIC, ModelKind.VON_KARMAN, ModelKind.VON_KARMAN_ROT_INERTIA):
        K = biharmonic_matrix(grid, bc)
        w_map = QuadraticMap(_selector(nI, 0, n).tocsr())
        add_pair(
            "bending",
            w_map,
            SparseWeight((cfg.e0 * cfg.b0 * hxhy) * K),
            SparseWeight((cfg.e1 * cfg.b0 * hxhy) * K),
        )
        if kind is not ModelKind.BIHARMONIC:
            op = AiryOperator(grid)
            S = _selector(nI, 0, n).tocsr()
            d11, d22, d12 = (d @ S for d in (op.d11, op.d22, op.d12))
            bmap = QuadraticMap(sp.csr_matrix((nI, n)), None, [(2.0, d11, d22), (-2.0, d12, d12)])
            s = cfg.membrane_scale
            if s > 0:
                add_pair(
                    "membrane",
                    bmap,
                    AiryWeight(0.5 * cfg.e0 * s * hxhy, op),
                    AiryWeight(0.5 * cfg.e1 * s * hxhy, op),
                    MEMBRANE,
                )
        if kind is ModelKind.VON_KARMAN_ROT_INERTIA:
            vq = vertex_quadrature(grid)
            Wq = sp.diags(vq.weights)
            G1, G2 = vq.G1 @ sel["w"], vq.G2 @ sel["w"]
            mass = (mass + cfg.g0 * (G1.T @ Wq @ G1 + G2.T @ Wq @ G2)).tocsr()

    elif kind is ModelKind.REISSNER_MINDLIN:
        vq = vertex_quadrature(grid)
        wq = vq.weights
        G1, G2, V = vq.G1, vq.G2, vq.V
        Sw, S1, S2 = sel["w"], sel["phi1"], sel["phi2"]
        shear = QuadraticMap(sp.vstack([G1 @ Sw + V @ S1, G2 @ Sw + V @ S2]).tocsr())
        wq2 = np.concatenate([wq, wq])
        add_pair("shear", shear, SparseWeight(sp.diags(cfg.e0 * wq2).tocsr()), SparseWeight(sp.diags(cfg.e1 * wq2).tocsr()))
        bend = QuadraticMap(sp.vstack([G1 @ S1, G2 @ S2, 0.5 * (G2 @ S1 + G1 @ S2)]).tocsr())
        add_pair(
            "bending",
            bend,
            SparseWeight(_voigt_weight(cfg.c_tilde, cfg.nu0, wq)),
            SparseWeight(_voigt_weight(cfg.c_tilde, cfg.nu1, wq)),
        )

    elif kind is ModelKind.FULL_VON_KARMAN:
        K = biharmonic_matrix(grid, BCKind.SIMPLY_SUPPORTED)
        w_map = QuadraticMap(_selector(nI, 0, n).tocsr())
        add_pair(
            "bending",
            w_map,
            SparseWeight((cfg.b * cfg.e0 * hxhy) * K),
            SparseWeight((cfg.b * cfg.e1 * hxhy) * K),
        )
        vq = vertex_quadrature(grid)
        wq = vq.weights
        G1, G2 = vq.G1, vq.G2
        U1, U2, Sw = sel["uvec1"], sel["uvec2"], sel["w"]
        Gw1, Gw2 = (G1 @ Sw).tocsr(), (G2 @ Sw).tocsr()
        Z = sp.csr_matrix(Gw1.shape)
        lin = sp.vstack([G1 @ U1, G2 @ U2, 0.5 * (G2 @ U1 + G1 @ U2)]).tocsr()
        terms = [
            (0.5, sp.vstack([Gw1, Z, Z]).tocsr(), sp.vstack([Gw1, Z, Z]).tocsr()),
            (0.5, sp.vstack([Z, Gw2, Z]).tocsr(), sp.vstack([Z, Gw2, Z]).tocsr()),
            (0.5, sp.vstack([Z, Z, Gw1]).tocsr(), sp.vstack([Z, Z, Gw2]).tocsr()),
        ]
        membrane = QuadraticMap(lin, None, terms)
        add_pair(
            "membrane",
            membrane,
            SparseWeight(_voigt_weight(cfg.e0 * cfg.c_tilde, cfg.nu0, wq)),
            SparseWeight(_voigt_weight(cfg.e1 * cfg.c_tilde, cfg.nu1, wq)),
            MEMBRANE,
        )
        Wq = sp.diags(wq)
        mass = (mass + cfg.a * (Gw1.T @ Wq @ Gw1 + Gw2.T @ Wq @ Gw2)).tocsr()

    # contact
    contacts: list[ContactSet] = []
    if sc.contact.enabled:
        law = sc.contact.regularized()
        g_int = E.T @ sc.nodal("initial", "g").ravel()
        N = _selector(nI, 0, n).tocsr()
        contacts.append(ContactSet("foundation", N, g_int + u_ring, np.full(nI, hxhy), law))
        if sc.contact.boundary and kind is ModelKind.FULL_VON_KARMAN:
            contacts.append(_boundary_contact(grid, blocks, n, law))

    load_fn = _make_loads(sc, grid, blocks, node_maps, n)
    model = PlateModel(
        scenario=sc,
        grid=grid,
        blocks=blocks,
        mass=mass,
        res_weights=res_w,
        channels=channels,
        contacts=contacts,
        load_fn=load_fn,
        kernel=kernel,
        node_maps=node_maps,
        ring=ring,
    )
    return model


def _boundary_contact(grid: Grid, blocks: dict, n: int, law: RegularizedLaw) -> ContactSet:
    """Normal displacement ``u . n`` at every (edge, node) pair with edge trapezoid weights."""
    nx, ny = grid.nx, grid.ny
    rows, cols, vals, wts = [], [], [], []
    r = 0

    def col(block, j, i):
        return blocks[block].start + j * (nx + 2) + i

    def edge_weights(count, h):
        w = np.full(count, h)
        w[[0, -1]] *= 0.5
        return w

    jj = np.arange(ny + 2)
    ii = np.arange(nx + 2)
    for i_edge, sign in ((0, -1.0), (nx + 1, 1.0)):
        for k, j in enumerate(jj):
            rows.append(r + k)
            cols.append(col("uvec1", j, i_edge))
            vals.append(sign)
        wts.append(edge_weights(ny + 2, grid.hy))
        r += ny + 2
    for j_edge, sign in ((0, -1.0), (ny + 1, 1.0)):
        for k, i in enumerate(ii):
            rows.append(r + k)
            cols.append(col("uvec2", j_edge, i))
            vals.append(sign)
        wts.append(edge_weights(nx + 2, grid.hx))
        r += nx + 2
    N = sp.csr_matrix((vals, (rows, cols)), shape=(r, n))
    return ContactSet("boundary", N, np.zeros(r), np.concatenate(wts), law)


def _make_loads(sc: Scenario, grid: Grid, blocks: dict, node_maps: dict, n: int):
    trap = trapezoid_weights(grid)
    X1, X2 = grid.coords()
    names = {"w": ("loads", "f"), "phi1": ("loads", "M1"), "phi2": ("loads", "M2"), "uvec1": ("loads", "F1"), "uvec2": ("loads", "F2")}
    items = []
    for block, sl in blocks.items():
        expr = sc.expr(*names[block])
        P = node_maps[block]
        items.append((sl, expr, P))
    static = not any(expr.time_dependent for _, expr, _ in items)
    cache = {}

    def load(t: float) -> np.ndarray:
        if static and "v" in cache:
            return cache["v"]
        out = np.zeros(n)
        for sl, expr, P in items:
            out[sl] = P.T @ (trap * expr.evaluate(X1, X2, t).ravel())
        if static:
            cache["v"] = out
        return out

    return load


# -- state, trajectory ---------------------------------------------------------


@dataclass
class SimState:
    """Free unknowns and velocities at ``t = step * dt``; memory histories are shared and append-only."""

    t: float
    step: int
    x: np.ndarray
    v: np.ndarray
    memory: dict = field(default_factory=dict)


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray  # (n_steps + 1, n)
    v: np.ndarray
    ledger: list
    snapshot_steps: list
    model: PlateModel = field(repr=False)
    newton_iterations: list = field(default_factory=list)

    def deflection(self) -> np.ndarray:
        """Full-node deflection ``u`` at every time level, shape ``(n_t, ny+2, nx+2)``."""
        sl = self.model.blocks["w"]
        E = self.model.node_maps["w"]
        vals = (E @ self.x[:, sl].T).T + self.model.ring["w"]
        return vals.reshape((-1,) + self.model.grid.shape)


# -- stepper ---------------------------------------------------------------------


class Stepper:
    """Energy-consistent implicit midpoint stepper with damped Newton."""

    def __init__(self, model: PlateModel, dt: float | None = None):
        self.model = model
        sc = model.scenario
        self.dt = float(sc.time.dt if dt is None else dt)
        self.tol = sc.solver.tol
        self.max_iter = sc.solver.max_iter
        self.n_steps = sc.time.n_steps
        self._base_lu = None
        self._base_key = None

    # memory bookkeeping ------------------------------------------------------
    def initial_state(self) -> SimState:
        x0, v0 = _initial_vectors(self.model, self.model.scenario)
        mem = {}
        for ch in self.model.channels:
            if ch.role == MEMORY:
                s0 = ch.smap.value(x0)
                integ = MemoryIntegrator(self.model.kernel, self.dt, self.n_steps, s0.size)
                integ.start(s0)
                integ.qmids = np.zeros(self.n_steps)
                mem[ch.name] = integ
        return SimState(0.0, 0, x0, v0, mem)

    # residual and Jacobian -------------------------------------------------
    def _prepare(self, state: SimState) -> dict:
        m = self.model
        ctx = {"S0": {}, "affine": {}}
        for ch in m.channels:
            ctx["S0"][ch.name] = ch.smap.value(state.x)
            if ch.role == MEMORY:
                ctx["affine"][ch.name] = state.memory[ch.name].affine_next()
        ctx["load"] = m.load_fn(state.t + 0.5 * self.dt)
        return ctx

    def _channel_terms(self, state, ctx, x1, want_jac: bool):
        dt = self.dt
        x0 = state.x
        xm = 0.5 * (x0 + x1)
        vm = (x1 - x0) / dt
        R = np.zeros_like(x1)
        jac_parts = []
        info = {}
        for ch in self.model.channels:
            smap, W = ch.smap, ch.weight
            S0 = ctx["S0"][ch.name]
            S1 = smap.value(x1)
            Jm = smap.jac(xm)
            if ch.role in (ELASTIC, MEMBRANE):
                y = W.apply(0.5 * (S0 + S1))
            elif ch.role == VISCOUS:
                Sdot = (S1 - S0) / dt
                y = W.apply(Sdot)
            else:
                c, h = ctx["affine"][ch.name]
                dm1 = c * S1 - h
                y = W.apply(0.5 * (state.memory[ch.name].current + dm1))
                info[ch.name] = (S1, dm1, y)
            R += Jm.T @ y
            if not want_jac:
                continue
            if smap.linear:
                blk = ch.linear_block()
                scale = {ELASTIC: 0.5, MEMBRANE: 0.5, VISCOUS: 1.0 / dt}.get(ch.role)
                if scale is None:
                    scale = 0.5 * ctx["affine"][ch.name][0]
                jac_parts.append((scale, blk))
                continue
            H = 0.5 * smap.hess(y)
            if ch.role in (ELASTIC, MEMBRANE):
                inner = 0.5 * smap.jac(x1)
            elif ch.role == VISCOUS:
                inner = 0.5 * smap.jac_quad(vm) + Jm / dt
            else:
                inner = 0.5 * ctx["affine"][ch.name][0] * smap.jac(x1)
            jac_parts.append(H)
            jac_parts.append(W.sandwich(Jm, inner))
        return R, jac_parts, info

    def residual(self, state: SimState, x1: np.ndarray, ctx: dict | None = None, want_jac: bool = False):
        """Weak residual at the candidate ``x1`` (and optionally its Jacobian parts)."""
        m = self.model
        dt = self.dt
        if ctx is None:
            ctx = self._prepare(state)
        R, jac_parts, _ = self._channel_terms(state, ctx, x1, want_jac)
        R += m.mass @ (2.0 * (x1 - state.x) / dt**2 - 2.0 * state.v / dt)
        R -= ctx["load"]
        contact_diag = []
        for cs in m.contacts:
            force, slope = cs.force_and_slope(state.x, x1)
            R += cs.N.T @ force
            contact_diag.append((cs, slope))
        if want_jac:
            return R, jac_parts, contact_diag
        return R

    def strong(self, R: np.ndarray) -> np.ndarray:
        return R / self.model.res_weights

    def _solve(self, jac_parts, contact_diag, R):
        m = self.model
        base = 2.0 / self.dt**2 * m.mass
        active = [(cs, s) for cs, s in contact_diag if np.any(s != 0)]
        linear = all(isinstance(p, tuple) for p in jac_parts)
        if linear and not active:
            # constant Jacobian: reuse the factorization while the scales repeat
            key = tuple((id(blk), scale) for scale, blk in jac_parts)
            if self._base_key != key:
                J = base + sum((scale * blk for scale, blk in jac_parts), sp.csr_matrix(base.shape))
                self._base_lu = spla.splu(sp.csc_matrix(J))
                self._base_key = key
            return self._base_lu.solve(R)
        dense = self.model.dense
        J = base.toarray() if dense else base
        for p in jac_parts:
            if isinstance(p, tuple):
                p = p[0] * p[1]
            if dense and sp.issparse(p):
                p = p.toarray()
            J = J + p
        for cs, s in active:
            extra = cs.N.T @ sp.diags(s) @ cs.N
            J = J + (extra.toarray() if dense else extra)
        if dense:
            return sla.solve(np.asarray(J), R, check_finite=False)
        return spla.splu(sp.csc_matrix(J)).solve(R)

    def step(self, state: SimState) -> tuple[SimState, dict]:
        dt = self.dt
        ctx = self._prepare(state)
        x1 = state.x + dt * state.v
        history = []
        converged = False
        R, parts, cdiag = self.residual(state, x1, ctx, want_jac=True)
        norm = float(np.max(np.abs(self.strong(R))))
        history.append(norm)
        it = 0
        while it < self.max_iter:
            if norm <= self.tol:
                converged = True
                break
            dx = -self._solve(parts, cdiag, R)
            it += 1
            lam = 1.0
            scale = max(1.0, float(np.max(np.abs(x1))))
            tiny = float(np.max(np.abs(dx))) <= 1e-13 * scale
            for _ in range(30):
                xt = x1 + lam * dx
                Rt, pt, ct = self.residual(state, xt, ctx, want_jac=True)
                nt = float(np.max(np.abs(self.strong(Rt))))
                if np.isfinite(nt) and (nt < norm or tiny):
                    break
                lam *= 0.5
            else:
                # no decrease: accept only a round-off level update
                if float(np.max(np.abs(dx))) <= 1e-10 * scale:
                    converged = True
                    break
                raise StepFailure(state.step + 1, state.t + dt, history)
            x1, R, parts, cdiag, norm = xt, Rt, pt, ct, nt
            history.append(norm)
            if tiny or (lam == 1.0 and float(np.max(np.abs(dx))) <= 1e-12 * scale):
                converged = True
                break
        if not converged and norm > self.tol:
            raise StepFailure(state.step + 1, state.t + dt, history)
        return self._accept(state, ctx, x1), {"iterations": it, "residual": norm, "history": history}

    def _accept(self, state: SimState, ctx: dict, x1: np.ndarray) -> SimState:
        m = self.model
        dt = self.dt
        v1 = 2.0 * (x1 - state.x) / dt - state.v
        _, _, info = self._channel_terms(state, ctx, x1, False)
        for ch in m.channels:
            if ch.role == MEMORY:
                S1, dm1, _ = info[ch.name]
                integ = state.memory[ch.name]
                n = integ.n
                integ.accept(S1, dm1)
                integ.qmids[n] = ch.quad(integ.mids[n])
        new = SimState(state.t + dt, state.step + 1, x1, v1, state.memory)
        for cs in m.contacts:
            if cs.min_margin(x1) <= 0:
                raise PenetrationError(
                    f"penetration bound violated at step {new.step} (t = {new.t:.6g}): "
                    "the capped law is too weak for this load; raise the regularization index k"
                )
        return new


# -- energy bookkeeping ----------------------------------------------------------


LEDGER_COLUMNS = (
    "t",
    "kinetic",
    "elastic",
    "nonlinear_elastic",
    "contact_potential",
    "boundary_potential",
    "memory_energy",
    "viscous_dissipation",
    "memory_dissipation",
    "external_work",
    "total_energy",
    "balance_residual",
)


def memory_energy(ch: Channel, integ: MemoryIntegrator) -> float:
    """``sum_j w_j q(S_n - mid_j) / 2`` with ``q(z) = z . D z``."""
    n = integ.n
    if n == 0:
        return 0.0
    w = integ.w[:n][::-1]
    Sn = integ.states[n]
    H = w @ integ.mids[:n]
    val = w.sum() * ch.quad(Sn) - 2.0 * float(Sn @ ch.weight.apply(H)) + float(w @ integ.qmids[:n])
    return 0.5 * val


def energy_levels(model: PlateModel, state: SimState) -> dict:
    x, v = state.x, state.v
    out = {"kinetic": 0.5 * float(v @ (model.mass @ v)), "elastic": 0.0, "nonlinear_elastic": 0.0}
    for ch in model.channels:
        if ch.role in (ELASTIC, MEMBRANE):
            out[ch.role] += 0.5 * ch.quad(ch.smap.value(x))
    out["contact_potential"] = sum(cs.potential(x) for cs in model.contacts if cs.kind == "foundation")
    out["boundary_potential"] = sum(cs.potential(x) for cs in model.contacts if cs.kind == "boundary")
    out["memory_energy"] = sum(
        memory_energy(ch, state.memory[ch.name]) for ch in model.channels if ch.role == MEMORY
    )
    return out


def ledger_row(model: PlateModel, old: SimState, new: SimState, dt: float, levels_old: dict | None = None,
               memory_work: float = 0.0) -> dict:
    """One row of the energy balance over ``[old.t, new.t]``."""
    lv0 = energy_levels(model, old) if levels_old is None else levels_old
    lv1 = energy_levels(model, new)
    dx = new.x - old.x
    visc = 0.0
    for ch in model.channels:
        if ch.role == VISCOUS:
            Sdot = (ch.smap.value(new.x) - ch.smap.value(old.x)) / dt
            visc += dt * ch.quad(Sdot)
    work = float(model.load_fn(old.t + 0.5 * dt) @ dx)
    mem_diss = memory_work - (lv1["memory_energy"] - lv0["memory_energy"])
    e0 = sum(lv0.values())
    e1 = sum(lv1.values())
    eps = (e1 - e0) + visc + mem_diss - work
    row = {"t": new.t, **lv1, "viscous_dissipation": visc, "memory_dissipation": mem_diss,
           "external_work": work, "total_energy": e1, "balance_residual": eps}
    return row


def initial_ledger_row(model: PlateModel, state: SimState) -> dict:
    lv = energy_levels(model, state)
    return {"t": state.t, **lv, "viscous_dissipation": 0.0, "memory_dissipation": 0.0,
            "external_work": 0.0, "total_energy": sum(lv.values()), "balance_residual": 0.0}


def _memory_work(model: PlateModel, old_x: np.ndarray, new: SimState, prev_current: dict) -> float:
    """``(S1 - S0) . D (d_m S)_mid`` summed over memory channels."""
    total = 0.0
    for ch in model.channels:
        if ch.role != MEMORY:
            continue
        integ = new.memory[ch.name]
        n = integ.n
        dS = integ.states[n] - integ.states[n - 1]
        mid = 0.5 * (prev_current[ch.name] + integ.current)
        total += float(dS @ ch.weight.apply(mid))
    return total


# -- public API --------------------------------------------------------------------


def residual(model: PlateModel, state_new: SimState, state_old: SimState, dt: float) -> dict:
    """Strong-form residual blocks of the step ``state_old -> state_new``."""
    stepper = Stepper(model, dt)
    R = stepper.strong(stepper.residual(state_old, state_new.x))
    return {name: R[sl] for name, sl in model.blocks.items()}


def step(model: PlateModel, state: SimState, dt: float | None = None) -> SimState:
    return Stepper(model, dt).step(state)[0]


def run(scenario: Scenario, model: PlateModel | None = None) -> Trajectory:
    """Advance the scenario to its final time and record states and ledger rows."""
    model = build_model(scenario) if model is None else model
    stepper = Stepper(model)
    state = stepper.initial_state()
    n_steps = stepper.n_steps
    xs = np.zeros((n_steps + 1, model.n))
    vs = np.zeros((n_steps + 1, model.n))
    xs[0], vs[0] = state.x, state.v
    ledger = [initial_ledger_row(model, state)]
    levels = energy_levels(model, state)
    iters = []
    every = scenario.output.snapshot_every
    snaps = [0]
    for k in range(n_steps):
        prev_current = {name: integ.current.copy() for name, integ in state.memory.items()}
        old = SimState(state.t, state.step, state.x, state.v, state.memory)
        new, info = stepper.step(state)
        mwork = _memory_work(model, old.x, new, prev_current) if prev_current else 0.0
        row = ledger_row(model, old, new, stepper.dt, levels, mwork)
        levels = {key: row[key] for key in ("kinetic", "elastic", "nonlinear_elastic", "contact_potential",
                                            "boundary_potential", "memory_energy")}
        ledger.append(row)
        iters.append(info["iterations"])
        xs[k + 1], vs[k + 1] = new.x, new.v
        if (k + 1) % every == 0 or k + 1 == n_steps:
            snaps.append(k + 1)
        state = new
    times = stepper.dt * np.arange(n_steps + 1)
    return Trajectory(times, xs, vs, ledger, snaps, model, iters)


def with_contact(sc: Scenario, **changes) -> Scenario:
    return sc.replace(contact=dataclasses.replace(sc.contact, **changes))
