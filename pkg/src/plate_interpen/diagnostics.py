"""Energy ledger, space-time norms, and the regularization and Signorini limit studies."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .contact_law import eval_pk
from .grid_ops import BCKind, biharmonic_matrix
from .memory import frac_norm
from .models import LEDGER_COLUMNS, MEMBRANE, Trajectory, run, with_contact
from .scenario import (
    ContactConfig,
    GridConfig,
    InitialConfig,
    LoadConfig,
    ModelConfig,
    ModelKind,
    OutputConfig,
    Scenario,
    TimeConfig,
)
from .vonkarman import AiryOperator


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[h]) for h in header])


@dataclass
class EnergyLedger:
    rows: list

    @classmethod
    def of(cls, traj: Trajectory) -> "EnergyLedger":
        return cls(traj.ledger)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    @property
    def scale(self) -> np.ndarray:
        """Per-step energy scale ``max(|E_n|, |E_n+1|, |W|, |D|)``."""
        E = np.abs(self.column("total_energy"))
        scale = np.maximum(E[1:], E[:-1])
        for name in ("external_work", "viscous_dissipation", "memory_dissipation"):
            scale = np.maximum(scale, np.abs(self.column(name)[1:]))
        return np.maximum(scale, np.finfo(float).tiny)

    def relative_residuals(self) -> np.ndarray:
        return np.abs(self.column("balance_residual")[1:]) / self.scale

    def write(self, path) -> None:
        write_csv(path, LEDGER_COLUMNS, self.rows)


# -- space-time quantities -----------------------------------------------------


def _time_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    w[[0, -1]] *= 0.5
    return w


def contact_args(traj: Trajectory) -> np.ndarray:
    """``u + g`` at every time level on the contact nodes, shape ``(n_t, n_contact)``."""
    cs = [c for c in traj.model.contacts if c.kind == "foundation"]
    if not cs:
        return np.zeros((traj.x.shape[0], 0))
    c = cs[0]
    return (c.N @ traj.x.T).T + c.offset


def space_time_l2(a: np.ndarray, dt: float, cell: float) -> float:
    """Discrete L2(Q) norm of nodal values ``a`` of shape ``(n_t, n_nodes)``."""
    return math.sqrt(float(_time_weights(a.shape[0], dt) @ (cell * np.sum(a * a, axis=1))))


def space_time_l1(a: np.ndarray, dt: float, cell: float) -> float:
    return float(_time_weights(a.shape[0], dt) @ (cell * np.sum(np.abs(a), axis=1)))


def space_time_pairing(a: np.ndarray, b: np.ndarray, dt: float, cell: float) -> float:
    return float(_time_weights(a.shape[0], dt) @ (cell * np.sum(a * b, axis=1)))


@dataclass
class RunSummary:
    """What the studies need from one run; small enough to ship between processes."""

    ok: bool
    error: str = ""
    dt: float = 0.0
    cell: float = 0.0
    deflection: np.ndarray | None = None  # (n_t, nI) interior u
    contact_arg: np.ndarray | None = None  # (n_t, nI)
    contact_force: np.ndarray | None = None
    boundary_arg: np.ndarray | None = None  # normal displacements on edges
    boundary_force: np.ndarray | None = None
    boundary_weights: np.ndarray | None = None
    max_penetration: float = math.nan
    min_margin: float = math.nan


def summarize(traj: Trajectory) -> RunSummary:
    m = traj.model
    sl = m.blocks["w"]
    dt = traj.times[1] - traj.times[0]
    s = contact_args(traj)
    reg = m.contacts[0].law if m.contacts else None
    force = eval_pk(reg, s) if reg is not None else np.zeros_like(s)
    out = RunSummary(True, "", dt, m.grid.cell_area, traj.x[:, sl] + m.ring["w"], s, force)
    out.max_penetration = max(0.0, -float(s.min())) if s.size else 0.0
    out.min_margin = float(s.min() - reg.base.gamma) if s.size else math.inf
    bcs = [c for c in m.contacts if c.kind == "boundary"]
    if bcs:
        c = bcs[0]
        r = (c.N @ traj.x.T).T
        out.boundary_arg = r
        out.boundary_force = -eval_pk(c.law, -r)  # q_k(r) = -p_k(-r)
        out.boundary_weights = c.weights
    return out


def _run_summary(sc: Scenario) -> RunSummary:
    try:
        return summarize(run(sc))
    except Exception as exc:  # noqa: BLE001 - a failed run becomes a table row
        return RunSummary(False, f"{type(exc).__name__}: {exc}")


def max_workers() -> int:
    env = os.environ.get("PLATE_INTERPEN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def run_many(scenarios: list[Scenario], workers: int | None = None) -> list[RunSummary]:
    workers = max_workers() if workers is None else max(1, workers)
    workers = min(workers, len(scenarios))
    if workers <= 1:
        return [_run_summary(sc) for sc in scenarios]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_summary, scenarios))


def _distance(a: RunSummary, b: RunSummary) -> float:
    if not (a.ok and b.ok):
        return math.nan
    return space_time_l2(a.deflection - b.deflection, a.dt, a.cell)


# -- k study -------------------------------------------------------------------


K_STUDY_COLUMNS = ("k", "status", "max_penetration", "force_mass", "distance_to_previous")


def k_study(sc: Scenario, k_list, workers: int | None = None) -> list[dict]:
    ks = [int(k) for k in k_list]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_list must be strictly increasing")
    runs = run_many([with_contact(sc, k=k) for k in ks], workers)
    rows = []
    for i, (k, res) in enumerate(zip(ks, runs)):
        row = {"k": k, "status": "ok" if res.ok else res.error, "max_penetration": math.nan,
               "force_mass": math.nan, "distance_to_previous": math.nan}
        if res.ok:
            row["max_penetration"] = res.max_penetration
            row["force_mass"] = space_time_l1(res.contact_force, res.dt, res.cell)
        if i > 0:
            row["distance_to_previous"] = _distance(runs[i - 1], res)
        rows.append(row)
    return rows


# -- Signorini limit study -------------------------------------------------------


GAMMA_STUDY_COLUMNS = (
    "gamma",
    "status",
    "max_penetration",
    "complementarity",
    "boundary_complementarity",
    "distance_to_previous",
)


@dataclass
class SignoriniReport:
    rows: list
    refinement_error: float = math.nan

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def write(self, path) -> None:
        write_csv(path, GAMMA_STUDY_COLUMNS, self.rows)


def refined(sc: Scenario) -> Scenario:
    g = sc.grid
    return sc.replace(grid=GridConfig(2 * g.nx + 1, 2 * g.ny + 1, g.lx, g.ly))


def refinement_error(coarse: RunSummary, fine: RunSummary, sc: Scenario) -> float:
    """L2(Q) distance between a run and its h-refined twin, sampled on the coarse nodes."""
    if not (coarse.ok and fine.ok):
        return math.nan
    nx, ny = sc.grid.nx, sc.grid.ny
    fnx, fny = 2 * nx + 1, 2 * ny + 1
    f = fine.deflection.reshape(-1, fny, fnx)[:, 1::2, 1::2].reshape(fine.deflection.shape[0], -1)
    return space_time_l2(coarse.deflection - f, coarse.dt, coarse.cell)


def gamma_study(sc: Scenario, gamma_list, k: int | None = None, with_reference: bool = True,
                workers: int | None = None) -> SignoriniReport:
    gammas = [float(g) for g in gamma_list]
    if any(g >= 0 for g in gammas) or any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gamma_list must be negative and strictly increasing")
    kk = sc.contact.k if k is None else int(k)
    scen = [with_contact(sc, gamma=g, k=kk, delta0=None) for g in gammas]
    jobs = list(scen)
    if with_reference:
        jobs.append(refined(scen[-1]))
    runs = run_many(jobs, workers)
    ref = runs.pop() if with_reference else None
    rows = []
    for i, (g, res) in enumerate(zip(gammas, runs)):
        row = {"gamma": g, "status": "ok" if res.ok else res.error, "max_penetration": math.nan,
               "complementarity": math.nan, "boundary_complementarity": math.nan,
               "distance_to_previous": math.nan}
        if res.ok:
            row["max_penetration"] = res.max_penetration
            row["complementarity"] = abs(space_time_pairing(res.contact_force, res.contact_arg, res.dt, res.cell))
            if res.boundary_arg is not None:
                tw = _time_weights(res.boundary_arg.shape[0], res.dt)
                row["boundary_complementarity"] = abs(
                    float(tw @ (np.sum(res.boundary_force * res.boundary_arg * res.boundary_weights, axis=1)))
                )
            else:
                row["boundary_complementarity"] = 0.0
        if i > 0:
            row["distance_to_previous"] = _distance(runs[i - 1], res)
        rows.append(row)
    err = refinement_error(runs[-1], ref, scen[-1]) if with_reference else math.nan
    return SignoriniReport(rows, err)


# -- fractional norms ---------------------------------------------------------------


def frac_report(traj: Trajectory, alpha: float) -> dict:
    """H^alpha-in-time norms of the deflection (discrete H2 norm) and of the Airy function."""
    m = traj.model
    dt = traj.times[1] - traj.times[0]
    cell = m.grid.cell_area
    sl = m.blocks["w"]
    w = traj.x[:, sl]
    K = biharmonic_matrix(m.grid, m.scenario.model.bc)
    inner = cell * (K + sp.identity(m.grid.n_interior, format="csr"))
    out = {"deflection": frac_norm(w, alpha, dt, inner)}
    if any(ch.role == MEMBRANE and ch.weight.dense for ch in m.channels):
        op = AiryOperator(m.grid)
        phis = np.array([op.solve(op.bracket(wi, wi)) for wi in w])
        out["airy"] = frac_norm(phis, alpha, dt, cell * op.matrix)
    return out



# -- manufactured solution -----------------------------------------------------------

MMS_COLUMNS = ("sweep", "h", "dt", "max_error", "order")


def mms_scenario(nx: int, dt: float, T: float = 1.0, e0: float = 1.0, b0: float = 1.0, e1: float = 0.0,
                 lx: float = 1.0, ly: float = 1.0, bc: BCKind = BCKind.SIMPLY_SUPPORTED) -> Scenario:
    """Linear Kirchhoff plate driven so that ``u = cos(t) sin(pi x1/lx) sin(pi x2/ly)`` is exact."""
    lam = (math.pi**2 / lx**2 + math.pi**2 / ly**2) ** 2
    mode = f"sin(pi*x1/{lx!r})*sin(pi*x2/{ly!r})"
    f = f"({e0 * b0 * lam - 1.0!r}*cos(t) - {e1 * b0 * lam!r}*sin(t))*{mode}"
    ny = max(1, round((nx + 1) * ly / lx) - 1)
    return Scenario(
        name="mms",
        grid=GridConfig(nx, ny, lx, ly),
        time=TimeConfig(T=T, dt=dt),
        model=ModelConfig(kind=ModelKind.BIHARMONIC, bc=bc, e0=e0, e1=e1, b0=b0),
        contact=ContactConfig(enabled=False),
        loads=LoadConfig(f=f),
        initial=InitialConfig(u0=mode, u1=0.0),
        output=OutputConfig(snapshot_every=max(1, round(T / dt))),
    )


def mms_exact(sc: Scenario, times: np.ndarray) -> np.ndarray:
    X1, X2 = sc.grid.build().coords()
    mode = np.sin(np.pi * X1 / sc.grid.lx) * np.sin(np.pi * X2 / sc.grid.ly)
    return np.cos(times)[:, None, None] * mode[None]


def mms_error(sc: Scenario) -> float:
    """Max-norm error over all nodes and time levels."""
    traj = run(sc)
    return float(np.abs(traj.deflection() - mms_exact(sc, traj.times)).max())


def _mms_job(sc: Scenario) -> np.ndarray:
    return run(sc).deflection()


def _orders(errors) -> list[float]:
    e = np.asarray(errors, dtype=float)
    return [math.nan] + list(np.log2(e[:-1] / e[1:]))


@dataclass
class MMSReport:
    rows: list

    def orders(self, sweep: str) -> np.ndarray:
        return np.array([r["order"] for r in self.rows if r["sweep"] == sweep][1:], dtype=float)

    def order(self, sweep: str) -> float:
        """Observed order on the finest halving of one sweep."""
        return float(self.orders(sweep)[-1])

    def write(self, path) -> None:
        write_csv(path, MMS_COLUMNS, self.rows)


def mms_study(sc: Scenario, halvings: int = 3, workers: int | None = None) -> MMSReport:
    """Combined, spatial and temporal convergence sweeps of the manufactured solution.

    ``sc`` supplies the coarsest grid and step and the material constants.
    ``combined`` halves h and dt together and ``spatial`` halves h at the
    finest step; both measure the max-norm error against the exact solution.
    ``temporal`` stays on the coarsest grid and uses the max-norm distance
    between successive step sizes, which removes the spatial error exactly
    (both runs solve the same semi-discrete system).
    """
    m, g, T = sc.model, sc.grid, sc.time.T
    levels = range(halvings + 1)
    nxs = [(g.nx + 1) * 2**i - 1 for i in levels]
    dts = [sc.time.dt / 2**i for i in range(halvings + 2)]

    def make(nx, dt):
        return mms_scenario(nx, dt, T, m.e0, m.b0, m.e1, g.lx, g.ly, m.bc)

    sweeps = {
        "combined": [(nx, dt) for nx, dt in zip(nxs, dts)],
        "spatial": [(nx, dts[halvings]) for nx in nxs],
        "temporal": [(nxs[0], dt) for dt in dts],
    }
    jobs = sorted({p for pts in sweeps.values() for p in pts})
    sols = dict(zip(jobs, _map(_mms_job, [make(*p) for p in jobs], workers)))

    def exact_error(p):
        u = sols[p]
        times = p[1] * np.arange(u.shape[0])
        return float(np.abs(u - mms_exact(make(*p), times)).max())

    rows = []
    for name in ("combined", "spatial"):
        pts = sweeps[name]
        errs = [exact_error(p) for p in pts]
        for (nx, dt), err, order in zip(pts, errs, _orders(errs)):
            rows.append({"sweep": name, "h": g.lx / (nx + 1), "dt": dt, "max_error": err, "order": order})
    pts = sweeps["temporal"]
    diffs = [float(np.abs(sols[a] - sols[b][::2]).max()) for a, b in zip(pts, pts[1:])]
    for (nx, dt), err, order in zip(pts, diffs, _orders(diffs)):
        rows.append({"sweep": "temporal", "h": g.lx / (nx + 1), "dt": dt, "max_error": err, "order": order})
    return MMSReport(rows)


def _map(fn, items, workers):
    workers = max_workers() if workers is None else max(1, workers)
    workers = min(workers, len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
