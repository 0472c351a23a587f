import numpy as np
import pytest

from plate_interpen.grid_ops import BCKind, BoundaryCondition, Field, biharmonic
from plate_interpen.models import (
    PenetrationError,
    SimState,
    StepFailure,
    Stepper,
    build_model,
    residual,
    run,
    step,
)
from plate_interpen.scenario import ModelKind, loads_scenario

KIND_EXTRAS = {
    ModelKind.BIHARMONIC: [],
    ModelKind.VON_KARMAN: [],
    ModelKind.VON_KARMAN_ROT_INERTIA: ["model.g0=0.01"],
    ModelKind.REISSNER_MINDLIN: [],
    ModelKind.FULL_VON_KARMAN: ["model.a=0.01"],
}


def scenario(kind=ModelKind.BIHARMONIC, extra=(), nx=5, T=0.01, dt=1e-3):
    base = [
        f"model.kind=\"{kind.value}\"",
        f"grid.nx={nx}",
        f"grid.ny={nx}",
        f"time.T={T}",
        f"time.dt={dt}",
        "output.snapshot_every=1000",
    ]
    return loads_scenario("", base + KIND_EXTRAS[kind] + list(extra))


def drop(kind=ModelKind.BIHARMONIC, extra=()):
    opts = [
        "model.e0=0.1", "model.e1=0.01", "contact.kappa=100.0", "contact.gamma=-1.0", "contact.k=4",
        "loads.f=-50.0", "initial.u0=0.01", "initial.g=\"8*((x1-0.5)^2+(x2-0.5)^2)\"",
    ]
    return scenario(kind, opts + list(extra), nx=7, T=0.3, dt=2e-3)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_flat_state_is_equilibrium(kind):
    sc = scenario(kind, ["initial.u0=0.5", "model.e1=0.1"])
    model = build_model(sc)
    st = Stepper(model).initial_state()
    blocks = residual(model, st, st, sc.time.dt)
    assert set(blocks) == set(model.blocks)
    for vals in blocks.values():
        assert np.abs(vals).max() <= 1e-12
    new = step(model, st)
    assert np.abs(new.x - st.x).max() <= 1e-12


def _dense_biharmonic(grid, kind):
    zero = BoundaryCondition(kind, Field.constant(grid, 0.0))
    cols = []
    for i in range(grid.n_interior):
        e = np.zeros(grid.n_interior)
        e[i] = 1.0
        cols.append(biharmonic(Field(grid, grid.embed(e)), zero).interior.ravel())
    return np.array(cols).T


@pytest.mark.parametrize("bc", ["simply_supported", "clamped"])
def test_biharmonic_residual_matches_stencil(bc):
    e0, e1, b0, f, dt = 1.3, 0.2, 0.7, 2.5, 0.01
    sc = scenario(
        extra=[f"model.bc=\"{bc}\"", f"model.e0={e0}", f"model.e1={e1}", f"model.b0={b0}",
               f"loads.f={f}", "contact.enabled=false", "initial.u0=0.0"],
        nx=3, dt=dt,
    )
    model = build_model(sc)
    rng = np.random.default_rng(0)
    x0, v0, x1 = (rng.standard_normal(model.n) for _ in range(3))
    old = SimState(0.0, 0, x0, v0)
    new = SimState(dt, 1, x1, v0)
    got = residual(model, new, old, dt)["w"]
    K = _dense_biharmonic(model.grid, BCKind(bc))
    ref = (2 * (x1 - x0) / dt**2 - 2 * v0 / dt + b0 * K @ (e0 * 0.5 * (x0 + x1) + e1 * (x1 - x0) / dt) - f)
    assert np.abs(got - ref).max() <= 1e-10 * np.abs(ref).max()


@pytest.mark.parametrize("kind", list(ModelKind))
def test_mass_and_weights(kind):
    model = build_model(scenario(kind))
    M = model.mass.toarray()
    assert np.array_equal(M, M.T)
    assert np.all(np.linalg.eigvalsh(M) > 0)
    assert np.all(model.res_weights > 0)


def test_single_step_run():
    sc = scenario(T=1e-3, dt=1e-3)
    traj = run(sc)
    assert len(traj.times) == 2 and traj.snapshot_steps == [0, 1]
    assert len(traj.ledger) == 2


def test_free_damped_energy_decreases():
    sc = scenario(extra=["model.e1=0.05", "contact.enabled=false", "initial.u0=0.0",
                         "initial.u1=\"sin(pi*x1)*sin(pi*x2)\""], nx=7, T=0.05)
    traj = run(sc)
    energy = np.array([row["total_energy"] for row in traj.ledger])
    assert energy[0] > 0
    assert np.all(np.diff(energy) <= 1e-12 * energy[0])
    assert energy[-1] < energy[0]


def test_run_is_deterministic():
    sc = drop(ModelKind.VON_KARMAN)
    a, b = run(sc), run(sc)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)


def test_zero_membrane_reduces_to_biharmonic():
    a = run(drop(ModelKind.BIHARMONIC))
    b = run(drop(ModelKind.VON_KARMAN, ["model.membrane_scale=0.0"]))
    assert np.abs(a.deflection() - b.deflection()).max() <= 1e-10


@pytest.mark.parametrize(
    "kind, extra",
    [
        (ModelKind.BIHARMONIC, []),
        (ModelKind.VON_KARMAN, []),
        (ModelKind.REISSNER_MINDLIN, []),
        (ModelKind.FULL_VON_KARMAN, ["contact.boundary=true"]),
        (ModelKind.VON_KARMAN, ["model.memory=\"singular\"", "memory.q0=0.05", "memory.lambda=1.0"]),
    ],
)
def test_bounce_stays_admissible(kind, extra):
    sc = drop(kind, extra)
    traj = run(sc)
    gap = sc.nodal("initial", "g")
    u = traj.deflection()
    assert np.min(u + gap) > sc.contact.gamma
    assert np.min(u + gap) < 0  # the plate did enter the interpenetration zone
    assert min(row["contact_potential"] for row in traj.ledger) >= 0
    assert max(abs(row["balance_residual"]) for row in traj.ledger) <= 1e-8


@pytest.mark.parametrize("kind", [ModelKind.VON_KARMAN, ModelKind.REISSNER_MINDLIN, ModelKind.FULL_VON_KARMAN])
def test_newton_direction_matches_finite_difference(kind):
    """The linear solve inverts the Jacobian: J dx = R along the computed direction."""
    sc = drop(kind)
    model = build_model(sc)
    stepper = Stepper(model)
    st = stepper.initial_state()
    rng = np.random.default_rng(1)
    st = SimState(0.0, 0, st.x - 0.3 + 0.05 * rng.standard_normal(model.n), st.v, st.memory)
    x1 = st.x + 0.01 * rng.standard_normal(model.n)
    R, parts, cdiag = stepper.residual(st, x1, want_jac=True)
    assert any(np.any(s != 0) for _, s in cdiag)
    dx = stepper._solve(parts, cdiag, R)
    eps = 1e-6 / max(1.0, np.abs(dx).max())
    fd = (stepper.residual(st, x1 + eps * dx) - stepper.residual(st, x1 - eps * dx)) / (2 * eps)
    assert np.abs(fd - R).max() <= 1e-5 * np.abs(R).max()


def test_penetration_error_when_law_too_weak():
    sc = drop(extra=["contact.k=0", "contact.kappa=1.0", "loads.f=-5000.0"])
    with pytest.raises(PenetrationError, match="raise the regularization index"):
        run(sc)


def test_step_failure_reports_history():
    sc = drop(ModelKind.VON_KARMAN, ["solver.max_iter=1"])
    with pytest.raises(StepFailure) as info:
        run(sc)
    assert info.value.step >= 1 and info.value.residuals[0] > sc.solver.tol
    assert "residual history" in str(info.value)
