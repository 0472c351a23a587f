import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plate_interpen.expression import ExpressionError, FieldExpression, parse_expression
from plate_interpen.memory import MemoryKernel, total_mass
from plate_interpen.scenario import (
    ContactConfig,
    KernelConfig,
    MemoryKind,
    ModelConfig,
    ModelKind,
    Scenario,
    ScenarioError,
    dumps_scenario,
    loads_scenario,
    parse_scenario,
    save_scenario,
    scenario_to_dict,
    validate_scenario,
)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


# -- expressions -----------------------------------------------------------------


@pytest.mark.parametrize(
    "src, expected",
    [
        ("1 + 2 * 3", 7.0),
        ("2 ^ 3 ^ 2", 512.0),
        ("-2 ^ 2", -4.0),
        ("(-2) ^ 2", 4.0),
        ("2 ^ -1", 0.5),
        ("8 / 4 / 2", 1.0),
        ("1 - 2 - 3", -4.0),
        ("sin(pi / 2) + cos(0) + exp(0)", 3.0),
        ("1.5e1 + .5", 15.5),
    ],
)
def test_expression_values(src, expected):
    assert FieldExpression(src).evaluate(0.0, 0.0) == pytest.approx(expected, rel=1e-15)


def test_expression_variables():
    e = parse_expression("x1 * x2 + t")
    x1 = np.array([[1.0, 2.0]])
    x2 = np.array([[3.0, 4.0]])
    assert np.array_equal(e.evaluate(x1, x2, 0.5), np.array([[3.5, 8.5]]))
    assert e.time_dependent and not parse_expression("x1").time_dependent
    assert np.array_equal(FieldExpression.of(2.5).evaluate(x1, x2), np.full((1, 2), 2.5))


@pytest.mark.parametrize(
    "src, col",
    [("1 +", 4), ("foo(1)", 1), ("2 * (3", 7), ("1 $ 2", 3), ("sin 2", 5), ("3 4", 3)],
)
def test_expression_errors_report_column(src, col):
    with pytest.raises(ExpressionError) as info:
        FieldExpression(src)
    assert f"column {col}" in str(info.value)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-100, 100), b=st.floats(0.5, 100), c=st.floats(-5, 5))
def test_expression_matches_python(a, b, c):
    src = f"({a!r}) + ({b!r}) * ({c!r}) - ({a!r}) / ({b!r})"
    assert FieldExpression(src).evaluate(0.0, 0.0) == pytest.approx(a + b * c - a / b, rel=1e-12, abs=1e-12)


# -- scenarios -------------------------------------------------------------------


def test_minimal_scenario_fills_defaults():
    sc = parse_scenario(SCENARIOS / "minimal.toml")
    assert sc.model.kind is ModelKind.BIHARMONIC
    assert sc.grid.nx == 15 and sc.time.dt == 1e-3
    assert sc.contact.enabled and sc.contact.gamma < 0


def test_bundled_scenarios_validate():
    files = sorted(SCENARIOS.glob("*.toml"))
    assert len(files) >= 12
    for f in files:
        validate_scenario(parse_scenario(f))


def test_roundtrip_bundled(tmp_path):
    for f in SCENARIOS.glob("*.toml"):
        sc = parse_scenario(f)
        assert loads_scenario(dumps_scenario(sc)) == sc
        out = tmp_path / f.name
        save_scenario(sc, out)
        assert parse_scenario(out) == sc


@settings(max_examples=30, deadline=None)
@given(
    kind=st.sampled_from(list(ModelKind)),
    memory=st.sampled_from(list(MemoryKind)),
    e0=st.floats(0.1, 10),
    ratio=st.floats(0.01, 0.5),
    gamma=st.floats(-5, -0.01),
    k=st.integers(0, 20),
    nu=st.floats(-0.45, 0.45),
)
def test_roundtrip_property(kind, memory, e0, ratio, gamma, k, nu):
    model = ModelConfig(kind=kind, memory=memory, e0=e0, e1=ratio * e0, nu=nu, nu0=nu, nu1=nu, g0=0.1, a=0.1)
    kernel = KernelConfig(alpha=0.25, q0=0.05, lam=2.0) if memory is MemoryKind.SINGULAR else None
    sc = Scenario(name="p", model=model, memory=kernel, contact=ContactConfig(gamma=gamma, k=k))
    validate_scenario(sc)
    assert loads_scenario(dumps_scenario(sc)) == sc
    assert scenario_to_dict(loads_scenario(dumps_scenario(sc))) == scenario_to_dict(sc)


def _expect_error(text, invariant, overrides=None):
    with pytest.raises(ScenarioError) as info:
        loads_scenario(text, overrides)
    assert info.value.invariant == invariant
    assert f"[{invariant}]" in str(info.value)
    return info.value


def test_positive_gamma_rejected():
    err = _expect_error("[contact]\ngamma = 0.1\n", "negative interpenetration bound")
    assert "gamma must be negative" in str(err)


def test_overrides_applied_before_validation():
    sc = loads_scenario("", ["contact.k=7", "model.e0=2.5", "name=\"x\"", "initial.g=\"x1*x2\""])
    assert sc.contact.k == 7 and sc.model.e0 == 2.5 and sc.name == "x" and sc.initial.g == "x1*x2"
    _expect_error("", "negative interpenetration bound", ["contact.gamma=1"])
    _expect_error("", "override syntax", ["contact.k"])


def test_smallness_threshold_rejected():
    # q0 placed at the closed-form threshold total_mass = e0 / (2 e1)
    e0, e1, alpha, lam = 1.0, 0.5, 0.25, 1.0
    q0 = (e0 / (2 * e1)) / total_mass(MemoryKernel(alpha=alpha, q0=1.0, lam=lam)) * (1 + 1e-12)
    assert total_mass(MemoryKernel(alpha=alpha, q0=q0, lam=lam)) >= e0 / (2 * e1)
    text = (
        f"[model]\nmemory = \"singular\"\ne0 = {e0}\ne1 = {e1}\n"
        f"[memory]\nalpha = {alpha}\nq0 = {q0!r}\nlambda = {lam}\n"
    )
    err = _expect_error(text, "memory smallness")
    assert "e0/(2 e1)" in str(err)
    ok = text.replace(f"q0 = {q0!r}", f"q0 = {0.99 * q0!r}")
    assert loads_scenario(ok).memory.q0 == pytest.approx(0.99 * q0)


@pytest.mark.parametrize(
    "text, invariant",
    [
        ("[initial]\nu0 = 0.0\n", "initial deflection bounded away from zero"),
        ("[initial]\nu0 = \"1 + x1\"\n", "constant boundary trace"),
        ("[initial]\ng = -0.1\n", "nonnegative gap"),
        ("[model]\nkind = \"full_von_karman\"\nbc = \"clamped\"\na = 1.0\n", "simply supported full von Karman plate"),
        ("[model]\nkind = \"full_von_karman\"\n", "positive full von Karman constants"),
        ("[model]\nkind = \"von_karman_rot_inertia\"\n", "positive rotation inertia"),
        ("[model]\nnu = 1.2\n", "Poisson ratio range"),
        ("[model]\nkind = \"reissner_mindlin\"\nnu0 = 0.7\n", "Poisson ratio range"),
        ("[model]\nmemory = \"singular\"\ne1 = 0.1\n", "memory kernel present"),
        ("[model]\nmemory = \"singular\"\ne1 = 0.1\n[memory]\nalpha = 0.25\nq0 = 0.0\nr0 = 0.1\n", "singular kernel"),
        ("[contact]\nboundary = true\n", "boundary contact model"),
        ("[loads]\nf = \"1 / (x1 - x1)\"\n", "finite field values"),
        ("[loads]\nf = \"sin(\"\n", "field expression syntax"),
        ("[time]\ndt = 0.0\n", "positive time step"),
        ("[grid]\nnx = 2\n", "grid size"),
        ("[bogus]\nx = 1\n", "known sections"),
        ("[model]\ncolor = 1\n", "known keys"),
        ("[model\n", "TOML syntax"),
    ],
)
def test_validation_errors_name_invariant(text, invariant):
    _expect_error(text, invariant)


def test_toml_error_has_line_and_column():
    err = _expect_error("name = \"a\"\n[model]\nkind = = 3\n", "TOML syntax")
    assert "line 3" in str(err) and "column" in str(err)


def test_missing_file():
    with pytest.raises(ScenarioError) as info:
        parse_scenario("/nonexistent/scenario.toml")
    assert info.value.invariant == "readable scenario file"


def test_contact_initial_margin():
    # u0 + g must start above gamma; with contact disabled u0 may touch zero
    sc = loads_scenario("[contact]\nenabled = false\n[initial]\nu0 = \"sin(pi*x1)*sin(pi*x2)\"\n")
    assert not sc.contact.enabled
    assert math.isclose(sc.nodal("initial", "u0").max(), 1.0, rel_tol=1e-12)
