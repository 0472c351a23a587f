import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from plate_interpen.contact_law import (
    BoundaryLaw,
    ContactLaw,
    Family,
    build_regularized,
    eval_dpk,
    eval_p,
    eval_Pk,
    eval_pk,
    eval_q,
    eval_qk,
    eval_Qk,
    integral_pk,
    mean_pk,
)

RATIONAL = ContactLaw(gamma=-1.0, family=Family.RATIONAL, kappa=1.0)
TABLE = ((-0.8, 1.5), (-0.5, 0.5), (-0.2, 0.1), (0.0, 0.0))
LAWS = [
    RATIONAL,
    ContactLaw(gamma=-0.3, family=Family.RATIONAL, kappa=7.0),
    ContactLaw(gamma=-1.0, family=Family.LOG, kappa=2.0),
    ContactLaw(gamma=-1.0, family=Family.TABULATED, table=TABLE),
]


def test_p_vanishes_off_contact():
    for law in LAWS:
        assert eval_p(law, 0.5) == 0.0
        assert eval_p(law, 0.0) == 0.0


def test_rational_values():
    assert eval_p(RATIONAL, -0.5) == pytest.approx(1.0, abs=1e-15)
    assert eval_p(RATIONAL, -1.0) == math.inf
    assert eval_p(RATIONAL, -2.0) == math.inf


def test_barrier_blows_up_at_gamma():
    for law in LAWS:
        eps = 1e-12 * abs(law.gamma)
        assert eval_p(law, law.gamma + eps) > 20.0


def test_invalid_laws_rejected():
    with pytest.raises(ValueError):
        ContactLaw(gamma=0.1)
    with pytest.raises(ValueError):
        ContactLaw(gamma=-1.0, kappa=0.0)
    with pytest.raises(ValueError):
        ContactLaw(gamma=-1.0, family=Family.TABULATED, table=((-0.5, 1.0), (-0.2, 2.0), (0.0, 0.0)))
    with pytest.raises(ValueError):
        build_regularized(RATIONAL, -1)
    with pytest.raises(ValueError):
        build_regularized(RATIONAL, 0, delta0=1.5)


def test_cap_of_reference_law():
    reg = build_regularized(RATIONAL, 0)  # delta_0 = |gamma|/2 = 0.5
    assert reg.delta_k == 0.5
    assert reg.cap_value == pytest.approx(1.0, abs=1e-15)
    assert reg.cap_slope == pytest.approx(-4.0, abs=1e-14)
    eta = 1e-7
    one_sided = (eval_p(RATIONAL, -0.5) - eval_p(RATIONAL, -0.5 - eta)) / eta
    assert reg.cap_slope == pytest.approx(one_sided, rel=1e-5)
    assert eval_pk(reg, -0.75) == pytest.approx(2.0, abs=1e-14)
    assert eval_pk(reg, 0.2) == 0.0


def test_dpk_values():
    reg = build_regularized(RATIONAL, 0)
    assert eval_dpk(reg, 0.5) == 0.0
    assert eval_dpk(reg, -0.9) == -4.0
    reg1 = build_regularized(RATIONAL, 1)  # delta = 0.25, x = -0.5 on the barrier branch
    assert eval_dpk(reg1, -0.5) == pytest.approx(-4.0, abs=1e-14)
    h = 1e-6
    fd = (eval_pk(reg1, -0.5 + h) - eval_pk(reg1, -0.5 - h)) / (2 * h)
    assert eval_dpk(reg1, -0.5) == pytest.approx(fd, rel=1e-5)


def test_delta_and_slope_sequences():
    for law in LAWS:
        regs = [build_regularized(law, k) for k in range(12)]
        deltas = np.array([r.delta_k for r in regs])
        slopes = np.array([r.cap_slope for r in regs])
        assert np.all(np.diff(deltas) < 0)
        assert np.all(np.diff(slopes) <= 0)
        assert np.all(law.gamma + deltas < 0)
    # slope diverges for the closed-form families
    assert build_regularized(RATIONAL, 30).cap_slope < -1e15


def test_potential_reference_value():
    reg = build_regularized(RATIONAL, 0)
    assert eval_Pk(reg, 1.0) == 0.0
    assert eval_Pk(reg, -0.5) == pytest.approx(math.log(2.0) - 0.5, abs=1e-14)
    assert eval_Pk(reg, -0.9) >= eval_Pk(reg, -0.1)


@pytest.mark.parametrize("law", LAWS, ids=["rational", "rational_stiff", "log", "table"])
@pytest.mark.parametrize("k", [0, 3, 9])
def test_potential_matches_quadrature(law, k):
    reg = build_regularized(law, k)
    g = law.gamma
    for s in np.linspace(2 * g, 0.5, 23):
        pts = [p for p in (reg.cap_point,) + tuple(x for x, _ in law.table) if s < p < 0]
        ref, _ = quad(lambda z: eval_pk(reg, z), min(s, 0.0), 0.0, points=pts or None, epsabs=1e-13, limit=200)
        val = eval_Pk(reg, s)
        assert abs(val - ref) <= 1e-8 * max(1.0, abs(val))


def test_mean_pk_is_exact_average():
    reg = build_regularized(RATIONAL, 2)
    a, b = -0.2, -0.9
    mean, _ = mean_pk(reg, a, b)
    assert mean == pytest.approx(integral_pk(reg, a, b) / (b - a), rel=1e-13)
    mean0, slope0 = mean_pk(reg, -0.3, -0.3)
    assert mean0 == eval_pk(reg, -0.3)
    assert slope0 == pytest.approx(0.5 * eval_dpk(reg, -0.3))
    # derivative in b against a difference quotient
    h = 1e-7
    m1, s1 = mean_pk(reg, a, b)
    m2, _ = mean_pk(reg, a, b + h)
    assert s1 == pytest.approx((m2 - m1) / h, rel=1e-5)


def test_boundary_law_mirror():
    bl = BoundaryLaw(RATIONAL)
    reg = build_regularized(RATIONAL, 3)
    xs = np.linspace(-2, 2, 101)
    assert np.array_equal(eval_q(bl, xs), -eval_p(RATIONAL, -xs))
    assert np.array_equal(eval_qk(reg, xs), -eval_pk(reg, -xs))
    assert np.array_equal(eval_Qk(reg, xs), eval_Pk(reg, -xs))
    assert np.all(eval_Qk(reg, xs[xs <= 0]) == 0.0)


law_strategy = st.builds(
    lambda g, kap, fam: ContactLaw(gamma=-g, kappa=kap, family=fam),
    st.floats(0.05, 5.0),
    st.floats(0.1, 100.0),
    st.sampled_from([Family.RATIONAL, Family.LOG]),
)


@settings(max_examples=60, deadline=None)
@given(law=law_strategy, k=st.integers(0, 10), u=st.floats(0.0, 1.0), v=st.floats(0.0, 1.0))
def test_pk_properties(law, k, u, v):
    g = law.gamma
    reg, reg1 = build_regularized(law, k), build_regularized(law, k + 1)
    x1, x2 = 2 * g + u * (1 - 2 * g), 2 * g + v * (1 - 2 * g)
    p1, p2 = eval_pk(reg, x1), eval_pk(reg, x2)
    assert math.isfinite(p1) and math.isfinite(p2)
    assert (p1 - p2) * (x1 - x2) <= 0.0
    assert x1 * p1 <= 0.0
    if x1 > g:
        assert p1 <= eval_pk(reg1, x1) <= eval_p(law, x1)
    if x1 >= reg.cap_point:
        assert p1 == eval_p(law, x1)
    # global Lipschitz bound by the cap slope
    assert abs(p1 - p2) <= abs(reg.cap_slope) * abs(x1 - x2) * (1 + 1e-12) + 1e-12
