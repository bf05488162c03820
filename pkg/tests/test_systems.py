import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import LOG_GOLDEN
from ugibbs import systems
from ugibbs.systems import TorusPoint, apply_orbit, jacobian_cocycle, make_system

A_CAT = np.array([[2.0, 1.0], [1.0, 1.0]])
unit = st.floats(0.0, 1.0, allow_nan=False, exclude_max=True)


def test_torus_point_reduces_mod_one():
    p = TorusPoint((1.25, -0.25, -1e-18))
    assert p.coords == (0.25, 0.75, 0.0)
    with pytest.raises(ValueError):
        TorusPoint((0.1,))
    with pytest.raises(ValueError):
        TorusPoint((0.1, float("nan")))


def test_orbit_examples(cat, identity):
    assert all(q.coords == (0.0, 0.0) for q in apply_orbit(cat, TorusPoint((0, 0)), 5))
    x = TorusPoint((0.3, 0.7))
    assert [q.coords for q in apply_orbit(identity, x, 3)] == [x.coords] * 4
    step = apply_orbit(cat, TorusPoint((0.1, 0.2)), 1)[1]
    assert np.allclose(step.coords, (0.4, 0.3), atol=1e-15)
    with pytest.raises(ValueError):
        apply_orbit(cat, x, -1)


@pytest.mark.parametrize("name", systems.ZOO + ("cat3", "cat4", "identity3"))
def test_zoo_validates(name):
    s = make_system(name)
    rep = systems.validate_system(s, density=16 if s.d < 4 else 8)
    assert rep["jacobian_rel_error"] <= 1e-6
    assert rep["roundtrip_error"] <= 1e-10


def test_unknown_system_ids_are_rejected():
    for bad in ("cat5", "product:cat2", "skew:foo", "cat2_perturbed:eps=0.1,zeta=2", "nope"):
        with pytest.raises(ValueError):
            make_system(bad)


def test_perturbation_must_stay_invertible():
    with pytest.raises(ValueError, match="invertibility"):
        make_system("cat2_perturbed:eps=0.5")


def test_cocycle_examples(cat, perturbed):
    x = TorusPoint((0.37, 0.11))
    assert np.array_equal(jacobian_cocycle(cat, x, 4).matrix, np.linalg.matrix_power(A_CAT, 4))
    assert np.array_equal(jacobian_cocycle(perturbed, x, 0).matrix, np.eye(2))
    # central differences of the 3-fold composed map
    J = jacobian_cocycle(perturbed, x, 3).matrix
    h = 1e-5

    def f3(y):
        for _ in range(3):
            y = perturbed.forward(y)
        return y

    fd = np.stack([(f3(x.array() + h * e) - f3(x.array() - h * e)) / (2 * h) for e in np.eye(2)], 1)
    assert np.linalg.norm(J - fd) / np.linalg.norm(J) <= 1e-5


@given(x=st.tuples(unit, unit, unit), m=st.integers(0, 10), n=st.integers(0, 10))
def test_cocycle_property_skew(x, m, n):
    s = make_system("skew:ns,cat2_path")
    p = TorusPoint(x)
    whole = jacobian_cocycle(s, p, m + n).matrix
    y = apply_orbit(s, p, m)[-1]
    split = jacobian_cocycle(s, y, n).matrix @ jacobian_cocycle(s, p, m).matrix
    assert np.max(np.abs(whole - split)) <= 1e-9 * max(1.0, np.max(np.abs(whole)))


# rounding of the orbit is amplified by ||d f^n||^2, which passes 1e-8 near n = 8
@given(x=st.tuples(unit, unit), n=st.integers(0, 6), name=st.sampled_from(["cat2_perturbed:eps=0.1", "cat2"]))
def test_inverse_cocycle(x, n, name):
    s = make_system(name)
    p = TorusPoint(x)
    y = apply_orbit(s, p, n)[-1]
    prod = jacobian_cocycle(s, p, n).matrix @ jacobian_cocycle(s, y, -n).matrix
    assert np.allclose(prod, np.eye(2), atol=1e-8)


@given(x=st.tuples(unit, unit), n=st.integers(0, 30))
def test_orbit_points_stay_in_unit_cube(x, n):
    for q in apply_orbit(make_system("cat2_perturbed:eps=0.1"), TorusPoint(x), n):
        assert all(0.0 <= c < 1.0 for c in q.coords)


def test_derivative_bound_examples(cat, identity, perturbed):
    assert systems.derivative_bound(cat, 1) == pytest.approx((3 + math.sqrt(5)) / 2, rel=1e-12)
    assert systems.derivative_bound(identity, 3) == 1.0
    for s in (cat, perturbed):
        assert systems.derivative_bound(s, 2) <= systems.derivative_bound(s, 1) ** 2 * (1 + 1e-9)
    with pytest.raises(ValueError):
        systems.derivative_bound(cat, 1, grid_density=4)


def test_derivative_bound_monotone_in_density(perturbed):
    vals = [systems.derivative_bound(perturbed, 2, g) for g in (8, 16, 32)]
    assert vals == sorted(vals)


def test_r_growth_examples(cat, identity):
    assert abs(systems.r_growth(cat, 16) - LOG_GOLDEN) <= 1e-6
    assert systems.r_growth(identity, 16) == 0.0
    assert abs(systems.r_growth(make_system("product:cat2,cat2"), 16) - systems.r_growth(cat, 16)) <= 1e-6
    with pytest.raises(ValueError):
        systems.r_growth(cat, 3)


def test_cocycle_property_thousand_triples(perturbed):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        total = int(rng.integers(0, 21))
        m = int(rng.integers(0, total + 1))
        p = TorusPoint(tuple(rng.random(2)))
        whole = jacobian_cocycle(perturbed, p, total).matrix
        y = apply_orbit(perturbed, p, m)[-1]
        split = jacobian_cocycle(perturbed, y, total - m).matrix @ jacobian_cocycle(perturbed, p, m).matrix
        worst = max(worst, np.max(np.abs(whole - split)) / np.max(np.abs(whole)))
    assert worst <= 1e-9
