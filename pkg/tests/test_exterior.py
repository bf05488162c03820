import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ugibbs import exterior
from ugibbs.exterior import (KFrame, NotApplicable, Subspace, angle_bound_from_wedge,
                             angle_bound_value, compound_matrix, covering_number,
                             plucker_embed, subspace_angles, wedge_norm)

entries = st.floats(-3.0, 3.0, allow_nan=False)


def square(d):
    return arrays(np.float64, (d, d), elements=entries)


def minors(A, k):
    d = A.shape[0]
    return np.array([[np.linalg.det(A[np.ix_(r, c)]) for c in combinations(range(d), k)]
                     for r in combinations(range(d), k)])


def power_iteration_norm(M, iters=500):
    v = np.ones(M.shape[1]) / math.sqrt(M.shape[1])
    for _ in range(iters):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return float(np.linalg.norm(M @ v))


def test_compound_examples():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 3))
    assert np.array_equal(compound_matrix(A, 1).entries, A)
    assert compound_matrix(A, 3).entries.shape == (1, 1)
    assert compound_matrix(A, 3).entries[0, 0] == pytest.approx(np.linalg.det(A), rel=1e-12)
    assert np.allclose(compound_matrix(A, 2).entries, minors(A, 2), rtol=1e-12, atol=1e-14)
    assert compound_matrix(A, 2).index == ((0, 1), (0, 2), (1, 2))
    for k in (0, 4):
        with pytest.raises(ValueError):
            compound_matrix(A, k)


@given(d=st.integers(2, 5), data=st.data())
def test_functoriality(d, data):
    A = data.draw(square(d))
    B = data.draw(square(d))
    k = data.draw(st.integers(1, d))
    lhs = compound_matrix(A @ B, k).entries
    rhs = compound_matrix(A, k).entries @ compound_matrix(B, k).entries
    scale = max(1.0, np.max(np.abs(rhs)), np.max(np.abs(compound_matrix(A, k).entries))
                * np.max(np.abs(compound_matrix(B, k).entries)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale


def test_wedge_norm_examples():
    assert wedge_norm(np.eye(4), 2) == 1.0
    assert wedge_norm(np.diag([3.0, 2.0, 1.0]), 2) == pytest.approx(6.0, rel=1e-15)
    rng = np.random.default_rng(2)
    for _ in range(50):
        A = rng.normal(size=(4, 4))
        ref = power_iteration_norm(compound_matrix(A, 2).entries)
        assert abs(wedge_norm(A, 2) - ref) <= 1e-9 * ref


@given(d=st.integers(2, 4), data=st.data())
def test_wedge_norm_times_inverse_at_least_one(d, data):
    A = data.draw(square(d))
    if abs(np.linalg.det(A)) < 1e-3:
        return
    k = data.draw(st.integers(1, d))
    assert wedge_norm(A, k) * wedge_norm(np.linalg.inv(A), k) >= 1 - 1e-9


def test_plucker_examples():
    e = np.eye(3)
    assert np.allclose(plucker_embed(KFrame(e[:2])), [1, 0, 0])
    assert np.allclose(plucker_embed(KFrame(2 * e[:2])), [1, 0, 0])
    z = plucker_embed(KFrame(np.array([e[0] + e[1], e[2]])))
    assert np.allclose(z, np.array([0, 1, 1]) / math.sqrt(2))
    with pytest.raises(ValueError):
        KFrame(np.array([e[0], 2 * e[0]]))


@given(arrays(np.float64, (2, 4), elements=entries), arrays(np.float64, (2, 2), elements=entries))
def test_plucker_basis_change_covariant(V, G):
    if np.linalg.det(V @ V.T) < 1e-3 or abs(np.linalg.det(G)) < 1e-3:
        return
    a = plucker_embed(KFrame(V))
    b = plucker_embed(KFrame(G @ V))
    assert np.allclose(a, b, atol=1e-8)
    assert abs(np.linalg.norm(a) - 1) < 1e-12


def test_subspace_angle_examples():
    F = Subspace(np.eye(3)[:2])
    rep = subspace_angles(F, F)
    assert np.allclose(rep.stationary, 0) and rep.cayley == pytest.approx(0, abs=1e-7)
    rep = subspace_angles(Subspace(np.eye(2)[:1]), Subspace(np.eye(2)[1:]))
    assert rep.maxmin == pytest.approx(math.pi / 2)
    alpha = 0.3
    G = Subspace(np.array([[1, 0, 0], [0, math.cos(alpha), math.sin(alpha)]]))
    rep = subspace_angles(F, G)
    assert np.allclose(rep.stationary, [0, alpha], atol=1e-7)


@given(arrays(np.float64, (2, 4), elements=entries), arrays(np.float64, (2, 4), elements=entries))
def test_angle_relations(U, V):
    if np.linalg.det(U @ U.T) < 1e-3 or np.linalg.det(V @ V.T) < 1e-3:
        return
    F, G = Subspace.span(U), Subspace.span(V)
    rep = subspace_angles(F, G)
    assert math.cos(rep.cayley) <= math.cos(rep.maxmin) + 1e-12
    assert abs(math.sin(rep.maxmin) - exterior.projector_distance(F, G)) <= 1e-8


def test_angle_bound_examples():
    A = np.random.default_rng(3).normal(size=(4, 2))
    assert angle_bound_from_wedge(A, A, 0.1).measured == pytest.approx(0, abs=1e-7)
    assert angle_bound_value(0.1) == pytest.approx(math.acos(1 - 0.01 / 1.8))
    assert angle_bound_value(0.1) < math.pi / 6
    with pytest.raises(NotApplicable):
        angle_bound_from_wedge(A, A, 0.6)


def test_angle_bound_random_perturbations():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        A = rng.normal(size=(4, 2))
        P = rng.normal(size=(4, 2))
        za = exterior.wedge_vector(A)
        # scale the perturbation to a measured wedge gap of 0.05
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = (lo + hi) / 2
            gap = np.linalg.norm(exterior.wedge_vector(A + mid * P) - za) / np.linalg.norm(za)
            lo, hi = (mid, hi) if gap < 0.05 else (lo, mid)
        rep = angle_bound_from_wedge(A, A + lo * P, 0.05)
        assert rep.satisfied


def test_covering_examples():
    assert covering_number([[0.3, 0.3]], 0.1) == 1
    assert covering_number([[0.0, 0.0], [0.3, 0.0]], 0.1) == 2
    g = np.stack(np.meshgrid(np.linspace(0, 1, 10), np.linspace(0, 1, 10)), -1).reshape(-1, 2)
    assert covering_number(g, 1.0) in (1, 2)
    with pytest.raises(ValueError):
        covering_number(g, 0.0)


def exact_cover(points, R):
    """Smallest number of balls centered at sample points covering all of them."""
    n = len(points)
    D = np.linalg.norm(points[:, None] - points[None], axis=-1) <= R
    for size in range(1, n + 1):
        for centers in combinations(range(n), size):
            if D[list(centers)].any(axis=0).all():
                return size
    return n


def test_covering_dominates_small_optimum():
    rng = np.random.default_rng(5)
    for _ in range(30):
        pts = rng.random((8, 2))
        R = float(rng.uniform(0.1, 0.6))
        assert covering_number(pts, R) >= exact_cover(pts, R)


@given(arrays(np.float64, (12, 2), elements=st.floats(0, 1)), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_covering_monotone(points, r1, r2):
    lo, hi = sorted((r1, r2))
    assert covering_number(points, hi) <= covering_number(points, lo)
