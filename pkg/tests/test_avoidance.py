import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import ray_distance_oracle, wolfe_min_norm
from hessfield.avoidance import (VectorField, avoid_k_maps, avoid_ray, avoid_zero,
                                 avoid_zero_operator, min_norm_over_simplex,
                                 ray_distance_over_simplex)
from hessfield.domain import build_grid, build_sphere
from hessfield.errors import HypothesisViolation, PreconditionError


def _oracle_zero(dom, vals):
    return np.array([wolfe_min_norm(vals[list(s)])[0] for s in dom.simplices])


def _oracle_ray(dom, vals):
    return np.array([ray_distance_oracle(vals[list(s)]) for s in dom.simplices])


# ------------------------------------------------------------- certifier


def test_min_norm_examples():
    val, lam = min_norm_over_simplex([[1, 0], [0, 1]])
    assert np.isclose(val, 1 / np.sqrt(2))
    assert np.allclose(lam, [0.5, 0.5])
    assert np.isclose(min_norm_over_simplex([[2, 0], [2, 0]])[0], 2.0)
    val, lam = min_norm_over_simplex([[1, 0], [-1, 0]])
    assert abs(val) < 1e-15 and np.allclose(lam, [0.5, 0.5])


def test_min_norm_too_many_vertices():
    with pytest.raises(PreconditionError):
        min_norm_over_simplex(np.eye(6))


@given(st.integers(1, 5), st.integers(1, 8), st.integers(0, 10_000))
def test_min_norm_matches_wolfe(k, m, seed):
    P = np.random.default_rng(seed).normal(size=(k, m))
    val, lam = min_norm_over_simplex(P)
    assert abs(val - wolfe_min_norm(P)[0]) <= 1e-12
    assert np.all(lam >= -1e-12) and np.isclose(lam.sum(), 1)
    assert np.isclose(np.linalg.norm(lam @ P), val, atol=1e-12)


@given(st.integers(1, 5), st.integers(1, 8), st.integers(0, 10_000))
def test_ray_distance_matches_oracle(k, m, seed):
    P = np.random.default_rng(seed).normal(size=(k, m))
    assert abs(ray_distance_over_simplex(P)[0] - ray_distance_oracle(P)) <= 1e-12


# ------------------------------------------------------------ avoid_zero


def test_avoid_zero_no_change_needed():
    dom = build_grid(1, 3)
    f = VectorField.constant(dom, [1.0, 0.0])
    g, cert = avoid_zero(f, 0.1, seed=0)
    assert np.array_equal(g.values, f.values)
    assert np.isclose(cert.global_margin, 1.0)
    assert cert.retries == 0


def test_avoid_zero_point():
    dom = build_grid(0, 1)
    f = VectorField.constant(dom, [0.0])
    g, cert = avoid_zero(f, 0.5, seed=1)
    assert 0 < abs(g.values[0, 0]) < 0.5
    assert np.isclose(cert.global_margin, abs(g.values[0, 0]))


def test_avoid_zero_segment_crossing():
    dom = build_grid(1, 4)
    t = dom.vertices[:, 0]
    f = VectorField(dom, np.stack([t - 0.5, 0 * t], axis=1))
    g, cert = avoid_zero(f, 0.1, seed=3)
    assert cert.global_margin > 0
    assert np.linalg.norm(g.values - f.values, axis=1).max() < 0.1
    assert np.allclose(cert.per_simplex, _oracle_zero(dom, g.values), atol=1e-12)


def test_avoid_zero_hypothesis_violation():
    dom = build_grid(1, 4)
    t = dom.vertices[:, 0]
    f = VectorField(dom, (t - 0.5)[:, None])
    with pytest.raises(HypothesisViolation):
        avoid_zero(f, 0.1, seed=0)


def test_avoid_zero_deterministic():
    dom = build_grid(2, 3)
    rng = np.random.default_rng(0)
    f = VectorField(dom, 0.01 * rng.normal(size=(dom.n_vertices, 3)))
    g1, _ = avoid_zero(f, 0.05, seed=9)
    g2, _ = avoid_zero(f, 0.05, seed=9)
    assert np.array_equal(g1.values, g2.values)


@given(st.integers(0, 3), st.integers(0, 10_000))
def test_avoid_zero_properties(d, seed):
    rng = np.random.default_rng(seed)
    dom = build_grid(d, 2)
    m = d + 1 + int(rng.integers(0, 2))
    f = VectorField(dom, 0.05 * rng.normal(size=(dom.n_vertices, m)))
    eps = rng.uniform(0.05, 0.2, dom.n_vertices)
    g, cert = avoid_zero(f, eps, seed=seed)
    assert np.all(np.linalg.norm(g.values - f.values, axis=1) < eps)
    assert cert.global_margin > 0
    assert np.allclose(cert.per_simplex, _oracle_zero(dom, g.values), atol=1e-12)


# --------------------------------------------------------- avoid_k_maps


def test_k_maps_single_constant_target_is_translation():
    dom = build_grid(1, 3)
    rng = np.random.default_rng(4)
    f = VectorField(dom, rng.normal(size=(dom.n_vertices, 2)) * 0.01)
    c = np.array([0.3, -0.2])
    target = VectorField.constant(dom, c)
    g, cert = avoid_k_maps(VectorField(dom, f.values + c), [target], 0.1, seed=5)
    g0, cert0 = avoid_zero(f, 0.1, seed=5)
    assert np.all(np.linalg.norm(g.values - f.values - c, axis=1) < 0.1)
    assert cert.global_margin > 0 and cert0.global_margin > 0


def test_k_maps_point():
    dom = build_grid(0, 1)
    h = VectorField.constant(dom, [0.7, 0.1])
    g, cert = avoid_k_maps(h, [h], 1.0, seed=2)
    assert 0 < np.linalg.norm(g.values - h.values) < 1.0
    assert cert.global_margin > 0


def test_k_maps_three_affine_targets():
    dom = build_grid(2, 3)
    rng = np.random.default_rng(8)
    x = np.c_[np.ones(dom.n_vertices), dom.vertices]
    targets = [VectorField(dom, x @ rng.normal(size=(3, 3))) for _ in range(3)]
    f = VectorField(dom, targets[0].values.copy())
    g, cert = avoid_k_maps(f, targets, 0.1, seed=1)
    for t in targets:
        margins = _oracle_zero(dom, g.values - t.values)
        assert margins.min() > 0
    assert np.linalg.norm(g.values - f.values, axis=1).max() < 0.1


# -------------------------------------------------------------- avoid_ray


def test_ray_far_point():
    dom = build_grid(0, 1)
    f = VectorField.constant(dom, [1.0, 0.0, 0.0])
    g, cert = avoid_ray(f, 0.1, seed=0)
    assert np.array_equal(g.values, f.values)
    assert cert.global_margin >= 1.0


def test_ray_on_ray_point():
    dom = build_grid(0, 1)
    f = VectorField.constant(dom, [-1.0, 0.0, 0.0, 0.0])
    g, cert = avoid_ray(f, 0.5, seed=0)
    assert cert.global_margin > 0
    assert np.linalg.norm(g.values - f.values) < 0.5
    assert np.isclose(np.linalg.norm(g.values), 1.0)


def test_ray_loop_on_circle():
    dom = build_sphere(1, 4)
    xy = dom.vertices
    # loop (x - 1, y, 0, 0) passes through (-2, 0, 0, 0) and (0,0,0,0)
    f = VectorField(dom, np.c_[xy[:, 0] - 1.0, xy[:, 1], 0 * xy])
    with pytest.raises(PreconditionError):
        avoid_ray(f, 0.1, seed=0)          # vanishes at (1, 0): norm mode refuses
    g, cert = avoid_ray(f, 0.1, seed=0, norm_preserving=False)
    assert cert.global_margin > 0
    assert np.allclose(cert.per_simplex, _oracle_ray(dom, g.values), atol=1e-12)
    f2 = VectorField(dom, np.c_[xy[:, 0] - 2.0, xy[:, 1], 0 * xy])
    g2, cert2 = avoid_ray(f2, 0.1, seed=0)
    assert cert2.global_margin > 0
    assert np.allclose(np.linalg.norm(g2.values, axis=1), np.linalg.norm(f2.values, axis=1))


def test_ray_hypothesis_violation():
    dom = build_grid(1, 2)
    f = VectorField.constant(dom, [-1.0, 0.0])
    with pytest.raises(HypothesisViolation):
        avoid_ray(f, 0.1)


# ----------------------------------------------------- operator variant


def test_operator_zero_field():
    g, k, cert = avoid_zero_operator(np.zeros((1, 4)), 1.0, 0)
    assert k == 0
    assert np.array_equal(g, [[1, 0, 0, 0]])
    assert cert.global_margin == 1.0


def test_operator_support_two():
    rng = np.random.default_rng(0)
    f = np.zeros((3, 4), dtype=complex)
    f[:, :2] = rng.normal(size=(3, 2))
    eps = np.array([0.1, 0.2, 0.3])
    g, k, cert = avoid_zero_operator(f, eps, 2)
    assert k == 2            # third coordinate, zero-based index 2
    assert np.allclose(np.linalg.norm(g - f, axis=1), eps, rtol=0, atol=1e-16)


def test_operator_no_room():
    with pytest.raises(PreconditionError):
        avoid_zero_operator(np.zeros((1, 4)), 1.0, 4)
