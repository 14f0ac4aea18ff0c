import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hessfield.domain import build_grid, build_sphere
from hessfield.errors import PreconditionError
from hessfield.fixtures import bott_sum, constant_field, zero_field
from hessfield.linalg import classify_BH
from hessfield.projections import (ProjectionField, band_mask, default_projection_epsilon,
                                   extract_section, gamma_of_dim, projection_reduce, shrink,
                                   trivial_summand)


def _point():
    return build_grid(0, 1)


# -------------------------------------------------------------- gamma


@pytest.mark.parametrize("d,g", [(0, 0), (1, 0), (2, 1), (3, 1), (4, 2), (5, 3), (6, 3)])
def test_gamma(d, g):
    assert gamma_of_dim(d) == g


def test_projection_field_validation():
    dom = _point()
    with pytest.raises(PreconditionError):
        ProjectionField(dom, np.array([[[2.0, 0.0], [0.0, 0.0]]]))
    with pytest.raises(PreconditionError):
        ProjectionField(dom, np.array([[[1.0, 1.0], [0.0, 0.0]]]))


def test_shrink():
    z = np.array([0.0, 0.5, -2.0, 3j])
    out = shrink(z, 1.0)
    assert np.allclose(out, [0, 0, -1.0, 2j])


def test_band_mask():
    m = band_mask(4, 2)
    assert m[0, 1] and m[1, 2] and m[2, 1] and m[3, 2] and m[2, 3] and m[3, 3]
    assert not m[0, 2] and not m[3, 0]


# ---------------------------------------------------------- reduction


def test_reduce_identity():
    dom = build_grid(2, 2)
    p = ProjectionField(dom, np.tile(np.eye(3, dtype=complex), (dom.n_vertices, 1, 1)))
    red = projection_reduce(p)
    assert np.allclose(red.q.values, np.eye(3), atol=1e-12)
    assert red.invariants()["passed"]
    u = red.u.values
    assert np.abs(u @ u.conj().transpose(0, 2, 1) - np.eye(3)).max() <= 1e-9


def test_reduce_zero():
    dom = build_grid(1, 2)
    p = ProjectionField.from_field(zero_field(dom, 3))
    red = projection_reduce(p)
    assert np.abs(red.q.values).max() == 0.0
    assert red.invariants()["passed"]


def test_reduce_bott_plus_zero():
    dom = build_sphere(2, 4)
    p = ProjectionField.from_field(bott_sum(dom, pad=2))
    assert p.n == 4
    eps = 0.9 / (24 ** 2 * 4 ** 3)
    assert np.isclose(eps, default_projection_epsilon(4))
    assert eps < 2.72e-5
    red = projection_reduce(p, seed=0)
    inv = red.invariants()
    assert inv["passed"], inv
    assert red.c == 2
    assert all(classify_BH(q, 2).member for q in red.q.values)
    conj = red.u.values @ p.values @ red.u.values.conj().transpose(0, 2, 1) - red.q.values
    assert np.linalg.norm(conj, 2, axis=(1, 2)).max() <= 1e-8
    assert red.spectral_gap.min() >= 0.1
    assert np.allclose(np.trace(red.q.values, axis1=1, axis2=2).real, 1.0, atol=1e-6)


def test_truncation_bound():
    dom = build_sphere(2, 3)
    p = ProjectionField.from_field(bott_sum(dom, copies=2))
    red = projection_reduce(p)
    assert np.all(red.truncation_error <= p.n * red.epsilon)


def test_reduce_epsilon_range():
    p = ProjectionField.from_field(zero_field(_point(), 2))
    with pytest.raises(PreconditionError):
        projection_reduce(p, eps=1.0)
    with pytest.raises(PreconditionError):
        projection_reduce(p, eps=0.0)


@settings(max_examples=8)
@given(st.integers(0, 3), st.integers(2, 5), st.integers(0, 10_000))
def test_reduce_random_projection_property(d, n, seed):
    # projections onto the span of a continuous family of vectors
    dom = build_grid(d, 2)
    rng = np.random.default_rng(seed)
    rank = int(rng.integers(1, n))
    a = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    b = rng.normal(size=(d, n, rank)) * 0.2
    vals = []
    for x in dom.vertices:
        m = a + np.tensordot(x, b, axes=1)
        q, _ = np.linalg.qr(m)
        vals.append(q @ q.conj().T)
    p = ProjectionField(dom, 0.5 * (np.array(vals) + np.array(vals).conj().transpose(0, 2, 1)))
    red = projection_reduce(p, seed=seed)
    inv = red.invariants()
    assert inv["passed"], inv


# ----------------------------------------------------------- sections


def test_section_corner():
    dom = _point()
    n, c = 4, 2
    p = ProjectionField(dom, np.diag([0.0, 0.0, 1.0, 1.0])[None].astype(complex))
    sec = extract_section(p, c=c)
    assert sec.index[0] == n - c            # zero-based column n-c+1
    assert np.allclose(sec.section[0], np.eye(n)[n - c])


def test_section_half_block():
    dom = _point()
    p = np.zeros((4, 4), dtype=complex)
    p[:2, :2] = 0.5
    p[2:, 2:] = np.eye(2)
    sec = extract_section(ProjectionField(dom, p[None]), c=2)
    assert sec.index[0] in (0, 1)
    assert np.allclose(p[:, 0], p[:, 1])
    assert np.allclose(sec.section[0], [0.5, 0.5, 0, 0])
    assert np.isclose(sec.norms[0], 1 / np.sqrt(2))


def test_section_alpha_block():
    dom = _point()
    a = 0.9
    s = np.sqrt(a - a * a)
    p = np.zeros((3, 3), dtype=complex)
    p[:2, :2] = [[a, s], [s, 1 - a]]
    p[2, 2] = 1.0
    sec = extract_section(ProjectionField(dom, p[None]), c=2)
    assert sec.index[0] == 0
    assert np.isclose(sec.norms[0], np.sqrt(0.9))


def test_section_rank_precondition():
    dom = _point()
    p = ProjectionField(dom, np.diag([0.0, 0.0, 1.0])[None].astype(complex))
    with pytest.raises(PreconditionError):
        extract_section(p, c=2)


def test_section_norm_bounds_after_reduction():
    dom = build_sphere(2, 3)
    p = ProjectionField.from_field(bott_sum(dom, copies=2))
    red = projection_reduce(p)
    sec = extract_section(red.q, c=2)
    q = red.q.values
    assert np.all(sec.norms >= 1 / np.sqrt(2) - 1e-9) and np.all(sec.norms <= 1 + 1e-12)
    assert np.abs(np.einsum("vij,vj->vi", q, sec.section) - sec.section).max() <= 1e-9


# ----------------------------------------------------- trivial summand


def test_trivial_constant_rank2():
    dom = build_sphere(2, 3)
    p = ProjectionField.from_field(constant_field(dom, np.diag([1.0, 1.0, 0.0, 0.0])))
    bundle = trivial_summand(p)
    assert bundle.m == 1
    inv = bundle.invariants()
    assert inv["passed"], inv
    assert inv["norm_min"] >= 1 / np.sqrt(2) - 1e-9


def test_trivial_bott_plus_bott():
    dom = build_sphere(2, 4)
    p = ProjectionField.from_field(bott_sum(dom, copies=2))
    assert p.b == 2
    bundle = trivial_summand(p)
    assert bundle.m == 1
    inv = bundle.invariants()
    assert inv["passed"], inv
    assert inv["independence_margin"] > 0 and inv["gram_min_eig"] > 0


def test_trivial_rank1_fails():
    dom = build_sphere(2, 3)
    with pytest.raises(PreconditionError):
        trivial_summand(ProjectionField.from_field(bott_sum(dom)))


def test_trivial_d1_takes_all_sections():
    # gamma = 0 over a circle: every rank contributes a section
    dom = build_sphere(1, 6)
    th = np.arctan2(dom.vertices[:, 1], dom.vertices[:, 0])
    v = np.stack([np.ones_like(th), np.exp(1j * th), 0 * th], axis=1) / np.sqrt(2)
    vals = np.einsum("vi,vj->vij", v, v.conj())
    p = ProjectionField(dom, vals + np.diag([0, 0, 1.0])[None])
    bundle = trivial_summand(p)
    assert bundle.m == 2
    assert bundle.invariants()["passed"]
