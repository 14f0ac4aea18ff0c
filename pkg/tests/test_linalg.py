import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_hermitian
from hessfield.errors import PreconditionError
from hessfield.linalg import (classify_BH, classify_H, givens_annihilate, hermitian_eig,
                              householder_annihilate, householder_unitaries, polar_unitary)


def _haar(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


# ------------------------------------------------------------ Householder


def test_householder_aligned():
    data, r = householder_annihilate([1.0, 0.0])
    assert r == 1.0
    # the annihilating unitary is the identity; the line reflection fixes b
    assert np.allclose(data.matrix, np.eye(2), atol=1e-15)
    assert np.allclose(data.reflection @ [1.0, 0.0], [1.0, 0.0], atol=1e-15)


def test_householder_3_4i():
    b = np.array([3, 4j])
    data, r = householder_annihilate(b)
    assert np.isclose(r, 5.0)
    assert np.allclose(data.vector, [8 / 5, 4j / 5])
    # by hand: h = (8/5, 4i/5), <h,h> = 16/5
    h = np.array([8 / 5, 4j / 5])
    R = 2 * np.outer(h, h.conj()) / (16 / 5) - np.eye(2)
    assert np.allclose(data.reflection, R)
    assert np.allclose(R @ b, [5, 0], atol=1e-12)
    assert np.allclose(data.matrix @ b, [5, 0], atol=1e-12)


def test_householder_forbidden_ray():
    with pytest.raises(PreconditionError):
        householder_annihilate([-1.0, 0.0])
    with pytest.raises(PreconditionError):
        householder_annihilate([-2.0, 1e-12])


def test_householder_properties_500(rng):
    for _ in range(500):
        m = int(rng.integers(1, 8))
        b = rng.normal(size=m) + 1j * rng.normal(size=m)
        data, r = householder_annihilate(b)
        R, U = data.reflection, data.matrix
        eye = np.eye(m)
        assert np.abs(R @ R - eye).max() <= 1e-12
        assert np.abs(R - R.conj().T).max() <= 1e-12
        assert np.abs(U @ U.conj().T - eye).max() <= 1e-12
        target = np.zeros(m, dtype=complex)
        target[0] = r
        assert np.abs(U @ b - target).max() <= 1e-12 * r
        h = data.vector
        assert np.allclose(R @ h, h)
        # R b = |b| e1 whenever b_1 is real
        if m == 1:
            continue
        b_real = b.copy()
        b_real[0] = b_real[0].real
        d2, r2 = householder_annihilate(b_real)
        t2 = np.zeros(m, dtype=complex)
        t2[0] = r2
        assert np.abs(d2.reflection @ b_real - t2).max() <= 1e-12 * r2


def test_householder_reflection_negates_orthogonal(rng):
    b = rng.normal(size=4) + 1j * rng.normal(size=4)
    data, _ = householder_annihilate(b)
    h = data.vector
    w = rng.normal(size=4) + 1j * rng.normal(size=4)
    w = w - h * np.vdot(h, w) / np.vdot(h, h)
    assert np.allclose(data.reflection @ w, -w)


@given(arrays(np.float64, (6,), elements=st.floats(-10, 10)))
def test_householder_batched_continuity_near_ray_free(x):
    b = x[:3] + 1j * x[3:]
    r = np.linalg.norm(b)
    if r < 1e-6 or np.linalg.norm(b / r + np.eye(3)[0]) < 1e-6:
        return
    U, rr, _ = householder_unitaries(b[None])
    # a small nudge moves the unitary by a comparably small amount
    U2, _, _ = householder_unitaries((b + 1e-9 * r)[None])
    assert np.abs(U[0] @ b - np.r_[rr[0], 0, 0]).max() <= 1e-11 * max(r, 1)
    assert np.abs(U2 - U).max() <= 1e-3


# ---------------------------------------------------------------- Givens


def test_givens_identity():
    assert np.allclose(givens_annihilate(1, 0), np.eye(2))


def test_givens_swap():
    assert np.allclose(givens_annihilate(0, 1), [[0, 1], [-1, 0]])


def test_givens_3_4i():
    u = givens_annihilate(3, 4j)
    assert np.allclose(u, np.array([[3, -4j], [-4j, 3]]) / 5)
    assert np.allclose(u @ [3, 4j], [5, 0], atol=1e-13)


def test_givens_zero():
    with pytest.raises(PreconditionError):
        givens_annihilate(0, 0)


@given(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False))
def test_givens_unitary_and_det(a, b):
    if abs(a) + abs(b) < 1e-6:
        return
    u = givens_annihilate(a, b)
    assert np.abs(u @ u.conj().T - np.eye(2)).max() <= 1e-13
    assert abs(abs(np.linalg.det(u)) - 1) <= 1e-13
    r = np.hypot(abs(a), abs(b))
    assert np.abs(u @ [a, b] - [r, 0]).max() <= 1e-12 * r


# ---------------------------------------------------------- Hermitian eig


def test_eig_examples():
    w, v = hermitian_eig(np.diag([3.0, 1.0]))
    assert np.allclose(w, [3, 1])
    assert np.allclose(np.abs(v), np.eye(2))
    assert np.allclose(hermitian_eig(np.array([[0, 1], [1, 0]]))[0], [1, -1])
    assert np.allclose(hermitian_eig(np.array([[2, 1], [1, 2]]))[0], [3, 1])


def test_eig_rejects_non_hermitian():
    with pytest.raises(PreconditionError):
        hermitian_eig(np.array([[0, 1], [0, 0]]))


def test_eig_reconstruction(rng):
    for n in range(1, 17):
        m = random_hermitian(rng, n) * 10
        w, v = hermitian_eig(m)
        assert np.all(np.diff(w) <= 0)
        err = np.abs(v @ np.diag(w) @ v.conj().T - m).max()
        assert err <= 1e-10 * (1 + np.linalg.norm(m, 2))


def test_eig_tie_break_deterministic():
    w1, v1 = hermitian_eig(np.eye(3))
    w2, v2 = hermitian_eig(np.eye(3))
    assert np.array_equal(w1, w2) and np.array_equal(v1, v2)


# ----------------------------------------------------------------- polar


def test_polar_examples(rng):
    u = _haar(rng, 3)
    assert np.allclose(polar_unitary(u), u)
    assert np.allclose(polar_unitary(2 * np.eye(3)), np.eye(3))
    z = np.array([[1.0, 1.0], [0.0, 1.0]])
    v = polar_unitary(z)
    assert np.abs(v @ v.conj().T - np.eye(2)).max() <= 1e-10
    # oracle: eigendecomposition of z*z computed independently
    w, q = np.linalg.eig(z.T @ z)
    inv_sqrt = q @ np.diag(1 / np.sqrt(w)) @ np.linalg.inv(q)
    assert np.allclose(v, z @ inv_sqrt, atol=1e-12)
    assert np.allclose(v, scipy.linalg.polar(z)[0], atol=1e-12)


def test_polar_rejects_singular():
    with pytest.raises(PreconditionError):
        polar_unitary(np.diag([1.0, 1e-10]))


def test_polar_closest_unitary(rng):
    z = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    v = polar_unitary(z)
    assert np.allclose(v, scipy.linalg.polar(z)[0], atol=1e-10)
    best = np.linalg.norm(z - v, 2)
    for _ in range(100):
        assert best <= np.linalg.norm(z - _haar(rng, 4), 2) + 1e-12


# ------------------------------------------------------------ membership


def test_identity_in_h0_not_h1():
    n = 4
    assert classify_H(np.eye(n), 0).member
    assert not classify_H(np.eye(n), 1).member


@given(arrays(np.float64, (2, 5, 5), elements=st.floats(-1e3, 1e3)))
def test_h0_is_everything(x):
    assert classify_H(x[0] + 1j * x[1], 0).member


def test_h_form_jacobi_member(rng):
    n = 6
    d = rng.normal(size=n)
    e = rng.uniform(0.5, 1.0, n - 1)
    x = np.diag(d) + np.diag(e, -1) + np.diag(e, 1)
    desc = classify_H(x, n)
    assert desc.member and np.isclose(desc.subdiag_min, e.min())


def test_bh_corner_projection():
    n, c = 5, 2
    p = np.diag([0.0] * (n - c) + [1.0] * c)
    desc = classify_BH(p, n - c)
    assert desc.member
    assert desc.block_sizes == (1, 1, 1, 2)


def test_bh_half_block():
    p = np.zeros((4, 4))
    p[:2, :2] = 0.5
    desc = classify_BH(p, 2)
    assert desc.member
    assert desc.block_sizes[0] == 2


def test_bh_rejects_negative_and_offblock():
    p = np.zeros((3, 3))
    p[:2, :2] = [[0.5, -0.5], [-0.5, 0.5]]
    assert not classify_BH(p, 2).member
    q = np.eye(3) / 3 * 0 + np.full((3, 3), 1 / 3)
    assert not classify_BH(q, 1).member


@given(st.integers(1, 6), st.integers(0, 1000))
def test_bh_block_sum_invariant(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    p = np.diag(rng.integers(0, 2, n).astype(float))
    desc = classify_BH(p, k)
    assert sum(desc.block_sizes) == n
    assert desc.member
