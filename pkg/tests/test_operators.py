import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_hermitian
from oracles import gram_schmidt_2x2
from hessfield.domain import MatrixField, build_grid, build_sphere
from hessfield.errors import PreconditionError
from hessfield.fixtures import random_hermitian_field, shift_field, shift_matrix, zero_field
from hessfield.operators import (OperatorField, column_freeze_check, cyclic_to_hessenberg,
                                 final_fields, operator_reduce)


# ---------------------------------------------------------- cyclic vectors


def test_cyclic_shift():
    x = shift_matrix(6)
    q, h = cyclic_to_hessenberg(x, np.eye(6)[0])
    assert np.allclose(q, np.eye(6))
    assert np.allclose(h, x)


def test_cyclic_diag_2x2():
    x = np.diag([1.0, 2.0])
    xi = np.array([1.0, 1.0]) / np.sqrt(2)
    q, h = cyclic_to_hessenberg(x, xi)
    q_ref, h_ref = gram_schmidt_2x2(x, xi)
    assert np.allclose(h, h_ref, atol=1e-12)
    assert h[1, 0].real > 0 and abs(h[1, 0].imag) < 1e-14
    assert np.allclose(h, h.conj().T)              # tridiagonal
    assert np.allclose(sorted(np.linalg.eigvalsh(h)), [1, 2])


def test_cyclic_identity_not_cyclic():
    with pytest.raises(PreconditionError):
        cyclic_to_hessenberg(np.eye(3), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(PreconditionError):
        cyclic_to_hessenberg(np.eye(2), np.zeros(2))


def test_cyclic_spectrum_preserved(rng):
    for n in range(2, 8):
        x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        xi = rng.normal(size=n) + 1j * rng.normal(size=n)
        q, h = cyclic_to_hessenberg(x, xi)
        assert np.abs(q.conj().T @ q - np.eye(n)).max() <= 1e-10
        assert np.allclose(q[:, 0], xi / np.linalg.norm(xi))
        assert np.abs(np.tril(h, -2)).max() <= 1e-10
        assert np.all(np.diag(h, -1).real > 0)
        ev = np.sort_complex(np.linalg.eigvals(h))
        ev_ref = np.sort_complex(np.linalg.eigvals(x))
        assert np.abs(ev - ev_ref).max() <= 1e-9 * max(1, np.abs(ev_ref).max())


@settings(max_examples=20)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_cyclic_hermitian_gives_tridiagonal(n, seed):
    rng = np.random.default_rng(seed)
    x = random_hermitian(rng, n)
    xi = rng.normal(size=n) + 1j * rng.normal(size=n)
    try:
        q, h = cyclic_to_hessenberg(x, xi)
    except PreconditionError:
        return
    assert np.abs(np.triu(h, 2)).max() <= 1e-8 * max(1, np.linalg.norm(x, 2))


# ---------------------------------------------------------- operator field


def test_operator_field_support_validation():
    dom = build_grid(0, 1)
    vals = np.zeros((1, 5, 5))
    vals[0, 4, 0] = 1.0
    with pytest.raises(PreconditionError):
        OperatorField(dom, vals, support=3)
    assert OperatorField(dom, vals, support=5).N == 5


def test_embed():
    dom = build_grid(1, 2)
    f = random_hermitian_field(dom, 3, seed=0)
    op = OperatorField.embed(f, 8)
    assert op.N == 8 and op.support == 3
    assert np.array_equal(op.values[:, :3, :3], f.values)
    with pytest.raises(PreconditionError):
        OperatorField.embed(f, 2)


# ---------------------------------------------------------------- iteration


def test_zero_field():
    dom = build_grid(1, 3)
    op = OperatorField.embed(zero_field(dom, 1), 16)
    op = OperatorField(dom, op.values, support=0)
    tr = operator_reduce(op, 0.1, K=8)
    inv = tr.invariants()
    assert inv["passed"], inv
    assert all(b is not None for b in tr.bump_index)
    h = tr.final_h
    for k in range(1, 9):
        sub = h[:, k, k - 1]
        assert np.allclose(sub, tr.step_norms[k - 1], rtol=1e-12, atol=0)
        assert np.all(tr.step_norms[k - 1] < 0.1 / 2 ** k)
    assert np.abs(np.tril(h[:, :, :7], -2)).max() == 0.0


def test_shift_field_needs_no_bumps():
    dom = build_grid(1, 3)
    op = OperatorField.embed(shift_field(dom, 8), 16)
    tr = operator_reduce(op, 0.1, K=6)
    assert tr.bump_index == [None] * 6
    assert all(np.all(s == 0) for s in tr.step_norms)
    assert column_freeze_check(tr) == 0.0
    assert np.array_equal(tr.final_g, op.values)


def test_random_supported_field_on_circle():
    dom = build_sphere(1, 16)
    op = OperatorField.embed(random_hermitian_field(dom, 8, seed=5), 32)
    tr = operator_reduce(op, 0.1, K=10)
    inv = tr.invariants()
    assert inv["passed"], inv
    for u in tr.u:
        assert np.abs(u @ u.conj().transpose(0, 2, 1) - np.eye(32)).max() <= 1e-10
    g = final_fields(tr)["g"].values
    assert np.all(np.linalg.norm(g - op.values, 2, axis=(1, 2)) < 0.1)
    d = g - op.values
    assert np.abs(d - d.conj().transpose(0, 2, 1)).max() <= 1e-12


def test_step_rank_at_most_two():
    dom = build_grid(2, 2)
    op = OperatorField.embed(random_hermitian_field(dom, 4, seed=1), 12)
    tr = operator_reduce(op, 0.05, K=6)
    prev = op.values
    for g in tr.g:
        sv = np.linalg.svd(g - prev, compute_uv=False)
        assert (sv > 1e-10).sum(axis=1).max() <= 2
        prev = g


def test_non_hermitian_field():
    dom = build_grid(1, 2)
    rng = np.random.default_rng(0)
    vals = np.zeros((dom.n_vertices, 10, 10), dtype=complex)
    vals[:, :4, :4] = rng.normal(size=(dom.n_vertices, 4, 4))
    op = OperatorField(dom, vals, support=4)
    tr = operator_reduce(op, 0.1, K=4)
    assert tr.invariants()["passed"]


def test_headroom():
    dom = build_grid(0, 1)
    op = OperatorField.embed(zero_field(dom, 4), 8)
    with pytest.raises(PreconditionError):
        operator_reduce(op, 0.1, K=3)
    with pytest.raises(PreconditionError):
        operator_reduce(op, 0.1, K=0)
    with pytest.raises(PreconditionError):
        operator_reduce(MatrixField(dom, op.values), 0.1, K=1)


def test_freeze_vacuous_and_fault_injection():
    dom = build_sphere(1, 6)
    op = OperatorField.embed(random_hermitian_field(dom, 4, seed=2), 14)
    tr1 = operator_reduce(op, 0.1, K=1)
    assert column_freeze_check(tr1) == 0.0
    tr = operator_reduce(op, 0.1, K=6)
    assert column_freeze_check(tr) <= 1e-10
    tr.h[4] = tr.h[4].copy()
    tr.h[4][0, 3, 1] += 1e-3
    assert column_freeze_check(tr) >= 1e-3
    assert not tr.invariants()["checks"]["column_freeze"]


def test_deterministic():
    dom = build_sphere(1, 6)
    op = OperatorField.embed(random_hermitian_field(dom, 4, seed=2), 12)
    a = operator_reduce(op, 0.1, K=5, seed=1)
    b = operator_reduce(op, 0.1, K=5, seed=1)
    assert np.array_equal(a.final_h, b.final_h) and np.array_equal(a.final_u, b.final_u)


def test_trace_serializes():
    dom = build_grid(1, 2)
    op = OperatorField.embed(random_hermitian_field(dom, 3, seed=2), 9)
    d = operator_reduce(op, 0.1, K=4).to_dict()
    assert d["K"] == 4 and d["N"] == 9
    json.dumps(d, allow_nan=False)
