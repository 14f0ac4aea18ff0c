"""Builtin fields used by the command line and the tests."""

from __future__ import annotations

import numpy as np

from .domain import Domain, MatrixField
from .errors import PreconditionError
from .spectra import bott_field


def _hermitian_coefficients(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    a = rng.uniform(-1.0, 1.0, (count, n, n)) + 1j * rng.uniform(-1.0, 1.0, (count, n, n))
    return 0.5 * (a + np.conj(np.swapaxes(a, 1, 2)))


def random_hermitian_field(domain: Domain, n: int, seed: int = 0) -> MatrixField:
    """``A_0 + sum_i x_i A_i`` over the vertex coordinates ``x``.

    Each ``A_i`` has real and imaginary parts drawn uniformly from [-1, 1]
    by ``numpy.random.default_rng(seed)`` and is then replaced by its
    Hermitian part. The field is affine in the coordinates, so it is the
    restriction of a smooth field on the ambient space.
    """
    if n < 1:
        raise PreconditionError("matrix size must be positive")
    rng = np.random.default_rng(int(seed))
    amb = domain.ambient_dim
    coef = _hermitian_coefficients(rng, amb + 1, n)
    x = np.concatenate([np.ones((domain.n_vertices, 1)), domain.vertices], axis=1)
    return MatrixField(domain, np.tensordot(x, coef, axes=1))


def zero_field(domain: Domain, n: int) -> MatrixField:
    return MatrixField(domain, np.zeros((domain.n_vertices, n, n), dtype=complex))


def constant_field(domain: Domain, m) -> MatrixField:
    m = np.asarray(m, dtype=complex)
    return MatrixField(domain, np.broadcast_to(m, (domain.n_vertices,) + m.shape).copy())


def shift_matrix(n: int) -> np.ndarray:
    """The truncated unilateral shift ``e_i -> e_{i+1}``."""
    return np.eye(n, k=-1, dtype=complex)


def shift_field(domain: Domain, n: int) -> MatrixField:
    return constant_field(domain, shift_matrix(n))


def block_diag_fields(*fields: MatrixField) -> MatrixField:
    dom = fields[0].domain
    n = sum(f.n for f in fields)
    out = np.zeros((dom.n_vertices, n, n), dtype=complex)
    i = 0
    for f in fields:
        out[:, i:i + f.n, i:i + f.n] = f.values
        i += f.n
    return MatrixField(dom, out)


def bott_sum(domain: Domain, copies: int = 1, pad: int = 0) -> MatrixField:
    """``copies`` Bott projections on the diagonal followed by a ``pad x pad`` zero block."""
    if copies < 1 or pad < 0:
        raise PreconditionError("need copies >= 1 and pad >= 0")
    parts = [bott_field(domain)] * copies
    if pad:
        parts.append(zero_field(domain, pad))
    return block_diag_fields(*parts)
