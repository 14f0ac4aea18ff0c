"""Dense complex kernels: annihilating unitaries, Hermitian spectra, polar
factors and membership tests for the Hessenberg-type matrix classes.

Most kernels accept a single matrix or a stack ``(..., n, n)``; the batched
forms are what the field pipelines use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError

RAY_TOL = 1e-10
POLAR_MIN_SV = 1e-8
HERM_RTOL = 1e-10
TOL_POS = 1e-9


def dag(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the trailing two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def herm_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dag(a))


def opnorm(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.shape[-1] == 0 or a.shape[-2] == 0:
        return np.zeros(a.shape[:-2])
    return np.linalg.svd(a, compute_uv=False)[..., 0]


def unitarity_defect(u: np.ndarray) -> np.ndarray:
    n = u.shape[-1]
    return opnorm(u @ dag(u) - np.eye(n))


def default_tol_zero(m: np.ndarray) -> np.ndarray:
    return 1e-9 * (1.0 + opnorm(m))


# ---------------------------------------------------------------- Householder


@dataclass(frozen=True)
class HouseholderData:
    """Householder vector of ``b`` together with the annihilating unitary.

    ``vector`` is ``h = b/|b| + e1`` and ``reflection`` is ``2hh*/<h,h> - 1``.
    The reflection only sends ``b`` to ``|b| e1`` when ``b[0]`` is real; for
    general complex ``b`` the continuous unitary ``matrix`` is used instead.
    It maps ``b/|b|`` to ``e1``, is the identity on vectors orthogonal to both
    ``e1`` and ``b``, and depends continuously on ``b`` away from the ray
    ``{t e1 : t <= 0}``.
    """

    vector: np.ndarray
    matrix: np.ndarray

    @property
    def reflection(self) -> np.ndarray:
        h = self.vector
        return 2.0 * np.outer(h, h.conj()) / np.vdot(h, h).real - np.eye(len(h))


def _one_plus_re(b1: np.ndarray, rest_sq: np.ndarray, r: np.ndarray) -> np.ndarray:
    """``1 + Re(b1)/r`` without cancellation when ``Re b1`` is close to ``-r``."""
    re = b1.real
    direct = 1.0 + re / np.where(r > 0, r, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        stable = (b1.imag ** 2 + rest_sq) / (r * (r - re))
    return np.where(re < 0, stable, direct)


def householder_unitaries(b: np.ndarray, ray_tol: float = RAY_TOL):
    """Batched annihilators for the rows of ``b`` (shape ``(V, m)``).

    Returns ``(U, r, h)`` with ``U[v] @ b[v] = r[v] e1``.
    """
    b = np.asarray(b, dtype=complex)
    if b.ndim == 1:
        b = b[None]
    nv, m = b.shape
    r = np.linalg.norm(b, axis=1)
    if np.any(r == 0):
        raise PreconditionError("cannot annihilate a zero vector")
    beta = b / r[:, None]
    a = beta[:, 0]
    rest = beta.copy()
    rest[:, 0] = 0.0
    rest_sq = np.sum(np.abs(rest) ** 2, axis=1)
    re1 = _one_plus_re(b[:, 0], rest_sq * r ** 2, r)
    h = beta.copy()
    h[:, 0] += 1.0
    hnorm = np.sqrt(re1 ** 2 + a.imag ** 2 + rest_sq)
    if np.any(hnorm < ray_tol):
        worst = int(np.argmin(hnorm))
        raise PreconditionError(
            f"vector {worst} lies within {hnorm[worst]:.3g} of the forbidden ray")
    one_plus_abar = re1 - 1j * a.imag
    phi = (re1 + 1j * a.imag) / one_plus_abar
    # V maps e1 to beta; U = V* annihilates b.
    V = np.broadcast_to(np.eye(m, dtype=complex), (nv, m, m)).copy()
    V[:, 0, 0] = a
    V[:, 1:, 0] += rest[:, 1:]
    V[:, 0, 1:] -= phi[:, None] * rest[:, 1:].conj()
    V[:, 1:, 1:] -= rest[:, 1:, None] * rest[:, None, 1:].conj() / one_plus_abar[:, None, None]
    return dag(V), r, h


def householder_annihilate(b) -> tuple[HouseholderData, float]:
    """Unitary sending ``b`` to ``(|b|, 0, ..., 0)``, continuous off the ray ``R_{<=0} e1``.

    Raises
    ------
    PreconditionError
        If ``|b/|b| + e1| < 1e-10``.
    """
    b = np.asarray(b, dtype=complex).reshape(-1)
    U, r, h = householder_unitaries(b[None])
    return HouseholderData(h[0], U[0]), float(r[0])


# -------------------------------------------------------------------- Givens


def givens_unitaries(a: np.ndarray, b: np.ndarray):
    """Batched ``(1/r) [[conj a, conj b], [-b, a]]``; returns ``(u0, r)``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    r = np.hypot(np.abs(a), np.abs(b))
    if np.any(r == 0):
        raise PreconditionError("Givens rotation of the zero vector")
    u = np.empty(a.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = a.conj() / r
    u[..., 0, 1] = b.conj() / r
    u[..., 1, 0] = -b / r
    u[..., 1, 1] = a / r
    return u, r


def givens_annihilate(a: complex, b: complex) -> np.ndarray:
    """2x2 unitary ``u0`` with ``u0 @ (a, b) = (r, 0)``."""
    u, _ = givens_unitaries(np.asarray(a), np.asarray(b))
    return u


# ----------------------------------------------------------- Hermitian spectra


def check_hermitian(m: np.ndarray, rtol: float = HERM_RTOL) -> None:
    gap = opnorm(m - dag(m))
    scale = opnorm(m)
    bad = gap > rtol * np.maximum(scale, 1e-300)
    bad &= gap > 0
    if np.any(bad):
        raise PreconditionError(
            f"matrix is not Hermitian (|m - m*| = {float(np.max(gap)):.3g})")


def hermitian_eig(m: np.ndarray, check: bool = True):
    """Eigenvalues (descending) and unitary eigenvectors of Hermitian ``m``.

    Accepts a single matrix or a stack. Ties keep the order produced by the
    underlying solver, so results are deterministic.
    """
    m = np.asarray(m, dtype=complex)
    if check:
        check_hermitian(m)
    w, v = np.linalg.eigh(herm_part(m))
    order = np.argsort(-w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return w, v


def eigvalsh_desc(m: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(herm_part(np.asarray(m, dtype=complex)))[..., ::-1]


def spectral_projection(m: np.ndarray, threshold: float = 0.5):
    """``chi_(threshold, inf)(m)`` for Hermitian ``m`` and the distance of the spectrum to ``threshold``."""
    w, v = np.linalg.eigh(herm_part(np.asarray(m, dtype=complex)))
    keep = (w > threshold).astype(float)
    q = (v * keep[..., None, :]) @ dag(v)
    gap = np.min(np.abs(w - threshold), axis=-1)
    return q, gap


# ---------------------------------------------------------------------- polar


def polar_unitary(z: np.ndarray, min_sv: float = POLAR_MIN_SV) -> np.ndarray:
    """Unitary polar factor ``z (z* z)^{-1/2}``.

    Raises
    ------
    PreconditionError
        If the smallest singular value of ``z`` is below ``min_sv``.
    """
    z = np.asarray(z, dtype=complex)
    s = np.linalg.svd(z, compute_uv=False)
    if np.any(s[..., -1] < min_sv):
        raise PreconditionError(
            f"polar factor of a near-singular matrix (sigma_min = {float(np.min(s[..., -1])):.3g})")
    w, v = np.linalg.eigh(herm_part(dag(z) @ z))
    inv_sqrt = (v * (1.0 / np.sqrt(w))[..., None, :]) @ dag(v)
    return z @ inv_sqrt


# ------------------------------------------------------------ class membership


@dataclass(frozen=True)
class HFormDescriptor:
    """Measured distance of a matrix from ``H_n^k``.

    ``subdiag_min`` is the smallest real part among the subdiagonal entries
    of the first ``k`` columns (``inf`` if there are none); ``zero_max``
    collects the magnitudes of required zeros and the imaginary parts of the
    required-positive entries.
    """

    n: int
    k: int
    subdiag_min: float
    zero_max: float
    tol_zero: float
    tol_pos: float

    @property
    def member(self) -> bool:
        return self.zero_max <= self.tol_zero and self.subdiag_min >= self.tol_pos

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "subdiag_min": self.subdiag_min,
                "zero_max": self.zero_max, "tol_zero": self.tol_zero,
                "tol_pos": self.tol_pos, "member": self.member}


def h_margins(m: np.ndarray, k: int):
    """Batched ``(subdiag_min, zero_max)`` for membership in ``H_n^k``."""
    m = np.asarray(m, dtype=complex)
    n = m.shape[-1]
    if not 0 <= k <= n:
        raise PreconditionError(f"k={k} outside [0, {n}]")
    batch = m.shape[:-2]
    i, j = np.indices((n, n))
    zero_mask = (j < k) & (i >= j + 2)
    if zero_mask.any():
        zero_max = np.abs(m[..., zero_mask]).max(axis=-1)
    else:
        zero_max = np.zeros(batch)
    cols = np.arange(min(k, n - 1))
    if len(cols):
        sub = m[..., cols + 1, cols]
        subdiag_min = sub.real.min(axis=-1)
        zero_max = np.maximum(zero_max, np.abs(sub.imag).max(axis=-1))
    else:
        subdiag_min = np.full(batch, np.inf)
    return subdiag_min, zero_max


def classify_H(m, k: int, tol_zero: float | None = None, tol_pos: float = TOL_POS) -> HFormDescriptor:
    m = np.asarray(m, dtype=complex)
    if tol_zero is None:
        tol_zero = float(default_tol_zero(m))
    sub, zero = h_margins(m, k)
    return HFormDescriptor(m.shape[-1], k, float(sub), float(zero), float(tol_zero), float(tol_pos))


@dataclass(frozen=True)
class BHFormDescriptor:
    """Block structure of a projection measured against ``BH_n^k``.

    ``block_sizes`` is ``(alpha_1, ..., alpha_r, beta)``. The partition is
    read greedily: a 2-block starts at column ``j <= k`` whenever the entry
    just below the diagonal is non-negligible.
    """

    n: int
    k: int
    block_sizes: tuple[int, ...]
    nonneg_min: float
    offblock_max: float
    imag_max: float
    projection_residual: float
    tol_zero: float

    @property
    def member(self) -> bool:
        t = self.tol_zero
        return (self.offblock_max <= t and self.nonneg_min >= -t
                and self.imag_max <= t and self.projection_residual <= t)

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "block_sizes": list(self.block_sizes),
                "nonneg_min": self.nonneg_min, "offblock_max": self.offblock_max,
                "imag_max": self.imag_max, "projection_residual": self.projection_residual,
                "tol_zero": self.tol_zero, "member": self.member}


def classify_BH(p, k: int, tol_zero: float = 1e-9) -> BHFormDescriptor:
    p = np.asarray(p, dtype=complex)
    n = p.shape[-1]
    if not 0 <= k <= n:
        raise PreconditionError(f"k={k} outside [0, {n}]")
    alphas = []
    j = 0
    while j < k:
        if j + 1 < n and abs(p[j + 1, j]) > tol_zero:
            alphas.append(2)
            j += 2
        else:
            alphas.append(1)
            j += 1
    lead = sum(alphas)
    beta = n - lead
    mask = np.zeros((n, n), dtype=bool)
    start = 0
    for a in alphas + [beta]:
        mask[start:start + a, start:start + a] = True
        start += a
    off = np.abs(p[~mask]).max(initial=0.0)
    corner = p[:lead, :lead]
    nonneg_min = float(corner.real.min()) if lead else float("inf")
    imag_max = float(np.abs(corner.imag).max(initial=0.0))
    resid = float(max(opnorm(p @ p - p), opnorm(p - dag(p))))
    return BHFormDescriptor(n, k, tuple(alphas) + (beta,), nonneg_min, float(off),
                            imag_max, resid, float(tol_zero))
