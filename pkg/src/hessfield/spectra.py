"""Sturm sequences, multiplicity bounds and eigenvalue separation for fields."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .avoidance import VectorField, avoid_k_maps
from .domain import Domain, MatrixField, ToleranceField
from .errors import PreconditionError
from .linalg import check_hermitian, eigvalsh_desc, h_margins, herm_part, opnorm
from .reduction import _Sweep, _run_default, default_columns

CLUSTER_RTOL = 1e-7


# --------------------------------------------------------------- Sturm


@dataclass(frozen=True)
class SturmSequence:
    """Characteristic polynomials ``p_i(t) = det(c_i - t)`` of the trailing corners.

    ``coeffs[i-1]`` holds ``p_i`` (highest degree first, as in ``numpy.polyval``)
    for ``i = 1..n``; ``p_{n+1} = 1`` by convention.
    """

    coeffs: tuple[np.ndarray, ...]

    @classmethod
    def from_matrix(cls, x) -> "SturmSequence":
        x = np.asarray(x, dtype=complex)
        n = x.shape[0]
        out = []
        for i in range(n):
            c = x[i:, i:]
            p = np.poly(c) * (-1) ** (n - i)
            out.append(np.real_if_close(p, tol=1e6))
        return cls(tuple(out))

    def __call__(self, i: int, t):
        if i == len(self.coeffs) + 1:
            return np.ones_like(np.asarray(t, dtype=float))
        return np.polyval(self.coeffs[i - 1], t)

    def degree(self, i: int) -> int:
        return len(self.coeffs[i - 1]) - 1


@dataclass(frozen=True)
class SturmCheck:
    passed: bool
    max_residual: float
    tolerance: float
    indices: tuple[int, ...]


def _corner_dets(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``D[i, s] = det(x[i:, i:] - t_s)`` for ``i = 0..n``, with ``D[n] = 1``."""
    n = x.shape[0]
    D = np.ones((n + 1, len(t)), dtype=complex)
    eye = np.eye(n)
    for i in range(n):
        c = x[i:, i:][None] - t[:, None, None] * eye[i:, i:][None]
        D[i] = np.linalg.det(c)
    return D


def sturm_recurrence_check(x, k: int | None = None, samples: int = 20) -> SturmCheck:
    """Check ``p_i = (x_ii - t) p_{i+1} - |x_{i+1,i}|^2 p_{i+2}`` against determinants.

    The identity is tested for ``1 <= i <= min(k, n-1)`` (using ``p_{n+1} = 1``)
    at ``samples`` points spread over ``[-|x| - 1, |x| + 1]``.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    k = n if k is None else k
    scale = float(opnorm(x))
    t = np.linspace(-scale - 1.0, scale + 1.0, samples)
    D = _corner_dets(x, t)
    idx = tuple(range(1, min(k, n - 1) + 1))
    res = 0.0
    for i in idx:
        rec = (x[i - 1, i - 1] - t) * D[i] - abs(x[i, i - 1]) ** 2 * D[i + 1]
        res = max(res, float(np.abs(D[i - 1] - rec).max()))
    tol = 1e-8 * max(1.0, scale ** n)
    return SturmCheck(res <= tol, res, tol, idx)


# ------------------------------------------------------- multiplicities


def cluster_sizes(w, tol: float) -> list[int]:
    """Group sorted real eigenvalues whose consecutive gaps are at most ``tol``."""
    w = np.sort(np.asarray(w, dtype=float))[::-1]
    if len(w) == 0:
        return []
    sizes = [1]
    for gap in -np.diff(w):
        if gap <= tol:
            sizes[-1] += 1
        else:
            sizes.append(1)
    return sizes


def cluster_tolerance(x, tolerance_scale: float = 1.0) -> float:
    return CLUSTER_RTOL * (1.0 + float(opnorm(np.asarray(x)))) * tolerance_scale


def _complex_clusters(w: np.ndarray, tol: float) -> list[list[int]]:
    """Single-linkage clusters of complex eigenvalues."""
    n = len(w)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(n):
        for b in range(a + 1, n):
            if abs(w[a] - w[b]) <= tol:
                parent[find(a)] = find(b)
    groups: dict[int, list[int]] = {}
    for a in range(n):
        groups.setdefault(find(a), []).append(a)
    return list(groups.values())


@dataclass(frozen=True)
class MultiplicityCheck:
    max_mult: int
    count_mult_gt1: int
    bound_max: int
    bound_count: int | None
    passed_max: bool
    passed_count: bool | None
    profile: tuple[int, ...]

    @property
    def passed(self) -> bool:
        return self.passed_max and self.passed_count is not False


def multiplicity_bounds_check(x, k: int, tolerance_scale: float = 1.0) -> MultiplicityCheck:
    """Eigenvalue multiplicities of ``x`` in ``H_n^k`` against the two bounds.

    Hermitian input is clustered on the real line and multiplicity is the
    cluster size. Otherwise multiplicity is geometric: for each cluster of
    eigenvalues, ``n - rank(x - m)`` at the cluster mean ``m``. The count
    bound is only asserted for Hermitian input.

    Raises
    ------
    PreconditionError
        If ``x`` is not in ``H_n^k``.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    sub, zero = h_margins(x, k)
    scale = 1.0 + float(opnorm(x))
    if zero > 1e-9 * scale or sub < 1e-9:
        raise PreconditionError(f"matrix is not in H_{n}^{k}")
    tol = cluster_tolerance(x, tolerance_scale)
    hermitian = bool(np.abs(x - x.conj().T).max() <= 1e-10 * scale)
    if hermitian:
        profile = cluster_sizes(eigvalsh_desc(x), tol)
    else:
        w = np.linalg.eigvals(x)
        loose = max(tol, 1e-5 * scale)
        profile = []
        for grp in _complex_clusters(w, loose):
            m = w[grp].mean()
            s = np.linalg.svd(x - m * np.eye(n), compute_uv=False)
            profile.append(max(1, int(np.sum(s <= tol))) if len(grp) > 1 else 1)
    max_mult = max(profile) if profile else 0
    count = sum(1 for s in profile if s >= 2)
    bmax = max(n - k, 1)
    bcount = max(n - k - 1, 1) if hermitian else None
    return MultiplicityCheck(max_mult, count, bmax, bcount, max_mult <= bmax,
                             (count <= bcount) if hermitian else None, tuple(profile))


@dataclass(frozen=True)
class InterlacingCheck:
    max_violation: float
    violations: int
    tolerance: float


def interlacing_check(x) -> InterlacingCheck:
    """Interlacing of the spectrum of ``x`` with that of its trailing ``(n-1)``-corner."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    if n < 2:
        raise PreconditionError("interlacing needs n >= 2")
    lam = eigvalsh_desc(x)
    mu = eigvalsh_desc(x[1:, 1:])
    tol = 1e-9 * (1.0 + float(opnorm(x)))
    gaps = np.concatenate([lam[:-1] - mu, mu - lam[1:]])
    worst = float(max(0.0, -gaps.min()))
    return InterlacingCheck(worst, int(np.sum(gaps < -tol)), tol)


# ------------------------------------------------------------- reports


@dataclass(eq=False)
class SeparationReport:
    """Per-vertex spectra of a separated field and their cluster profiles."""

    eigenvalues: np.ndarray
    profiles: tuple[tuple[int, ...], ...]
    gap_min: np.ndarray
    perturbation: np.ndarray
    epsilon: np.ndarray
    hermitian_gap: float

    @property
    def distinct_count_min(self) -> int:
        return min((len(p) for p in self.profiles), default=0)

    @property
    def max_multiplicity(self) -> int:
        return max((max(p) for p in self.profiles if p), default=0)

    @property
    def clusters_gt1_max(self) -> int:
        return max((sum(1 for s in p if s > 1) for p in self.profiles), default=0)

    @property
    def budget_ok(self) -> bool:
        return bool(np.all(self.perturbation < self.epsilon))

    def to_dict(self) -> dict:
        return {"distinct_count_min": self.distinct_count_min,
                "max_multiplicity": self.max_multiplicity,
                "clusters_gt1_max": self.clusters_gt1_max,
                "gap_min": float(self.gap_min.min(initial=np.inf)),
                "perturbation_max": float(self.perturbation.max(initial=0.0)),
                "budget_ok": self.budget_ok,
                "hermitian_gap": self.hermitian_gap}

    def to_csv(self) -> str:
        n = self.eigenvalues.shape[1]
        buf = io.StringIO()
        buf.write(",".join(["vertex"] + [f"eig{i + 1}" for i in range(n)] + ["profile", "gap_min"]) + "\n")
        for v, (w, prof, gap) in enumerate(zip(self.eigenvalues, self.profiles, self.gap_min)):
            row = [str(v)] + [repr(float(a)) for a in w] + ["-".join(map(str, prof)), repr(float(gap))]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def separation_report(f: MatrixField, g: np.ndarray, eps: np.ndarray,
                      tolerance_scale: float = 1.0) -> SeparationReport:
    w = eigvalsh_desc(g)
    tols = CLUSTER_RTOL * (1.0 + opnorm(g)) * tolerance_scale
    profiles = tuple(tuple(cluster_sizes(wv, t)) for wv, t in zip(w, tols))
    gaps = (-np.diff(w, axis=1)).min(axis=1, initial=np.inf)
    delta = g - f.values
    herm = float(np.abs(delta - np.conj(np.swapaxes(delta, 1, 2))).max(initial=0.0))
    herm = max(herm, float(np.abs(g - np.conj(np.swapaxes(g, 1, 2))).max(initial=0.0)))
    return SeparationReport(w, profiles, gaps, opnorm(delta), np.asarray(eps), herm)


def _finish(sweep: _Sweep, tolerance_scale: float):
    res = sweep.result(0, 0, "separation")
    g = res.g.values
    return MatrixField(sweep.domain, g), separation_report(sweep.f, g, sweep.eps.values, tolerance_scale)


def _require_hermitian(f: MatrixField):
    check_hermitian(f.values)


def separate_default(f: MatrixField, eps, seed: int = 0, tolerance_scale: float = 1.0):
    """Perturb ``f`` so that multiplicities are at most ``ceil(d/2) + 1``.

    Returns
    -------
    g : MatrixField
    report : SeparationReport
    """
    _require_hermitian(f)
    sweep = _Sweep(f, eps, seed)
    _run_default(sweep, default_columns(f.n, f.domain.d))
    return _finish(sweep, tolerance_scale)


def separate_dim2(f: MatrixField, eps, seed: int = 0, tolerance_scale: float = 1.0):
    """Total eigenvalue separation over bases of dimension at most 2."""
    _require_hermitian(f)
    n, d = f.n, f.domain.d
    if d > 2:
        raise PreconditionError(f"total separation needs d <= 2, got {d}")
    sweep = _Sweep(f, eps, seed)
    if n >= 2:
        _run_default(sweep, n - 3)
        if n >= 3:
            sweep.givens_column()
        h = sweep.h
        lead = eigvalsh_desc(h[:, :n - 1, :n - 1])
        b = np.stack([h[:, n - 1, n - 2].real, h[:, n - 1, n - 2].imag, h[:, n - 1, n - 1].real], axis=1)
        dom = sweep.domain
        targets = [VectorField(dom, np.stack([0 * lead[:, i], 0 * lead[:, i], lead[:, i]], axis=1))
                   for i in range(n - 1)]
        # the mirrored embedding has operator norm at most sqrt(2) times the vector change
        budget = ToleranceField(dom, sweep.step_budget / math.sqrt(2.0))
        g1, cert = avoid_k_maps(VectorField(dom, b), targets, budget, seed=sweep._tag())
        sweep.certificates.append(cert)
        new = g1.values
        off = new[:, 0] + 1j * new[:, 1]
        h[:, n - 1, n - 2] = off
        h[:, n - 2, n - 1] = off.conj()
        h[:, n - 1, n - 1] = new[:, 2]
        sweep.steps += 1
    return _finish(sweep, tolerance_scale)


def separate_dim4(f: MatrixField, eps, seed: int = 0, tolerance_scale: float = 1.0):
    """At least ``n - 1`` distinct eigenvalues over bases of dimension at most 4."""
    _require_hermitian(f)
    n, d = f.n, f.domain.d
    if d > 4:
        raise PreconditionError(f"this separation needs d <= 4, got {d}")
    sweep = _Sweep(f, eps, seed)
    if n >= 3:
        _run_default(sweep, n - 3)
        h = sweep.h
        lam = eigvalsh_desc(h[:, :n - 2, :n - 2])
        mu = eigvalsh_desc(h[:, n - 2:, n - 2:])
        a = h[:, n - 2, n - 3]
        b = h[:, n - 1, n - 3]
        dom = sweep.domain
        base = np.stack([-a.real, -a.imag, -b.real, -b.imag], axis=1)
        targets = []
        for j in range(2):
            for i in range(n - 2):
                targets.append(VectorField(dom, np.c_[base, lam[:, i] - mu[:, j]]))
        budget = ToleranceField(dom, sweep.step_budget / math.sqrt(2.0))
        zero = VectorField(dom, np.zeros((dom.n_vertices, 5)))
        cfield, cert = avoid_k_maps(zero, targets, budget, seed=sweep._tag())
        sweep.certificates.append(cert)
        c = cfield.values
        c1 = c[:, 0] + 1j * c[:, 1]
        c2 = c[:, 2] + 1j * c[:, 3]
        h[:, n - 2, n - 3] += c1
        h[:, n - 3, n - 2] += c1.conj()
        h[:, n - 1, n - 3] += c2
        h[:, n - 3, n - 1] += c2.conj()
        h[:, n - 2, n - 2] += c[:, 4]
        h[:, n - 1, n - 1] += c[:, 4]
        sweep.steps += 1
    return _finish(sweep, tolerance_scale)


def bott_field(domain: Domain) -> MatrixField:
    """``(1/2) [[1 - z, x + iy], [x - iy, 1 + z]]`` at each vertex ``(x, y, z)``."""
    pts = domain.vertices
    if pts.shape[1] != 3:
        raise PreconditionError("the Bott field needs vertices in R^3")
    if np.any(np.linalg.norm(pts, axis=1) > 1 + 1e-12):
        raise PreconditionError("vertices must lie in the closed unit ball")
    x, y, z = pts.T
    vals = np.empty((len(pts), 2, 2), dtype=complex)
    vals[:, 0, 0] = 1 - z
    vals[:, 0, 1] = x + 1j * y
    vals[:, 1, 0] = x - 1j * y
    vals[:, 1, 1] = 1 + z
    return MatrixField(domain, 0.5 * vals)
