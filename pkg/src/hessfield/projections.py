"""Block reduction of projection fields and extraction of nonvanishing sections."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .domain import ContinuityAudit, MatrixField, audit_continuity
from .errors import InvariantViolation, PreconditionError
from .linalg import (BHFormDescriptor, classify_BH, dag, opnorm, polar_unitary,
                     spectral_projection, unitarity_defect)
from .reduction import ReductionResult, corner_size, hessenberg_summary

SPECTRAL_GAP_MIN = 0.1
INV_SQRT2 = 1.0 / math.sqrt(2.0)


class ProjectionField(MatrixField):
    """A matrix field whose samples are orthogonal projections.

    Raises
    ------
    PreconditionError
        If some sample is not idempotent within 1e-10 or not self-adjoint
        within 1e-12.
    """

    def __post_init__(self):
        super().__post_init__()
        p = self.values
        idem = opnorm(p @ p - p).max(initial=0.0)
        adj = opnorm(p - dag(p)).max(initial=0.0)
        if idem > 1e-10 or adj > 1e-12:
            raise PreconditionError(
                f"not a projection field (|p^2 - p| = {idem:.2e}, |p - p*| = {adj:.2e})")

    @classmethod
    def from_field(cls, f: MatrixField) -> "ProjectionField":
        return cls(f.domain, f.values)

    @property
    def ranks(self) -> np.ndarray:
        return np.rint(np.trace(self.values, axis1=1, axis2=2).real).astype(int)

    @property
    def b(self) -> int:
        return int(self.ranks.min())


def round_to_projection(m: np.ndarray) -> np.ndarray:
    """Nearest orthogonal projection to a nearly idempotent Hermitian stack."""
    q, _ = spectral_projection(m, 0.5)
    return 0.5 * (q + dag(q))


def gamma_of_dim(d: int) -> int:
    """Rank deficit allowed when splitting off a trivial summand over dimension ``d``.

    >>> [gamma_of_dim(d) for d in range(7)]
    [0, 0, 1, 1, 2, 3, 3]
    """
    if d < 0:
        raise PreconditionError("dimension must be nonnegative")
    if d <= 1:
        return 0
    if d <= 3:
        return 1
    return math.ceil(d / 2)


def default_projection_epsilon(n: int) -> float:
    """Just inside the largest tolerance the rounding argument allows."""
    return 0.9 / (24.0 ** 2 * n ** 3)


def band_mask(n: int, c: int) -> np.ndarray:
    """Entries kept before shrinking: the tridiagonal band touching the first
    ``n - c`` columns, plus the whole trailing ``c x c`` corner."""
    i, j = np.indices((n, n))
    band = (np.abs(i - j) <= 1) & (np.minimum(i, j) < n - c)
    corner = (i >= n - c) & (j >= n - c)
    return band | corner


def shrink(z: np.ndarray, t: float) -> np.ndarray:
    """Entrywise ``z * max(0, |z| - t) / |z|`` (zero at zero)."""
    a = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(a > t, (a - t) / a, 0.0)
    return z * fac


@dataclass(eq=False)
class ProjectionReduction:
    q: ProjectionField
    u: MatrixField
    descriptors: tuple[BHFormDescriptor, ...]
    reduction: ReductionResult
    epsilon: float
    c: int
    spectral_gap: np.ndarray
    truncation_error: np.ndarray
    conjugation_error: np.ndarray
    rank_error: np.ndarray

    def invariants(self, tolerance_scale: float = 1.0) -> dict:
        ts = tolerance_scale
        q = self.q.values
        n = q.shape[-1]
        idem = float(opnorm(q @ q - q).max(initial=0.0))
        adj = float(opnorm(q - dag(q)).max(initial=0.0))
        unit = float(unitarity_defect(self.u.values).max(initial=0.0))
        checks = {
            "bh_form": all(d.member for d in self.descriptors),
            "idempotent": idem <= 1e-9 * ts and adj <= 1e-9 * ts,
            "unitary": unit <= 1e-9 * ts,
            "conjugation": float(self.conjugation_error.max(initial=0.0)) <= 1e-8 * ts,
            "spectral_gap": float(self.spectral_gap.min(initial=np.inf)) >= SPECTRAL_GAP_MIN,
            "rank_preserved": float(self.rank_error.max(initial=0.0)) <= 1e-6 * ts,
            "truncation_bound": bool(np.all(self.truncation_error <= n * self.epsilon)),
        }
        return {"passed": all(checks.values()), "checks": checks,
                "k": n - self.c, "epsilon": self.epsilon,
                "spectral_gap_min": float(self.spectral_gap.min(initial=np.inf)),
                "conjugation_max": float(self.conjugation_error.max(initial=0.0)),
                "truncation_max": float(self.truncation_error.max(initial=0.0)),
                "rank_error_max": float(self.rank_error.max(initial=0.0)),
                "unitarity_max": unit,
                "block_profiles": sorted({"-".join(map(str, d.block_sizes)) for d in self.descriptors})}


def projection_reduce(p: ProjectionField, seed: int = 0, eps: float | None = None) -> ProjectionReduction:
    """Conjugate a projection field into block form ``BH_n^{n-c}``.

    Parameters
    ----------
    p : ProjectionField
    seed : int
    eps : float, optional
        Tolerance handed to the Hessenberg reduction; must be below
        ``1/(24^2 n^3)``. Defaults to 90% of that bound.

    Returns
    -------
    ProjectionReduction
        ``q = u p u*`` with per-vertex block descriptors.

    Raises
    ------
    InvariantViolation
        If the rounded field has eigenvalues within 0.1 of 1/2.
    """
    if not isinstance(p, ProjectionField):
        p = ProjectionField.from_field(p)
    n, d = p.n, p.domain.d
    bound = 1.0 / (24.0 ** 2 * n ** 3)
    eps = default_projection_epsilon(n) if eps is None else float(eps)
    if not 0 < eps < bound:
        raise PreconditionError(f"epsilon must lie in (0, {bound:.4g})")
    c = corner_size(d)
    red = hessenberg_summary(p, eps, seed)
    ur = red.u.values
    hp = ur @ p.values @ dag(ur)
    mask = band_mask(n, c)
    h1 = np.where(mask, hp, 0.0)
    lead = mask & ~((np.arange(n)[:, None] >= n - c) & (np.arange(n)[None, :] >= n - c))
    h1 = np.where(lead, h1.real, h1)
    trunc = opnorm(h1 - hp)
    h2 = shrink(h1, 2.0 * math.sqrt(n * eps))
    q, gap = spectral_projection(h2, 0.5)
    q = 0.5 * (q + dag(q))
    bad = np.flatnonzero(gap < SPECTRAL_GAP_MIN)
    if len(bad):
        raise InvariantViolation(
            f"rounding gap {gap[bad[0]]:.3g} < {SPECTRAL_GAP_MIN} at vertex {int(bad[0])}")
    eye = np.eye(n)
    z = q @ hp + (eye - q) @ (eye - hp)
    v = polar_unitary(z)
    u = v @ ur
    conj = opnorm(u @ p.values @ dag(u) - q)
    ranks_p = np.trace(p.values, axis1=1, axis2=2).real
    ranks_q = np.trace(q, axis1=1, axis2=2).real
    k = n - c
    qf = ProjectionField(p.domain, q)
    descriptors = tuple(classify_BH(qv, k) for qv in q)
    return ProjectionReduction(qf, MatrixField(p.domain, u), descriptors, red, eps, c,
                               gap, trunc, conj, np.abs(ranks_p - ranks_q))


@dataclass(eq=False)
class SectionResult:
    section: np.ndarray
    index: np.ndarray
    audit: ContinuityAudit
    input_audit: ContinuityAudit
    warnings: list = field(default_factory=list)

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.section, axis=1)


def extract_section(p: ProjectionField, c: int | None = None, tol: float = 1e-9) -> SectionResult:
    """Nonvanishing section of a projection field already in block form.

    At each vertex the section is the first column of ``p`` whose norm
    reaches ``1/sqrt(2)``; the block form forces that column to exist among
    the first ``n - c + 1``.
    """
    if not isinstance(p, ProjectionField):
        p = ProjectionField.from_field(p)
    n = p.n
    c = gamma_of_dim(p.domain.d) + 1 if c is None else int(c)
    if not 0 <= c <= n:
        raise PreconditionError(f"corner size {c} outside [0, {n}]")
    if np.any(p.ranks < c):
        raise PreconditionError(f"rank must be at least {c} at every vertex")
    vals = p.values
    for v, pv in enumerate(vals):
        desc = classify_BH(pv, n - c)
        if not desc.member:
            raise PreconditionError(f"vertex {v} is not in BH_{n}^{n - c}: {desc.to_dict()}")
    norms = np.linalg.norm(vals, axis=1)           # column norms, shape (V, n)
    hit = norms >= INV_SQRT2 - tol
    if not np.all(hit.any(axis=1)):
        v = int(np.flatnonzero(~hit.any(axis=1))[0])
        raise InvariantViolation(f"no column of norm 1/sqrt(2) at vertex {v}")
    idx = hit.argmax(axis=1)
    if np.any(idx > n - c):
        v = int(np.flatnonzero(idx > n - c)[0])
        raise InvariantViolation(f"section column {int(idx[v]) + 1} beyond n-c+1 at vertex {v}")
    s = vals[np.arange(len(vals)), :, idx]
    audit = audit_continuity(s, p.domain)
    audit_p = audit_continuity(p)
    notes = []
    edges = p.domain.edges
    if len(edges):
        js = np.linalg.norm(s[edges[:, 1]] - s[edges[:, 0]], axis=1)
        jp = opnorm(vals[edges[:, 1]] - vals[edges[:, 0]])
        bad = np.flatnonzero(js > 10.0 * jp + 1e-9)
        for e in bad:
            msg = f"section jump {js[e]:.3g} across edge {tuple(int(x) for x in edges[e])} exceeds 10x the field jump"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return SectionResult(s, idx, audit, audit_p, notes)


@dataclass(eq=False)
class SectionBundle:
    """Pointwise independent sections of the column space of ``p``."""

    p: ProjectionField
    sections: np.ndarray          # (m, V, n)
    reductions: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.sections.shape[0]

    def section_matrix(self) -> np.ndarray:
        return np.transpose(self.sections, (1, 2, 0))   # (V, n, m)

    @property
    def independence_margin(self) -> float:
        if self.m == 0:
            return float("inf")
        sv = np.linalg.svd(self.section_matrix(), compute_uv=False)
        return float(sv[:, -1].min())

    @property
    def gram_min_eig(self) -> float:
        if self.m == 0:
            return float("inf")
        S = self.section_matrix()
        return float(np.linalg.eigvalsh(dag(S) @ S)[:, 0].min())

    @property
    def membership_residual(self) -> float:
        S = self.section_matrix()
        return float(np.abs(self.p.values @ S - S).max(initial=0.0))

    def invariants(self, tolerance_scale: float = 1.0) -> dict:
        norms = np.linalg.norm(self.sections, axis=2)
        checks = {
            "in_column_space": self.membership_residual <= 1e-9 * tolerance_scale,
            "independent": self.independence_margin > 0,
            "norms": bool(np.all(norms >= INV_SQRT2 - 1e-9 * tolerance_scale)
                          and np.all(norms <= 1 + 1e-9 * tolerance_scale)),
        }
        return {"passed": all(checks.values()), "checks": checks, "sections": self.m,
                "independence_margin": self.independence_margin,
                "gram_min_eig": self.gram_min_eig,
                "membership_residual": self.membership_residual,
                "norm_min": float(norms.min(initial=np.inf))}

    def margins_csv(self) -> str:
        S = self.section_matrix()
        sv = np.linalg.svd(S, compute_uv=False)[:, -1] if self.m else np.full(len(S), np.inf)
        lines = ["vertex,smallest_singular_value"]
        lines += [f"{v},{float(x)!r}" for v, x in enumerate(sv)]
        return "\n".join(lines) + "\n"


def trivial_summand(p: ProjectionField, seed: int = 0) -> SectionBundle:
    """Split ``b - gamma`` pointwise independent sections off the column space of ``p``.

    Raises
    ------
    PreconditionError
        If the minimal rank ``b`` is below ``gamma + 1``.
    """
    if not isinstance(p, ProjectionField):
        p = ProjectionField.from_field(p)
    gamma = gamma_of_dim(p.domain.d)
    b = p.b
    if b < gamma + 1:
        raise PreconditionError(f"need rank b >= gamma + 1 = {gamma + 1}, got b = {b}")
    cur = p
    sections = []
    reductions = []
    for i in range(b - gamma):
        red = projection_reduce(cur, seed=seed + i)
        sec = extract_section(red.q, c=gamma + 1)
        s = np.einsum("vji,vj->vi", red.u.values.conj(), sec.section)
        sections.append(s)
        reductions.append(red)
        ns = np.sum(np.abs(s) ** 2, axis=1)
        nxt = cur.values - s[:, :, None] * s[:, None, :].conj() / ns[:, None, None]
        cur = ProjectionField(p.domain, round_to_projection(nxt))
    return SectionBundle(p, np.array(sections), reductions)
