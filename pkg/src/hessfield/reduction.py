"""Continuous Hessenberg reduction of matrix fields and structure splittings.

Every reduction works in "reduced coordinates": it keeps the current
``h = u g u*`` and a unitary field ``u``. Each column step perturbs ``h`` by a
self-adjoint amount smaller than ``eps/n`` (so ``g - f`` stays self-adjoint),
then conjugates by a unitary built from the perturbed column. There are at
most ``n - 1`` steps, so the total perturbation stays below ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .avoidance import (AvoidanceCertificate, VectorField, avoid_ray, avoid_zero,
                        complex_to_real, real_to_complex)
from .domain import ContinuityAudit, MatrixField, ToleranceField, as_tolerance, audit_continuity
from .errors import HypothesisViolation, InvariantViolation, PreconditionError
from .linalg import (TOL_POS, check_hermitian, dag, default_tol_zero, eigvalsh_desc,
                     givens_unitaries, h_margins, herm_part, hermitian_eig,
                     householder_unitaries, opnorm, unitarity_defect)


def corner_size(d: int) -> int:
    """Size of the trailing corner left unreduced over a ``d``-dimensional base.

    >>> [corner_size(d) for d in range(7)]
    [0, 0, 2, 2, 3, 4, 4]
    """
    if d < 0:
        raise PreconditionError("dimension must be nonnegative")
    if d <= 1:
        return 0
    if d <= 3:
        return 2
    return math.ceil(d / 2) + 1


def default_columns(n: int, d: int) -> int:
    """Number of columns the Householder sweep can bring to Hessenberg form."""
    return n - math.ceil(d / 2) - 1


# ------------------------------------------------------------------- state


class _Sweep:
    """Mutable reduced-coordinate state shared by the reduction variants."""

    def __init__(self, f: MatrixField, eps, seed: int):
        self.f = f
        self.domain = f.domain
        self.n = f.n
        self.eps = as_tolerance(f.domain, eps)
        self.seed = int(seed)
        self.hermitian = f.is_hermitian()
        self.h = np.array(f.values, dtype=complex)
        nv = f.domain.n_vertices
        self.u = np.broadcast_to(np.eye(self.n, dtype=complex), (nv, self.n, self.n)).copy()
        self.certificates: list[AvoidanceCertificate] = []
        self.step_budget = self.eps.values / max(self.n, 1)
        self.steps = 0
        self.annihilation_residual = 0.0

    def _mirror(self, rows: slice, col: int, delta: np.ndarray):
        self.h[:, rows, col] += delta
        self.h[:, col, rows] += delta.conj()

    def _conjugate(self, start: int, w: np.ndarray):
        """Apply ``1_start (+) w`` on the left of ``u`` and by conjugation on ``h``."""
        s = slice(start, None)
        self.h[:, s, :] = w @ self.h[:, s, :]
        self.h[:, :, s] = self.h[:, :, s] @ dag(w)
        self.u[:, s, :] = w @ self.u[:, s, :]
        if self.hermitian:
            self.h = herm_part(self.h)

    def _tag(self) -> int:
        return self.seed * 1009 + self.steps

    def householder_column(self, p: int):
        n, d = self.n, self.domain.d
        m = n - p - 1
        if d > 2 * m - 2:
            raise HypothesisViolation(
                f"column {p}: dimension {d} exceeds {2 * m - 2}; the column count is too large")
        block = self.h[:, p + 1:, p].copy()
        half = ToleranceField(self.domain, self.step_budget / 2.0)
        vf = VectorField(self.domain, complex_to_real(block))
        g1, c1 = avoid_zero(vf, half, seed=self._tag())
        g2, c2 = avoid_ray(g1, half, seed=self._tag())
        self.certificates += [c1, c2]
        new = real_to_complex(g2.values)
        self._mirror(slice(p + 1, None), p, new - block)
        U, r, _ = householder_unitaries(new)
        e1 = np.zeros((len(r), m))
        e1[:, 0] = r
        res = np.abs(np.einsum("vij,vj->vi", U, new) - e1).max()
        self.annihilation_residual = max(self.annihilation_residual, float(res))
        self._conjugate(p + 1, U)
        self.h[:, p + 2:, p] = 0.0
        self.h[:, p + 1, p] = r
        if self.hermitian:
            self.h[:, p, p + 2:] = 0.0
            self.h[:, p, p + 1] = r
        self.steps += 1

    def givens_column(self):
        n = self.n
        p = n - 3
        if self.domain.d > 3:
            raise HypothesisViolation("the Givens step needs domain dimension at most 3")
        block = self.h[:, n - 2:, p].copy()
        vf = VectorField(self.domain, complex_to_real(block))
        g1, c1 = avoid_zero(vf, ToleranceField(self.domain, self.step_budget), seed=self._tag())
        self.certificates.append(c1)
        new = real_to_complex(g1.values)
        self._mirror(slice(n - 2, None), p, new - block)
        u0, r = givens_unitaries(new[:, 0], new[:, 1])
        res = np.abs(np.einsum("vij,vj->vi", u0, new) - np.stack([r, 0 * r], axis=1)).max()
        self.annihilation_residual = max(self.annihilation_residual, float(res))
        self._conjugate(n - 2, u0)
        self.h[:, n - 1, p] = 0.0
        self.h[:, n - 2, p] = r
        if self.hermitian:
            self.h[:, p, n - 1] = 0.0
            self.h[:, p, n - 2] = r
        self.steps += 1

    def phase_last(self):
        n = self.n
        if self.domain.d > 1:
            raise HypothesisViolation("the phase step needs domain dimension at most 1")
        entry = self.h[:, n - 1, n - 2].copy()
        vf = VectorField(self.domain, complex_to_real(entry[:, None]))
        g1, c1 = avoid_zero(vf, ToleranceField(self.domain, self.step_budget), seed=self._tag())
        self.certificates.append(c1)
        new = real_to_complex(g1.values)[:, 0]
        self._mirror(slice(n - 1, None), n - 2, (new - entry)[:, None])
        zeta = np.abs(new) / new
        w = zeta[:, None, None]
        self._conjugate(n - 1, w)
        self.h[:, n - 1, n - 2] = np.abs(new)
        if self.hermitian:
            self.h[:, n - 2, n - 1] = np.abs(new)
        self.steps += 1

    def result(self, k: int, c: int, variant: str) -> "ReductionResult":
        f = self.f
        uh = dag(self.u) @ self.h @ self.u
        delta = herm_part(uh - f.values)
        g = f.values + delta
        dom = self.domain
        gf = MatrixField(dom, g)
        uf = MatrixField(dom, self.u)
        hf = MatrixField(dom, self.h)
        pert = opnorm(delta)
        return ReductionResult(
            f=f, g=gf, u=uf, h=hf, k_achieved=int(k), c=int(c), variant=variant,
            epsilon=self.eps, perturbation=pert,
            audit_u=audit_continuity(uf), audit_h=audit_continuity(hf),
            certificates=list(self.certificates),
            annihilation_residual=self.annihilation_residual)


# ----------------------------------------------------------------- results


@dataclass(eq=False)
class ReductionResult:
    """Output of a reduction: ``h = u g u*`` with ``h`` in ``H_n^k`` at every vertex."""

    f: MatrixField
    g: MatrixField
    u: MatrixField
    h: MatrixField
    k_achieved: int
    c: int
    variant: str
    epsilon: ToleranceField
    perturbation: np.ndarray
    audit_u: ContinuityAudit
    audit_h: ContinuityAudit
    certificates: list = field(default_factory=list)
    annihilation_residual: float = 0.0

    @property
    def perturbation_max(self) -> float:
        return float(self.perturbation.max(initial=0.0))

    def invariants(self, tolerance_scale: float = 1.0) -> dict:
        """Measured invariants; ``passed`` is True iff all hold."""
        return check_reduction(self.f.values, self.g.values, self.u.values, self.h.values,
                               self.k_achieved, self.epsilon.values, tolerance_scale)

    def report(self, tolerance_scale: float = 1.0) -> dict:
        inv = self.invariants(tolerance_scale)
        return {
            "variant": self.variant,
            "n": self.f.n,
            "d": self.f.domain.d,
            "k_achieved": self.k_achieved,
            "c": self.c,
            "perturbation_max": self.perturbation_max,
            "epsilon_min": float(self.epsilon.values.min()),
            "audit_u": self.audit_u.to_dict(),
            "audit_h": self.audit_h.to_dict(),
            "annihilation_residual": self.annihilation_residual,
            "certificates": [{"kind": c.kind, "global_margin": c.global_margin,
                              "retries": c.retries} for c in self.certificates],
            "invariants": inv,
        }


def check_reduction(f, g, u, h, k, eps, tolerance_scale: float = 1.0) -> dict:
    """Recompute the reduction invariants from raw per-vertex arrays."""
    ts = float(tolerance_scale)
    n = f.shape[-1]
    delta = g - f
    pert = opnorm(delta)
    herm_gap = float(np.abs(delta - dag(delta)).max(initial=0.0))
    unit = float(unitarity_defect(u).max(initial=0.0))
    conj = opnorm(h - u @ g @ dag(u))
    conj_rel = float((conj / (1.0 + opnorm(g))).max(initial=0.0))
    sub, zero = h_margins(h, k)
    tol_zero = default_tol_zero(h) * ts
    h_ok = bool(np.all(zero <= tol_zero) and np.all(sub >= TOL_POS * ts))
    budget_ok = bool(np.all(pert < eps))
    checks = {
        "unitarity": unit <= 1e-10 * ts,
        "self_adjoint_perturbation": herm_gap <= 1e-12 * ts * max(1.0, float(opnorm(f).max(initial=0.0))),
        "conjugation": conj_rel <= 1e-10 * ts,
        "hessenberg_form": h_ok,
        "budget": budget_ok,
    }
    worst = None
    if not h_ok:
        bad = np.flatnonzero((zero > tol_zero) | (sub < TOL_POS * ts))
        worst = int(bad[0])
    return {
        "passed": all(checks.values()),
        "checks": checks,
        "n": int(n),
        "k": int(k),
        "unitarity_max": unit,
        "self_adjoint_gap": herm_gap,
        "conjugation_max": conj_rel,
        "subdiag_min": float(np.min(sub, initial=np.inf)),
        "zero_max": float(np.max(zero, initial=0.0)),
        "perturbation_max": float(pert.max(initial=0.0)),
        "budget_ratio_max": float((pert / eps).max(initial=0.0)),
        "first_form_violation": worst,
    }


# --------------------------------------------------------------- reductions


def _run_default(sweep: _Sweep, ncols: int):
    for p in range(max(ncols, 0)):
        sweep.householder_column(p)


def hessenberg_reduce_default(f: MatrixField, eps, seed: int = 0) -> ReductionResult:
    """Householder sweep over the first ``n - ceil(d/2) - 1`` columns.

    Parameters
    ----------
    f : MatrixField
    eps : ToleranceField or float
        Strict per-vertex bound on ``|g - f|``.
    seed : int

    Returns
    -------
    ReductionResult
        With ``h`` in ``H_n^k``, ``k = max(n - ceil(d/2) - 1, 0)``.
    """
    n, d = f.n, f.domain.d
    k = default_columns(n, d)
    sweep = _Sweep(f, eps, seed)
    _run_default(sweep, k)
    return sweep.result(max(k, 0), math.ceil(d / 2) + 1, "default")


def hessenberg_reduce_dim3(f: MatrixField, eps, seed: int = 0) -> ReductionResult:
    """Reduction into ``H_n^{n-2}`` over bases of dimension at most 3."""
    n, d = f.n, f.domain.d
    if d > 3:
        raise PreconditionError(f"dim3 reduction needs d <= 3, got {d}")
    sweep = _Sweep(f, eps, seed)
    _run_default(sweep, n - 3)
    if n >= 3:
        sweep.givens_column()
    return sweep.result(max(n - 2, 0), 2, "dim3")


def hessenberg_reduce_dim1(f: MatrixField, eps, seed: int = 0) -> ReductionResult:
    """Reduction into ``H_n^n`` (unreduced Hessenberg) over bases of dimension at most 1."""
    n, d = f.n, f.domain.d
    if d > 1:
        raise PreconditionError(f"dim1 reduction needs d <= 1, got {d}")
    sweep = _Sweep(f, eps, seed)
    _run_default(sweep, n - 3)
    if n >= 3:
        sweep.givens_column()
    if n >= 2:
        sweep.phase_last()
    return sweep.result(n, 0, "dim1")


def hessenberg_summary(f: MatrixField, eps, seed: int = 0) -> ReductionResult:
    """Best available reduction for the domain dimension: ``h`` in ``H_n^{n-c}``."""
    d = f.domain.d
    if d <= 1:
        res = hessenberg_reduce_dim1(f, eps, seed)
    elif d <= 3:
        res = hessenberg_reduce_dim3(f, eps, seed)
    else:
        res = hessenberg_reduce_default(f, eps, seed)
    c = corner_size(d)
    res.k_achieved = int(min(max(f.n - c, 0), f.n))
    res.c = c
    return res


# ---------------------------------------------------------------- structure


Q_MODES = ("rank1-positive", "rank1-negative", "rank2-traceless")


@dataclass(eq=False)
class StrucDecomposition:
    """Splitting ``g = sum_i lambda_i p_i + r + q`` in reduced coordinates.

    ``g`` here is ``u g_orig u*`` from the underlying reduction (it is within
    ``eps`` of ``u f u*``).
    """

    reduction: ReductionResult
    g: np.ndarray
    q: np.ndarray
    r: np.ndarray
    p: np.ndarray            # (V, k, n, n)
    lam: np.ndarray          # (V, k)
    mu: np.ndarray           # (V,)
    q_mode: str
    k: int
    c: int

    @property
    def u(self) -> MatrixField:
        return self.reduction.u

    def invariants(self, tol: float = 1e-9) -> dict:
        g, q, r, p, lam = self.g, self.q, self.r, self.p, self.lam
        n, k, c = g.shape[-1], self.k, self.c
        recon = np.einsum("vi,vijk->vjk", lam, p) + r + q
        recon_err = float(opnorm(recon - g).max(initial=0.0))
        eye = np.eye(n)
        orth = 0.0
        for i in range(k):
            orth = max(orth, float(opnorm(p[:, i] @ p[:, i] - p[:, i]).max(initial=0.0)))
            orth = max(orth, float(opnorm(p[:, i] @ r).max(initial=0.0)))
            for j in range(i + 1, k):
                orth = max(orth, float(opnorm(p[:, i] @ p[:, j]).max(initial=0.0)))
        r_outside = float(np.abs(r[:, :n - c, :]).max(initial=0.0) + np.abs(r[:, :, :n - c]).max(initial=0.0))
        total = p.sum(axis=1)
        target = np.diag(np.r_[np.ones(k), np.zeros(c)])
        sum_err = float(np.abs(total - target).max(initial=0.0))
        gaps = -np.diff(lam, axis=1)
        gap_min = float(gaps.min(initial=np.inf))
        f = self.reduction.f.values
        eps = self.reduction.epsilon.values
        qn = opnorm(q)
        bound = opnorm(f) + eps
        if self.q_mode == "rank2-traceless":
            q_ok = bool(np.all(qn <= bound * (1 + 1e-12)))
            sqrt2_ok = q_ok
        else:
            q_ok = bool(np.all(qn <= 2.0 * bound * (1 + 1e-12)))
            sqrt2_ok = bool(np.all(qn <= math.sqrt(2.0) * bound * (1 + 1e-12)))
        rank_ok = True
        nz = np.abs(self.mu) > TOL_POS
        if nz.any():
            w = eigvalsh_desc(q[nz])
            big = np.abs(w) > 1e-9 * (1 + np.abs(self.mu[nz]))[:, None]
            counts = big.sum(axis=1)
            want = 2 if self.q_mode == "rank2-traceless" else 1
            rank_ok = bool(np.all(counts == want))
            if self.q_mode == "rank1-positive":
                rank_ok &= bool(np.all(w[:, -1] >= -1e-9))
            elif self.q_mode == "rank1-negative":
                rank_ok &= bool(np.all(w[:, 0] <= 1e-9))
            else:
                rank_ok &= bool(np.all(np.abs(np.trace(q[nz], axis1=1, axis2=2)) <= 1e-12 * (1 + np.abs(self.mu[nz]))))
        checks = {
            "reconstruction": recon_err <= tol * (1 + float(opnorm(g).max(initial=0.0))),
            "orthogonality": orth <= tol,
            "corner_support": r_outside == 0.0,
            "projection_sum": sum_err <= tol,
            "strictly_decreasing": gap_min > 0 if k > 1 else True,
            "q_norm": q_ok,
            "q_rank": rank_ok,
        }
        return {"passed": all(checks.values()), "checks": checks,
                "reconstruction_error": recon_err, "orthogonality_error": orth,
                "projection_sum_error": sum_err, "eigen_gap_min": gap_min,
                "q_norm_max": float(qn.max(initial=0.0)), "q_norm_within_sqrt2_bound": sqrt2_ok,
                "mu_zero_vertices": int((~nz).sum())}


def struc_decompose(f: MatrixField, eps, q_mode: str = "rank2-traceless", seed: int = 0) -> StrucDecomposition:
    """Split a self-adjoint field into rank-one spectral pieces, a corner and a small ``q``.

    Raises
    ------
    PreconditionError
        If ``n <= ceil(d/2) + 1``, ``f`` is not Hermitian, or ``q_mode`` is unknown.
    """
    if q_mode not in Q_MODES:
        raise PreconditionError(f"q_mode must be one of {Q_MODES}")
    n, d = f.n, f.domain.d
    c = math.ceil(d / 2) + 1
    if n <= c:
        raise PreconditionError(f"need n > {c} for d={d}, got n={n}")
    check_hermitian(f.values)
    red = hessenberg_reduce_default(f, eps, seed)
    k = n - c
    g = np.array(red.h.values)
    mu = g[:, k, k - 1].real.copy()
    q = np.zeros_like(g)
    i, j = k - 1, k
    if q_mode == "rank2-traceless":
        q[:, i, j] = mu
        q[:, j, i] = mu
    elif q_mode == "rank1-positive":
        q[:, i, i] = q[:, i, j] = q[:, j, i] = q[:, j, j] = mu
    else:
        q[:, i, j] = q[:, j, i] = mu
        q[:, i, i] = q[:, j, j] = -mu
    rest = g - q
    top = rest[:, :k, :k]
    lam, vec = hermitian_eig(top)
    nv = len(g)
    p = np.zeros((nv, k, n, n), dtype=complex)
    for a in range(k):
        va = vec[:, :, a]
        p[:, a, :k, :k] = va[:, :, None] * va[:, None, :].conj()
    r = np.zeros_like(g)
    r[:, k:, k:] = rest[:, k:, k:]
    return StrucDecomposition(red, g, q, r, p, lam, mu, q_mode, k, c)


@dataclass(frozen=True)
class StrucDim3Labels:
    labels: tuple[str, ...]
    subdiag: np.ndarray
    eigen_gap: np.ndarray
    open_witness: float

    def to_dict(self) -> dict:
        return {"labels": list(self.labels),
                "eigen_gap_min": float(self.eigen_gap.min(initial=np.inf)),
                "open_witness": self.open_witness}


def strucdim3_classify(result: ReductionResult, tol_pos: float = TOL_POS) -> StrucDim3Labels:
    """Label vertices where the last subdiagonal entry survives ("unsplit").

    For "unsplit" vertices ``eigen_gap`` is the smallest gap of the whole
    spectrum; for "split" vertices it is the smallest gap of the leading
    ``(n-1)``-block. ``open_witness`` is the smallest ``|h_{n,n-1}|`` over
    unsplit vertices: the unsplit set is open because that entry is continuous.
    """
    h = result.h.values
    n = h.shape[-1]
    if n < 2:
        labels = ("unsplit",) * len(h)
        return StrucDim3Labels(labels, np.zeros(len(h)), np.full(len(h), np.inf), float("inf"))
    sub = np.abs(h[:, n - 1, n - 2])
    unsplit = sub > tol_pos
    full = eigvalsh_desc(h)
    lead = eigvalsh_desc(h[:, :n - 1, :n - 1])
    gaps_full = (-np.diff(full, axis=1)).min(axis=1, initial=np.inf)
    gaps_lead = (-np.diff(lead, axis=1)).min(axis=1, initial=np.inf)
    gap = np.where(unsplit, gaps_full, gaps_lead)
    labels = tuple("unsplit" if x else "split" for x in unsplit)
    witness = float(sub[unsplit].min(initial=np.inf))
    return StrucDim3Labels(labels, sub, gap, witness)
