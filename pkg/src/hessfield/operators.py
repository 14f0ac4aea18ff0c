"""Hessenberg reduction of bounded operator fields at finite truncation.

An operator field is stored as ``N x N`` top-left corners of infinite
matrices that vanish beyond a declared support bound. Bumps that keep a
column away from the forbidden ray are always placed past the current
support, so the truncation never cuts anything off.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .avoidance import avoid_zero_operator, certify_ray, complex_to_real, MARGIN_RTOL
from .domain import Domain, MatrixField, as_tolerance, ToleranceField
from .errors import InvariantViolation, PreconditionError
from .linalg import dag, herm_part, householder_unitaries, opnorm, unitarity_defect

SUPPORT_TOL = 1e-14
FREEZE_TOL = 1e-10
RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class OperatorField(MatrixField):
    """Matrix field read as the corner of an operator field on l^2.

    Rows and columns with zero-based index ``>= support`` must vanish.
    """

    support: int = 0

    def __post_init__(self):
        super().__post_init__()
        s = int(self.support)
        if not 0 <= s <= self.n:
            raise PreconditionError(f"support bound {s} outside [0, {self.n}]")
        tail = max(np.abs(self.values[:, s:, :]).max(initial=0.0),
                   np.abs(self.values[:, :, s:]).max(initial=0.0))
        if tail > SUPPORT_TOL:
            raise PreconditionError(f"entries past the support bound {s} reach {tail:.3g}")

    @property
    def N(self) -> int:
        return self.n

    @classmethod
    def embed(cls, f: MatrixField, N: int) -> "OperatorField":
        """Pad a matrix field with zeros up to size ``N``."""
        n = f.n
        if N < n:
            raise PreconditionError(f"truncation {N} smaller than field size {n}")
        vals = np.zeros((f.domain.n_vertices, N, N), dtype=complex)
        vals[:, :n, :n] = f.values
        return cls(f.domain, vals, support=n)


# ------------------------------------------------------------- cyclic vectors


def krylov_matrix(x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    N = x.shape[0]
    cols = [np.asarray(xi, dtype=complex)]
    for _ in range(N - 1):
        cols.append(x @ cols[-1])
    return np.stack(cols, axis=1)


def cyclic_to_hessenberg(x, xi):
    """Unitary ``u`` with ``u e1 = xi / |xi|`` and ``u* x u`` Hessenberg.

    Raises
    ------
    PreconditionError
        If the Krylov family of ``xi`` is numerically rank deficient.
    """
    x = np.asarray(x, dtype=complex)
    xi = np.asarray(xi, dtype=complex)
    N = x.shape[0]
    if x.shape != (N, N) or xi.shape != (N,):
        raise PreconditionError("need a square matrix and a matching vector")
    nxi = float(np.linalg.norm(xi))
    if nxi == 0:
        raise PreconditionError("zero vector is not cyclic")
    K = krylov_matrix(x, xi)
    smin = float(np.linalg.svd(K, compute_uv=False)[-1])
    bound = 1e-8 * nxi * max(1.0, float(opnorm(x))) ** (N - 1)
    if smin <= bound:
        raise PreconditionError(
            f"vector is not cyclic: Krylov smallest singular value {smin:.3g} <= {bound:.3g}")
    # Arnoldi with one round of reorthogonalization (Gram-Schmidt on the Krylov family)
    q = np.zeros((N, N), dtype=complex)
    q[:, 0] = xi / nxi
    for j in range(1, N):
        w = x @ q[:, j - 1]
        for _ in range(2):
            w = w - q[:, :j] @ (q[:, :j].conj().T @ w)
        q[:, j] = w / np.linalg.norm(w)
    h = q.conj().T @ x @ q
    return q, h


# ------------------------------------------------------------------- trace


@dataclass
class IterationTrace:
    """Iterates ``g^k, u^k, h^k = u^k g^k u^k*`` for ``k = 1..K``.

    Stored iterates are taken after the in-place bump of step ``k`` and before
    its reflection, so ``h[k-1]`` has its first ``k - 1`` columns reduced.
    """

    f: OperatorField
    epsilon: ToleranceField
    g: list = field(default_factory=list)
    u: list = field(default_factory=list)
    h: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)   # per step, per vertex
    bump_index: list = field(default_factory=list)   # None when no bump was needed
    ray_margins: list = field(default_factory=list)
    final_g: np.ndarray | None = None
    final_u: np.ndarray | None = None
    final_h: np.ndarray | None = None
    support: int = 0

    @property
    def K(self) -> int:
        return len(self.h)

    def freeze_matrix(self) -> np.ndarray:
        K = self.K
        out = np.zeros((K, K))
        for k in range(1, K + 1):
            for l in range(k, K + 1):
                if k > 1:
                    out[k - 1, l - 1] = np.abs(self.h[l - 1][:, :, :k - 1]
                                               - self.h[k - 1][:, :, :k - 1]).max()
        return out

    def invariants(self, tolerance_scale: float = 1.0) -> dict:
        ts = tolerance_scale
        f = self.f.values
        eps = self.epsilon.values
        K = self.K
        prev = f
        step_ok, herm_ok, rank_ok = True, True, True
        herm_max, rank_max, unit_max, conj_max, gnorm_max = 0.0, 0, 0.0, 0.0, 0.0
        fnorm = opnorm(f)
        for k in range(1, K + 1):
            g, u, h = self.g[k - 1], self.u[k - 1], self.h[k - 1]
            d = g - prev
            dn = opnorm(d)
            step_ok &= bool(np.all(dn < eps / 2.0 ** k))
            hd = float(np.abs(d - dag(d)).max())
            herm_max = max(herm_max, hd)
            sv = np.linalg.svd(d, compute_uv=False)
            rk = int((sv > RANK_RTOL * ts * max(1.0, float(fnorm.max()))).sum(axis=1).max())
            rank_max = max(rank_max, rk)
            unit_max = max(unit_max, float(unitarity_defect(u).max()))
            conj_max = max(conj_max, float(np.abs(h - u @ g @ dag(u)).max()))
            gnorm_max = max(gnorm_max, float((opnorm(g) - fnorm - eps).max()))
            prev = g
        herm_ok = herm_max <= 1e-12 * ts * max(1.0, float(fnorm.max()))
        rank_ok = rank_max <= 2
        total = opnorm(prev - f) if K else np.zeros(len(eps))
        hk = self.h[-1] if K else f
        ncols = max(K - 1, 0)
        lower = 0.0
        sub_min = np.inf
        sub_imag = 0.0
        for j in range(ncols):
            lower = max(lower, float(np.abs(hk[:, j + 2:, j]).max(initial=0.0)))
            sub_min = min(sub_min, float(hk[:, j + 1, j].real.min()))
            sub_imag = max(sub_imag, float(np.abs(hk[:, j + 1, j].imag).max()))
        freeze = column_freeze_check(self)
        iso = 0.0
        if self.final_u is not None and ncols:
            v = dag(self.final_u)[:, :, :ncols]
            iso = float(np.abs(dag(v) @ v - np.eye(ncols)).max())
        tol_zero = 1e-10 * ts * max(1.0, float(fnorm.max()))
        checks = {
            "step_budget": step_ok,
            "steps_hermitian": bool(herm_ok),
            "steps_rank_le_2": bool(rank_ok),
            "unitary": unit_max <= 1e-10 * ts,
            "conjugation": conj_max <= 1e-10 * ts * max(1.0, float(fnorm.max())),
            "column_freeze": freeze <= FREEZE_TOL * ts,
            "hessenberg_columns": lower <= tol_zero and sub_imag <= tol_zero
            and (ncols == 0 or sub_min > 0),
            "total_budget": bool(np.all(total < eps)),
            "uniform_bound": gnorm_max <= 1e-12 * ts * max(1.0, float(fnorm.max())),
            "isometry": iso <= 1e-9 * ts,
        }
        return {
            "passed": all(checks.values()),
            "checks": checks,
            "max_step_hermitian_defect": herm_max,
            "max_step_rank": rank_max,
            "max_unitarity_defect": unit_max,
            "max_conjugation_error": conj_max,
            "column_freeze_deviation": freeze,
            "hessenberg_lower_max": lower,
            "subdiagonal_min": float(sub_min) if ncols else None,
            "total_perturbation_max": float(np.max(total, initial=0.0)),
            "isometry_defect": iso,
        }

    def to_dict(self, tolerance_scale: float = 1.0) -> dict:
        return {
            "K": self.K,
            "N": self.f.N,
            "support_in": int(self.f.support),
            "support_out": int(self.support),
            "step_norms": [[float(x) for x in s] for s in self.step_norms],
            "step_norm_max": [float(np.max(s)) for s in self.step_norms],
            "bump_index": self.bump_index,
            "ray_margin_min": [float(np.min(m)) for m in self.ray_margins],
            "freeze_matrix": self.freeze_matrix().tolist(),
            "invariants": self.invariants(tolerance_scale),
        }


def column_freeze_check(trace: IterationTrace) -> float:
    """Largest change in the first ``k - 1`` columns of ``h^l`` against ``h^k``, ``k <= l``."""
    if trace.K <= 1:
        return 0.0
    return float(trace.freeze_matrix().max())


# --------------------------------------------------------------- reduction


def operator_reduce(f: OperatorField, eps, K: int, seed: int = 0) -> IterationTrace:
    """Run ``K`` reflection steps of the operator-field Hessenberg iteration.

    At step ``k`` the column block below the diagonal is kept off the ray
    ``{-t e1}`` by a real bump of size ``eps / 2**(k+1)`` placed past the
    current support (skipped when the block is already certified off the
    ray), then reduced by a continuous Householder unitary acting on
    coordinates ``k+1, ...``.

    ``seed`` is accepted for interface uniformity; the construction is
    deterministic.
    """
    del seed
    if not isinstance(f, OperatorField):
        raise PreconditionError("operator_reduce needs an OperatorField")
    N, s = f.N, int(f.support)
    K = int(K)
    if K < 1:
        raise PreconditionError("need at least one step")
    if K > N - 2 - s:
        raise PreconditionError(f"headroom exhausted: K={K} > N - 2 - s = {N - 2 - s}")
    domain = f.domain
    eps_t = as_tolerance(domain, eps)
    nv = domain.n_vertices
    h = np.array(f.values, dtype=complex)
    g = h.copy()
    u = np.broadcast_to(np.eye(N, dtype=complex), (nv, N, N)).copy()
    hermitian = f.is_hermitian()
    trace = IterationTrace(f, eps_t)
    support = s
    for k in range(1, K + 1):
        j = k - 1
        b = h[:, j + 1:, j]
        margins = certify_ray(domain, complex_to_real(b))
        floor = MARGIN_RTOL * (1.0 + float(np.linalg.norm(b, axis=1).max(initial=0.0)))
        if margins.min() > floor:
            delta = np.zeros(nv)
            trace.bump_index.append(None)
        else:
            r = max(support, j + 2)
            budget = eps_t.values / 2.0 ** (k + 1)
            bprime = h[:, j + 2:, j]
            newb, idx, _ = avoid_zero_operator(bprime, budget, r - (j + 2), domain)
            assert idx + j + 2 == r
            e = np.zeros((nv, N, N), dtype=complex)
            e[:, r, j] = newb[:, idx] - bprime[:, idx]
            e[:, j, r] = e[:, r, j].conj()
            h = h + e
            g = g + herm_part(dag(u) @ e @ u)
            delta = opnorm(e)
            support = max(support, r + 1)
            b = h[:, j + 1:, j]
            margins = certify_ray(domain, complex_to_real(b))
            if margins.min() <= 0:
                raise InvariantViolation(f"step {k}: bumped column still meets the ray")
            trace.bump_index.append(int(r))
        trace.ray_margins.append(margins)
        trace.step_norms.append(delta)
        trace.g.append(g.copy())
        trace.u.append(u.copy())
        trace.h.append(h.copy())
        # reflect coordinates j+1.. so the column becomes |b| e_{j+1}
        U, rn, _ = householder_unitaries(b)
        sl = slice(j + 1, None)
        h[:, sl, :] = U @ h[:, sl, :]
        h[:, :, sl] = h[:, :, sl] @ dag(U)
        u[:, sl, :] = U @ u[:, sl, :]
        h[:, j + 2:, j] = 0.0
        h[:, j + 1, j] = rn
        if hermitian:
            h[:, j, j + 2:] = 0.0
            h[:, j, j + 1] = rn
    trace.final_g, trace.final_u, trace.final_h = g, u, h
    trace.support = support
    return trace


def final_fields(trace: IterationTrace) -> dict:
    """The final triple ``(v, g, h)`` as matrix fields, with ``v = u*``."""
    d = trace.f.domain
    return {
        "v": MatrixField(d, dag(trace.final_u)),
        "g": MatrixField(d, trace.final_g),
        "h": MatrixField(d, trace.final_h),
    }
