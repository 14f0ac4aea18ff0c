"""Certified general-position perturbations of vector fields on meshes.

A vertex field is nudged by a seeded random amount inside its tolerance
ball, then every simplex of the piecewise-linear image is checked exactly
against the forbidden set (the origin, a finite family of moving targets,
or the closed ray ``{-t e1 : t >= 0}``). Failed certifications are retried
with a fresh seed and a halved radius, so the tolerance is never exceeded.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .domain import Domain, ToleranceField, as_tolerance
from .errors import CertificationError, HypothesisViolation, PreconditionError

MAX_RETRIES = 32
FEASIBILITY_TOL = 1e-12
MARGIN_RTOL = 1e-9

TAG_ZERO = 0
TAG_TARGETS = 1
TAG_RAY = 2


@dataclass(frozen=True, eq=False)
class VectorField:
    """Real vectors in ``R^m`` sampled at each vertex of ``domain``."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != self.domain.n_vertices:
            raise PreconditionError("vector field needs shape (V, m)")
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("vector field values must be finite")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, domain: Domain, vector) -> "VectorField":
        v = np.asarray(vector, dtype=float).reshape(1, -1)
        return cls(domain, np.repeat(v, domain.n_vertices, axis=0))


@dataclass(frozen=True, eq=False)
class AvoidanceCertificate:
    """Exact per-simplex distance from the interpolated image to the forbidden set."""

    per_simplex: np.ndarray
    global_margin: float
    seed: int
    retries: int
    kind: str = "zero"
    floor: float = 0.0

    @property
    def valid(self) -> bool:
        return self.global_margin > self.floor

    def to_dict(self) -> dict:
        return {"global_margin": float(self.global_margin), "seed": int(self.seed),
                "retries": int(self.retries),
                "per_simplex": [float(x) for x in self.per_simplex]}


def complex_to_real(b: np.ndarray) -> np.ndarray:
    """``(..., m)`` complex to ``(..., 2m)`` real with interleaved (re, im)."""
    b = np.asarray(b, dtype=complex)
    out = np.empty(b.shape[:-1] + (2 * b.shape[-1],))
    out[..., 0::2] = b.real
    out[..., 1::2] = b.imag
    return out


def real_to_complex(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[..., 0::2] + 1j * x[..., 1::2]


# ---------------------------------------------------------------- certifier


@lru_cache(maxsize=None)
def _faces(k: int) -> tuple[np.ndarray, ...]:
    """Nonempty vertex subsets of a k-vertex simplex, grouped by size."""
    return tuple(np.array(list(itertools.combinations(range(k), s)), dtype=np.intp)
                 for s in range(1, k + 1))


def _kkt_weights(Qs: np.ndarray) -> np.ndarray:
    """Minimiser of ``|sum l_i q_i|`` on the affine hull of each face (weights may be negative).

    Well-conditioned faces are solved in the edge parametrisation
    ``l = e_0 + sum t_i (e_i - e_0)``; nearly affinely dependent faces fall
    back to the pseudo-inverse of the KKT system
    ``[[2G, 1], [1^T, 0]] [l; mu] = [0; 1]``.
    """
    s = Qs.shape[-2]
    q0 = Qs[..., 0, :]
    D = Qs[..., 1:, :] - q0[..., None, :]
    gram = D @ np.swapaxes(D, -1, -2)
    rhs = -(D @ q0[..., None])
    diag = np.einsum("...ii->...i", gram)
    with np.errstate(divide="ignore", invalid="ignore"):
        hadamard = np.linalg.det(gram) / np.prod(diag, axis=-1)
    good = np.isfinite(hadamard) & (hadamard > 1e-10)
    lam = np.zeros(Qs.shape[:-1])
    if good.any():
        t = np.linalg.solve(gram[good], rhs[good])[..., 0]
        lam[good, 1:] = t
        lam[good, 0] = 1.0 - t.sum(axis=-1)
    bad = ~good
    if bad.any():
        Qb = Qs[bad]
        G = Qb @ np.swapaxes(Qb, -1, -2)
        A = np.zeros((len(Qb), s + 1, s + 1))
        A[:, :s, :s] = 2.0 * G
        A[:, :s, s] = 1.0
        A[:, s, :s] = 1.0
        e = np.zeros(s + 1)
        e[s] = 1.0
        lam[bad] = (np.linalg.pinv(A) @ e)[:, :s]
    return lam


def _face_candidates(P: np.ndarray) -> np.ndarray:
    """Barycentric minimisers of |sum l_i p_i| on every face, for each simplex.

    ``P`` has shape ``(S, k, m)``; the result has shape ``(S, F, k)`` with one
    candidate per face. A face candidate is kept only if its weights are
    nonnegative up to ``FEASIBILITY_TOL``; otherwise it is replaced by the
    face's first vertex, which is always feasible. Points are rescaled by the
    largest vertex norm of their simplex before solving.
    """
    S, k, _ = P.shape
    scale = np.linalg.norm(P, axis=2).max(axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    Q = P / scale[:, None, None]
    out = []
    for subsets in _faces(k):
        s = subsets.shape[1]
        lam = np.zeros((S, len(subsets), k))
        if s == 1:
            lam[:, np.arange(len(subsets)), subsets[:, 0]] = 1.0
            out.append(lam)
            continue
        ls = _kkt_weights(Q[:, subsets])
        ok = np.all(ls >= -FEASIBILITY_TOL, axis=-1) & np.all(np.isfinite(ls), axis=-1)
        ls = np.where(ok[..., None], np.clip(ls, 0.0, None), 0.0)
        tot = ls.sum(axis=-1, keepdims=True)
        ok &= tot[..., 0] > 0.5
        ls = np.where(ok[..., None], ls / np.where(tot > 0, tot, 1.0), 0.0)
        ls[..., 0] = np.where(ok, ls[..., 0], 1.0)
        np.put_along_axis(lam, np.broadcast_to(subsets, (S,) + subsets.shape), ls, axis=2)
        out.append(lam)
    return np.concatenate(out, axis=1)


def min_norm_batch(P: np.ndarray):
    """Exact ``min |sum l_i p_i|`` over the simplex for a stack ``(S, k, m)``."""
    P = np.asarray(P, dtype=float)
    lam = _face_candidates(P)
    pts = lam @ P
    vals = np.linalg.norm(pts, axis=-1)
    best = np.argmin(vals, axis=1)
    idx = np.arange(len(P))
    return vals[idx, best], lam[idx, best]


def min_norm_over_simplex(vectors: Sequence) -> tuple[float, np.ndarray]:
    """Minimum norm of a point in the convex hull of ``vectors`` and its weights.

    Examples
    --------
    >>> v, lam = min_norm_over_simplex([[1, 0], [0, 1]])
    >>> round(v ** 2, 12), lam.round(12).tolist()
    (0.5, [0.5, 0.5])
    """
    P = np.asarray(vectors, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if not 1 <= len(P) <= 5:
        raise PreconditionError("simplex must have between 1 and 5 vertices")
    val, lam = min_norm_batch(P[None])
    return float(val[0]), lam[0]


def _ray_distance_points(x: np.ndarray) -> np.ndarray:
    """Distance from points ``x`` to the closed ray ``{-t e1 : t >= 0}``."""
    rest = np.linalg.norm(x[..., 1:], axis=-1)
    full = np.linalg.norm(x, axis=-1)
    return np.where(x[..., 0] <= 0, rest, full)


def ray_distance_batch(P: np.ndarray):
    """Exact distance between each simplex ``conv(P[s])`` and the ray.

    Candidates are the min-norm points of every face, and the min-norm points
    of every face after dropping the first coordinate; the distance of each
    candidate to the ray is evaluated directly and the smallest is kept.
    """
    P = np.asarray(P, dtype=float)
    lam = np.concatenate([_face_candidates(P), _face_candidates(P[..., 1:])], axis=1)
    vals = _ray_distance_points(lam @ P)
    best = np.argmin(vals, axis=1)
    idx = np.arange(len(P))
    return vals[idx, best], lam[idx, best]


def ray_distance_over_simplex(vectors: Sequence) -> tuple[float, np.ndarray]:
    P = np.asarray(vectors, dtype=float)
    val, lam = ray_distance_batch(P[None])
    return float(val[0]), lam[0]


def _per_simplex(domain: Domain, values: np.ndarray, kernel) -> np.ndarray:
    margins = np.empty(len(domain.simplices))
    order = {}
    for i, s in enumerate(domain.simplices):
        order.setdefault(len(s), []).append(i)
    for size, ids in order.items():
        simp = np.array([domain.simplices[i] for i in ids], dtype=np.intp)
        margins[ids] = kernel(values[simp])[0]
    return margins


def certify_zero(domain: Domain, values: np.ndarray) -> np.ndarray:
    return _per_simplex(domain, np.asarray(values, dtype=float), min_norm_batch)


def certify_ray(domain: Domain, values: np.ndarray) -> np.ndarray:
    return _per_simplex(domain, np.asarray(values, dtype=float), ray_distance_batch)


def certify_targets(domain: Domain, values: np.ndarray, targets: Sequence[np.ndarray]) -> np.ndarray:
    margins = np.full(len(domain.simplices), np.inf)
    for t in targets:
        margins = np.minimum(margins, certify_zero(domain, values - t))
    return margins


# ------------------------------------------------------------- perturbations


def _ball_samples(rng: np.random.Generator, radius: np.ndarray, m: int) -> np.ndarray:
    """One point per row, uniform in the open ball of the given radius."""
    g = rng.standard_normal((len(radius), m))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    u = rng.random(len(radius))
    return g / norms * (radius * u ** (1.0 / m))[:, None]


def _tangent_samples(rng: np.random.Generator, base: np.ndarray, radius: np.ndarray) -> np.ndarray:
    """Uniform ball samples projected orthogonally to the unit rows of ``base``."""
    x = _ball_samples(rng, radius, base.shape[1])
    return x - np.sum(x * base, axis=1, keepdims=True) * base


def _floor(values: np.ndarray) -> float:
    scale = float(np.linalg.norm(values, axis=1).max(initial=0.0))
    return MARGIN_RTOL * (1.0 + scale)


def _search(f: VectorField, eps: ToleranceField, seed: int, tag: int, certify, propose, kind: str):
    base = f.values
    floor = _floor(base)
    margins = certify(base)
    if margins.min(initial=np.inf) > floor:
        return f, AvoidanceCertificate(margins, float(margins.min(initial=np.inf)), seed, 0, kind, floor)
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng([int(seed), tag, attempt])
        radius = eps.values / 2.0 ** (attempt + 1)
        g = propose(rng, base, radius)
        margins = certify(g)
        gm = float(margins.min(initial=np.inf))
        if gm > floor:
            return (VectorField(f.domain, g),
                    AvoidanceCertificate(margins, gm, seed, attempt + 1, kind, floor))
    raise CertificationError(
        f"no certified perturbation after {MAX_RETRIES} attempts; refine the mesh")


def _check_dims(f: VectorField, slack: int, what: str):
    d, m = f.domain.d, f.m
    if d > m - slack:
        raise HypothesisViolation(
            f"{what} needs domain dimension d <= {m - slack} for maps into R^{m}, got d={d}")


def avoid_zero(f: VectorField, eps, seed: int = 0):
    """Perturb ``f`` by less than ``eps`` so that its interpolation misses the origin.

    Parameters
    ----------
    f : VectorField
        Field into ``R^m``; the domain must have ``d <= m - 1``.
    eps : ToleranceField or float
        Strict per-vertex bound on ``|g - f|``.
    seed : int
        Seed for the perturbation stream.

    Returns
    -------
    g : VectorField
    cert : AvoidanceCertificate
    """
    _check_dims(f, 1, "avoid_zero")
    eps = as_tolerance(f.domain, eps)
    dom = f.domain
    return _search(f, eps, seed, TAG_ZERO,
                   lambda v: certify_zero(dom, v),
                   lambda rng, base, rad: base + _ball_samples(rng, rad, f.m),
                   "zero")


def avoid_k_maps(f: VectorField, targets: Sequence[VectorField], eps, seed: int = 0):
    """Perturb ``f`` so that ``g(x) != h_i(x)`` for every target along every simplex."""
    _check_dims(f, 1, "avoid_k_maps")
    eps = as_tolerance(f.domain, eps)
    tv = []
    for t in targets:
        if t.domain is not f.domain and t.domain.n_vertices != f.domain.n_vertices:
            raise PreconditionError("targets must live on the same domain")
        if t.m != f.m:
            raise PreconditionError("targets must have the same dimension as f")
        tv.append(t.values)
    dom = f.domain
    if not tv:
        margins = np.full(len(dom.simplices), np.inf)
        return f, AvoidanceCertificate(margins, float("inf"), seed, 0, "targets")
    return _search(f, eps, seed, TAG_TARGETS,
                   lambda v: certify_targets(dom, v, tv),
                   lambda rng, base, rad: base + _ball_samples(rng, rad, f.m),
                   "targets")


def avoid_ray(f: VectorField, eps, seed: int = 0, norm_preserving: bool = True):
    """Perturb ``f`` so that its interpolation misses the ray ``{-t e1 : t >= 0}``.

    In norm-preserving mode only the direction ``f/|f|`` moves, by a
    tangential bump followed by rescaling to the original length, so
    ``|g(v)| = |f(v)|`` at every vertex. That mode needs ``f(v) != 0``.
    """
    _check_dims(f, 2, "avoid_ray")
    eps = as_tolerance(f.domain, eps)
    dom = f.domain
    if norm_preserving:
        r = np.linalg.norm(f.values, axis=1)
        if np.any(r == 0):
            raise PreconditionError("norm-preserving ray avoidance needs a nonvanishing field")
        unit = f.values / r[:, None]

        def propose(rng, base, rad):
            eta = _tangent_samples(rng, unit, rad / r)
            w = unit + eta
            return w / np.linalg.norm(w, axis=1, keepdims=True) * r[:, None]
    else:
        def propose(rng, base, rad):
            return base + _ball_samples(rng, rad, f.m)

    return _search(f, eps, seed, TAG_RAY, lambda v: certify_ray(dom, v), propose, "ray")


def avoid_zero_operator(f: np.ndarray, eps, support_bound: int, domain: Domain | None = None):
    """Add ``eps * e_k`` with ``k`` the first index past the support bound.

    ``f`` has shape ``(V, N)`` (complex allowed). The ``k``-th coordinate of the
    interpolated result is at least the smallest vertex value of ``eps`` on
    each simplex, which certifies that it never vanishes.

    Returns
    -------
    g : ndarray
    k : int
        Zero-based bump index.
    cert : AvoidanceCertificate
    """
    f = np.asarray(f)
    nv, N = f.shape
    s = int(support_bound)
    if s >= N:
        raise PreconditionError(f"no free index: support bound {s} >= truncation {N}")
    eps_v = eps.values if isinstance(eps, ToleranceField) else np.broadcast_to(
        np.asarray(eps, dtype=float), (nv,))
    if np.any(eps_v <= 0):
        raise PreconditionError("tolerances must be strictly positive")
    g = f.astype(complex, copy=True)
    g[:, s] += eps_v
    coord = g[:, s].real
    if domain is None:
        per = np.array([coord.min()])
    else:
        per = np.array([coord[list(simp)].min() for simp in domain.simplices])
    return g, s, AvoidanceCertificate(per, float(per.min()), 0, 0, "operator")
