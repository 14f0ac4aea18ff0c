"""Simplicial meshes and the fields sampled on them.

A field is identified with its vertex samples; between vertices it is
interpolated affinely on each simplex, entry by entry.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import PreconditionError
from .linalg import opnorm

MAX_DIM = 4


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Domain:
    """A finite simplicial complex with declared covering dimension ``d``.

    ``simplices`` lists the maximal simplices as vertex-index tuples; every
    face of a listed simplex is implicitly part of the complex.
    """

    vertices: np.ndarray
    simplices: tuple[tuple[int, ...], ...]
    d: int
    edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim == 1:
            verts = verts.reshape(-1, 0) if verts.size == 0 else verts[:, None]
        if verts.ndim != 2 or len(verts) == 0:
            raise PreconditionError("vertices must be a non-empty (V, D) array")
        if not np.all(np.isfinite(verts)):
            raise PreconditionError("vertex coordinates must be finite")
        if not (0 <= int(self.d) <= MAX_DIM):
            raise PreconditionError(f"dimension d={self.d} outside [0, {MAX_DIM}]")
        nv = len(verts)
        simplices = tuple(tuple(int(i) for i in s) for s in self.simplices)
        for s in simplices:
            if len(s) == 0 or len(s) > self.d + 1:
                raise PreconditionError(f"simplex {s} has more than d+1={self.d + 1} vertices")
            if len(set(s)) != len(s):
                raise PreconditionError(f"simplex {s} repeats a vertex")
            if min(s) < 0 or max(s) >= nv:
                raise PreconditionError(f"simplex {s} references a vertex out of range")
        edge_set = set()
        for s in simplices:
            for i, j in itertools.combinations(sorted(s), 2):
                edge_set.add((i, j))
        edges = np.array(sorted(edge_set), dtype=np.intp).reshape(-1, 2)
        object.__setattr__(self, "vertices", _frozen(verts))
        object.__setattr__(self, "simplices", simplices)
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "edges", _frozen(edges))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def ambient_dim(self) -> int:
        return self.vertices.shape[1]

    def simplex_groups(self) -> dict[int, np.ndarray]:
        """Maximal simplices grouped by vertex count, as index arrays."""
        groups: dict[int, list] = {}
        for s in self.simplices:
            groups.setdefault(len(s), []).append(s)
        return {k: np.array(v, dtype=np.intp) for k, v in sorted(groups.items())}

    def euler_characteristic(self) -> int:
        faces = set()
        for s in self.simplices:
            for size in range(1, len(s) + 1):
                faces.update(itertools.combinations(sorted(s), size))
        return sum((-1) ** (len(f) - 1) for f in faces)


@dataclass(frozen=True, eq=False)
class MatrixField:
    """One complex ``n x n`` matrix per vertex of ``domain``."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.ndim != 3 or vals.shape[1] != vals.shape[2]:
            raise PreconditionError("field values must have shape (V, n, n)")
        if vals.shape[0] != self.domain.n_vertices:
            raise PreconditionError(
                f"{vals.shape[0]} samples for a domain with {self.domain.n_vertices} vertices")
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("field values must be finite")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def adjoint(self) -> "MatrixField":
        return MatrixField(self.domain, self.values.conj().transpose(0, 2, 1))

    def is_hermitian(self, rtol: float = 1e-10) -> bool:
        v = self.values
        gap = np.abs(v - v.conj().transpose(0, 2, 1)).max(initial=0.0)
        return gap <= rtol * max(1.0, np.abs(v).max(initial=0.0))


@dataclass(frozen=True, eq=False)
class ToleranceField:
    """Per-vertex strictly positive tolerances, interpolated affinely."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if len(vals) != self.domain.n_vertices:
            raise PreconditionError("tolerance field needs one value per vertex")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise PreconditionError("tolerances must be finite and strictly positive")
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def constant(cls, domain: Domain, value: float) -> "ToleranceField":
        return cls(domain, np.full(domain.n_vertices, float(value)))

    def scaled(self, factor: float) -> "ToleranceField":
        return ToleranceField(self.domain, self.values * factor)


def as_tolerance(domain: Domain, eps) -> ToleranceField:
    if isinstance(eps, ToleranceField):
        return eps
    arr = np.asarray(eps, dtype=float)
    if arr.ndim == 0:
        return ToleranceField.constant(domain, float(arr))
    return ToleranceField(domain, arr)


@dataclass(frozen=True)
class ContinuityAudit:
    max_edge_jump: float
    worst_edge: int | None

    def to_dict(self) -> dict:
        return {"max_edge_jump": self.max_edge_jump, "worst_edge": self.worst_edge}


def audit_continuity(f: MatrixField | np.ndarray, domain: Domain | None = None) -> ContinuityAudit:
    """Largest operator-norm jump of ``f`` across any mesh edge.

    Plain arrays of shape (V, n) are treated as vector fields (Euclidean norm).
    """
    if isinstance(f, MatrixField):
        domain, vals = f.domain, f.values
    else:
        vals = np.asarray(f)
    edges = domain.edges
    if len(edges) == 0:
        return ContinuityAudit(0.0, None)
    diff = vals[edges[:, 1]] - vals[edges[:, 0]]
    if diff.ndim == 3:
        jumps = opnorm(diff)
    else:
        jumps = np.linalg.norm(diff.reshape(len(edges), -1), axis=1)
    worst = int(np.argmax(jumps))
    return ContinuityAudit(float(jumps[worst]), worst)


def evaluate(f: MatrixField, simplex: int | Sequence[int], coords: Sequence[float]) -> np.ndarray:
    """Affine interpolation of ``f`` at barycentric ``coords`` of ``simplex``.

    ``simplex`` is either an index into ``f.domain.simplices`` or a tuple of
    vertex ids.
    """
    verts = f.domain.simplices[simplex] if isinstance(simplex, (int, np.integer)) else tuple(simplex)
    lam = np.asarray(coords, dtype=float)
    if lam.shape != (len(verts),):
        raise PreconditionError(f"expected {len(verts)} barycentric coordinates")
    if np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-12:
        raise PreconditionError("barycentric coordinates must be nonnegative and sum to 1")
    hot = np.flatnonzero(lam == 1.0)
    if len(hot) == 1:
        return f.values[verts[hot[0]]].copy()
    return np.tensordot(lam, f.values[list(verts)], axes=1)


def _kuhn_cells(counts: Sequence[int], axes_order: Sequence[int]):
    """Yield Kuhn simplices (as lists of integer lattice points) of a box."""
    dim = len(axes_order)
    for corner in itertools.product(*(range(c) for c in counts)):
        for perm in itertools.permutations(range(dim)):
            p = list(corner)
            cell = [tuple(p)]
            for ax in perm:
                p[ax] += 1
                cell.append(tuple(p))
            yield cell


def build_grid(d: int, resolution: int) -> Domain:
    """Kuhn (Freudenthal) triangulation of ``[0, 1]^d`` with ``resolution`` cells per axis."""
    if not (0 <= d <= MAX_DIM):
        raise PreconditionError(f"grid dimension must lie in [0, {MAX_DIM}], got {d}")
    if resolution < 1:
        raise PreconditionError("resolution must be at least 1")
    if d == 0:
        return Domain(np.zeros((1, 0)), ((0,),), 0)
    r = resolution
    lattice = list(itertools.product(range(r + 1), repeat=d))
    index = {p: i for i, p in enumerate(lattice)}
    verts = np.array(lattice, dtype=float) / r
    simplices = [tuple(index[p] for p in cell) for cell in _kuhn_cells([r] * d, range(d))]
    return Domain(verts, tuple(simplices), d)


def build_sphere(k: int, resolution: int) -> Domain:
    """Boundary of the refined ``(k+1)``-cube, projected radially onto ``S^k``.

    Each facet is Kuhn-triangulated with the global axis order, so the facet
    triangulations agree on shared faces.
    """
    if k not in (1, 2, 3):
        raise PreconditionError(f"sphere dimension must be 1, 2 or 3, got {k}")
    if resolution < 1:
        raise PreconditionError("resolution must be at least 1")
    r = resolution
    amb = k + 1
    index: dict[tuple, int] = {}
    simplices = []
    for axis in range(amb):
        free = [a for a in range(amb) if a != axis]
        for side in (0, r):
            for cell in _kuhn_cells([r] * k, free):
                ids = []
                for local in cell:
                    p = [0] * amb
                    p[axis] = side
                    for a, c in zip(free, local):
                        p[a] = c
                    ids.append(index.setdefault(tuple(p), len(index)))
                simplices.append(tuple(ids))
    lattice = np.array(sorted(index, key=index.get), dtype=float)
    pts = 2.0 * lattice / r - 1.0
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return Domain(pts, tuple(simplices), k)
