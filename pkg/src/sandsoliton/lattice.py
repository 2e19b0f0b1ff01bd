"""Exact integer lattice primitives.

Everything here works with Python ints or ``int64`` arrays; no floating
point is involved.  A :class:`QuotientGraph` describes ``Z^n / L`` as a
rank-``d`` lattice multigraph whose ``2n`` neighbours of ``x`` are
``x +- o_i``; plain ``Z^n`` is the case ``d == n`` with identity projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, RangeError, ShapeError, ValidationError

# |F| must stay below this for 2n*|F| + sums of 2n neighbours to fit in int64.
_SAFE_BITS = 58


# ---------------------------------------------------------------------------
# integer linear algebra


def ext_gcd(a: int, b: int) -> tuple[int, int, int]:
    """Return ``(g, x, y)`` with ``a*x + b*y == g == gcd(a, b) >= 0``."""
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    if old_r < 0:
        return -old_r, -old_s, -old_t
    return old_r, old_s, old_t


def _identity(n):
    return [[int(i == j) for j in range(n)] for i in range(n)]


def column_reduce(rows: Sequence[Sequence[int]], n: int):
    """Unimodular column reduction ``G @ U = [H | 0]``.

    Returns ``(rank, U, Uinv)`` as nested lists.  The last ``n - rank``
    columns of ``U`` span the integer kernel of ``G``.
    """
    A = [list(map(int, r)) for r in rows]
    U = _identity(n)
    V = _identity(n)
    c = 0
    for i in range(len(A)):
        if c == n:
            break
        for j in range(c + 1, n):
            b = A[i][j]
            if b == 0:
                continue
            a = A[i][c]
            g, x, y = ext_gcd(a, b)
            ag, bg = a // g, b // g
            for M in (A, U):
                for row in M:
                    vc, vj = row[c], row[j]
                    row[c] = x * vc + y * vj
                    row[j] = -bg * vc + ag * vj
            rc, rj = V[c], V[j]
            V[c] = [ag * u + bg * v for u, v in zip(rc, rj)]
            V[j] = [-y * u + x * v for u, v in zip(rc, rj)]
        if A[i][c] == 0:
            continue
        if A[i][c] < 0:
            for M in (A, U):
                for row in M:
                    row[c] = -row[c]
            V[c] = [-v for v in V[c]]
        c += 1
    return c, U, V


def row_hnf(rows: Sequence[Sequence[int]]):
    """Row Hermite normal form of a full-row-rank integer matrix.

    Returns ``(H, T)`` with ``H == T @ rows`` and ``T`` unimodular.  Pivots
    are positive and entries above a pivot are reduced into ``[0, pivot)``.
    """
    H = [list(map(int, r)) for r in rows]
    r = len(H)
    T = _identity(r)
    if r == 0:
        return H, T
    ncol = len(H[0])
    pr = 0
    for col in range(ncol):
        if pr == r:
            break
        for i in range(pr + 1, r):
            b = H[i][col]
            if b == 0:
                continue
            a = H[pr][col]
            g, x, y = ext_gcd(a, b)
            ag, bg = a // g, b // g
            for M in (H, T):
                rp, ri = M[pr], M[i]
                M[pr] = [x * u + y * v for u, v in zip(rp, ri)]
                M[i] = [-bg * u + ag * v for u, v in zip(rp, ri)]
        piv = H[pr][col]
        if piv == 0:
            continue
        if piv < 0:
            H[pr] = [-v for v in H[pr]]
            T[pr] = [-v for v in T[pr]]
            piv = -piv
        for i in range(pr):
            q = H[i][col] // piv
            if q:
                H[i] = [u - q * v for u, v in zip(H[i], H[pr])]
                T[i] = [u - q * v for u, v in zip(T[i], T[pr])]
        pr += 1
    return H, T


def int_inverse(M: Sequence[Sequence[int]]) -> list[list[int]]:
    """Inverse of a unimodular integer matrix (exact)."""
    n = len(M)
    A = [[Fraction(v) for v in row] + [Fraction(int(i == j)) for j in range(n)]
         for i, row in enumerate(M)]
    for col in range(n):
        piv = next((i for i in range(col, n) if A[i][col] != 0), None)
        if piv is None:
            raise ValidationError("matrix is singular")
        A[col], A[piv] = A[piv], A[col]
        p = A[col][col]
        A[col] = [v / p for v in A[col]]
        for i in range(n):
            if i != col and A[i][col] != 0:
                f = A[i][col]
                A[i] = [u - f * v for u, v in zip(A[i], A[col])]
    out = []
    for row in A:
        inv = row[n:]
        if any(v.denominator != 1 for v in inv):
            raise ValidationError("matrix is not unimodular")
        out.append([int(v) for v in inv])
    return out


def int_rank(rows: Sequence[Sequence[int]]) -> int:
    if not rows:
        return 0
    return column_reduce(rows, len(rows[0]))[0]


def coprime_covector(p: Sequence[int]) -> tuple[int, ...]:
    """Deterministic ``q`` with ``p . q == 1`` for a primitive vector ``p``."""
    p = tuple(int(v) for v in p)
    g = 0
    q = [0] * len(p)
    for i, pi in enumerate(p):
        g, x, y = ext_gcd(g, pi)
        q = [x * v for v in q]
        q[i] += y
    if g != 1:
        raise ValidationError(f"vector {p} is not primitive (gcd {g})")
    return tuple(q)


# ---------------------------------------------------------------------------
# boxes


@dataclass(frozen=True)
class Box:
    """Axis-aligned integer box with inclusive bounds."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ShapeError("box bounds must be nonempty and of equal length")

    @classmethod
    def cube(cls, d: int, radius: int, center: Sequence[int] | None = None):
        c = tuple(center) if center is not None else (0,) * d
        return cls(tuple(v - radius for v in c), tuple(v + radius for v in c))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def empty(self) -> bool:
        return any(h < l for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return 0 if self.empty else int(np.prod(self.shape))

    def expand(self, r: int) -> "Box":
        return Box(tuple(v - r for v in self.lo), tuple(v + r for v in self.hi))

    def contains(self, x: Sequence[int]) -> bool:
        return all(l <= v <= h for l, v, h in zip(self.lo, x, self.hi))

    def contains_box(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(
            a >= b for a, b in zip(self.hi, other.hi))

    def points(self) -> np.ndarray:
        """All lattice points as an array of shape ``shape + (d,)``."""
        axes = [np.arange(l, h + 1, dtype=np.int64) for l, h in zip(self.lo, self.hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack(grids, axis=-1)

    def index(self, x: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(v) - l for v, l in zip(x, self.lo))

    def slices_of(self, inner: "Box") -> tuple[slice, ...]:
        """Array slices selecting ``inner`` inside an array laid out on ``self``."""
        return tuple(slice(a - l, b - l + 1) for a, b, l in zip(inner.lo, inner.hi, self.lo))

    def doubled(self) -> "Box":
        """Box with twice the extent per axis about the same centre."""
        lo, hi = [], []
        for l, h in zip(self.lo, self.hi):
            half = (h - l) // 2 + 1
            lo.append(l - half)
            hi.append(h + half)
        return Box(tuple(lo), tuple(hi))


def bounding_box(points: Iterable[Sequence[int]]) -> Box | None:
    pts = np.asarray(list(points), dtype=np.int64)
    if pts.size == 0:
        return None
    return Box(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))


# ---------------------------------------------------------------------------
# quotient graphs


def _as_matrix(rows):
    return tuple(tuple(int(v) for v in r) for r in rows)


@dataclass(frozen=True)
class QuotientGraph:
    """``Z^n / L`` presented as ``Z^d`` with projection ``pi`` (d x n).

    ``embedding`` is an integer right inverse of ``pi`` (n x d), used to
    descend ``L``-invariant slopes and to factor projections.
    """

    n: int
    projection: tuple[tuple[int, ...], ...]
    kernel_basis: tuple[tuple[int, ...], ...]
    embedding: tuple[tuple[int, ...], ...]

    @property
    def d(self) -> int:
        return len(self.projection)

    @cached_property
    def pi(self) -> np.ndarray:
        return np.array(self.projection, dtype=np.int64).reshape(self.d, self.n)

    @cached_property
    def offsets(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(int(v) for v in self.pi[:, i]) for i in range(self.n))

    @cached_property
    def ring(self) -> int:
        return max(max(abs(v) for v in o) for o in self.offsets)

    @cached_property
    def loops(self) -> int:
        return sum(1 for o in self.offsets if not any(o))

    @property
    def moving_offsets(self) -> tuple[tuple[int, ...], ...]:
        return tuple(o for o in self.offsets if any(o))

    @property
    def degree(self) -> int:
        return 2 * self.n

    def project(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.int64)
        return z @ self.pi.T

    def descend_slope(self, s: Sequence[int]) -> tuple[int, ...]:
        """Coordinates ``sigma`` with ``pi^T sigma == s``; ``s`` must vanish on ``L``."""
        s = np.asarray(s, dtype=np.int64)
        R = np.array(self.embedding, dtype=np.int64).reshape(self.n, self.d)
        sigma = s @ R
        if not np.array_equal(sigma @ self.pi, s):
            raise ValidationError(f"slope {tuple(s)} is not invariant under the kernel lattice")
        return tuple(int(v) for v in sigma)

    def lift_slope(self, sigma: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(v) for v in np.asarray(sigma, dtype=np.int64) @ self.pi)

    def factor_through(self, child: "QuotientGraph") -> np.ndarray:
        """Matrix ``P`` (child.d x d) with ``child.pi == P @ self.pi``."""
        R = np.array(self.embedding, dtype=np.int64).reshape(self.n, self.d)
        P = child.pi @ R
        if not np.array_equal(P @ self.pi, child.pi):
            raise ValidationError("child quotient does not factor through this graph")
        return P


def identity_graph(n: int) -> QuotientGraph:
    eye = tuple(tuple(int(i == j) for j in range(n)) for i in range(n))
    return QuotientGraph(n=n, projection=eye, kernel_basis=(), embedding=eye)


def kernel_quotient(generators: Sequence[Sequence[int]]) -> QuotientGraph:
    """Quotient graph for ``L = {v : v . g = 0 for every generator g}``.

    For a rank-one span the projection is oriented so that the first
    nonzero generator descends to a positive slope.
    """
    gens = [tuple(int(v) for v in g) for g in generators]
    if not gens:
        raise DegenerateInputError("no generators given")
    n = len(gens[0])
    if n < 1 or any(len(g) != n for g in gens):
        raise ShapeError("generators must share a positive dimension")
    rank, U, V = column_reduce(gens, n)
    if rank == 0:
        raise DegenerateInputError("all generators are zero; the quotient would be a point")
    pi_raw = V[:rank]
    pi, T = row_hnf(pi_raw)
    Tinv = int_inverse(T)
    R_raw = [row[:rank] for row in U]
    # pi = T pi_raw, so R = R_raw T^{-1} keeps pi @ R = I
    R = [[sum(R_raw[i][k] * Tinv[k][j] for k in range(rank)) for j in range(rank)]
         for i in range(n)]
    if rank == 1:
        g = next(g for g in gens if any(g))
        sigma = sum(gi * R[i][0] for i, gi in enumerate(g))
        if sigma < 0:
            pi = [[-v for v in pi[0]]]
            R = [[-row[0]] for row in R]
    kern = [[U[i][j] for i in range(n)] for j in range(rank, n)]
    kern, _ = row_hnf(kern) if kern else ([], None)
    return QuotientGraph(
        n=n,
        projection=_as_matrix(pi),
        kernel_basis=_as_matrix(kern),
        embedding=_as_matrix(R),
    )


# ---------------------------------------------------------------------------
# field specifications (total evaluation rules)


class FieldSpec:
    """A total integer function on ``Z^d``, evaluated on point arrays."""

    dim: int

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def at(self, x: Sequence[int]) -> int:
        return int(self.evaluate(np.asarray([x], dtype=np.int64))[0])


@dataclass(frozen=True, eq=False)
class MinAffine(FieldSpec):
    """``x -> min_j (slope_j . x + offset_j)``."""

    forms: tuple[tuple[tuple[int, ...], int], ...]

    def __post_init__(self):
        forms = tuple((tuple(int(v) for v in s), int(c)) for s, c in self.forms)
        if not forms:
            raise ValidationError("MinAffine needs at least one affine form")
        if len({len(s) for s, _ in forms}) != 1:
            raise ShapeError("affine forms have mixed dimensions")
        object.__setattr__(self, "forms", forms)

    @property
    def dim(self) -> int:
        return len(self.forms[0][0])

    @cached_property
    def _slopes(self):
        return np.array([s for s, _ in self.forms], dtype=np.int64)

    @cached_property
    def _offsets(self):
        return np.array([c for _, c in self.forms], dtype=np.int64)

    def evaluate(self, points):
        points = np.asarray(points, dtype=np.int64)
        return (points @ self._slopes.T + self._offsets).min(axis=-1)


@dataclass(frozen=True, eq=False)
class LiftedTable(FieldSpec):
    """A table on a child lattice pulled back along ``projection`` plus an affine part.

    ``value(x) = T(P x) + slope . x + offset`` where ``T`` reads ``values``
    on ``box`` and ``farfield`` elsewhere.
    """

    projection: np.ndarray
    slope: tuple[int, ...]
    offset: int
    box: Box
    values: np.ndarray
    farfield: FieldSpec

    @property
    def dim(self) -> int:
        return self.projection.shape[1]

    def evaluate(self, points):
        points = np.asarray(points, dtype=np.int64)
        y = points @ self.projection.T
        lo = np.array(self.box.lo, dtype=np.int64)
        hi = np.array(self.box.hi, dtype=np.int64)
        inside = np.all((y >= lo) & (y <= hi), axis=-1)
        out = np.empty(y.shape[:-1], dtype=np.int64)
        if inside.any():
            idx = tuple((y[inside] - lo).T)
            out[inside] = self.values[idx]
        if (~inside).any():
            out[~inside] = self.farfield.evaluate(y[~inside])
        return out + points @ np.asarray(self.slope, dtype=np.int64) + self.offset

    def lifted(self, outer_projection: np.ndarray, slope=None, offset: int = 0) -> "LiftedTable":
        """Pull back along ``x -> outer_projection @ x`` and add an affine part."""
        outer = np.asarray(outer_projection, dtype=np.int64)
        s = np.asarray(self.slope, dtype=np.int64) @ outer
        if slope is not None:
            s = s + np.asarray(slope, dtype=np.int64)
        return LiftedTable(
            projection=self.projection @ outer,
            slope=tuple(int(v) for v in s),
            offset=self.offset + int(offset),
            box=self.box,
            values=self.values,
            farfield=self.farfield,
        )


@dataclass(frozen=True, eq=False)
class FacetMin(FieldSpec):
    """Pointwise minimum of total constituents."""

    parts: tuple[FieldSpec, ...]

    def __post_init__(self):
        if not self.parts:
            raise ValidationError("FacetMin needs at least one constituent")
        if len({p.dim for p in self.parts}) != 1:
            raise ShapeError("constituents have mixed dimensions")

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def evaluate(self, points):
        out = self.parts[0].evaluate(points)
        for p in self.parts[1:]:
            out = np.minimum(out, p.evaluate(points))
        return out


def zero_spec(d: int) -> MinAffine:
    return MinAffine((((0,) * d, 0),))


# ---------------------------------------------------------------------------
# fields


def _check_magnitude(values: np.ndarray) -> None:
    if values.size and int(np.abs(values).max()) >= (1 << _SAFE_BITS):
        raise OverflowError("field values too large for checked int64 arithmetic")


@dataclass(eq=False)
class IntField:
    """Integer function on a window of ``Z^d`` with a total fallback outside."""

    graph: QuotientGraph
    box: Box
    values: np.ndarray
    fallback: FieldSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.box.dim != self.graph.d or self.values.shape != self.box.shape:
            raise ShapeError(
                f"values of shape {self.values.shape} do not fit box {self.box} on rank {self.graph.d}")
        if self.core.empty:
            raise ShapeError("window is too small to have a core")

    @classmethod
    def from_spec(cls, graph: QuotientGraph, box: Box, spec: FieldSpec) -> "IntField":
        return cls(graph, box, spec.evaluate(box.points()), spec)

    @classmethod
    def from_array(cls, graph: QuotientGraph, box: Box, values) -> "IntField":
        """Field whose fallback is the table itself, zero beyond the window."""
        values = np.array(values, dtype=np.int64)
        d = graph.d
        spec = LiftedTable(np.eye(d, dtype=np.int64), (0,) * d, 0, box, values.copy(), zero_spec(d))
        return cls(graph, box, values, spec)

    @property
    def ring(self) -> int:
        return self.graph.ring

    @property
    def core(self) -> Box:
        return self.box.expand(-self.ring)

    @property
    def core_slices(self):
        return self.box.slices_of(self.core)

    def core_values(self) -> np.ndarray:
        return self.values[self.core_slices]

    def evaluate(self, points) -> np.ndarray:
        return self.as_spec().evaluate(points)

    def at(self, x: Sequence[int]) -> int:
        if self.box.contains(x):
            return int(self.values[self.box.index(x)])
        return self.fallback.at(x)

    def as_spec(self) -> LiftedTable:
        d = self.graph.d
        return LiftedTable(np.eye(d, dtype=np.int64), (0,) * d, 0, self.box, self.values, self.fallback)

    def with_values(self, values) -> "IntField":
        return IntField(self.graph, self.box, values, self.fallback)

    def ring_consistent(self) -> bool:
        mask = np.ones(self.box.shape, dtype=bool)
        mask[self.core_slices] = False
        pts = self.box.points()[mask]
        return bool(np.array_equal(self.values[mask], self.fallback.evaluate(pts)))

    def laplacian(self) -> np.ndarray:
        """``Delta F`` on the core, as an array laid out on ``self.core``."""
        return laplacian_array(self.values, self.graph)

    def is_superharmonic(self) -> bool:
        return bool((self.laplacian() <= 0).all())

def _same_window(F: IntField, G: IntField) -> None:
    if F.graph != G.graph or F.box != G.box:
        raise ShapeError("fields live on different graphs or windows")


def laplacian_array(values: np.ndarray, graph: QuotientGraph) -> np.ndarray:
    """Vectorised Laplacian over the core of an array laid out on a window."""
    values = np.asarray(values, dtype=np.int64)
    _check_magnitude(values)
    r = graph.ring
    shape = values.shape
    core = tuple(slice(r, s - r) for s in shape)
    centre = values[core]
    acc = -2 * graph.n * centre
    for o in graph.offsets:
        if not any(o):
            acc = acc + 2 * centre
            continue
        plus = tuple(slice(r + oj, s - r + oj) for oj, s in zip(o, shape))
        minus = tuple(slice(r - oj, s - r - oj) for oj, s in zip(o, shape))
        acc = acc + values[plus] + values[minus]
    return acc


def laplacian_at(field: IntField, x: Sequence[int]) -> int:
    x = tuple(int(v) for v in x)
    if len(x) != field.graph.d or not field.core.contains(x):
        raise RangeError(f"point {x} is outside the core {field.core}")
    vals = field.values
    box = field.box

    def F(y):
        return int(vals[box.index(y)])

    total = -2 * field.graph.n * F(x)
    for o in field.graph.offsets:
        total += F(tuple(a + b for a, b in zip(x, o))) + F(tuple(a - b for a, b in zip(x, o)))
    return total


def deviation_mask(field: IntField) -> np.ndarray:
    return field.laplacian() != 0


def deviation_set(field: IntField) -> set[tuple[int, ...]]:
    lap = field.laplacian()
    lo = np.array(field.core.lo, dtype=np.int64)
    return {tuple(int(v) for v in p + lo) for p in np.argwhere(lap != 0)}


def pointwise_min(F: IntField, G: IntField) -> IntField:
    _same_window(F, G)
    return IntField(F.graph, F.box, np.minimum(F.values, G.values), FacetMin((F.fallback, G.fallback)))


def divergence_check(field: IntField, region: Box) -> tuple[int, int]:
    """Both sides of the discrete divergence identity on ``region``.

    The left side sums ``Delta F`` over cells of ``region`` all of whose
    neighbours are in ``region``; the right side sums ``F(z) - F(z')`` over
    neighbour pairs with ``z`` on the region's inner boundary and ``z'`` interior.
    """
    if region.dim != field.graph.d or not field.core.contains_box(region):
        raise RangeError(f"region {region} must lie inside the core {field.core}")
    shape = region.shape
    vals = field.values[field.box.slices_of(region)]
    inside = np.ones(shape, dtype=bool)
    nbr_ok = np.ones(shape, dtype=bool)
    for o in field.graph.moving_offsets:
        for sgn in (1, -1):
            nbr_ok &= _shifted_mask(inside, tuple(sgn * v for v in o))
    interior = nbr_ok
    boundary = ~interior

    lap = field.laplacian()[field.core.slices_of(region)]
    lhs = int(lap[interior].sum())

    rhs = 0
    for o in field.graph.moving_offsets:
        for sgn in (1, -1):
            s = tuple(sgn * v for v in o)
            # pairs (z' interior, z = z' + s on the boundary)
            for idx in np.argwhere(interior):
                z = tuple(int(a + b) for a, b in zip(idx, s))
                if all(0 <= a < m for a, m in zip(z, shape)) and boundary[z]:
                    rhs += int(vals[z]) - int(vals[tuple(idx)])
    return lhs, rhs


def _shifted_mask(mask: np.ndarray, s: tuple[int, ...]) -> np.ndarray:
    """``out[x] = mask[x + s]`` with False outside the array."""
    out = np.zeros_like(mask)
    src, dst = [], []
    for sj, m in zip(s, mask.shape):
        if sj >= 0:
            src.append(slice(sj, m))
            dst.append(slice(0, max(m - sj, 0)))
        else:
            src.append(slice(0, max(m + sj, 0)))
            dst.append(slice(-sj, m))
    out[tuple(dst)] = mask[tuple(src)]
    return out


def lift_to_zn(field: IntField, box: Box) -> IntField:
    """Pull a quotient field back to plain ``Z^n`` on ``box``."""
    graph = field.graph
    spec = LiftedTable(graph.pi, (0,) * graph.n, 0, field.box, field.values, field.fallback)
    return IntField.from_spec(identity_graph(graph.n), box, spec)
