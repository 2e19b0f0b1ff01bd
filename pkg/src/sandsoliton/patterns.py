"""Solitons and tropical-vertex patterns built by recursive facet husking."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import NamedTuple, Sequence

import numpy as np

from .errors import RangeError, ValidationError
from .husking import HuskingResult, WindowPolicy, canonical_husking
from .lattice import (Box, FacetMin, FieldSpec, IntField, LiftedTable, MinAffine, QuotientGraph,
                      bounding_box, coprime_covector, identity_graph, int_rank, kernel_quotient)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# convex geometry on full-dimensional integer point sets


def _det(M):
    n = len(M)
    if n == 0:
        return 1
    if n == 1:
        return M[0][0]
    if n == 2:
        return M[0][0] * M[1][1] - M[0][1] * M[1][0]
    return sum((-1) ** j * M[0][j] * _det([row[:j] + row[j + 1:] for row in M[1:]])
               for j in range(n) if M[0][j])


def _normal(diffs):
    """Integer vector orthogonal to ``d - 1`` vectors in ``Z^d`` (cofactor expansion)."""
    d = len(diffs[0])
    out = [(-1) ** j * _det([list(v[:j]) + list(v[j + 1:]) for v in diffs]) for j in range(d)]
    g = 0
    for v in out:
        g = gcd(g, abs(v))
    return tuple(v // g for v in out) if g else tuple(out)


class Facet(NamedTuple):
    normal: tuple[int, ...]
    bound: int
    members: tuple[int, ...]  # indices into the point list


def hull_facets(points: Sequence[Sequence[int]]) -> list[Facet]:
    """Facets ``a . x <= b`` of the hull of a full-dimensional point set in ``Z^d``."""
    pts = [tuple(int(v) for v in p) for p in points]
    d = len(pts[0])
    if d == 1:
        vals = [p[0] for p in pts]
        lo, hi = min(vals), max(vals)
        return [Facet((-1,), -lo, tuple(i for i, v in enumerate(vals) if v == lo)),
                Facet((1,), hi, tuple(i for i, v in enumerate(vals) if v == hi))]
    found = {}
    for combo in itertools.combinations(range(len(pts)), d):
        p0 = pts[combo[0]]
        diffs = [tuple(a - b for a, b in zip(pts[i], p0)) for i in combo[1:]]
        a = _normal(diffs)
        if not any(a):
            continue
        b = sum(x * y for x, y in zip(a, p0))
        vals = [sum(x * y for x, y in zip(a, p)) for p in pts]
        if all(v <= b for v in vals):
            key = (a, b)
        elif all(v >= b for v in vals):
            key = (tuple(-x for x in a), -b)
        else:
            continue
        if key not in found:
            sgn = 1 if key[0] == a else -1
            found[key] = Facet(key[0], key[1], tuple(i for i, v in enumerate(vals) if sgn * v == key[1]))
    return sorted(found.values())


def hull_lattice_points(points: Sequence[Sequence[int]], facets: Sequence[Facet]) -> list[tuple[int, ...]]:
    pts = np.asarray(points, dtype=np.int64)
    box = Box(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))
    cand = box.points().reshape(-1, pts.shape[1])
    ok = np.ones(len(cand), dtype=bool)
    for f in facets:
        ok &= cand @ np.asarray(f.normal, dtype=np.int64) <= f.bound
    return [tuple(int(v) for v in c) for c in cand[ok]]


# ---------------------------------------------------------------------------
# pattern specifications


@dataclass(frozen=True)
class PatternSpec:
    A: tuple[tuple[int, ...], ...]
    c: tuple[int, ...]

    def __post_init__(self):
        A = tuple(tuple(int(v) for v in p) for p in self.A)
        c = tuple(int(v) for v in self.c) if self.c is not None else (0,) * len(A)
        if not A or len(c) != len(A):
            raise ValidationError("pattern needs a nonempty vertex list with one offset each")
        if len({len(p) for p in A}) != 1:
            raise ValidationError("pattern vertices have mixed dimensions")
        if len(set(A)) != len(A):
            raise ValidationError("pattern vertices must be distinct")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @classmethod
    def of(cls, A, c=None):
        return cls(tuple(map(tuple, A)), tuple(c) if c is not None else None)

    @property
    def n(self) -> int:
        return len(self.A[0])

    def key(self):
        return tuple(sorted(zip(self.A, self.c)))


class _Frame(NamedTuple):
    base: tuple[int, ...]
    base_c: int
    graph: QuotientGraph | None
    sigmas: tuple[tuple[int, ...], ...]
    offsets: tuple[int, ...]


def _frame(spec: PatternSpec) -> _Frame:
    """Normalize by the lexicographically smallest vertex and descend to the span lattice."""
    i0 = min(range(len(spec.A)), key=lambda i: spec.A[i])
    base, base_c = spec.A[i0], spec.c[i0]
    diffs = [tuple(a - b for a, b in zip(p, base)) for p in spec.A]
    if len(spec.A) == 1:
        return _Frame(base, base_c, None, ((),), (0,))
    graph = kernel_quotient([d for d in diffs if any(d)])
    sigmas = tuple(graph.descend_slope(d) for d in diffs)
    return _Frame(base, base_c, graph, sigmas, tuple(c - base_c for c in spec.c))


class PatternReport(NamedTuple):
    ok: bool
    extra_points: tuple = ()
    non_vertices: tuple = ()

    def __bool__(self):
        return self.ok

    def describe(self) -> str:
        if self.ok:
            return "ok"
        parts = [f"lattice point {p} in the hull" for p in self.extra_points]
        parts += [f"element {p} is not a vertex" for p in self.non_vertices]
        return "; ".join(parts)


def validate_pattern(A) -> PatternReport:
    """Every element is a hull vertex and the hull has no other lattice points."""
    spec = A if isinstance(A, PatternSpec) else PatternSpec.of(A)
    fr = _frame(spec)
    if fr.graph is None:
        return PatternReport(True)
    facets = hull_facets(fr.sigmas)
    inside = hull_lattice_points(fr.sigmas, facets)
    known = set(fr.sigmas)

    def lift(sigma):
        return tuple(b + v for b, v in zip(fr.base, fr.graph.lift_slope(sigma)))

    extra = tuple(lift(s) for s in inside if s not in known)
    d = fr.graph.d
    non_vertex = []
    for i, s in enumerate(fr.sigmas):
        normals = [f.normal for f in facets if i in f.members]
        if int_rank(normals) < d:
            non_vertex.append(spec.A[i])
    return PatternReport(not extra and not non_vertex, extra, tuple(non_vertex))


# ---------------------------------------------------------------------------
# solitons


@dataclass(eq=False)
class SolitonProfile:
    """Canonical husking ``g`` of ``min(0, t)`` on the rank-one quotient ``t = p . z``."""

    p: tuple[int, ...]
    n: int
    t_min: int
    t_max: int
    g: np.ndarray
    N: int
    phi: np.ndarray
    husking: HuskingResult | None = None

    @property
    def graph(self) -> QuotientGraph:
        return kernel_quotient([self.p])

    @property
    def q(self) -> tuple[int, ...]:
        return coprime_covector(self.p)

    @property
    def field(self) -> IntField:
        if self.husking is not None:
            return self.husking.field
        box = Box((self.t_min,), (self.t_max,))
        return IntField(self.graph, box, self.g, _soliton_reference())

    def g_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        return self.field.evaluate(t[..., None])

    def phi_at(self, t) -> np.ndarray:
        return 2 * self.n - 1 + quotient_laplacian(self.graph, self.field.evaluate, np.asarray(t)[..., None])

    def band(self) -> tuple[int, int]:
        """Smallest ``t`` range outside which ``phi == 2n - 1``."""
        ts = np.arange(self.t_min, self.t_max + 1)[self.phi != 2 * self.n - 1]
        return (int(ts.min()), int(ts.max())) if len(ts) else (0, -1)


def _soliton_reference() -> MinAffine:
    return MinAffine((((0,), 0), ((1,), 0)))


def _check_primitive(p):
    p = tuple(int(v) for v in p)
    if not any(p):
        raise ValidationError("direction must be nonzero")
    coprime_covector(p)
    return p


def soliton(p: Sequence[int], n: int | None = None, k_budget: int = 256,
            policy: WindowPolicy | None = None) -> SolitonProfile:
    """Soliton profile for a primitive direction ``p`` in ``Z^n``."""
    p = _check_primitive(p)
    if n is not None and n != len(p):
        raise ValidationError(f"direction {p} does not live in Z^{n}")
    graph = kernel_quotient([p])
    res = canonical_husking(_soliton_reference(), graph, k_budget, policy)
    box = res.field.box
    ts = np.arange(box.lo[0], box.hi[0] + 1)
    phi = 2 * len(p) - 1 + quotient_laplacian(graph, res.field.evaluate, ts[:, None])
    return SolitonProfile(p, len(p), box.lo[0], box.hi[0], res.field.values.copy(),
                          res.stabilized_at, phi, res)


def quotient_laplacian(graph: QuotientGraph, evaluate, y: np.ndarray) -> np.ndarray:
    """``Delta psi`` at quotient points ``y`` using a total evaluator."""
    y = np.asarray(y, dtype=np.int64)
    acc = -2 * graph.n * evaluate(y)
    for o in graph.offsets:
        o = np.asarray(o, dtype=np.int64)
        acc = acc + evaluate(y + o) + evaluate(y - o)
    return acc


# ---------------------------------------------------------------------------
# vertex patterns


@dataclass(eq=False)
class PatternHusking:
    """Canonical husking of a pattern, stored normalized on its span quotient.

    On ``Z^n`` the function is ``base . z + base_c + psi(pi z)``.
    """

    spec: PatternSpec
    base: tuple[int, ...]
    base_c: int
    graph: QuotientGraph
    reference: FieldSpec
    result: HuskingResult

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def field(self) -> IntField:
        return self.result.field

    def lifted_spec(self) -> LiftedTable:
        return self.field.as_spec().lifted(self.graph.pi, self.base, self.base_c)

    def evaluate(self, z) -> np.ndarray:
        return self.lifted_spec().evaluate(z)


class PatternBuilder:
    """Recursive facet husking with a per-instance cache keyed by vertex set and offsets."""

    def __init__(self, k_budget: int = 256, policy: WindowPolicy | None = None):
        self.k_budget = k_budget
        self.policy = policy or WindowPolicy()
        self._tilde: dict = {}
        self._husk: dict = {}

    def tilde(self, spec: PatternSpec):
        """``(frame, reference)`` with the reference normalized on the span quotient."""
        key = spec.key()
        if key in self._tilde:
            return self._tilde[key]
        report = validate_pattern(spec)
        if not report:
            raise ValidationError(f"invalid pattern: {report.describe()}")
        fr = _frame(spec)
        if fr.graph is None:
            raise ValidationError("a single vertex has no husking (its span is a point)")
        if fr.graph.d == 1:
            ref = MinAffine(tuple(zip(fr.sigmas, fr.offsets)))
        else:
            parts = []
            for facet in hull_facets(fr.sigmas):
                sub = PatternSpec(tuple(spec.A[i] for i in facet.members),
                                  tuple(spec.c[i] for i in facet.members))
                child = self.husk(sub)
                P = fr.graph.factor_through(child.graph)
                slope = fr.graph.descend_slope(tuple(a - b for a, b in zip(child.base, fr.base)))
                parts.append(child.field.as_spec().lifted(P, slope, child.base_c - fr.base_c))
            ref = FacetMin(tuple(parts))
        self._tilde[key] = (fr, ref)
        return fr, ref

    def husk(self, spec: PatternSpec) -> PatternHusking:
        key = spec.key()
        if key in self._husk:
            return self._husk[key]
        fr, ref = self.tilde(spec)
        policy = self.policy
        if fr.graph.d > 1 and policy.initial is None:
            policy = WindowPolicy(_vertex_box(fr, policy.margin_for(fr.graph)),
                                  policy.margin, policy.max_enlargements)
        log.info("husking pattern %s on a rank-%d quotient", spec.A, fr.graph.d)
        res = canonical_husking(ref, fr.graph, self.k_budget, policy)
        out = PatternHusking(spec, fr.base, fr.base_c, fr.graph, ref, res)
        self._husk[key] = out
        return out


def _vertex_box(fr: _Frame, margin: int) -> Box:
    """Box around the tropical vertices of ``min_j (sigma_j . x + offset_j)``."""
    d = fr.graph.d
    verts = []
    idx = range(len(fr.sigmas))
    for combo in itertools.combinations(idx, d + 1):
        # sigma_j . x - lam = -offset_j for j in combo
        M = [[Fraction(v) for v in fr.sigmas[j]] + [Fraction(-1)] for j in combo]
        rhs = [Fraction(-fr.offsets[j]) for j in combo]
        sol = _solve(M, rhs)
        if sol is None:
            continue
        x, lam = sol[:d], sol[d]
        if all(sum(s * xi for s, xi in zip(fr.sigmas[j], x)) + fr.offsets[j] >= lam for j in idx):
            verts.append(x)
    if not verts:
        return Box.cube(d, 2 * margin + fr.graph.ring)
    lo = tuple(int(np.floor(min(v[i] for v in verts))) for i in range(d))
    hi = tuple(int(np.ceil(max(v[i] for v in verts))) for i in range(d))
    return Box(lo, hi).expand(2 * margin + fr.graph.ring)


def _solve(M, rhs):
    n = len(M)
    A = [row[:] + [b] for row, b in zip(M, rhs)]
    for col in range(n):
        piv = next((i for i in range(col, n) if A[i][col] != 0), None)
        if piv is None:
            return None
        A[col], A[piv] = A[piv], A[col]
        for i in range(n):
            if i != col and A[i][col] != 0:
                f = A[i][col] / A[col][col]
                A[i] = [u - f * v for u, v in zip(A[i], A[col])]
    return [A[i][n] / A[i][i] for i in range(n)]


def build_tilde_psi(spec: PatternSpec, builder: PatternBuilder | None = None) -> FieldSpec:
    """Minimum of the lifted canonical facet huskings, as a total function on ``Z^n``."""
    builder = builder or PatternBuilder()
    fr, ref = builder.tilde(spec)
    if fr.graph.d == 1:
        return FacetMin((builder.husk(spec).lifted_spec(),))
    return FacetMin(tuple(part.lifted(fr.graph.pi, fr.base, fr.base_c) for part in ref.parts))


def vertex_pattern(spec: PatternSpec, k_budget: int = 256, policy: WindowPolicy | None = None,
                   builder: PatternBuilder | None = None):
    """Canonical husking of the facet minimum plus a state builder for ``Z^n`` windows."""
    builder = builder or PatternBuilder(k_budget, policy)
    ph = builder.husk(spec)

    def make_state(window: Box, translation=None):
        return lift_pattern_to_state(ph, window, translation)

    return ph, make_state


# ---------------------------------------------------------------------------
# lifting to sandpile states


def _quotient_parts(obj):
    if isinstance(obj, SolitonProfile):
        graph = obj.graph
        fld = obj.field
        ts = np.arange(obj.t_min, obj.t_max + 1)
        required = [(int(t),) for t in ts[obj.phi != 2 * obj.n - 1]]
        return graph, fld.evaluate, required
    if isinstance(obj, PatternHusking):
        return obj.graph, obj.field.evaluate, sorted(obj.result.support)
    if isinstance(obj, HuskingResult):
        return obj.graph, obj.field.evaluate, sorted(obj.support)
    raise ValidationError(f"cannot lift {type(obj).__name__} to a state")


def lift_pattern_to_state(obj, window: Box, translation: Sequence[int] | None = None):
    """State ``2n - 1 + Delta psi(pi(z - translation))`` on a ``Z^n`` box."""
    from .engine import Domain, SandpileState

    graph, evaluate, required = _quotient_parts(obj)
    n = graph.n
    if window.dim != n:
        raise ValidationError(f"window must live in Z^{n}")
    t = np.zeros(n, dtype=np.int64) if translation is None else np.asarray(translation, dtype=np.int64)
    pts = window.points() - t
    y = pts @ graph.pi.T
    image = {tuple(v) for v in y.reshape(-1, graph.d).tolist()}
    missing = [r for r in required if r not in image]
    if missing:
        raise RangeError(f"window {window} misses pattern cells such as {missing[0]} on the quotient")
    h = 2 * n - 1 + quotient_laplacian(graph, evaluate, y)
    if (h < 0).any() or (h > 2 * n - 1).any():
        raise ValidationError("lifted pattern is not a stable nonnegative state")
    return SandpileState(Domain(n, window), h)


class FaceAgreement(NamedTuple):
    ok: bool
    checked: dict  # face vertex tuple -> number of cells compared
    mismatch: tuple | None = None

    def __bool__(self):
        return self.ok


def _lifted_state_values(evaluate, z: np.ndarray, n: int) -> np.ndarray:
    acc = -2 * n * evaluate(z)
    for i in range(n):
        e = np.zeros(n, dtype=np.int64)
        e[i] = 1
        acc = acc + evaluate(z + e) + evaluate(z - e)
    return 2 * n - 1 + acc


def face_agreement(ph: PatternHusking, builder: PatternBuilder, window: Box,
                   gap: int | None = None) -> FaceAgreement:
    """Compare the vertex state with lower-dimensional face patterns away from the vertex.

    At a cell where the forms within ``gap`` of the minimum are exactly the
    vertices of a proper face of the hull, the state must equal the state of
    that face's own canonical husking (a soliton for an edge, background for
    a single vertex).
    """
    spec = ph.spec
    n = spec.n
    A = np.asarray(spec.A, dtype=np.int64)
    c = np.asarray(spec.c, dtype=np.int64)
    if gap is None:
        depth = max(int((IntField.from_spec(h.graph, h.field.box, h.reference).values
                         - h.field.values).max()) for h in builder._husk.values())
        spread = int(np.abs(A[:, None, :] - A[None, :, :]).max())
        gap = depth + 2 * spread + 1
    pts = window.points().reshape(-1, n)
    forms = pts @ A.T + c
    near = forms <= forms.min(axis=1, keepdims=True) + gap
    faces = _faces_of(spec)
    state = lift_pattern_to_state(ph, window).heights.reshape(-1)
    checked = {}
    for members in faces:
        sel = np.zeros(len(spec.A), dtype=bool)
        sel[list(members)] = True
        rows = np.flatnonzero((near == sel).all(axis=1))
        if not len(rows):
            continue
        z = pts[rows]
        if len(members) == 1:
            expect = np.full(len(rows), 2 * n - 1)
        else:
            sub = PatternSpec(tuple(spec.A[i] for i in members), tuple(spec.c[i] for i in members))
            expect = _lifted_state_values(builder.husk(sub).evaluate, z, n)
        bad = np.flatnonzero(expect != state[rows])
        key = tuple(spec.A[i] for i in members)
        checked[key] = len(rows)
        if len(bad):
            return FaceAgreement(False, checked, tuple(int(v) for v in z[bad[0]]))
    return FaceAgreement(bool(checked), checked)


def _faces_of(spec: PatternSpec) -> list[tuple[int, ...]]:
    """Index sets of all proper faces of the hull, through iterated facets."""
    out = set()
    stack = [tuple(range(len(spec.A)))]
    while stack:
        members = stack.pop()
        if len(members) == 1:
            continue
        sub = PatternSpec(tuple(spec.A[i] for i in members), tuple(spec.c[i] for i in members))
        fr = _frame(sub)
        for f in hull_facets(fr.sigmas):
            face = tuple(members[i] for i in f.members)
            if face not in out:
                out.add(face)
                stack.append(face)
    return sorted(out, key=lambda f: (len(f), f))
