"""k-huskings of integer superharmonic functions.

On a finite window the k-husking is the least superharmonic function lying
above ``F - k`` on the core and equal to ``F`` on the boundary ring.  It is
computed by a monotone raise iteration: starting below the answer, any cell
where superharmonicity fails is raised to the smallest admissible integer.
Raising never exceeds the least majorant, so the fixpoint is that majorant.
The window is enlarged until the support of ``F - G`` keeps a margin from
the core boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ._kernels import flat_strides, raise_fixpoint
from .errors import (BudgetExhaustedError, InternalConsistencyError, NonContainmentError,
                     ValidationError)
from .lattice import (Box, FieldSpec, IntField, MinAffine, QuotientGraph, bounding_box,
                      deviation_mask, laplacian_array)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowPolicy:
    """Initial box (or None to derive one from the deviation set), margin, retries."""

    initial: Box | None = None
    margin: int | None = None
    max_enlargements: int = 6

    def margin_for(self, graph: QuotientGraph) -> int:
        return self.margin if self.margin is not None else 4 * graph.ring


@dataclass
class HuskingResult:
    field: IntField
    k: int
    stabilized_at: int | None
    support: frozenset
    window_generation: int = 0
    reference: FieldSpec | None = None

    @property
    def graph(self) -> QuotientGraph:
        return self.field.graph

    @property
    def support_box(self) -> Box | None:
        return bounding_box(self.support)


def solve_husking(F: IntField, k: int, lower: np.ndarray | None = None) -> IntField:
    """Finite-window k-husking of ``F`` (Dirichlet data ``F`` on the ring).

    ``lower`` is an optional warm start known to lie below the answer on the
    core, e.g. the previous husking minus one.
    """
    if k < 0:
        raise ValidationError("husking depth must be nonnegative")
    if not F.is_superharmonic():
        raise ValidationError("reference is not superharmonic on the window core")
    if k == 0:
        return F.with_values(F.values.copy())
    graph = F.graph
    G = F.values.copy()
    core = F.core_slices
    G[core] -= k
    if lower is not None:
        G[core] = np.maximum(G[core], np.asarray(lower, dtype=np.int64)[core])
    active = np.zeros(G.shape, dtype=np.bool_)
    active[core] = True
    deg = 2 * graph.n - 2 * graph.loops
    strides = flat_strides(G.shape, graph.offsets)
    flat = G.reshape(-1)
    raise_fixpoint(flat, active.reshape(-1), strides, deg)
    out = F.with_values(flat.reshape(F.values.shape))
    if (out.values > F.values).any():
        raise InternalConsistencyError("husking rose above its reference")
    if not out.is_superharmonic():
        raise InternalConsistencyError("husking fixpoint is not superharmonic")
    return out


def _support(F: IntField, G: IntField) -> frozenset:
    lo = np.array(F.box.lo)
    return frozenset(tuple(int(v) for v in p + lo) for p in np.argwhere(F.values != G.values))


def _respects_margin(F: IntField, G: IntField, margin: int) -> bool:
    diff = F.values != G.values
    inner = F.core.expand(-margin)
    if inner.empty:
        return not diff.any()
    mask = np.ones(diff.shape, dtype=bool)
    mask[F.box.slices_of(inner)] = False
    return not (diff & mask).any()


def _is_single_form(reference: FieldSpec) -> bool:
    return isinstance(reference, MinAffine) and len({s for s, _ in reference.forms}) == 1


def deviation_box(reference: FieldSpec, graph: QuotientGraph, probe_radius: int | None = None,
                  tries: int = 5) -> Box | None:
    """Bounding box of the deviation set, found on growing probe windows.

    Returns None for a harmonic reference; raises if the deviation set keeps
    reaching the probe boundary (it is then unbounded and the caller must
    supply an explicit window).
    """
    if _is_single_form(reference):
        return None
    r = probe_radius or 8 * graph.ring + 4
    unbounded = False
    for _ in range(tries):
        F = IntField.from_spec(graph, Box.cube(graph.d, r), reference)
        mask = deviation_mask(F)
        unbounded = any(mask.take(0, axis=a).any() or mask.take(-1, axis=a).any()
                        for a in range(mask.ndim))
        if mask.any() and not unbounded:
            lo = np.array(F.core.lo)
            return bounding_box(p + lo for p in np.argwhere(mask))
        r *= 2
    if unbounded:
        raise ValidationError("deviation set is unbounded; pass an explicit initial window")
    return None


def _start_box(reference, graph, policy: WindowPolicy, pad: int) -> Box | None:
    if policy.initial is not None:
        if policy.initial.dim != graph.d:
            raise ValidationError("initial window has the wrong rank")
        return policy.initial
    dbox = deviation_box(reference, graph)
    if dbox is None:
        return None
    return dbox.expand(pad + policy.margin_for(graph) + graph.ring)


def _identity_result(reference, graph, k, stabilized_at, policy):
    box = policy.initial or Box.cube(graph.d, 2 * graph.ring + 1)
    F = IntField.from_spec(graph, box, reference)
    return HuskingResult(F, k, stabilized_at, frozenset(), 0, reference)


def husk_k(reference: FieldSpec, graph: QuotientGraph, k: int,
           policy: WindowPolicy | None = None) -> HuskingResult:
    """k-husking of ``reference`` on a window whose margin is verified."""
    policy = policy or WindowPolicy()
    if k < 0:
        raise ValidationError("husking depth must be nonnegative")
    box = _start_box(reference, graph, policy, k)
    if box is None:
        return _identity_result(reference, graph, k, None, policy)
    margin = policy.margin_for(graph)
    for generation in range(policy.max_enlargements + 1):
        F = IntField.from_spec(graph, box, reference)
        G = solve_husking(F, k)
        if _respects_margin(F, G, margin):
            return HuskingResult(G, k, None, _support(F, G), generation, reference)
        log.info("support of %d-husking reaches the margin of %s; enlarging", k, box)
        box = box.doubled()
    raise NonContainmentError(
        f"support of the {k}-husking still violates the margin after "
        f"{policy.max_enlargements} enlargements")


def canonical_husking(reference: FieldSpec, graph: QuotientGraph, k_budget: int = 64,
                      policy: WindowPolicy | None = None) -> HuskingResult:
    """Scan k = 1, 2, ... until two consecutive huskings agree.

    ``stabilized_at`` is the first ``N >= 1`` with ``(F)_N == (F)_{N+1}``;
    ``(F)_{N+2}`` is computed as a guard against solver faults.
    """
    policy = policy or WindowPolicy()
    margin = policy.margin_for(graph)
    box = _start_box(reference, graph, policy, 2 * margin)
    if box is None:
        return _identity_result(reference, graph, 1, 1, policy)
    generation = 0
    while True:
        F = IntField.from_spec(graph, box, reference)
        if not F.is_superharmonic():
            raise ValidationError("reference is not superharmonic on the window core")
        try:
            N, fields = _scan(F, k_budget, margin)
        except _MarginHit:
            generation += 1
            if generation > policy.max_enlargements:
                raise NonContainmentError(
                    f"husking support still violates the margin after "
                    f"{policy.max_enlargements} enlargements") from None
            log.info("husking support reaches the margin of %s; enlarging", box)
            box = box.doubled()
            continue
        G = fields[N]
        return HuskingResult(G, N, N, _support(F, G), generation, reference)


class _MarginHit(Exception):
    pass


def _scan(F: IntField, k_budget: int, margin: int):
    fields = [F]
    k = 0
    while True:
        k += 1
        G = solve_husking(F, k, lower=fields[-1].values - 1)
        if not _respects_margin(F, G, margin):
            raise _MarginHit
        fields.append(G)
        if k >= 2 and np.array_equal(fields[k].values, fields[k - 1].values):
            N = k - 1
            guard = solve_husking(F, N + 2, lower=fields[k].values - 1)
            if not np.array_equal(guard.values, fields[N].values):
                raise InternalConsistencyError(
                    f"husking changed again at depth {N + 2} after stabilizing at {N}")
            return N, fields
        if k > k_budget:
            diff = _support(fields[k - 1], fields[k])
            raise BudgetExhaustedError(
                f"no stabilization within k_budget={k_budget}; last two iterates "
                f"differ on {len(diff)} cells", diff_support=diff)


def slicing_decomposition(F: IntField, G: IntField) -> list[IntField]:
    """Indicator fields ``H_k = [F - G >= k]`` for ``k = 1..max(F - G)``."""
    if F.graph != G.graph or F.box != G.box:
        raise ValidationError("fields live on different windows")
    H = F.values - G.values
    if (H < 0).any():
        raise ValidationError("F - G is negative somewhere")
    m = int(H.max()) if H.size else 0
    return [IntField.from_array(F.graph, F.box, (H >= j).astype(np.int64))
            for j in range(1, m + 1)]


class MonotoneCheck(NamedTuple):
    ok: bool
    witness: dict | None = None

    def __bool__(self):
        return self.ok


def check_e_increasing(field: IntField, e: Sequence[int], search_bound: int) -> MonotoneCheck:
    """Check nondecrease along ``e`` and that plateaus descend near the deviation set."""
    e = np.asarray(e, dtype=np.int64)
    if e.shape != (field.graph.d,) or not e.any():
        raise ValidationError("direction must be a nonzero vector on the quotient")
    pts = field.box.points()[field.core_slices].reshape(-1, field.graph.d)
    F = field.evaluate
    here = F(pts)

    ahead = pts + e
    in_window = np.all((ahead >= field.box.lo) & (ahead <= field.box.hi), axis=1)
    bad = in_window & (here > F(ahead))
    if bad.any():
        return MonotoneCheck(False, {"kind": "decrease", "point": tuple(int(v) for v in pts[bad][0])})

    plateau = here == F(pts - e)
    cur = pts[plateau]
    if not len(cur):
        return MonotoneCheck(True)
    origin = cur.copy()
    val = F(cur)
    found = np.zeros(len(cur), dtype=bool)
    stop = np.empty_like(cur)
    max_steps = sum(field.box.shape) + search_bound
    for _ in range(max_steps):
        nxt = cur - e
        nval = F(nxt)
        hit = ~found & (nval < val)
        stop[hit] = nxt[hit]
        found |= hit
        if found.all():
            break
        cur, val = nxt, nval
    if not found.all():
        return MonotoneCheck(False, {"kind": "endless-plateau",
                                     "point": tuple(int(v) for v in origin[~found][0])})
    # deviation points come from the total evaluator, so descents that leave
    # the window are judged against the deviation set beyond it as well
    around = bounding_box(stop).expand(search_bound)
    dev = _deviation_points(field, around)
    if not len(dev):
        return MonotoneCheck(False, {"kind": "no-deviation", "point": tuple(int(v) for v in origin[0])})
    bound2 = search_bound * search_bound
    for chunk in range(0, len(stop), 4096):
        s = stop[chunk:chunk + 4096]
        d2 = ((s[:, None, :] - dev[None, :, :]) ** 2).sum(axis=-1).min(axis=1)
        far = d2 > bound2
        if far.any():
            i = int(np.argmax(far))
            return MonotoneCheck(False, {"kind": "far-descent",
                                         "point": tuple(int(v) for v in origin[chunk + i]),
                                         "descent": tuple(int(v) for v in s[i])})
    return MonotoneCheck(True)


def _deviation_points(field: IntField, box: Box) -> np.ndarray:
    """Points of ``box`` where the Laplacian of the total evaluator is nonzero."""
    padded = box.expand(field.ring)
    vals = field.evaluate(padded.points())
    mask = laplacian_array(vals, field.graph) != 0
    return np.argwhere(mask) + np.array(box.lo)
