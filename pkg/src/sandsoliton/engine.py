"""Finite-domain sandpile dynamics with sink boundary.

Heights live in a dense array over the domain's bounding box; cells of the
box that fail a halfspace constraint are outside the domain and grains sent
there vanish.  Worklists are FIFO; neighbour order is coordinate order,
minus before plus.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ._kernels import flat_strides, topple_fixpoint
from .errors import InternalConsistencyError, RangeError, ValidationError, WavePreconditionError
from .lattice import Box, _check_magnitude


@dataclass(frozen=True)
class Domain:
    """Cells of ``box`` satisfying every ``a . z <= b``."""

    n: int
    box: Box
    halfspaces: tuple[tuple[tuple[int, ...], int], ...] = ()

    def __post_init__(self):
        hs = tuple((tuple(int(v) for v in a), int(b)) for a, b in self.halfspaces)
        object.__setattr__(self, "halfspaces", hs)
        if self.box.dim != self.n or any(len(a) != self.n for a, _ in hs):
            raise ValidationError("domain dimension mismatch")
        if not self.mask.any():
            raise ValidationError("domain has no cells")

    @property
    def mask(self) -> np.ndarray:
        m = np.ones(self.box.shape, dtype=bool)
        if self.halfspaces:
            pts = self.box.points()
            for a, b in self.halfspaces:
                m &= pts @ np.asarray(a, dtype=np.int64) <= b
        return m

    def contains(self, z: Sequence[int]) -> bool:
        z = tuple(int(v) for v in z)
        if len(z) != self.n or not self.box.contains(z):
            return False
        return all(sum(ai * zi for ai, zi in zip(a, z)) <= b for a, b in self.halfspaces)

    @property
    def threshold(self) -> int:
        return 2 * self.n

    def directions(self):
        """Unit steps in coordinate order, minus before plus."""
        for i in range(self.n):
            for s in (-1, 1):
                e = [0] * self.n
                e[i] = s
                yield tuple(e)


@dataclass(eq=False)
class SandpileState:
    domain: Domain
    heights: np.ndarray

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.int64)
        if self.heights.shape != self.domain.box.shape:
            raise ValidationError("heights do not match the domain box")
        self.heights = np.where(self.domain.mask, self.heights, 0)
        if (self.heights < 0).any():
            raise ValidationError("heights must be nonnegative")

    @classmethod
    def uniform(cls, domain: Domain, height: int) -> "SandpileState":
        return cls(domain, np.full(domain.box.shape, int(height), dtype=np.int64))

    def __getitem__(self, z) -> int:
        if not self.domain.contains(z):
            raise RangeError(f"cell {tuple(z)} is outside the domain")
        return int(self.heights[self.domain.box.index(z)])

    def add(self, z, grains: int = 1) -> "SandpileState":
        if not self.domain.contains(z):
            raise RangeError(f"cell {tuple(z)} is outside the domain")
        h = self.heights.copy()
        h[self.domain.box.index(z)] += int(grains)
        return SandpileState(self.domain, h)

    def is_stable(self) -> bool:
        return bool((self.heights[self.domain.mask] <= self.domain.threshold - 1).all())

    def total(self) -> int:
        return int(self.heights[self.domain.mask].sum())

    def __eq__(self, other):
        return (isinstance(other, SandpileState) and self.domain == other.domain
                and np.array_equal(self.heights, other.heights))


@dataclass(eq=False)
class TopplingFunction:
    domain: Domain
    counts: np.ndarray

    def __getitem__(self, z) -> int:
        return int(self.counts[self.domain.box.index(z)])

    def total(self) -> int:
        return int(self.counts.sum())


def _padded(domain: Domain, values: np.ndarray):
    pad = np.zeros(tuple(s + 2 for s in domain.box.shape), dtype=np.int64)
    inside = np.zeros(pad.shape, dtype=np.bool_)
    core = tuple(slice(1, -1) for _ in range(domain.n))
    pad[core] = values
    inside[core] = domain.mask
    return pad, inside, core


def _unit_offsets(n):
    return [tuple(int(i == j) for j in range(n)) for i in range(n)]


def sink_laplacian(domain: Domain, H: np.ndarray) -> np.ndarray:
    """``Delta H`` restricted to the domain (neighbours outside count as zero)."""
    H = np.where(domain.mask, np.asarray(H, dtype=np.int64), 0)
    pad, inside, core = _padded(domain, H)
    acc = -2 * domain.n * H
    for i in range(domain.n):
        for s in (-1, 1):
            sl = list(core)
            sl[i] = slice(1 + s, pad.shape[i] - 1 + s)
            acc = acc + pad[tuple(sl)]
    return np.where(domain.mask, acc, 0)


def outside_neighbour_count(domain: Domain) -> np.ndarray:
    """Per cell, how many of its ``2n`` neighbours lie outside the domain."""
    pad = np.zeros(tuple(s + 2 for s in domain.box.shape), dtype=np.int64)
    core = tuple(slice(1, -1) for _ in range(domain.n))
    pad[core] = domain.mask
    acc = np.zeros(domain.box.shape, dtype=np.int64)
    for i in range(domain.n):
        for s in (-1, 1):
            sl = list(core)
            sl[i] = slice(1 + s, pad.shape[i] - 1 + s)
            acc += 1 - pad[tuple(sl)]
    return np.where(domain.mask, acc, 0)


def grains_lost(domain: Domain, H: np.ndarray) -> int:
    return int((np.asarray(H) * outside_neighbour_count(domain)).sum())


def _run(domain: Domain, h: np.ndarray, H: np.ndarray, seeds=None):
    _check_magnitude(h)
    pad_h, inside, core = _padded(domain, h)
    pad_H, _, _ = _padded(domain, H)
    strides = flat_strides(pad_h.shape, _unit_offsets(domain.n))
    if seeds is None:
        seeds = np.flatnonzero(inside.reshape(-1))
    flat_h = pad_h.reshape(-1)
    flat_H = pad_H.reshape(-1)
    topple_fixpoint(flat_h, flat_H, inside.reshape(-1), strides, domain.threshold,
                    np.asarray(seeds, dtype=np.int64))
    return pad_h[core].copy(), pad_H[core].copy()


def relax(state: SandpileState) -> tuple[SandpileState, TopplingFunction]:
    """Stabilize by legal topplings; returns the stable state and toppling counts."""
    h, H = _run(state.domain, state.heights, np.zeros_like(state.heights))
    return SandpileState(state.domain, h), TopplingFunction(state.domain, H)


def relax_random_order(state: SandpileState, rng: np.random.Generator,
                       max_topplings: int = 10 ** 6) -> tuple[SandpileState, TopplingFunction]:
    """Relaxation toppling one uniformly chosen unstable cell at a time.

    A slow reference path for small domains, used to check order independence.
    """
    dom = state.domain
    h = state.heights.copy()
    H = np.zeros_like(h)
    m = dom.mask
    steps = list(dom.directions())
    for _ in range(max_topplings):
        unstable = np.argwhere(m & (h >= dom.threshold))
        if not len(unstable):
            return SandpileState(dom, h), TopplingFunction(dom, H)
        c = tuple(unstable[rng.integers(len(unstable))])
        h[c] -= dom.threshold
        H[c] += 1
        for e in steps:
            nb = tuple(a + b for a, b in zip(c, e))
            if all(0 <= v < s for v, s in zip(nb, h.shape)) and m[nb]:
                h[nb] += 1
    raise InternalConsistencyError("random-order relaxation did not finish")


def send_wave(state: SandpileState, z0: Sequence[int]) -> tuple[SandpileState, TopplingFunction]:
    """Force one toppling at ``z0`` and relax; every cell must topple at most once."""
    dom = state.domain
    z0 = tuple(int(v) for v in z0)
    top = dom.threshold - 1
    if not state.is_stable():
        raise WavePreconditionError("waves are sent on stable states only")
    if not dom.contains(z0) or state[z0] != top:
        raise WavePreconditionError(f"cell {z0} must hold {top} grains")
    if not any(dom.contains(nb) and state[nb] == top for nb in _neighbours(z0)):
        raise WavePreconditionError(f"cell {z0} has no neighbour holding {top} grains")
    h = state.heights.copy()
    H = np.zeros_like(h)
    i0 = dom.box.index(z0)
    h[i0] -= dom.threshold
    H[i0] = 1
    seeds = []
    for nb in _neighbours(z0):
        if dom.contains(nb):
            j = dom.box.index(nb)
            h[j] += 1
            seeds.append(j)
    pad_shape = tuple(s + 2 for s in dom.box.shape)
    flat_seeds = [np.ravel_multi_index(tuple(v + 1 for v in j), pad_shape) for j in seeds]
    h, H = _run(dom, h, H, seeds=flat_seeds)
    if H.max() > 1:
        raise InternalConsistencyError("a cell toppled twice during a wave")
    if (h < 0).any():
        raise InternalConsistencyError("wave left a negative height")
    return SandpileState(dom, h), TopplingFunction(dom, H)


def _neighbours(z):
    for i in range(len(z)):
        for s in (-1, 1):
            nb = list(z)
            nb[i] += s
            yield tuple(nb)


class LeastActionReport(NamedTuple):
    ok: bool
    mode: str
    counterexample: np.ndarray | None = None
    detail: str = ""

    def __bool__(self):
        return self.ok


def is_wave_competitor(state: SandpileState, z0, H: np.ndarray) -> bool:
    """``H >= 0``, ``H(z0) == 1`` and ``phi + Delta H <= 2n - 1`` on the domain."""
    dom = state.domain
    H = np.asarray(H, dtype=np.int64)
    if (H[dom.mask] < 0).any() or H[dom.box.index(z0)] != 1:
        return False
    after = state.heights + sink_laplacian(dom, H)
    return bool((after[dom.mask] <= dom.threshold - 1).all())


def forced_lower_bound(state: SandpileState, z0) -> np.ndarray:
    """Pointwise lower bound valid for every wave competitor.

    Starts from the indicator of ``z0`` (forced) and raises every cell to the
    least value its stability constraint allows given the current bounds on
    its neighbours; each raise is implied by the constraints, so the fixpoint
    bounds all competitors from below.
    """
    dom = state.domain
    m = dom.mask
    B = np.zeros(dom.box.shape, dtype=np.int64)
    B[dom.box.index(z0)] = 1
    two_n = dom.threshold
    while True:
        nbr = sink_laplacian(dom, B) + two_n * B
        need = -((-(state.heights + nbr - (two_n - 1))) // two_n)
        need = np.where(m, np.maximum(need, 0), 0)
        new = np.maximum(B, need)
        if np.array_equal(new, B):
            return B
        B = new


def wave_least_action_check(state: SandpileState, z0, H_wave: np.ndarray,
                            mode: str = "auto", samples: int = 200,
                            rng: np.random.Generator | None = None,
                            brute_limit: int = 20) -> LeastActionReport:
    """Check that ``H_wave`` is the least wave competitor.

    ``exhaustive``: enumerate every 0/1 competitor below ``H_wave`` when its
    support is small (the competitor set is closed under pointwise minimum,
    so that suffices), otherwise compare with :func:`forced_lower_bound`,
    which bounds every competitor.  ``sampled``: greedy-decrement random
    competitors to local minima and compare.
    """
    dom = state.domain
    H_wave = np.asarray(H_wave, dtype=np.int64)
    z0 = tuple(int(v) for v in z0)
    if not is_wave_competitor(state, z0, H_wave):
        return LeastActionReport(False, mode, H_wave, "H_wave itself is not a competitor")
    if mode == "auto":
        mode = "exhaustive" if int(dom.mask.sum()) <= 100 else "sampled"
    if mode == "exhaustive":
        cells = [tuple(int(v) for v in c) for c in np.argwhere((H_wave > 0) & dom.mask)]
        i0 = dom.box.index(z0)
        free = [c for c in cells if c != i0]
        if H_wave.max() <= 1 and len(free) <= brute_limit:
            H = _enumerate_subsets(state, i0, free)
            if H is not None:
                return LeastActionReport(False, mode, H, "smaller competitor found")
            return LeastActionReport(True, mode, None, f"enumerated {2 ** len(free)} subsets")
        B = forced_lower_bound(state, z0)
        if np.array_equal(B, H_wave):
            return LeastActionReport(True, mode, None, "forced lower bound attained")
        return LeastActionReport(False, mode, B, "forced lower bound differs from H_wave")
    if mode != "sampled":
        raise ValidationError(f"unknown mode {mode!r}")
    rng = rng or np.random.default_rng(0)
    for _ in range(samples):
        H = H_wave + rng.integers(0, 3, size=H_wave.shape) * dom.mask
        H[dom.box.index(z0)] = 1
        if not is_wave_competitor(state, z0, H):
            continue
        H = greedy_decrement(state, z0, H, rng)
        if (H < H_wave)[dom.mask].any():
            return LeastActionReport(False, mode, H, "locally minimal competitor below H_wave")
    return LeastActionReport(True, mode, None, f"{samples} sampled competitors")


def _enumerate_subsets(state: SandpileState, i0, free, batch_bits: int = 16):
    """First competitor among the 0/1 functions on ``{z0} + free`` other than all-ones.

    Heights after ``phi + Delta H`` are evaluated for a whole batch of
    subsets with one matrix product.
    """
    dom = state.domain
    m = dom.mask.reshape(-1)
    size = m.size
    k = len(free)
    base = np.zeros(dom.box.shape, dtype=np.int64)
    base[i0] = 1
    fixed = (state.heights + sink_laplacian(dom, base)).reshape(-1)
    cols = np.zeros((k, size), dtype=np.int64)
    for j, c in enumerate(free):
        e = np.zeros(dom.box.shape, dtype=np.int64)
        e[c] = 1
        cols[j] = sink_laplacian(dom, e).reshape(-1)
    top = dom.threshold - 1
    total = 1 << k
    step = 1 << min(k, batch_bits)
    shifts = np.arange(k, dtype=np.int64)
    for start in range(0, total, step):
        codes = np.arange(start, min(start + step, total), dtype=np.int64)
        bits = (codes[:, None] >> shifts) & 1
        after = fixed[None, :] + bits @ cols
        ok = ((after <= top) | ~m[None, :]).all(axis=1) & (codes != total - 1)
        if ok.any():
            b = bits[int(np.argmax(ok))]
            H = base.copy()
            for c, v in zip(free, b):
                H[c] = v
            return H
    return None


def greedy_decrement(state: SandpileState, z0, H: np.ndarray, rng=None) -> np.ndarray:
    """Lower cells one unit at a time while the competitor property holds."""
    H = H.copy()
    dom = state.domain
    i0 = dom.box.index(z0)
    changed = True
    while changed:
        changed = False
        cells = np.argwhere((H > 0) & dom.mask)
        if rng is not None:
            rng.shuffle(cells)
        for c in cells:
            c = tuple(c)
            if c == i0:
                continue
            H[c] -= 1
            if is_wave_competitor(state, z0, H):
                changed = True
            else:
                H[c] += 1
    return H


class WaveTrial(NamedTuple):
    z0: tuple
    shift: tuple
    mismatch: tuple | None
    far_toppling: tuple | None

    @property
    def ok(self) -> bool:
        return self.mismatch is None and self.far_toppling is None


class WaveReport(NamedTuple):
    ok: bool
    trials: tuple
    movable: bool

    def __bool__(self):
        return self.ok

    def describe(self) -> str:
        lines = []
        for t in self.trials:
            status = "ok" if t.ok else "FAIL"
            extra = ""
            if t.mismatch is not None:
                extra += f" first differing cell {t.mismatch}"
            if t.far_toppling is not None:
                extra += f" toppling on the far side at {t.far_toppling}"
            lines.append(f"wave from {t.z0}: expected shift {t.shift} {status}{extra}")
        if not self.movable:
            lines.append("state is invariant under its own shift")
        return "\n".join(lines)


def _wave_geometry(profile, window: Box):
    ring = profile.graph.ring
    q = np.asarray(profile.q, dtype=np.int64)
    inner = window.expand(-ring)
    if inner.empty:
        raise RangeError(f"window {window} has no inner region")
    lo, hi = profile.band()
    pad = int(np.abs(q).max()) + ring
    t = inner.points() @ np.asarray(profile.p, dtype=np.int64)
    if t.min() > lo - pad or t.max() < hi + pad:
        raise RangeError(f"inner region of {window} does not clear the soliton band by {pad} on both sides")
    return inner, q, (lo, hi)


def far_wave_sources(profile, window: Box, state: SandpileState | None = None) -> list[tuple]:
    """One admissible wave source on each side of the soliton band."""
    from .patterns import lift_pattern_to_state

    state = state or lift_pattern_to_state(profile, window)
    inner, _, (lo, hi) = _wave_geometry(profile, window)
    pts = inner.points().reshape(-1, window.dim)
    t = pts @ np.asarray(profile.p, dtype=np.int64)
    top = state.domain.threshold - 1
    out = []
    for side in (-1, 1):
        order = np.argsort(side * t, kind="stable")[::-1]
        for i in order:
            z = tuple(int(v) for v in pts[i])
            if state[z] == top and any(state.domain.contains(nb) and state[nb] == top
                                       for nb in _neighbours(z)):
                out.append(z)
                break
    return out


def verify_wave_translation(profile, window: Box, trials: Sequence | None = None) -> WaveReport:
    """Send waves at a lifted soliton and compare with its shift by ``+q`` or ``-q``.

    Cells are compared on the window minus its boundary ring.  A source
    where the profile is negative should shift the state by ``+q``
    (``h(z) -> h(z + q)``); elsewhere by ``-q``.  The side of the band facing
    away from the source must not topple.
    """
    from .patterns import lift_pattern_to_state

    state = lift_pattern_to_state(profile, window)
    inner, q, (lo, hi) = _wave_geometry(profile, window)
    sl = window.slices_of(inner)
    p = np.asarray(profile.p, dtype=np.int64)
    t_inner = inner.points() @ p
    if trials is None:
        trials = far_wave_sources(profile, window, state)
    shifted = {s: lift_pattern_to_state(profile, window, translation=tuple(-s * q)) for s in (1, -1)}
    movable = not np.array_equal(shifted[1].heights[sl], state.heights[sl])
    results = []
    for z0 in trials:
        z0 = tuple(int(v) for v in z0)
        negative = int(profile.g_at(int(np.dot(p, z0)))) < 0
        s = 1 if negative else -1
        after, H = send_wave(state, z0)
        diff = after.heights[sl] != shifted[s].heights[sl]
        mismatch = tuple(int(v) for v in np.argwhere(diff)[0] + inner.lo) if diff.any() else None
        far = (t_inner > hi + 1) if negative else (t_inner < lo - 1)
        toppled = far & (H.counts[sl] > 0)
        far_hit = tuple(int(v) for v in np.argwhere(toppled)[0] + inner.lo) if toppled.any() else None
        results.append(WaveTrial(z0, tuple(int(v) for v in s * q), mismatch, far_hit))
    ok = bool(results) and all(r.ok for r in results) and movable
    return WaveReport(ok, tuple(results), movable)
