"""Self-checks runnable from the command line (`sandsoliton verify <suite>`)."""

from __future__ import annotations

import time
from typing import Callable, NamedTuple

import numpy as np

from .engine import (Domain, SandpileState, grains_lost, relax, relax_random_order, send_wave,
                     verify_wave_translation, wave_least_action_check)
from .husking import WindowPolicy, canonical_husking
from .lattice import Box, IntField, MinAffine, kernel_quotient
from .patterns import PatternBuilder, PatternSpec, face_agreement, lift_pattern_to_state, soliton, vertex_pattern


class Check(NamedTuple):
    name: str
    ok: bool
    detail: str = ""


UNIT_DIRECTIONS = ((1, 0), (1, 1), (0, 0, 1), (1, 1, 1), (1, 1, 0))
WAVE_DIRECTIONS = ((1, 0), (1, 2), (2, 3), (0, 0, 1), (1, 1, 1), (1, 2, 0))
VERTEX_SPECS = (((0, 0), (1, 0), (0, 1)), ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)))


def _heights(profile) -> set[int]:
    return set(int(v) for v in profile.phi)


def suite_solitons() -> list[Check]:
    out = []
    for p in UNIT_DIRECTIONS:
        prof = soliton(p)
        ts = np.arange(prof.t_min, prof.t_max + 1)
        flat = np.array_equal(prof.g, np.minimum(0, ts)) and prof.N <= 1
        out.append(Check(f"unit_{_name(p)}", flat, f"N={prof.N}"))
    prof = soliton((0, 0, 1))
    lo, hi = prof.band()
    out.append(Check("layer_0_0_1", (lo, hi) == (0, 0) and int(prof.phi_at(0)) == 4,
                     f"band heights {sorted(_heights(prof))}"))
    prof = soliton((1, 2, 0))
    seen = _heights(prof)
    out.append(Check("heights_1_2_0", {2, 3, 4} <= seen,
                     f"profile heights {sorted(seen)}, band {[int(prof.phi_at(t)) for t in range(*_incl(prof.band()))]}"))
    return out


def _incl(band):
    return band[0], band[1] + 1


def suite_waves() -> list[Check]:
    out = []
    for p in WAVE_DIRECTIONS:
        prof = soliton(p)
        radius = 12 if len(p) == 3 else 20
        rep = verify_wave_translation(prof, Box.cube(len(p), radius))
        out.append(Check(f"wave_{_name(p)}", rep.ok, rep.describe().replace("\n", "; ")))
    return out


def suite_least_action(trials: int = 12, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(trials):
        side = int(rng.integers(3, 10))
        dom = Domain(2, Box((0, 0), (side - 1, side - 1)))
        h = rng.integers(1, 4, size=dom.box.shape)
        h[rng.random(h.shape) < 0.5] = 3
        state = SandpileState(dom, h)
        sources = [tuple(int(v) for v in c) for c in np.argwhere(h == 3)
                   if any(dom.contains(nb) and state[nb] == 3 for nb in _nbrs(c))]
        if not sources:
            continue
        z0 = sources[int(rng.integers(len(sources)))]
        _, H = send_wave(state, z0)
        rep = wave_least_action_check(state, z0, H.counts, mode="exhaustive")
        out.append(Check(f"least_action_{i}", rep.ok, f"{side}x{side} from {z0}: {rep.detail}"))
    return out


def _nbrs(c):
    for i in range(len(c)):
        for s in (-1, 1):
            nb = [int(v) for v in c]
            nb[i] += s
            yield tuple(nb)


def suite_patterns() -> list[Check]:
    out = []
    for A in VERTEX_SPECS:
        spec = PatternSpec.of(A)
        builder = PatternBuilder()
        ph, _ = vertex_pattern(spec, builder=builder)
        n = spec.n
        name = f"vertex_n{n}"
        out.append(Check(f"{name}_stabilizes", ph.result.stabilized_at is not None,
                         f"N={ph.result.stabilized_at}, support {len(ph.result.support)} cells"))
        agree = face_agreement(ph, builder, Box.cube(n, 20 if n == 2 else 12))
        out.append(Check(f"{name}_faces", agree.ok, f"{len(agree.checked)} faces compared"))
        big = canonical_husking(ph.reference, ph.graph, policy=WindowPolicy(ph.field.box.doubled()))
        vals = big.field.evaluate(ph.field.box.points())
        same = np.array_equal(vals, ph.field.values) and big.stabilized_at == ph.result.stabilized_at
        out.append(Check(f"{name}_doubling", same, f"window {big.field.box}"))
    return out


def suite_engine(trials: int = 20, seed: int = 1) -> list[Check]:
    rng = np.random.default_rng(seed)
    abelian = conserve = single = True
    for _ in range(trials):
        n = int(rng.integers(2, 4))
        side = int(rng.integers(3, 7 if n == 2 else 5))
        dom = Domain(n, Box((0,) * n, (side - 1,) * n))
        start = SandpileState(dom, rng.integers(0, 3 * n, size=dom.box.shape))
        a, Ha = relax(start)
        b, Hb = relax_random_order(start, rng)
        abelian &= a == b and np.array_equal(Ha.counts, Hb.counts)
        conserve &= start.total() == a.total() + grains_lost(dom, Ha.counts)
        top = 2 * n - 1
        sources = [tuple(int(v) for v in c) for c in np.argwhere(a.heights == top)
                   if any(dom.contains(nb) and a[nb] == top for nb in _nbrs(c))]
        if sources:
            _, Hw = send_wave(a, sources[0])
            single &= set(np.unique(Hw.counts).tolist()) <= {0, 1}
    return [Check("abelian", bool(abelian), f"{trials} random states"),
            Check("conservation", bool(conserve)),
            Check("wave_single_toppling", bool(single))]


def suite_figure1() -> list[Check]:
    from .scenario import run_figure1

    res = run_figure1()
    return [Check(name, status == "pass", detail) for name, status, detail in res.report_rows()
            if status != "info"]


SUITES: dict[str, Callable[[], list[Check]]] = {
    "solitons": suite_solitons,
    "waves": suite_waves,
    "least-action": suite_least_action,
    "patterns": suite_patterns,
    "engine": suite_engine,
    "figure1": suite_figure1,
}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        return [c for key in SUITES for c in run_suite(key)]
    t0 = time.perf_counter()
    checks = SUITES[name]()
    return checks + [Check(f"{name}_seconds", True, f"{time.perf_counter() - t0:.2f}")]


def _name(p) -> str:
    return "_".join(str(v) for v in p)
