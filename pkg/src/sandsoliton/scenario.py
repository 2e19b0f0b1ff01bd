"""The three-dimensional relaxation scenario: uniform 5s plus one grain on a cut cube."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import Domain, SandpileState, TopplingFunction, relax, sink_laplacian
from .lattice import Box, int_rank, kernel_quotient
from .patterns import SolitonProfile, soliton

log = logging.getLogger(__name__)

FIGURE1_BOX = Box((0, 0, 0), (25, 25, 25))
FIGURE1_HALFSPACES = (((1, 1, 1), 50), ((1, 2, 0), 50))
FIGURE1_SEED = (4, 5, 6)
FIGURE1_BASE = 5
FACE_DIRECTIONS = ((0, 0, 1), (1, 2, 0))
PATCH_SIZE = 5
# implementer-chosen distance between a patch and the non-parallel domain faces
PATCH_CLEARANCE = 5
SLICE_LEVELS = (2, 4, 6, 12, 18, 21)


def figure1_domain() -> Domain:
    return Domain(3, FIGURE1_BOX, FIGURE1_HALFSPACES)


def figure1_state() -> SandpileState:
    return SandpileState.uniform(figure1_domain(), FIGURE1_BASE).add(FIGURE1_SEED)


def _constraints(domain: Domain):
    n = domain.n
    out = []
    for i in range(n):
        e = tuple(int(i == j) for j in range(n))
        out.append((e, domain.box.hi[i]))
        out.append((tuple(-v for v in e), -domain.box.lo[i]))
    return out + list(domain.halfspaces)


def band_mask(state: SandpileState, profile: SolitonProfile) -> np.ndarray:
    """Cells ``c`` such that ``c + s q`` carries ``phi(s)`` for every ``s`` in the band."""
    dom = state.domain
    lo, hi = profile.band()
    q = np.asarray(profile.q, dtype=np.int64)
    pts = dom.box.points()
    blo, bhi = np.array(dom.box.lo), np.array(dom.box.hi)
    mask = dom.mask.copy()
    for s in range(lo, hi + 1):
        z = pts + s * q
        ok = np.all((z >= blo) & (z <= bhi), axis=-1)
        zi = tuple(np.moveaxis(np.clip(z, blo, bhi) - blo, -1, 0))
        mask &= ok & dom.mask[zi] & (state.heights[zi] == int(profile.phi_at(s)))
    return mask


def find_soliton_patches(state: SandpileState, profile: SolitonProfile, size: int = PATCH_SIZE,
                         clearance: int = PATCH_CLEARANCE) -> list[tuple[int, ...]]:
    """Base cells of ``size``-square patches of the soliton band found in ``state``.

    A patch is spanned by the two kernel generators of the direction.  All of
    its band cells must sit at least ``clearance`` unit steps inside every
    domain face that is not parallel to the soliton.
    """
    dom = state.domain
    p = np.asarray(profile.p, dtype=np.int64)
    gens = np.asarray(kernel_quotient([profile.p]).kernel_basis, dtype=np.int64)
    if len(gens) != 2:
        raise ValueError("patches are defined for three-dimensional states")
    match = band_mask(state, profile)
    lo, hi = profile.band()
    q = np.asarray(profile.q, dtype=np.int64)
    faces = [(np.asarray(a, dtype=np.int64), b) for a, b in _constraints(dom)
             if int_rank([a, tuple(profile.p)]) == 2]
    steps = np.array([a * gens[0] + b * gens[1] for a in range(size) for b in range(size)])
    layers = np.array([s * q for s in range(lo, hi + 1)])
    box = dom.box
    found = []
    for c in np.argwhere(match) + np.array(box.lo):
        cells = c + steps
        if not all(box.contains(z) and match[box.index(z)] for z in cells):
            continue
        band = (cells[:, None, :] + layers[None, :, :]).reshape(-1, dom.n)
        if all(((b - band @ a) >= clearance * np.abs(a).max()).all() for a, b in faces):
            found.append(tuple(int(v) for v in c))
    return found


@dataclass
class Figure1Result:
    initial: SandpileState
    final: SandpileState
    toppling: TopplingFunction
    stable: bool
    identity_holds: bool
    profiles: dict
    patches: dict
    seconds: float
    files: list = field(default_factory=list)

    @property
    def histogram(self) -> list[int]:
        dom = self.final.domain
        return np.bincount(self.final.heights[dom.mask], minlength=2 * dom.n).tolist()

    @property
    def ok(self) -> bool:
        return self.stable and self.identity_holds and all(self.patches.values())

    def report_rows(self) -> list[tuple[str, str, str]]:
        rows = [("stable", _flag(self.stable), f"max height {int(self.final.heights.max())}"),
                ("toppling_identity", _flag(self.identity_holds), f"total topplings {self.toppling.total()}")]
        for p, bases in self.patches.items():
            prof = self.profiles[p]
            lo, hi = prof.band()
            layer = " ".join(str(int(prof.phi_at(s))) for s in range(lo, hi + 1))
            detail = f"layer {layer}; {len(bases)} patches" + (f"; first at {bases[0]}" if bases else "")
            rows.append((f"patch_{'_'.join(map(str, p))}", _flag(bool(bases)), detail))
        rows.append(("histogram", "info", " ".join(map(str, self.histogram))))
        rows.append(("seconds", "info", f"{self.seconds:.2f}"))
        return rows


def _flag(ok: bool) -> str:
    return "pass" if ok else "fail"


def run_figure1(out_dir: str | Path | None = None, slices: Sequence[int] = SLICE_LEVELS,
                png: bool = True) -> Figure1Result:
    """Relax the scenario, check it, and optionally write files to ``out_dir``."""
    t0 = time.perf_counter()
    start = figure1_state()
    final, H = relax(start)
    dom = start.domain
    stable = final.is_stable()
    identity = bool(np.array_equal(final.heights,
                                   np.where(dom.mask, start.heights + sink_laplacian(dom, H.counts), 0)))
    profiles = {p: soliton(p) for p in FACE_DIRECTIONS}
    patches = {p: find_soliton_patches(final, profiles[p]) for p in FACE_DIRECTIONS}
    result = Figure1Result(start, final, H, stable, identity, profiles, patches,
                           time.perf_counter() - t0)
    if out_dir is not None:
        result.files = write_figure1(result, Path(out_dir), slices, png)
    return result


def write_figure1(result: Figure1Result, out: Path, slices: Sequence[int], png: bool) -> list[Path]:
    from . import io as fio
    from .render import export_voxels, render, save_histogram_png, save_slice_png

    out.mkdir(parents=True, exist_ok=True)
    files = []

    def put(name, text):
        path = out / name
        path.write_text(text)
        files.append(path)

    put("final_state.txt", fio.encode_state(result.final))
    put("toppling.txt", fio.encode_toppling(result.toppling))
    put("voxels.csv", export_voxels(result.final))
    lines = ["check,status,detail"] + [",".join(r) for r in result.report_rows()]
    put("report.csv", "\n".join(lines) + "\n")
    for z in slices:
        put(f"slice_z{z:02d}.ppm", render(result.final, 2, z))
        if png:
            path = out / f"slice_z{z:02d}.png"
            save_slice_png(result.final, 2, z, path, title=f"z = {z}")
            files.append(path)
    if png:
        path = out / "histogram.png"
        save_histogram_png(result.final, path)
        files.append(path)
    return files
