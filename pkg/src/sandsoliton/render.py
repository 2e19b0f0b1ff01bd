"""Slice images (plain PPM and matplotlib PNG) and voxel CSV export."""

from __future__ import annotations

import io as _io
from pathlib import Path

import numpy as np

from .engine import SandpileState
from .errors import RangeError, ValidationError

# one colour per height 0..4; the maximal stable height is background
PALETTE = {
    0: (255, 0, 0),
    1: (255, 165, 0),
    2: (255, 255, 0),
    3: (0, 128, 0),
    4: (0, 0, 255),
}
BACKGROUND = (255, 255, 255)
OUTSIDE = (0, 0, 0)
UNSTABLE = (128, 0, 128)


def colour_of(h: int, n: int) -> tuple[int, int, int]:
    if h == 2 * n - 1:
        return BACKGROUND
    if h > 2 * n - 1:
        return UNSTABLE
    return PALETTE.get(h, (128, 128, 128))


def slice_array(state: SandpileState, axis: int, index: int):
    """Heights and domain mask on the slice ``z_axis == index``, axes in order."""
    dom = state.domain
    if not 0 <= axis < dom.n:
        raise RangeError(f"axis {axis} out of range for n={dom.n}")
    lo, hi = dom.box.lo[axis], dom.box.hi[axis]
    if not lo <= index <= hi:
        raise RangeError(f"slice {index} outside [{lo}, {hi}] on axis {axis}")
    h = np.take(state.heights, index - lo, axis=axis)
    m = np.take(dom.mask, index - lo, axis=axis)
    return h, m


def slice_rgb(state: SandpileState, axis: int, index: int) -> np.ndarray:
    """RGB image of a slice: rows follow the first remaining axis, columns the second."""
    h, m = slice_array(state, axis, index)
    if h.ndim == 1:
        h, m = h[None, :], m[None, :]
    elif h.ndim != 2:
        raise ValidationError("slices of states with n > 3 are not images")
    n = state.domain.n
    img = np.empty(h.shape + (3,), dtype=np.uint8)
    for v in np.unique(h):
        img[h == v] = colour_of(int(v), n)
    img[~m] = OUTSIDE
    return img


def ppm_text(img: np.ndarray) -> str:
    rows, cols = img.shape[:2]
    out = ["P3", f"{cols} {rows}", "255"]
    out += [" ".join(f"{r} {g} {b}" for r, g, b in line) for line in img.tolist()]
    return "\n".join(out) + "\n"


def render(state: SandpileState, axis: int, slice_index: int) -> str:
    """Plain-text PPM of one slice."""
    return ppm_text(slice_rgb(state, axis, slice_index))


def export_voxels(state: SandpileState, default: int | None = None) -> str:
    """CSV of cells whose height differs from ``default`` (``2n - 1`` if omitted)."""
    dom = state.domain
    if default is None:
        default = 2 * dom.n - 1
    names = ["x", "y", "z"] if dom.n == 3 else [f"x{i + 1}" for i in range(dom.n)]
    idx = np.argwhere(dom.mask & (state.heights != default))
    lo = np.array(dom.box.lo)
    buf = _io.StringIO()
    buf.write(",".join(names + ["h"]) + "\n")
    for i in idx:
        buf.write(",".join(str(int(v)) for v in (*(i + lo), state.heights[tuple(i)])) + "\n")
    return buf.getvalue()


def save_slice_png(state: SandpileState, axis: int, index: int, path, title: str | None = None):
    """Slice image through matplotlib, with a legend of the palette."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Patch

    img = slice_rgb(state, axis, index)
    fig, ax = plt.subplots(figsize=(5.8, 5))
    ax.imshow(img.swapaxes(0, 1)[::-1] if img.shape[0] > 1 else img, interpolation="nearest")
    rest = [i for i in range(state.domain.n) if i != axis]
    if len(rest) == 2:
        ax.set_xlabel(f"axis {rest[0]}")
        ax.set_ylabel(f"axis {rest[1]}")
    ax.set_xticks([])
    ax.set_yticks([])
    n = state.domain.n
    handles = [Patch(facecolor=np.array(colour_of(h, n)) / 255, edgecolor="k", label=str(h))
               for h in range(2 * n)]
    ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=7,
              title="grains", title_fontsize=7)
    ax.set_title(title or f"slice axis {axis} = {index}")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100, metadata={"Software": None})
    plt.close(fig)


def save_histogram_png(state: SandpileState, path, title: str = "height histogram"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = state.domain.n
    counts = np.bincount(state.heights[state.domain.mask], minlength=2 * n)
    fig, ax = plt.subplots(figsize=(5, 3))
    colours = [np.array(colour_of(h, n)) / 255 for h in range(len(counts))]
    ax.bar(range(len(counts)), counts, color=colours, edgecolor="k")
    ax.set_yscale("log")
    ax.set_xlabel("grains")
    ax.set_ylabel("cells")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100, metadata={"Software": None})
    plt.close(fig)
