"""Independent reference computations used by the tests.

None of these call the package's lattice reduction, husking kernels or
toppling kernels; they work from the plain definitions on small domains.
"""

from __future__ import annotations

import itertools
from math import ceil

import numpy as np


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def gs_husking_line(p, k: int, R: int = 40, F=None):
    """k-husking of ``F(t)`` (default ``min(0, t)``) on the line ``t = p . z``.

    Gauss-Seidel sweeps of ``G(t) <- max(G(t), ceil(S / 2n))`` where ``S`` runs
    over all ``2n`` lattice neighbours ``t +- p_i`` (a zero coordinate is a
    self-loop read from ``G(t)`` itself).  Cells within ``max|p_i|`` of the
    ends keep ``F``.  Returns ``(ts, G)`` on ``[-R, R]``.
    """
    n = len(p)
    F = F or (lambda t: min(0, t))
    ts = list(range(-R, R + 1))
    r = max(abs(v) for v in p)
    ref = {t: F(t) for t in ts}
    G = {t: (ref[t] - k if -R + r <= t <= R - r else ref[t]) for t in ts}
    changed = True
    while changed:
        changed = False
        for t in ts:
            if not (-R + r <= t <= R - r):
                continue
            s = sum(G[t + v] + G[t - v] for v in p)
            need = _ceil_div(s, 2 * n)
            # a loop term reads G[t] itself; iterate the cell to its own fixpoint
            while need > G[t]:
                G[t] = need
                changed = True
                s = sum(G[t + v] + G[t - v] for v in p)
                need = _ceil_div(s, 2 * n)
    return np.array(ts), np.array([G[t] for t in ts])


def gs_canonical_line(p, R: int = 40, k_max: int = 64):
    """First ``N >= 1`` with equal consecutive huskings on the line, and that husking."""
    prev = gs_husking_line(p, 1, R)[1]
    for k in range(2, k_max + 2):
        cur = gs_husking_line(p, k, R)[1]
        if np.array_equal(cur, prev):
            return k - 1, prev
        prev = cur
    raise RuntimeError("no stabilization")


def jacobi_husking_box(F: np.ndarray, k: int) -> np.ndarray:
    """k-husking on a plain ``Z^d`` array with a one-cell Dirichlet ring.

    Simultaneous (Jacobi) raises; monotone and bounded, so it reaches the
    least superharmonic majorant of ``F - k`` with boundary data ``F``.
    """
    F = np.asarray(F, dtype=np.int64)
    d = F.ndim
    core = tuple(slice(1, -1) for _ in range(d))
    G = F.copy()
    G[core] -= k
    while True:
        S = np.zeros_like(G[core])
        for i in range(d):
            for s in (-1, 1):
                sl = [slice(1, -1)] * d
                sl[i] = slice(1 + s, G.shape[i] - 1 + s)
                S += G[tuple(sl)]
        need = -((-S) // (2 * d))
        new = np.maximum(G[core], need)
        if np.array_equal(new, G[core]):
            return G
        G[core] = new


def cylinder_husking(p, period_vec, m: int, X: int, k: int):
    """Husking of ``min(0, p . z)`` on ``Z^2 / (m * period_vec)``, computed directly.

    Cells are ``(x, y)`` with ``y in [0, m)`` and ``|x| <= X``; stepping off the
    top/bottom of the strip wraps by ``m * period_vec``.  Cells with
    ``|x| == X`` keep the reference.  Returns the array indexed ``[x + X, y]``.
    """
    a, b = period_vec
    assert b != 0 and m * b > 0
    shape = (2 * X + 1, m)

    def ref(x, y):
        return min(0, p[0] * x + p[1] * y)

    def canon(x, y):
        # bring y into [0, m) using multiples of m * (a, b)
        q, y2 = divmod(y, m)
        # (x, y) ~ (x - q a m / b ... ) requires b == 1 for an exact strip
        return x - q * a * m, y2

    G = np.empty(shape, dtype=np.int64)
    fixed = np.zeros(shape, dtype=bool)
    for x in range(-X, X + 1):
        for y in range(m):
            G[x + X, y] = ref(x, y) - (0 if abs(x) == X else k)
            fixed[x + X, y] = abs(x) == X

    def val(x, y):
        x, y = canon(x, y)
        if abs(x) > X:
            return ref(x, y)
        return G[x + X, y]

    changed = True
    while changed:
        changed = False
        for x in range(-X + 1, X):
            for y in range(m):
                s = val(x - 1, y) + val(x + 1, y) + val(x, y - 1) + val(x, y + 1)
                need = _ceil_div(s, 4)
                if need > G[x + X, y]:
                    G[x + X, y] = need
                    changed = True
    return G


def smith_diagonal(M) -> list[int]:
    from sympy import Matrix
    from sympy.matrices.normalforms import smith_normal_form

    S = smith_normal_form(Matrix(M))
    return [abs(int(S[i, i])) for i in range(min(S.shape))]


def least_wave_competitor(heights: np.ndarray, z0) -> np.ndarray:
    """Pointwise minimum over all 0/1 wave competitors on a tiny rectangle."""
    h = np.asarray(heights, dtype=np.int64)
    d = h.ndim
    top = 2 * d - 1
    cells = [c for c in itertools.product(*(range(s) for s in h.shape))]
    best = None
    for bits in itertools.product((0, 1), repeat=len(cells) - 1):
        H = np.zeros_like(h)
        it = iter(bits)
        for c in cells:
            H[c] = 1 if c == tuple(z0) else next(it)
        ok = True
        for c in cells:
            s = -2 * d * H[c]
            for i in range(d):
                for e in (-1, 1):
                    nb = list(c)
                    nb[i] += e
                    if 0 <= nb[i] < h.shape[i]:
                        s += H[tuple(nb)]
            if h[c] + s > top:
                ok = False
                break
        if ok:
            best = H if best is None else np.minimum(best, H)
    return best


def naive_relax(heights: np.ndarray):
    """Topple the lexicographically first unstable cell until stable."""
    h = np.array(heights, dtype=np.int64)
    d = h.ndim
    H = np.zeros_like(h)
    while True:
        unstable = np.argwhere(h >= 2 * d)
        if not len(unstable):
            return h, H
        c = tuple(unstable[0])
        h[c] -= 2 * d
        H[c] += 1
        for i in range(d):
            for e in (-1, 1):
                nb = list(c)
                nb[i] += e
                if 0 <= nb[i] < h.shape[i]:
                    h[tuple(nb)] += 1
