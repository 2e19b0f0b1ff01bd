"""Compiled worklist kernels operating on flattened int64 arrays.

Neighbour access is by flat strides, so callers must guarantee that every
cell pushed on a worklist has all of its neighbours inside the array
(a ring or a one-cell padding).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def raise_fixpoint(G, active, strides, deg):
    """Raise ``G`` to the least superharmonic majorant of itself.

    ``active`` marks the cells that may change; ``strides`` lists the flat
    neighbour offsets of the non-loop edges (both signs), and ``deg`` is
    ``2n`` minus twice the loop count.  FIFO order; returns the raise count.
    """
    N = G.size
    queue = np.empty(N, np.int64)
    inq = np.zeros(N, np.bool_)
    head = 0
    count = 0
    for x in range(N):
        if active[x]:
            queue[(head + count) % N] = x
            count += 1
            inq[x] = True
    raises = 0
    while count > 0:
        x = queue[head]
        head = (head + 1) % N
        count -= 1
        inq[x] = False
        s = 0
        for st in strides:
            s += G[x + st]
        need = -((-s) // deg)
        if need > G[x]:
            G[x] = need
            raises += 1
            for st in strides:
                y = x + st
                if active[y] and not inq[y]:
                    queue[(head + count) % N] = y
                    count += 1
                    inq[y] = True
    return raises


@njit(cache=True)
def topple_fixpoint(h, H, inside, strides, threshold, seeds):
    """Legal topplings until no cell of ``inside`` holds ``threshold`` grains.

    Grains sent to cells outside ``inside`` vanish.  ``seeds`` are the flat
    indices first put on the FIFO worklist; any cell becoming unstable later
    is appended.  Returns the total number of topplings.
    """
    N = h.size
    queue = np.empty(N, np.int64)
    inq = np.zeros(N, np.bool_)
    head = 0
    count = 0
    for x in seeds:
        if inside[x] and h[x] >= threshold and not inq[x]:
            queue[(head + count) % N] = x
            count += 1
            inq[x] = True
    total = 0
    while count > 0:
        x = queue[head]
        head = (head + 1) % N
        count -= 1
        inq[x] = False
        m = h[x] // threshold
        if m <= 0:
            continue
        h[x] -= m * threshold
        H[x] += m
        total += m
        for st in strides:
            y = x + st
            if inside[y]:
                h[y] += m
                if h[y] >= threshold and not inq[y]:
                    queue[(head + count) % N] = y
                    count += 1
                    inq[y] = True
    return total


def flat_strides(shape, offsets):
    """Flat index offsets of ``+o`` and ``-o`` for each nonzero offset (minus first)."""
    strides = np.array([int(np.prod(shape[i + 1:])) for i in range(len(shape))], dtype=np.int64)
    out = []
    for o in offsets:
        if not any(o):
            continue
        s = int(np.dot(strides, np.asarray(o, dtype=np.int64)))
        out.extend([-s, s])
    return np.array(out, dtype=np.int64)
