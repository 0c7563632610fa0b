"""Connected-component labeling over integer maps (numba).

Labels 4- or 8-connected regions of equal value.  Pixels with negative
values are treated as background and get component -1.  Component ids
are dense, assigned in raster order of each component's first pixel.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def label_equal_regions(values, eight_connected):
    h, w = values.shape
    n = h * w
    parent = np.empty(n, np.int64)
    for i in range(n):
        parent[i] = i

    for r in range(h):
        for c in range(w):
            v = values[r, c]
            if v < 0:
                continue
            i = r * w + c
            # union with already-scanned equal neighbors; lower root wins
            for k in range(4):
                if k == 0:
                    ok = c > 0 and values[r, c - 1] == v
                    j = i - 1
                elif k == 1:
                    ok = r > 0 and values[r - 1, c] == v
                    j = i - w
                elif k == 2:
                    ok = eight_connected and r > 0 and c > 0 and values[r - 1, c - 1] == v
                    j = i - w - 1
                else:
                    ok = eight_connected and r > 0 and c < w - 1 and values[r - 1, c + 1] == v
                    j = i - w + 1
                if not ok:
                    continue
                ri = i
                while parent[ri] != ri:
                    ri = parent[ri]
                rj = j
                while parent[rj] != rj:
                    rj = parent[rj]
                if ri < rj:
                    parent[rj] = ri
                elif rj < ri:
                    parent[ri] = rj

    comp = np.full(n, -1, np.int64)
    ids = np.full(n, -1, np.int64)
    next_id = 0
    for i in range(n):
        r = i // w
        c = i - r * w
        if values[r, c] < 0:
            continue
        root = i
        while parent[root] != root:
            root = parent[root]
        k = i
        while parent[k] != k:
            t = parent[k]
            parent[k] = root
            k = t
        if ids[root] == -1:
            ids[root] = next_id
            next_id += 1
        comp[i] = ids[root]
    return comp.reshape(h, w), next_id
