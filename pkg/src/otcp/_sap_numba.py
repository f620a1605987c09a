"""Compiled shortest-augmenting-path kernel.

Optional fast path; importing this module fails cleanly when numba is
not installed and callers fall back to the numpy implementation of the
same algorithm. The kernel mirrors assignment._augment step for step,
including float evaluation order, so both paths make identical choices.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def sap_kernel(C, u, v, row_to_col, col_to_row, free_rows):
    """Augment every row in free_rows via Dijkstra shortest paths.

    Mutates u, v, row_to_col, col_to_row in place. Requires dual
    feasibility and tightness on matched pairs at entry; maintains both.
    Returns 0 on success, -1 if no augmenting path exists.
    """
    n = C.shape[0]
    remaining = np.empty(n, np.bool_)
    shortest = np.empty(n, np.float64)
    came_from = np.empty(n, np.intp)
    scanned = np.empty(n, np.intp)
    for fi in range(free_rows.shape[0]):
        cur = free_rows[fi]
        for j in range(n):
            remaining[j] = True
            shortest[j] = np.inf
            came_from[j] = -1
        n_scanned = 0
        min_val = 0.0
        i = cur
        sink = -1
        while sink < 0:
            scanned[n_scanned] = i
            n_scanned += 1
            off = min_val - u[i]
            best_j = -1
            best_val = np.inf
            Ci = C[i]
            for j in range(n):
                if remaining[j]:
                    cand = off + (Ci[j] - v[j])
                    if cand < shortest[j]:
                        shortest[j] = cand
                        came_from[j] = i
                    if shortest[j] < best_val:
                        best_val = shortest[j]
                        best_j = j
            if best_j < 0 or not np.isfinite(best_val):
                return -1
            j = best_j
            min_val = best_val
            remaining[j] = False
            if col_to_row[j] < 0:
                sink = j
            else:
                i = col_to_row[j]
        u[cur] += min_val
        for s in range(1, n_scanned):
            r = scanned[s]
            u[r] += min_val - shortest[row_to_col[r]]
        for j in range(n):
            if not remaining[j]:
                v[j] -= min_val - shortest[j]
        j = sink
        while True:
            i = came_from[j]
            col_to_row[j] = i
            nxt = row_to_col[i]
            row_to_col[i] = j
            if i == cur:
                break
            j = nxt
    return 0
