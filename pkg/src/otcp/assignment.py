"""Exact dense linear assignment with dual variables.

Shortest-augmenting-path solver in the Jonker-Volgenant family: a
column-reduction pass builds an initial partial matching, remaining rows
are assigned through Dijkstra augmentations, and the solver maintains
row duals u and column duals v with u[i] + v[j] <= cost[i, j] everywhere
and equality on matched pairs.

Point-cloud instances (squared Euclidean cost) additionally get a
multiscale dual warm start: a strided subproblem is solved exactly, its
potential is extended to the full problem through the convex conjugate
form, feasibility is repaired by row minima, and tight pairs are matched
greedily before augmentation. The warm start only shortens augmenting
paths; optimality never depends on it.

The Dijkstra kernel runs compiled when numba is installed and falls back
to a step-identical numpy implementation otherwise.
"""

import numpy as np

from .errors import InfeasibleDuals

# Above this size the full cost matrix is not stored; rows are recomputed
# on demand from the point coordinates (memory trade-off constant).
MATERIALIZE_LIMIT = 8000

# Instances up to this size solve directly; larger ones recurse on a
# strided subproblem about _COARSE_FACTOR times smaller.
_DIRECT_LIMIT = 192
_COARSE_FACTOR = 4

try:
    from ._sap_numba import sap_kernel as _sap_kernel
except ImportError:  # numba not installed; numpy path only
    _sap_kernel = None


def solver_backend() -> str:
    """'numba' when the compiled kernel is active, else 'numpy'."""
    return "numpy" if _sap_kernel is None else "numba"


class SquaredCost:
    """Rows of cost[i, j] = ||a[i] - b[j]||^2 in expanded form."""

    def __init__(self, a: np.ndarray, b: np.ndarray):
        self.a = np.ascontiguousarray(a, dtype=np.float64)
        self.b = np.ascontiguousarray(b, dtype=np.float64)
        if self.a.shape != self.b.shape:
            raise ValueError("point sets must share shape")
        self.n = self.a.shape[0]
        self.sq_a = np.einsum("ij,ij->i", self.a, self.a)
        self.sq_b = np.einsum("ij,ij->i", self.b, self.b)
        self._full = None
        if self.n <= MATERIALIZE_LIMIT:
            g = self.a @ self.b.T
            g *= -2.0
            g += self.sq_a[:, None]
            g += self.sq_b[None, :]
            self._full = g

    def full(self) -> np.ndarray | None:
        return self._full

    def row(self, i: int) -> np.ndarray:
        if self._full is not None:
            return self._full[i]
        return self.sq_a[i] + self.sq_b - 2.0 * (self.b @ self.a[i])


class MatrixCost:
    """Row provider over an explicit square cost matrix."""

    def __init__(self, matrix: np.ndarray):
        m = np.ascontiguousarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("cost matrix must be square")
        self.n = m.shape[0]
        self._m = m

    def full(self) -> np.ndarray:
        return self._m

    def row(self, i: int) -> np.ndarray:
        return self._m[i]


def _column_reduction(provider, v, row_to_col, col_to_row):
    """v[j] = min_i cost[i, j]; assign each column to its first minimizing
    row when that row is still free, scanning columns in reverse order.
    Row duals stay 0, so reduced costs are nonnegative and matched pairs
    are tight."""
    n = provider.n
    best_row = np.zeros(n, dtype=np.intp)
    v.fill(np.inf)
    for i in range(n):
        r = provider.row(i)
        better = r < v
        v[better] = r[better]
        best_row[better] = i
    for j in range(n - 1, -1, -1):
        i = best_row[j]
        if row_to_col[i] < 0:
            row_to_col[i] = j
            col_to_row[j] = i


def _augment(provider, u, v, row_to_col, col_to_row, cur_row):
    """Assign cur_row via a Dijkstra shortest augmenting path, updating
    duals so feasibility and tightness on matched pairs are preserved."""
    n = provider.n
    remaining = np.ones(n, dtype=bool)
    shortest = np.full(n, np.inf)
    came_from = np.full(n, -1, dtype=np.intp)
    scanned_rows = []
    min_val = 0.0
    i = cur_row
    sink = -1
    while sink < 0:
        scanned_rows.append(i)
        cand = (min_val - u[i]) + (provider.row(i) - v)
        better = remaining & (cand < shortest)
        shortest[better] = cand[better]
        came_from[better] = i
        j = int(np.argmin(np.where(remaining, shortest, np.inf)))
        min_val = shortest[j]
        if not np.isfinite(min_val):
            raise InfeasibleDuals("augmentation found no reachable free column")
        remaining[j] = False
        if col_to_row[j] < 0:
            sink = j
        else:
            i = col_to_row[j]
    u[cur_row] += min_val
    others = np.array(scanned_rows[1:], dtype=np.intp)
    if others.size:
        u[others] += min_val - shortest[row_to_col[others]]
    scanned_cols = ~remaining
    v[scanned_cols] -= min_val - shortest[scanned_cols]
    j = sink
    while True:
        i = came_from[j]
        col_to_row[j] = i
        row_to_col[i], j = j, row_to_col[i]
        if i == cur_row:
            break


def _run_sap(provider, u, v, row_to_col, col_to_row, free):
    free = np.asarray(free, dtype=np.intp)
    if free.size == 0:
        return
    full = provider.full()
    if _sap_kernel is not None and full is not None:
        rc = _sap_kernel(full, u, v, row_to_col, col_to_row, free)
        if rc != 0:
            raise InfeasibleDuals("augmentation found no reachable free column")
    else:
        for i in free:
            _augment(provider, u, v, row_to_col, col_to_row, int(i))


def solve_lap(provider) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimize sum_i cost[i, perm[i]] over permutations.

    Returns (perm, u, v) where perm maps rows to columns and (u, v) are
    optimal duals: u[i] + v[j] <= cost[i, j] with equality at j = perm[i].
    Deterministic given the provider's costs.
    """
    n = provider.n
    u = np.zeros(n)
    v = np.empty(n)
    row_to_col = np.full(n, -1, dtype=np.intp)
    col_to_row = np.full(n, -1, dtype=np.intp)
    _column_reduction(provider, v, row_to_col, col_to_row)
    free = np.flatnonzero(row_to_col < 0)
    _run_sap(provider, u, v, row_to_col, col_to_row, free)
    return row_to_col, u, v


def solve_points(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """solve_lap for cost ||a[i] - b[j]||^2 with the multiscale warm start."""
    provider = SquaredCost(a, b)
    n = provider.n
    if n <= 2 * _DIRECT_LIMIT or provider.full() is None:
        return solve_lap(provider)
    m = max(_DIRECT_LIMIT, n // _COARSE_FACTOR)
    idx = np.unique(np.linspace(0, n - 1, m).round().astype(np.intp))
    _, coarse_u, _ = solve_points(provider.a[idx], provider.b[idx])
    # Extend the coarse potential to every fine column through its
    # conjugate form, then repair feasibility by row minima.
    coarse_pts = provider.a[idx]
    coarse_psi_star = 0.5 * (provider.sq_a[idx] - coarse_u)
    support = provider.b @ coarse_pts.T
    support -= coarse_psi_star[None, :]
    v = provider.sq_b - 2.0 * support.max(axis=1)
    reduced = provider.full() - v[None, :]
    u = reduced.min(axis=1)
    best_col = reduced.argmin(axis=1)
    row_to_col = np.full(n, -1, dtype=np.intp)
    col_to_row = np.full(n, -1, dtype=np.intp)
    for i in range(n):
        j = best_col[i]
        if col_to_row[j] < 0:
            col_to_row[j] = i
            row_to_col[i] = j
    free = np.flatnonzero(row_to_col < 0)
    _run_sap(provider, u, v, row_to_col, col_to_row, free)
    return row_to_col, u, v
