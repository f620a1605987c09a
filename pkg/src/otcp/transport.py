"""Transport-based multivariate ranks.

Calibration scores are matched to reference rank vectors by solving the
squared-cost assignment problem; the dual variables of that problem give
a potential whose argmax rule extends the rank map to arbitrary points.
Because the matching is a bijection, the calibration ranks are exactly
the levels {1/n, ..., 1} regardless of the score distribution.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .assignment import SquaredCost, solve_points
from .errors import DimensionMismatch, InfeasibleDuals, NonFiniteInput
from .references import ReferenceRanks

# Relative tolerance anchor for optimality/feasibility/tie comparisons.
REL_TOL = 1e-9

# Full feasibility validation is O(n^2); skip it beyond this size unless
# explicitly requested.
_VALIDATE_LIMIT = 4000


@dataclass(frozen=True)
class ScoreMatrix:
    """n score vectors in R^d, the empirical distribution being ranked."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DimensionMismatch(
                f"scores must form an (n, d) array with n, d >= 1, got shape {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise NonFiniteInput("score coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class Assignment:
    """Optimal matching of scores to reference vectors.

    ``permutation[i]`` is the reference index of score i and
    ``total_cost`` the matched sum of squared distances. Solver duals are
    carried along when available so potentials can be recovered without
    re-solving.
    """

    permutation: np.ndarray
    total_cost: float
    row_duals: np.ndarray | None = None
    col_duals: np.ndarray | None = None


@dataclass(frozen=True)
class DualPotentials:
    """Potential psi on reference vectors and its transform on scores.

    Feasibility: <S_i, U_j> - psi[j] <= psi_star[i] for all i, j, with
    equality at the matched pair j = permutation[i]. psi is determined
    only up to an additive constant; the gauge is fixed by the solver's
    dual initialization and rank evaluation is invariant to it.
    """

    psi: np.ndarray
    psi_star: np.ndarray


class RankEvaluation(NamedTuple):
    rank_vector: np.ndarray
    level: float
    index: int


def _check_pair(scores: ScoreMatrix, reference: ReferenceRanks) -> None:
    if scores.n != reference.n:
        raise DimensionMismatch(f"{scores.n} scores vs {reference.n} reference vectors")
    if scores.d != reference.d:
        raise DimensionMismatch(f"scores have d={scores.d}, reference has d={reference.d}")


def solve_assignment(scores: ScoreMatrix, reference: ReferenceRanks) -> Assignment:
    """Cost-minimal bijection between scores and reference vectors under
    squared Euclidean cost. Deterministic given inputs; duplicated scores
    are allowed and receive distinct ranks in solver order."""
    _check_pair(scores, reference)
    perm, u, v = solve_points(scores.points, reference.vectors)
    diff = scores.points - reference.vectors[perm]
    total = float(np.einsum("ij,ij->", diff, diff))
    perm = perm.copy()
    perm.setflags(write=False)
    return Assignment(permutation=perm, total_cost=total, row_duals=u, col_duals=v)


def _duals_from_permutation(provider: SquaredCost, perm: np.ndarray):
    """Rebuild feasible assignment duals from an optimal permutation alone.

    Bellman-Ford over the tight-edge difference constraints
    v[j] - v[perm[i]] <= cost[i, j] - cost[i, perm[i]]; failure to settle
    within n passes means the permutation was not optimal.
    """
    n = provider.n
    dist = np.full(n, np.inf)
    dist[perm[0]] = 0.0
    matched = np.array([provider.row(i)[perm[i]] for i in range(n)])
    for _ in range(n + 1):
        changed = False
        for i in range(n):
            src = dist[perm[i]]
            if not np.isfinite(src):
                continue
            cand = src + (provider.row(i) - matched[i])
            better = cand < dist
            if np.any(better):
                dist[better] = cand[better]
                changed = True
        if not changed:
            break
    else:
        raise InfeasibleDuals("difference constraints did not settle; assignment not optimal")
    v = dist
    u = matched - v[perm]
    return u, v


def recover_duals(
    scores: ScoreMatrix, reference: ReferenceRanks, assignment: Assignment
) -> DualPotentials:
    """Transform assignment duals for squared cost into the potential pair
    for inner-product cost: psi[j] = (||U_j||^2 - v_j) / 2 and
    psi_star[i] = (||S_i||^2 - u_i) / 2. Validates feasibility and
    tightness on matched pairs, raising InfeasibleDuals on violation."""
    _check_pair(scores, reference)
    perm = np.asarray(assignment.permutation)
    if assignment.row_duals is not None and assignment.col_duals is not None:
        u, v = assignment.row_duals, assignment.col_duals
    else:
        provider = SquaredCost(scores.points, reference.vectors)
        u, v = _duals_from_permutation(provider, perm)
    sq_s = np.einsum("ij,ij->i", scores.points, scores.points)
    sq_u = np.einsum("ij,ij->i", reference.vectors, reference.vectors)
    psi = 0.5 * (sq_u - v)
    psi_star = 0.5 * (sq_s - u)
    _validate_potentials(scores, reference, perm, psi, psi_star)
    psi.setflags(write=False)
    psi_star.setflags(write=False)
    return DualPotentials(psi=psi, psi_star=psi_star)


def _validate_potentials(scores, reference, perm, psi, psi_star) -> None:
    gains = scores.points @ reference.vectors.T
    scale = max(1.0, float(np.abs(gains).max()))
    tol = REL_TOL * scale
    slack = psi_star[:, None] - (gains - psi[None, :])
    worst = float(slack.min())
    if worst < -tol:
        raise InfeasibleDuals(f"dual feasibility violated by {-worst:.3e} (tol {tol:.3e})")
    n = scores.n
    at_match = np.abs(slack[np.arange(n), perm]).max()
    if at_match > tol:
        raise InfeasibleDuals(
            f"complementary slackness violated by {float(at_match):.3e} (tol {tol:.3e})"
        )


@dataclass(frozen=True)
class RankMap:
    """Fitted rank map: reference, scores, matching and potentials.

    Immutable after construction and safe to share across concurrent
    readers. ``evaluate`` extends the map to arbitrary points by the
    argmax rule; on exact calibration points the attained maximum equals
    psi_star and the argmax is attained at the matched reference index.
    """

    scores: ScoreMatrix
    reference: ReferenceRanks
    assignment: Assignment
    duals: DualPotentials

    @classmethod
    def fit(
        cls,
        scores: ScoreMatrix,
        reference: ReferenceRanks,
        validate: bool | None = None,
    ) -> "RankMap":
        """Solve the assignment and recover potentials.

        validate=None checks feasibility in debug runs for instances up
        to a size cap; True forces the O(n^2) check, False skips it.
        """
        assignment = solve_assignment(scores, reference)
        if validate is None:
            validate = __debug__ and scores.n <= _VALIDATE_LIMIT
        if validate:
            duals = recover_duals(scores, reference, assignment)
        else:
            sq_s = np.einsum("ij,ij->i", scores.points, scores.points)
            sq_u = np.einsum("ij,ij->i", reference.vectors, reference.vectors)
            psi = 0.5 * (sq_u - assignment.col_duals)
            psi_star = 0.5 * (sq_s - assignment.row_duals)
            psi.setflags(write=False)
            psi_star.setflags(write=False)
            duals = DualPotentials(psi=psi, psi_star=psi_star)
        return cls(scores=scores, reference=reference, assignment=assignment, duals=duals)

    @property
    def n(self) -> int:
        return self.scores.n

    @property
    def d(self) -> int:
        return self.scores.d

    def calibration_indices(self) -> np.ndarray:
        """Reference index of each calibration score (the matching)."""
        return self.assignment.permutation

    def calibration_levels(self) -> np.ndarray:
        """Rank levels of the calibration scores; always a permutation of
        {1/n, ..., 1} because the matching is a bijection."""
        return self.reference.levels[self.assignment.permutation]

    @cached_property
    def _calibration_lookup(self) -> dict:
        """Row bytes of each calibration score to its matched reference
        index; bitwise-duplicated scores keep the innermost match."""
        perm = self.assignment.permutation
        lookup: dict[bytes, int] = {}
        pts = self.scores.points
        for i in range(self.n):
            key = pts[i].tobytes()
            j = int(perm[i])
            old = lookup.get(key)
            if old is None or j < old:
                lookup[key] = j
        return lookup

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        """Argmax reference index for each row of ``points``.

        Augmenting-path duals are vertex solutions, so non-matched tight
        edges are common and argmax ties are structural rather than
        accidental. Ties within the relative tolerance resolve to the
        matched reference for rows equal to a calibration score (that
        index attains the argmax by complementary slackness, and the
        choice keeps the calibration member count of quantile regions
        exact), and to the smallest level otherwise, so membership errs
        toward inclusion and the coverage lower bound survives ties.
        """
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.d:
            raise DimensionMismatch(f"expected (m, {self.d}) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteInput("evaluation points must be finite")
        gains = pts @ self.reference.vectors.T
        gains -= self.duals.psi[None, :]
        vmax = gains.max(axis=1)
        tol = REL_TOL * np.maximum(1.0, np.abs(vmax))
        tied = gains >= (vmax - tol)[:, None]
        out = np.argmax(tied, axis=1)  # first tied index = smallest level
        multi = tied.sum(axis=1) > 1
        if np.any(multi):
            pts = np.ascontiguousarray(pts)
            lookup = self._calibration_lookup
            for r in np.flatnonzero(multi):
                hit = lookup.get(pts[r].tobytes())
                if hit is not None:
                    out[r] = hit
        return out

    def evaluate(self, point: np.ndarray) -> RankEvaluation:
        """Rank vector, nominal level and reference index for one point."""
        p = np.asarray(point, dtype=np.float64)
        if p.ndim != 1:
            raise DimensionMismatch(f"expected a flat vector, got shape {p.shape}")
        idx = int(self.evaluate_batch(p[None, :])[0])
        return RankEvaluation(
            rank_vector=self.reference.vectors[idx],
            level=float(self.reference.levels[idx]),
            index=idx,
        )

    @cached_property
    def _appended_state(self):
        """Per-column displacement costs for appended-source evaluation.

        Appending a query as an extra source (with a zero-cost dummy
        column absorbing the displaced point) assigns it the column j
        minimizing reduced_cost(query, j) + displacement[j], where
        displacement[j] is the cheapest alternating-path cost from column
        j's owner to the dummy through the fitted matching. That quantity
        is query-independent, so one dense Dijkstra here turns every
        later membership query into a vectorized argmin.
        """
        sq_u = np.einsum("ij,ij->i", self.reference.vectors, self.reference.vectors)
        sq_s = np.einsum("ij,ij->i", self.scores.points, self.scores.points)
        u = sq_s - 2.0 * self.duals.psi_star
        v = sq_u - 2.0 * self.duals.psi
        shift = max(0.0, float(u.max()))
        u = u - shift  # dummy column of cost 0 and price 0 stays feasible
        v = v + shift
        row_to_col = np.asarray(self.assignment.permutation, dtype=np.intp)
        col_to_row = np.empty(self.n, dtype=np.intp)
        col_to_row[row_to_col] = np.arange(self.n, dtype=np.intp)
        cost = SquaredCost(self.scores.points, self.reference.vectors)
        displacement = self._displacement_costs(cost, u, v, col_to_row)
        return v, displacement

    def _displacement_costs(self, cost, u, v, col_to_row) -> np.ndarray:
        """Dijkstra from the dummy over reversed alternating paths:
        disp[j] = owner(j)'s cheapest exit cost to the dummy, possibly
        bumping through other columns first."""
        n = self.n
        owners_exit = -u[col_to_row]  # direct owner -> dummy edge
        disp = owners_exit.copy()
        done = np.zeros(n, dtype=bool)
        full = cost.full()
        for _ in range(n):
            j = int(np.argmin(np.where(done, np.inf, disp)))
            if not np.isfinite(disp[j]):
                break
            done[j] = True
            if done.all():
                break
            # settling column j improves owners that can bump into j
            if full is not None:
                col_j = full[:, j]
            else:
                col_j = cost.sq_a + cost.sq_b[j] - 2.0 * (cost.a @ cost.b[j])
            cand = (col_j[col_to_row] - u[col_to_row] - v[j]) + disp[j]
            better = (~done) & (cand < disp)
            disp[better] = cand[better]
        return disp

    def appended_index_batch(self, points: np.ndarray, chunk: int = 8192) -> np.ndarray:
        """Reference index each point takes when appended to the solved
        transport as an extra source, a zero-cost dummy column absorbing
        the displaced point.

        The appended problem is symmetric in the n + 1 source points, so
        exactly m of them occupy the m innermost ranks for any m; this
        makes rank-threshold membership finite-sample valid for fresh
        exchangeable scores. Points equal to a calibration score keep the
        fitted matching's rank (a valid optimum of the appended problem).
        Returns n for points absorbed by the dummy, i.e. ranked beyond
        the outermost reference. Never mutates the fitted state.
        """
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.d:
            raise DimensionMismatch(f"expected (m, {self.d}) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteInput("evaluation points must be finite")
        v, displacement = self._appended_state
        adjusted = v - displacement
        sq_u = np.einsum("ij,ij->i", self.reference.vectors, self.reference.vectors)
        lookup = self._calibration_lookup
        out = np.empty(pts.shape[0], dtype=np.intp)
        pts = np.ascontiguousarray(pts)
        for start in range(0, pts.shape[0], chunk):
            block = pts[start : start + chunk]
            # reduced cost plus displacement, minimized per row; the dummy
            # candidate sits at 0 and loses ties (inclusion-leaning)
            totals = block @ self.reference.vectors.T
            totals *= -2.0
            totals += np.einsum("ij,ij->i", block, block)[:, None]
            totals += (sq_u - adjusted)[None, :]
            best = np.argmin(totals, axis=1)
            vals = totals[np.arange(block.shape[0]), best]
            sinks = np.where(vals <= 0.0, best, self.n)
            for r in range(block.shape[0]):
                hit = lookup.get(block[r].tobytes())
                if hit is not None:
                    sinks[r] = hit
            out[start : start + chunk] = sinks
        return out


def evaluate_rank(rank_map: RankMap, point: np.ndarray) -> RankEvaluation:
    """Functional alias for RankMap.evaluate."""
    return rank_map.evaluate(point)
