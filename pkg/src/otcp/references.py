"""Reference rank vectors for transport-based multivariate ranking.

Two kinds are provided: "sphere" vectors (i/n) * theta_i with theta_i
uniform on the unit Euclidean sphere, giving a center-outward ordering,
and "orthant" vectors (i/n) * theta_i with theta_i uniform on the
probability simplex, giving a left-to-right ordering on nonnegative
scores. Generation never reads score data, which keeps the reference
independent of the scores by construction.
"""

from dataclasses import dataclass

import numpy as np

from ._common import make_rng
from .errors import InvalidDimension

KIND_SPHERE = "sphere"
KIND_ORTHANT = "orthant"


@dataclass(frozen=True)
class ReferenceRanks:
    """Ordered rank vectors; row i has nominal level (i + 1) / n.

    For kind "sphere" the level is the Euclidean norm of the row; for
    kind "orthant" it is the l1 norm. ``levels`` stores the exact
    floating point values (i + 1) / n.
    """

    vectors: np.ndarray
    kind: str
    seed: int
    levels: np.ndarray

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


def _check_sizes(n: int, d: int) -> None:
    if d < 1:
        raise InvalidDimension(f"dimension must be >= 1, got {d}")
    if n < 1:
        raise InvalidDimension(f"count must be >= 1, got {n}")


def _levels(n: int) -> np.ndarray:
    return np.arange(1, n + 1, dtype=np.float64) / n


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def spherical_reference(n: int, d: int, seed: int) -> ReferenceRanks:
    """n vectors (i/n) * theta_i, theta_i i.i.d. uniform on the unit sphere.

    Directions come from normalized isotropic Gaussian draws of a seeded
    PCG64 stream, so identical (n, d, seed) give bit-identical output.
    """
    _check_sizes(n, d)
    rng = make_rng(seed)
    g = rng.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1)
    while np.any(norms == 0.0):  # probability ~0, but keeps directions defined
        bad = norms == 0.0
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1)
    levels = _levels(n)
    theta = g / norms[:, None]  # exactly +-1 when d == 1
    vectors = theta * levels[:, None]
    return ReferenceRanks(_freeze(vectors), KIND_SPHERE, int(seed), _freeze(levels))


def positive_orthant_reference(n: int, d: int, seed: int) -> ReferenceRanks:
    """n vectors (i/n) * theta_i, theta_i i.i.d. uniform on the probability
    simplex (normalized standard-exponential draws, i.e. flat Dirichlet)."""
    _check_sizes(n, d)
    rng = make_rng(seed)
    e = rng.standard_exponential((n, d))
    sums = e.sum(axis=1)
    while np.any(sums == 0.0):
        bad = sums == 0.0
        e[bad] = rng.standard_exponential((int(bad.sum()), d))
        sums = e.sum(axis=1)
    levels = _levels(n)
    theta = e / sums[:, None]  # exactly 1 when d == 1
    vectors = theta * levels[:, None]
    return ReferenceRanks(_freeze(vectors), KIND_ORTHANT, int(seed), _freeze(levels))


def reference_of_kind(kind: str, n: int, d: int, seed: int) -> ReferenceRanks:
    if kind == KIND_SPHERE:
        return spherical_reference(n, d, seed)
    if kind == KIND_ORTHANT:
        return positive_orthant_reference(n, d, seed)
    raise InvalidDimension(f"unknown reference kind {kind!r}")
