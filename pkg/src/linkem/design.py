"""Input domains and space-filling designs.

Designs are generated in the unit cube and mapped affinely onto a
:class:`Domain`. The maximin Latin hypercube search is a multi-restart
random LHC improved by stratum-preserving coordinate swaps.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import pdist

__all__ = [
    "Domain",
    "DesignMatrix",
    "InvalidDomainError",
    "DomainRangeError",
    "lhc_maximin",
    "random_test_design",
    "to_unit_cube",
    "from_unit_cube",
    "min_distance",
]


class InvalidDomainError(ValueError):
    """Raised for a malformed domain (empty, duplicate names, lower >= upper)."""


class DomainRangeError(ValueError):
    """Raised when a point lies outside its domain."""


@dataclass(frozen=True)
class Domain:
    """Ordered rectangular input space.

    Parameters
    ----------
    dims : sequence of (name, lower, upper)
    """

    dims: tuple[tuple[str, float, float], ...]

    def __init__(self, dims: Iterable[Sequence]):
        dims = tuple((str(name), float(lo), float(hi)) for name, lo, hi in dims)
        if not dims:
            raise InvalidDomainError("domain needs at least one dimension")
        names = [d[0] for d in dims]
        if len(set(names)) != len(names):
            raise InvalidDomainError(f"duplicate dimension names in {names}")
        for name, lo, hi in dims:
            if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
                raise InvalidDomainError(f"dimension {name!r}: need lower < upper, got [{lo}, {hi}]")
        object.__setattr__(self, "dims", dims)

    @property
    def names(self) -> list[str]:
        return [d[0] for d in self.dims]

    @property
    def lower(self) -> np.ndarray:
        return np.array([d[1] for d in self.dims])

    @property
    def upper(self) -> np.ndarray:
        return np.array([d[2] for d in self.dims])

    @property
    def p(self) -> int:
        return len(self.dims)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        span = self.upper - self.lower
        return bool(np.all(x >= self.lower - tol * span) and np.all(x <= self.upper + tol * span))

    def to_dict(self) -> list[dict]:
        return [{"name": n, "lower": lo, "upper": hi} for n, lo, hi in self.dims]

    @classmethod
    def from_dict(cls, items) -> "Domain":
        if isinstance(items, dict):
            return cls((k, v[0], v[1]) for k, v in items.items())
        return cls((d["name"], d["lower"], d["upper"]) for d in items)


@dataclass(frozen=True)
class DesignMatrix:
    """An ``n x p`` set of points inside ``domain``."""

    points: np.ndarray
    domain: Domain
    # Trace of candidate scores examined by the maximin search (unit-cube
    # min distances). Empty for designs not built by lhc_maximin.
    history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        pts = np.array(np.atleast_2d(self.points), dtype=float, order="C")
        if pts.shape[1] != self.domain.p:
            raise ValueError(f"points have {pts.shape[1]} columns, domain has {self.domain.p}")
        if not self.domain.contains(pts):
            raise DomainRangeError("design points outside domain bounds")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def unit(self) -> np.ndarray:
        """Points mapped to the unit cube."""
        return to_unit_cube(self.points, self.domain)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.domain.names)
        for row in self.points:
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, domain: Domain) -> "DesignMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != domain.names:
            raise ValueError(f"CSV header {rows[0]} does not match domain {domain.names}")
        pts = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        return cls(pts.reshape(-1, domain.p), domain)


def to_unit_cube(x, domain: Domain) -> np.ndarray:
    """Affine map of ``x`` (point or rows of points) onto ``[0, 1]^p``."""
    x = np.asarray(x, dtype=float)
    if not domain.contains(x):
        raise DomainRangeError(f"point outside domain {domain.dims}")
    return (x - domain.lower) / (domain.upper - domain.lower)


def from_unit_cube(u, domain: Domain) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return domain.lower + u * (domain.upper - domain.lower)


def min_distance(u: np.ndarray) -> float:
    """Minimum pairwise Euclidean distance (``inf`` for a single point)."""
    if u.shape[0] < 2:
        return np.inf
    return float(pdist(u).min())


def _random_lhc_ranks(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    return np.column_stack([rng.permutation(n) for _ in range(p)])


def _swap_improve(ranks: np.ndarray, rng: np.random.Generator, n_sweeps: int) -> np.ndarray:
    """Greedy coordinate-swap hill climbing on the maximin criterion.

    Each proposal swaps the stratum of one of the two closest points with
    another point in a random column, so stratification is preserved.
    """
    n, p = ranks.shape
    if n < 3:
        return ranks
    ranks = ranks.copy()
    u = (ranks + 0.5) / n
    d = np.sqrt(((u[:, None, :] - u[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    best = d.min()
    stall = 0
    for _ in range(n_sweeps * n * p):
        i, _j = np.unravel_index(np.argmin(d), d.shape)
        i = int(i) if rng.random() < 0.5 else int(_j)
        k = int(rng.integers(n - 1))
        k = k + (k >= i)
        col = int(rng.integers(p))
        ranks[[i, k], col] = ranks[[k, i], col]
        u_new = (ranks + 0.5) / n
        d_new = d.copy()
        for r in (i, k):
            row = np.sqrt(((u_new - u_new[r]) ** 2).sum(-1))
            row[r] = np.inf
            d_new[r, :] = row
            d_new[:, r] = row
        cand = d_new.min()
        if cand > best:
            best, d, u = cand, d_new, u_new
            stall = 0
        else:
            ranks[[i, k], col] = ranks[[k, i], col]
            stall += 1
            if stall > 4 * n * p:
                break
    return ranks


def lhc_maximin(
    n: int,
    domain: Domain,
    restarts: int = 50,
    seed: int = 0,
    *,
    jitter: bool = False,
    n_sweeps: int = 20,
) -> DesignMatrix:
    """Maximin Latin hypercube design.

    Parameters
    ----------
    n : int
        Number of points; each column visits each of the ``n`` equal-width
        strata exactly once.
    domain : Domain
    restarts : int
        Number of independent random LHCs, each improved by swaps.
    seed : int
        Root seed. Restart ``i`` uses its own child stream, so the result
        does not depend on the order restarts are evaluated.
    jitter : bool
        Place points uniformly inside their strata instead of at the
        midpoints. The maximin score is computed after jittering.

    Returns
    -------
    DesignMatrix
        The candidate with the largest unit-cube minimum distance; ties go
        to the lowest restart index. ``history`` lists every candidate score.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    p = domain.p
    children = np.random.SeedSequence(seed).spawn(restarts)
    best_u, best_score, history = None, -np.inf, []
    for child in children:
        rng = np.random.default_rng(child)
        ranks = _swap_improve(_random_lhc_ranks(n, p, rng), rng, n_sweeps)
        offs = rng.random((n, p)) if jitter else 0.5
        u = (ranks + offs) / n
        score = min_distance(u)
        history.append(score)
        # strict '>' keeps the earliest restart on ties
        if score > best_score:
            best_u, best_score = u, score
    return DesignMatrix(from_unit_cube(best_u, domain), domain, tuple(history))


def random_test_design(n: int, domain: Domain, seed: int = 0) -> DesignMatrix:
    """``n`` i.i.d. uniform points in ``domain``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random((n, domain.p))
    return DesignMatrix(from_unit_cube(u, domain), domain)
