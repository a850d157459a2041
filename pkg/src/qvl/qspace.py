"""The metric space of unordered Q-tuples of vectors in R^n.

A :class:`QPoint` is a multiset of ``Q`` vectors; distances between two of
them are optimal-assignment distances.  Everything here is a pure function of
immutable values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConstructionError, DomainError, ParameterError, ShapeError, SplitError

__all__ = [
    "QPoint",
    "QSplit",
    "metric",
    "metric_exhaustive",
    "assignment",
    "match_batch",
    "norm",
    "barycenter",
    "translate",
    "concat",
    "diameter",
    "splitting",
    "snap",
    "retraction",
    "beta",
    "log_beta",
    "alpha_split",
    "log_alpha_split",
    "separate",
    "split_point",
    "split_value",
]


def _canonical(arr: np.ndarray) -> np.ndarray:
    # lexicographic on coordinates, first coordinate most significant
    order = np.lexsort(arr.T[::-1])
    return arr[order]


@dataclass(frozen=True, eq=False)
class QPoint:
    """An unordered Q-tuple of vectors, stored in lexicographic order."""

    points: np.ndarray

    def __post_init__(self):
        arr = np.array(self.points, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"QPoint needs a (Q, n) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("QPoint coordinates must be finite")
        arr = _canonical(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @classmethod
    def repeated(cls, vector, Q: int) -> "QPoint":
        """``Q[[vector]]``."""
        vec = np.atleast_1d(np.asarray(vector, dtype=float))
        return cls(np.tile(vec, (Q, 1)))

    @classmethod
    def zero(cls, Q: int, n: int) -> "QPoint":
        return cls(np.zeros((Q, n)))

    @property
    def Q(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def to_json(self) -> list:
        return self.points.tolist()

    @classmethod
    def from_json(cls, data) -> "QPoint":
        return cls(np.asarray(data, dtype=float))

    def __eq__(self, other):
        if not isinstance(other, QPoint):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points, other.points)
        )

    def __hash__(self):
        return hash((self.points.shape, self.points.tobytes()))

    def __repr__(self):
        return f"QPoint({self.points.tolist()})"


@dataclass(frozen=True)
class QSplit:
    """Decomposition of a Q-point into distinct centers with multiplicities."""

    groups: tuple
    centers: np.ndarray
    multiplicities: tuple

    @property
    def J(self) -> int:
        return len(self.multiplicities)

    def rebuild(self) -> QPoint:
        return QPoint(np.repeat(self.centers, self.multiplicities, axis=0))


def _check_pair(u: QPoint, v: QPoint):
    if u.Q != v.Q or u.n != v.n:
        raise ShapeError(f"incompatible Q-points: (Q,n)=({u.Q},{u.n}) vs ({v.Q},{v.n})")


def _sqdist_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _scaled_cost(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Squared distances divided by the square of the largest coordinate gap.

    Scaling keeps gaps below 1e-154 from underflowing when squared.
    """
    diff = a[:, None, :] - b[None, :, :]
    scale = float(np.max(np.abs(diff))) if diff.size else 0.0
    if scale == 0.0:
        return np.zeros(diff.shape[:2]), 0.0
    diff = diff / scale
    return np.einsum("ijk,ijk->ij", diff, diff), scale


def _dist_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances, computed without underflow."""
    diff = a[:, None, :] - b[None, :, :]
    scale = np.max(np.abs(diff), axis=2)
    safe = np.where(scale > 0, scale, 1.0)
    return scale * np.sqrt(np.sum((diff / safe[:, :, None]) ** 2, axis=2))


def assignment(u: QPoint, v: QPoint) -> tuple[np.ndarray, float]:
    """Optimal matching of the sheets of ``u`` to those of ``v``.

    Returns ``(perm, dist)`` with sheet ``i`` of ``u`` matched to sheet
    ``perm[i]`` of ``v`` and ``dist`` the resulting distance.
    """
    _check_pair(u, v)
    cost, scale = _scaled_cost(u.points, v.points)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(u.Q, dtype=int)
    perm[rows] = cols
    return perm, scale * math.sqrt(max(float(cost[rows, cols].sum()), 0.0))


def metric(u: QPoint, v: QPoint) -> float:
    """Optimal-assignment distance between two Q-points (Hungarian, O(Q^3))."""
    return assignment(u, v)[1]


def metric_exhaustive(u: QPoint, v: QPoint) -> float:
    """Same distance by brute force over all Q! permutations; a test oracle."""
    _check_pair(u, v)
    cost, scale = _scaled_cost(u.points, v.points)
    best = cost[np.arange(u.Q), _perms(u.Q)].sum(axis=1).min()
    return scale * math.sqrt(max(float(best), 0.0))


_PERM_CACHE: dict[int, np.ndarray] = {}


def _perms(Q: int) -> np.ndarray:
    if Q not in _PERM_CACHE:
        _PERM_CACHE[Q] = np.array(list(itertools.permutations(range(Q))), dtype=np.intp)
    return _PERM_CACHE[Q]


def match_batch(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Optimal matchings for many pairs of Q-points at once.

    ``A`` and ``B`` have shape ``(N, Q, n)``.  Returns ``perm`` of shape
    ``(N, Q)`` with ``A[k, i]`` matched to ``B[k, perm[k, i]]`` and the squared
    distances, shape ``(N,)``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 3:
        raise ShapeError(f"match_batch needs equal (N, Q, n) arrays, got {A.shape}, {B.shape}")
    N, Q, n = A.shape
    if N == 0:
        return np.zeros((0, Q), dtype=np.intp), np.zeros(0)
    if Q == 1:
        perm = np.zeros((N, 1), dtype=np.intp)
    elif n == 1:
        # on the line the sorted matching is optimal
        ia = np.argsort(A[:, :, 0], axis=1, kind="stable")
        ib = np.argsort(B[:, :, 0], axis=1, kind="stable")
        perm = np.empty_like(ia)
        np.put_along_axis(perm, ia, ib, axis=1)
    elif Q <= 5:
        P = _perms(Q)
        K = P.shape[0]
        perm = np.empty((N, Q), dtype=np.intp)
        chunk = max(1, 2_000_000 // (K * Q))
        rows = np.arange(Q)
        for start in range(0, N, chunk):
            stop = min(N, start + chunk)
            diff = A[start:stop, :, None, :] - B[start:stop, None, :, :]
            C = np.einsum("kijd,kijd->kij", diff, diff)
            costs = C[:, rows, P].sum(axis=-1)
            perm[start:stop] = P[np.argmin(costs, axis=1)]
    else:
        perm = np.empty((N, Q), dtype=np.intp)
        for k in range(N):
            cost = _sqdist_matrix(A[k], B[k])
            r, c = linear_sum_assignment(cost)
            perm[k, r] = c
    matched = np.take_along_axis(B, perm[:, :, None], axis=1)
    d = A - matched
    sq = np.einsum("kij,kij->k", d, d)
    return perm, sq


def norm(u: QPoint) -> float:
    """``|u|``, the distance from ``u`` to ``Q[[0]]``."""
    return float(np.sqrt(np.sum(u.points**2)))


def barycenter(u: QPoint) -> np.ndarray:
    return u.points.mean(axis=0)


def translate(u: QPoint, a) -> QPoint:
    """Shift every sheet by ``-a``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (u.n,):
        raise ShapeError(f"translation vector has shape {a.shape}, expected ({u.n},)")
    return QPoint(u.points - a)


def concat(u: QPoint, v: QPoint) -> QPoint:
    if u.n != v.n:
        raise ShapeError(f"cannot concatenate Q-points in R^{u.n} and R^{v.n}")
    return QPoint(np.vstack([u.points, v.points]))


def diameter(v: QPoint) -> float:
    return float(_dist_matrix(v.points, v.points).max())


def splitting(v: QPoint, tol: float = 0.0) -> float:
    """Smallest distance between distinct sheet values; ``inf`` if there are none.

    Sheets closer than ``tol`` count as equal.
    """
    d = _dist_matrix(v.points, v.points)
    distinct = d[d > tol]
    return float(distinct.min()) if distinct.size else math.inf


def snap(v: QPoint, tol: float = 1e-12) -> QPoint:
    """Replace sheets within ``tol`` of an earlier sheet by that sheet."""
    pts = v.points.copy()
    for i in range(1, v.Q):
        for j in range(i):
            if np.linalg.norm(pts[i] - pts[j]) <= tol:
                pts[i] = pts[j]
                break
    return QPoint(pts)


def retraction(v: QPoint, r: float, u: QPoint) -> QPoint:
    """1-Lipschitz retraction of the whole space onto the closed ball B(v, r).

    Identity on B(v, r), constant ``v`` outside B(v, 2r), and in between each
    sheet is pulled toward its matched center by ``(2r - G(u, v)) / G(u, v)``.
    Requires ``0 < r < s(v) / 4 < inf``.
    """
    _check_pair(u, v)
    s = splitting(v)
    if not math.isfinite(s):
        raise DomainError("retraction needs a center with at least two distinct values")
    if not 0.0 < r < s / 4.0:
        raise DomainError(f"retraction radius {r} must lie in (0, s(v)/4) = (0, {s / 4})")
    perm, g = assignment(u, v)
    if g <= r:
        return u
    if g >= 2.0 * r:
        return v
    centers = v.points[perm]
    return QPoint(centers + ((2.0 * r - g) / g) * (u.points - centers))


def log_beta(eps: float, Q: int) -> float:
    """Natural log of ``(eps/3)**(3**Q)``."""
    if not 0.0 < eps <= 1.0:
        raise ParameterError(f"eps must lie in (0, 1], got {eps}")
    return (3.0**Q) * math.log(eps / 3.0)


def beta(eps: float, Q: int) -> float:
    """``(eps/3)**(3**Q)``; underflows to 0.0 for large Q, use :func:`log_beta` there."""
    return math.exp(log_beta(eps, Q))


def log_alpha_split(Q: int) -> float:
    eps = 1.0 / 9.0
    return math.log(eps) + log_beta(eps, Q)


def alpha_split(Q: int) -> float:
    """Closeness threshold ``(1/9) * 27**(-3**Q)`` for splitting a Q-valued map."""
    return math.exp(log_alpha_split(Q))


def _single_linkage_levels(pts: np.ndarray):
    """Yield cluster labelings of ``pts`` at each single-linkage merge height."""
    Q = pts.shape[0]
    d = _dist_matrix(pts, pts)
    pairs = sorted((d[i, j], i, j) for i in range(Q) for j in range(i + 1, Q))
    parent = list(range(Q))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def labels():
        roots = [find(i) for i in range(Q)]
        remap = {}
        return [remap.setdefault(rt, len(remap)) for rt in roots]

    k = 0
    while k < len(pairs):
        height = pairs[k][0]
        while k < len(pairs) and pairs[k][0] == height:
            _, i, j = pairs[k]
            parent[find(i)] = find(j)
            k += 1
        yield height, labels()


def _collapse(pts: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    lab = np.asarray(labels)
    out = np.empty_like(pts)
    for c in np.unique(lab):
        out[lab == c] = pts[lab == c].mean(axis=0)
    return out


def _separation_ok(P: QPoint, cand: QPoint, eps: float) -> bool:
    s = splitting(cand)
    if not math.isfinite(s) or s <= 0.0:
        return False
    if math.log(s) < log_beta(eps, P.Q) + math.log(diameter(P)):
        return False
    return metric(cand, P) <= eps * s


def separate(P: QPoint, eps: float) -> QPoint:
    """A nearby point whose splitting distance is a fixed fraction of ``d(P)``.

    The returned ``T`` satisfies ``beta(eps, Q) d(P) <= s(T) < inf`` and
    ``G(T, P) <= eps s(T)``.  Candidates are single-linkage clusterings of the
    sheets of ``P`` at increasing merge heights, each cluster replaced by its
    barycenter; the first admissible one is returned.  The beta comparison is
    done in log space.
    """
    if not 0.0 < eps < 1.0:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    if not math.isfinite(splitting(P)):
        raise DomainError("separate needs a point with at least two distinct values")
    if _separation_ok(P, P, eps):
        return P
    for _, labels in _single_linkage_levels(P.points):
        if len(set(labels)) < 2:
            break
        cand = QPoint(_collapse(P.points, labels))
        if _separation_ok(P, cand, eps):
            return cand
    raise ConstructionError(f"no admissible separated point found for {P!r} at eps={eps}")


def split_point(P: QPoint) -> QSplit:
    """Group the sheets of ``P`` by exact value."""
    groups: list[list[int]] = []
    centers: list[np.ndarray] = []
    for i, row in enumerate(P.points):
        for g, c in zip(groups, centers):
            if np.array_equal(row, c):
                g.append(i)
                break
        else:
            groups.append([i])
            centers.append(row)
    return QSplit(
        groups=tuple(tuple(g) for g in groups),
        centers=np.array(centers),
        multiplicities=tuple(len(g) for g in groups),
    )


def split_value(u: QPoint, P: QPoint) -> list[QPoint]:
    """Decompose ``u`` into one Q-point per distinct value of ``P``.

    Each sheet of ``u`` goes to the cluster of the sheet of ``P`` it is matched
    with; requires ``G(u, P) < s(P)/4`` so that this is the nearest center.
    """
    _check_pair(u, P)
    s = splitting(P)
    perm, g = assignment(u, P)
    if math.isfinite(s) and not g < s / 4.0:
        raise SplitError(f"G(u, P)={g} is not below s(P)/4={s / 4}")
    sp = split_point(P)
    owner = np.empty(P.Q, dtype=int)
    for j, grp in enumerate(sp.groups):
        owner[list(grp)] = j
    parts = []
    for j in range(sp.J):
        rows = [i for i in range(u.Q) if owner[perm[i]] == j]
        parts.append(QPoint(u.points[rows]))
    return parts
