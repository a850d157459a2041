"""Randomized property checks shared by the scenario runner and the tests.

Each function returns a plain dict with a ``pass`` flag and the worst
observed quantities.
"""

from __future__ import annotations

import math

import numpy as np

from .qspace import (
    QPoint,
    diameter,
    log_beta,
    metric,
    metric_exhaustive,
    retraction,
    separate,
    splitting,
)


def random_qpoint(rng: np.random.Generator, Q: int, n: int, scale: float = 1.0) -> QPoint:
    return QPoint(scale * rng.standard_normal((Q, n)))


def metric_properties(rng: np.random.Generator, pairs: int = 10_000, Qmax: int = 6, nmax: int = 4,
                      rel_tol: float = 1e-12) -> dict:
    """Assignment distance against the brute-force minimum, and the triangle inequality."""
    worst_rel = 0.0
    worst_tri = -math.inf
    for _ in range(pairs):
        Q = int(rng.integers(1, Qmax + 1))
        n = int(rng.integers(1, nmax + 1))
        u, v = random_qpoint(rng, Q, n), random_qpoint(rng, Q, n)
        a, b = metric(u, v), metric_exhaustive(u, v)
        worst_rel = max(worst_rel, abs(a - b) / max(b, 1e-300))
    for _ in range(pairs):
        Q = int(rng.integers(1, Qmax + 1))
        n = int(rng.integers(1, nmax + 1))
        u, v, w = (random_qpoint(rng, Q, n) for _ in range(3))
        uw = metric(u, w)
        excess = (uw - metric(u, v) - metric(v, w)) / max(uw, 1e-300)
        worst_tri = max(worst_tri, excess)
    return {"pairs": pairs, "Qmax": Qmax, "nmax": nmax, "worst_relative_error": worst_rel,
            "worst_triangle_excess": worst_tri, "tolerance": rel_tol,
            "pass": bool(worst_rel <= rel_tol and worst_tri <= rel_tol)}


def _separated_center(rng, Q, n):
    while True:
        v = random_qpoint(rng, Q, n)
        if math.isfinite(splitting(v)):
            return v


def retraction_properties(rng: np.random.Generator, samples: int = 10_000, Qmax: int = 5,
                          nmax: int = 3, rel_tol: float = 1e-12) -> dict:
    """Lipschitz bound, identity on the inner ball and constancy outside the doubled ball."""
    worst_lip = 0.0
    fixed_fail = const_fail = 0
    for _ in range(samples):
        Q = int(rng.integers(2, Qmax + 1))
        n = int(rng.integers(1, nmax + 1))
        v = _separated_center(rng, Q, n)
        r = float(rng.uniform(0.01, 0.999)) * splitting(v) / 4.0
        us = []
        for _ in range(2):
            # sheets of v moved by up to a few multiples of r so that all
            # three regimes of the map are visited
            step = rng.standard_normal((Q, n))
            step *= float(rng.uniform(0.0, 3.0)) * r / max(np.linalg.norm(step), 1e-300)
            us.append(QPoint(v.points[rng.permutation(Q)] + step))
        u1, u2 = us
        p1, p2 = retraction(v, r, u1), retraction(v, r, u2)
        d = metric(u1, u2)
        if d > 0:
            worst_lip = max(worst_lip, metric(p1, p2) / d)
        for u, pu in ((u1, p1), (u2, p2)):
            g = metric(u, v)
            if g <= r and pu != u:
                fixed_fail += 1
            if g >= 2 * r and pu != v:
                const_fail += 1
    return {"samples": samples, "worst_lipschitz_ratio": worst_lip, "identity_failures": fixed_fail,
            "constancy_failures": const_fail, "tolerance": rel_tol,
            "pass": bool(worst_lip <= 1 + rel_tol and fixed_fail == 0 and const_fail == 0)}


def _clustered_point(rng, Q, n):
    """Sheets drawn around a few centers with spreads down to 1e-300.

    One center sits at the origin so that tiny spreads stay representable;
    this is what forces the separation to collapse clusters.
    """
    k = int(rng.integers(1, Q + 1))
    centers = rng.standard_normal((k, n))
    centers[0] = 0.0
    labels = np.concatenate([np.arange(k), rng.integers(0, k, Q - k)])
    spread = 10.0 ** rng.uniform(-300, 0, size=Q)
    pts = centers[labels] + spread[:, None] * rng.standard_normal((Q, n))
    return QPoint(pts)


def separation_properties(rng: np.random.Generator, samples: int = 1000, Qmax: int = 5,
                          nmax: int = 3, eps_values=(1 / 16, 1 / 9)) -> dict:
    """Splitting lower bound and distance upper bound of the separation, with beta compared in log space."""
    failures = []
    checked = 0
    worst_log_margin = math.inf
    worst_dist_ratio = 0.0
    for k in range(samples):
        Q = int(rng.integers(2, Qmax + 1))
        n = int(rng.integers(1, nmax + 1))
        P = _clustered_point(rng, Q, n)
        if not math.isfinite(splitting(P)):
            continue
        for eps in eps_values:
            T = separate(P, eps)
            s = splitting(T)
            ok_s = math.isfinite(s) and s > 0
            margin = (math.log(s) - log_beta(eps, Q) - math.log(diameter(P))) if ok_s else -math.inf
            ratio = metric(T, P) / (eps * s) if ok_s else math.inf
            worst_log_margin = min(worst_log_margin, margin)
            worst_dist_ratio = max(worst_dist_ratio, ratio)
            checked += 1
            if margin < 0 or ratio > 1.0:
                failures.append({"sample": k, "eps": eps, "log_margin": margin, "ratio": ratio})
    return {"samples": samples, "checked": checked, "worst_log_margin": worst_log_margin,
            "worst_distance_ratio": worst_dist_ratio, "failures": failures[:20],
            "pass": not failures}
