"""Discrete Q-valued fields on grids.

Values are stored as an ``(N, Q, n)`` array with the sheets of every node in
canonical order.  Derivatives are matched differences: each neighbor value is
optimally matched to the base value before differencing, so sheet labels never
need to be globally consistent.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ParameterError, ShapeError
from .grids import Ball, CartesianGrid, Grid, PolarGrid, grid_from_params
from .qspace import QPoint, match_batch


def canonicalize(values: np.ndarray) -> np.ndarray:
    """Sort the sheets of every node lexicographically (first coordinate most significant)."""
    values = np.asarray(values, dtype=float)
    N, Q, n = values.shape
    if Q == 1:
        return values.copy()
    order = np.broadcast_to(np.arange(Q), (N, Q)).copy()
    for d in reversed(range(n)):
        key = np.take_along_axis(values[:, :, d], order, axis=1)
        order = np.take_along_axis(order, np.argsort(key, axis=1, kind="stable"), axis=1)
    return np.take_along_axis(values, order[:, :, None], axis=1)


def _aligned(base: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Reorder the sheets of ``other`` so that sheet i is matched to ``base`` sheet i."""
    perm, _ = match_batch(base, other)
    return np.take_along_axis(other, perm[:, :, None], axis=1)


@dataclass(frozen=True)
class MatchedJet:
    """Sheets at a node and their matched partial derivatives, shape (Q, n, m)."""

    base: int
    sheets: np.ndarray
    partials: np.ndarray


def triple_norm(jet) -> float:
    """Root of the summed squared Frobenius norms of the sheet differentials."""
    partials = jet.partials if isinstance(jet, MatchedJet) else np.asarray(jet)
    return float(np.sqrt(np.sum(partials**2)))


class QField:
    """Immutable map from the nodes of a grid to Q-points."""

    def __init__(self, domain: Grid, values, *, meta: dict | None = None):
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[0] != domain.size:
            raise ShapeError(f"values must have shape ({domain.size}, Q, n), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("field values must be finite")
        arr = canonicalize(arr)
        arr.setflags(write=False)
        self.domain = domain
        self.values = arr
        self.meta = dict(meta or {})
        self._cache: dict = {}

    @classmethod
    def from_function(cls, domain: Grid, func, **kw) -> "QField":
        """Sample ``func(coords) -> (N, Q, n)`` at the grid nodes."""
        return cls(domain, func(domain.coords), **kw)

    @property
    def Q(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.values.shape[2]

    @property
    def m(self) -> int:
        return self.domain.m

    def point(self, i: int) -> QPoint:
        return QPoint(self.values[i])

    def with_values(self, values) -> "QField":
        return QField(self.domain, values, meta=self.meta)

    def norm_sq(self) -> np.ndarray:
        """|f(x)|^2 at every node."""
        return np.einsum("iqn,iqn->i", self.values, self.values)

    # derivatives

    def jets(self, one_sided: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Matched partials of shape (N, Q, n, m) and a mask of nodes where they exist.

        Central differences are used wherever both neighbors exist; with
        ``one_sided`` the missing side falls back to a one-sided difference.
        """
        key = ("jets", bool(one_sided))
        if key not in self._cache:
            if isinstance(self.domain, PolarGrid):
                self._cache[key] = self._polar_jets(one_sided)
            else:
                self._cache[key] = self._cartesian_jets(one_sided)
        return self._cache[key]

    def _cartesian_jets(self, one_sided):
        g: CartesianGrid = self.domain
        V = self.values
        N, Q, n = V.shape
        partials = np.zeros((N, Q, n, g.m))
        valid = np.ones(N, dtype=bool)
        for k in range(g.m):
            p, q = g.nplus[k], g.nminus[k]
            hp, hq = p >= 0, q >= 0
            plus = np.zeros_like(V)
            minus = np.zeros_like(V)
            plus[hp] = _aligned(V[hp], V[p[hp]])
            minus[hq] = _aligned(V[hq], V[q[hq]])
            both = hp & hq
            partials[both, :, :, k] = (plus[both] - minus[both]) / (2 * g.h)
            if one_sided:
                fwd = hp & ~hq
                bwd = hq & ~hp
                partials[fwd, :, :, k] = (plus[fwd] - V[fwd]) / g.h
                partials[bwd, :, :, k] = (V[bwd] - minus[bwd]) / g.h
                valid &= hp | hq
            else:
                valid &= both
        partials[~valid] = 0.0
        return partials, valid

    def polar_derivatives(self, one_sided: bool = False):
        """Matched radial derivative and tangential derivative (1/r d/dtheta) on a polar grid."""
        key = ("polar", bool(one_sided))
        if key in self._cache:
            return self._cache[key]
        g = self.domain
        if not isinstance(g, PolarGrid):
            raise DomainError("polar derivatives need a polar grid")
        V = self.values
        N = V.shape[0]
        ring = np.nonzero(g.ring_of >= 0)[0]
        fr = np.zeros_like(V)
        ft = np.zeros_like(V)
        valid = np.zeros(N, dtype=bool)
        r = g.node_r[ring]
        ccw = _aligned(V[ring], V[g.n_ccw[ring]])
        cw = _aligned(V[ring], V[g.n_cw[ring]])
        ft[ring] = (ccw - cw) / (2 * g.dtheta * r)[:, None, None]

        full = g.radii
        k = g.ring_of[ring] + g.offset
        has_in = g.n_in[ring] >= 0
        has_out = g.n_out[ring] >= 0
        both = has_in & has_out
        idx = ring[both]
        kb = k[both]
        h1 = (full[kb] - full[kb - 1])[:, None, None]
        h2 = (full[kb + 1] - full[kb])[:, None, None]
        inner = _aligned(V[idx], V[g.n_in[idx]])
        outer = _aligned(V[idx], V[g.n_out[idx]])
        fr[idx] = (-h2 / (h1 * (h1 + h2))) * inner + ((h2 - h1) / (h1 * h2)) * V[idx] \
            + (h1 / (h2 * (h1 + h2))) * outer
        valid[idx] = True
        if g.has_center and g.nrings >= 3:
            # the first ring avoids the center, where the field may branch
            idx = g.ring_nodes(0)
            h1 = g.radii[2] - g.radii[1]
            h2 = g.radii[3] - g.radii[2]
            r2 = _aligned(V[idx], V[g.ring_nodes(1)])
            r3 = _aligned(V[idx], V[g.ring_nodes(2)])
            fr[idx] = (-(2 * h1 + h2) / (h1 * (h1 + h2))) * V[idx] \
                + ((h1 + h2) / (h1 * h2)) * r2 - (h1 / (h2 * (h1 + h2))) * r3
        if one_sided:
            idx = ring[has_in & ~has_out]
            if idx.size:
                kk = g.ring_of[idx] + g.offset
                d = (full[kk] - full[kk - 1])[:, None, None]
                fr[idx] = (V[idx] - _aligned(V[idx], V[g.n_in[idx]])) / d
                valid[idx] = True
            idx = ring[has_out & ~has_in]
            if idx.size:
                kk = g.ring_of[idx] + g.offset
                d = (full[kk + 1] - full[kk])[:, None, None]
                fr[idx] = (_aligned(V[idx], V[g.n_out[idx]]) - V[idx]) / d
                valid[idx] = True
        out = (fr, ft, valid)
        self._cache[key] = out
        return out

    def _polar_jets(self, one_sided):
        g: PolarGrid = self.domain
        V = self.values
        N, Q, n = V.shape
        fr, ft, valid = self.polar_derivatives(one_sided)
        c = np.cos(g.node_theta)[:, None, None]
        s = np.sin(g.node_theta)[:, None, None]
        partials = np.zeros((N, Q, n, 2))
        partials[..., 0] = c * fr - s * ft
        partials[..., 1] = s * fr + c * ft
        valid = valid.copy()
        if g.has_center:
            # gradient at the center from the first Fourier mode of the first ring
            ring = g.ring_nodes(0)
            base = np.broadcast_to(V[0], (g.ntheta, Q, n))
            vals = _aligned(base, V[ring]) - base
            th = g.theta[:, None, None]
            r1 = g.ring_radii[0]
            partials[0, :, :, 0] = 2.0 / (g.ntheta * r1) * np.sum(np.cos(th) * vals, axis=0)
            partials[0, :, :, 1] = 2.0 / (g.ntheta * r1) * np.sum(np.sin(th) * vals, axis=0)
            valid[0] = True
        partials[~valid] = 0.0
        return partials, valid

    def jet(self, x: int, one_sided: bool = False) -> MatchedJet:
        partials, valid = self.jets(one_sided)
        if self.domain.boundary[x] and not one_sided:
            raise DomainError(f"node {x} is a boundary node")
        if not valid[x]:
            raise DomainError(f"no difference stencil at node {x}")
        return MatchedJet(int(x), self.values[x].copy(), partials[x].copy())

    def density(self, one_sided: bool = False) -> np.ndarray:
        """Squared triple norm of the matched jet at every node (0 where undefined)."""
        partials, _ = self.jets(one_sided)
        return np.einsum("iqnm,iqnm->i", partials, partials)


def _checked_weights(f: QField, region, one_sided: bool):
    w = f.domain.region_weights(region)
    _, valid = f.jets(one_sided)
    bad = (w > 0) & ~valid
    if np.any(bad):
        raise DomainError(
            f"{int(bad.sum())} weighted nodes lack a difference stencil; "
            "shrink the region or pass one_sided=True"
        )
    return w


def energy(f: QField, region=None, p: float = 2.0, one_sided: bool = False) -> float:
    """Quadrature of |||Df|||^p over ``region`` (the p-th power of the p-energy)."""
    if not p > 1:
        raise ParameterError(f"energy exponent must exceed 1, got {p}")
    w = _checked_weights(f, region, one_sided)
    dens = f.density(one_sided)
    return float(np.sum(w * dens ** (p / 2.0)))


def energy_norm(f: QField, region=None, p: float = 2.0, one_sided: bool = False) -> float:
    """p-th root of :func:`energy`."""
    return energy(f, region, p, one_sided) ** (1.0 / p)


def edge_sq_distances(f: QField, edges: np.ndarray | None = None) -> np.ndarray:
    edges = f.domain.edges if edges is None else edges
    _, sq = match_batch(f.values[edges[:, 0]], f.values[edges[:, 1]])
    return sq


def edge_energy(f: QField, region=None, p: float = 2.0) -> float:
    """Sum over grid edges of vol_e * (G(f(x), f(y)) / l_e)^p.

    With a region, only edges with both ends in the region's node set count.
    """
    if not p > 1:
        raise ParameterError(f"energy exponent must exceed 1, got {p}")
    g = f.domain
    edges = g.edges
    keep = np.ones(len(edges), dtype=bool)
    if region is not None:
        mask = g.region_mask(region)
        keep = mask[edges[:, 0]] & mask[edges[:, 1]]
    sq = edge_sq_distances(f, edges[keep])
    ratio = sq / g.edge_length[keep] ** 2
    return float(np.sum(g.edge_volume[keep] * ratio ** (p / 2.0)))


def trace(f: QField) -> tuple[np.ndarray, np.ndarray]:
    """Boundary node indices and their values."""
    idx = np.nonzero(f.domain.boundary)[0]
    return idx, f.values[idx].copy()


def mean_on(f: QField, region=None, *, tol: float = 1e-13, maxiter: int = 200,
            weights: np.ndarray | None = None) -> QPoint:
    """Q-point minimizing the weighted sum of squared distances to the field.

    Alternates optimal matching of every node to the current estimate with
    weighted averaging of the matched sheets, starting from the value at the
    first node of the region.  Stops when the estimate no longer moves.
    """
    w = f.domain.region_weights(region) if weights is None else np.asarray(weights, float)
    nodes = np.nonzero(w > 0)[0]
    if nodes.size == 0:
        raise DomainError("mean of an empty region")
    return mean_of_values(f.values[nodes], w[nodes], tol=tol, maxiter=maxiter)


def mean_of_values(values: np.ndarray, w: np.ndarray, *, tol: float = 1e-13,
                   maxiter: int = 200) -> QPoint:
    values = np.asarray(values, dtype=float)
    w = np.asarray(w, dtype=float)
    if values.shape[0] == 0:
        raise DomainError("mean of an empty sample")
    c = values[0].copy()
    wn = w / w.sum()
    prev = math.inf
    for _ in range(maxiter):
        base = np.broadcast_to(c, values.shape)
        aligned = _aligned(base, values)
        c_new = np.einsum("k,kqn->qn", wn, aligned)
        d = aligned - c_new
        obj = float(np.einsum("k,kqn,kqn->", wn, d, d))
        moved = float(np.max(np.abs(c_new - c)))
        c = c_new
        if moved <= tol * max(1.0, float(np.max(np.abs(c)))) or obj >= prev - tol * max(prev, 1e-300):
            break
        prev = obj
    return QPoint(c)


def oscillation(f: QField, region=None) -> tuple[float, QPoint]:
    """Weighted mean of G^2(f, mean) over the region, with the mean used."""
    w = f.domain.region_weights(region)
    nodes = np.nonzero(w > 0)[0]
    if nodes.size == 0:
        raise DomainError("oscillation over an empty region")
    mean = mean_of_values(f.values[nodes], w[nodes])
    base = np.broadcast_to(mean.points, f.values[nodes].shape)
    _, sq = match_batch(base, f.values[nodes])
    return float(np.sum(w[nodes] * sq) / np.sum(w[nodes])), mean


def sphere_area(m: int, r: float) -> float:
    return {1: 2.0, 2: 2 * math.pi * r, 3: 4 * math.pi * r * r}[m]


def ball_volume(m: int, r: float) -> float:
    return {1: 2.0 * r, 2: math.pi * r * r, 3: 4.0 / 3.0 * math.pi * r**3}[m]


def ring_integrals(f: QField, one_sided: bool = True):
    """Per-ring circle integrals on a polar grid.

    Returns ``(radii, H, pair, square)`` with H the integral of |f|^2, pair the
    integral of sum_i <df_i/dr, f_i> and square that of sum_i |df_i/dr|^2.
    """
    g = f.domain
    if not isinstance(g, PolarGrid):
        raise DomainError("ring integrals need a polar grid")
    key = ("rings", bool(one_sided))
    if key in f._cache:
        return f._cache[key]
    fr, _, valid = f.polar_derivatives(one_sided)
    V = f.values
    H = np.empty(g.nrings)
    pair = np.full(g.nrings, np.nan)
    sq = np.full(g.nrings, np.nan)
    for i in range(g.nrings):
        nodes = g.ring_nodes(i)
        scale = g.ring_radii[i] * g.dtheta
        H[i] = scale * np.sum(V[nodes] ** 2)
        if np.all(valid[nodes]):
            pair[i] = scale * np.sum(fr[nodes] * V[nodes])
            sq[i] = scale * np.sum(fr[nodes] ** 2)
    out = (g.ring_radii.copy(), H, pair, sq)
    f._cache[key] = out
    return out


def sphere_integrals(f: QField, a=None, r: float = 1.0) -> tuple[float, float, float]:
    """Integrals over the sphere of radius r about a of |f|^2, sum <d_nu f_i, f_i>
    and sum |d_nu f_i|^2.

    Polar grids use the circle rule on rings (linear interpolation between
    rings); Cartesian grids average nodes in the shell [r - h/2, r + h/2)
    and scale by the exact sphere area.
    """
    g = f.domain
    a = np.zeros(g.m) if a is None else np.asarray(a, dtype=float).reshape(g.m)
    if isinstance(g, PolarGrid):
        if not np.allclose(a, g.center, atol=1e-14):
            raise DomainError("polar sphere integrals are only available about the grid center")
        radii, H, pair, sq = ring_integrals(f)
        if r < radii[0] - 1e-12 or r > radii[-1] + 1e-12:
            raise DomainError(f"sphere of radius {r} exits the polar grid")
        vals = []
        for arr in (H, pair, sq):
            vals.append(float(np.interp(r, radii, arr)))
        if any(math.isnan(v) for v in vals):
            raise DomainError(f"radial derivative unavailable at radius {r}")
        return tuple(vals)
    if r + float(np.linalg.norm(a)) > g.radius_max() + 1e-12:
        raise DomainError(f"sphere of radius {r} about {a.tolist()} exits the domain")
    rel = g.coords - a
    dist = np.linalg.norm(rel, axis=1)
    shell = (dist >= r - g.h / 2) & (dist < r + g.h / 2)
    if not np.any(shell):
        raise DomainError(f"no nodes in the shell of radius {r}")
    partials, valid = f.jets(one_sided=True)
    if not np.all(valid[shell]):
        raise DomainError("shell nodes lack difference stencils")
    nu = rel[shell] / np.maximum(dist[shell], 1e-300)[:, None]
    dnu = np.einsum("iqnm,im->iqn", partials[shell], nu)
    V = f.values[shell]
    area = sphere_area(g.m, r)
    H = area * float(np.mean(np.sum(V**2, axis=(1, 2))))
    pair = area * float(np.mean(np.sum(dnu * V, axis=(1, 2))))
    sq = area * float(np.mean(np.sum(dnu**2, axis=(1, 2))))
    return H, pair, sq


class SphereData:
    """Q-valued data on the unit sphere of R^m, m = 2 (circle) or 3 (latitude-longitude).

    Circle nodes sit at angles 2 pi k / K.  Latitude-longitude nodes sit at
    polar angles (i + 1/2) pi / ntheta and azimuths 2 pi j / nphi, so the poles
    are never nodes.
    """

    def __init__(self, m: int, values, shape: tuple):
        self.m = m
        self.shape = tuple(int(s) for s in shape)
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if m == 2:
            (K,) = self.shape
            t = 2 * math.pi * np.arange(K) / K
            self.directions = np.stack([np.cos(t), np.sin(t)], axis=1)
            self.weights = np.full(K, 2 * math.pi / K)
        elif m == 3:
            nt, nphi = self.shape
            th = (np.arange(nt) + 0.5) * math.pi / nt
            ph = 2 * math.pi * np.arange(nphi) / nphi
            T, P = np.meshgrid(th, ph, indexing="ij")
            T, P = T.ravel(), P.ravel()
            self.directions = np.stack(
                [np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=1
            )
            self.weights = np.sin(T) * (math.pi / nt) * (2 * math.pi / nphi)
            self._theta = T
        else:
            raise ParameterError(f"sphere data supports m = 2 or 3, got {m}")
        if arr.shape[0] != self.directions.shape[0]:
            raise ShapeError(f"expected {self.directions.shape[0]} sphere values, got {arr.shape[0]}")
        self.values = canonicalize(arr)
        self.values.setflags(write=False)

    @classmethod
    def circle(cls, func, K: int) -> "SphereData":
        t = 2 * math.pi * np.arange(K) / K
        dirs = np.stack([np.cos(t), np.sin(t)], axis=1)
        return cls(2, func(dirs), (K,))

    @classmethod
    def latlong(cls, func, ntheta: int, nphi: int) -> "SphereData":
        th = (np.arange(ntheta) + 0.5) * math.pi / ntheta
        ph = 2 * math.pi * np.arange(nphi) / nphi
        T, P = np.meshgrid(th, ph, indexing="ij")
        T, P = T.ravel(), P.ravel()
        dirs = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=1)
        return cls(3, func(dirs), (ntheta, nphi))

    @property
    def Q(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.values.shape[2]

    def nearest(self, directions: np.ndarray) -> np.ndarray:
        """Index of the nearest sphere node for each unit direction."""
        d = np.asarray(directions, dtype=float)
        if self.m == 2:
            (K,) = self.shape
            t = np.arctan2(d[:, 1], d[:, 0])
            return np.rint(t / (2 * math.pi / K)).astype(np.intp) % K
        nt, nphi = self.shape
        th = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
        ph = np.arctan2(d[:, 1], d[:, 0])
        i = np.clip(np.floor(th / (math.pi / nt)).astype(np.intp), 0, nt - 1)
        j = np.rint(ph / (2 * math.pi / nphi)).astype(np.intp) % nphi
        return i * nphi + j

    def tangential_density(self) -> np.ndarray:
        """Squared triple norm of the matched tangential differential at every node."""
        V = self.values
        if self.m == 2:
            (K,) = self.shape
            nxt = np.roll(np.arange(K), -1)
            prv = np.roll(np.arange(K), 1)
            d = (_aligned(V, V[nxt]) - _aligned(V, V[prv])) / (2 * (2 * math.pi / K))
            return np.sum(d**2, axis=(1, 2))
        nt, nphi = self.shape
        dth, dph = math.pi / nt, 2 * math.pi / nphi
        idx = np.arange(nt * nphi).reshape(nt, nphi)
        ii, jj = np.divmod(np.arange(nt * nphi), nphi)
        up = idx[np.minimum(ii + 1, nt - 1), jj]
        dn = idx[np.maximum(ii - 1, 0), jj]
        span = (np.minimum(ii + 1, nt - 1) - np.maximum(ii - 1, 0)) * dth
        dtheta = (_aligned(V, V[up]) - _aligned(V, V[dn])) / span[:, None, None]
        east = idx[ii, (jj + 1) % nphi]
        west = idx[ii, (jj - 1) % nphi]
        dphi = (_aligned(V, V[east]) - _aligned(V, V[west])) / (2 * dph)
        dphi /= np.sin(self._theta)[:, None, None]
        return np.sum(dtheta**2, axis=(1, 2)) + np.sum(dphi**2, axis=(1, 2))

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))

    def norm_sq(self) -> np.ndarray:
        return np.sum(self.values**2, axis=(1, 2))


# files


def save_field(path, f: QField, meta: dict | None = None) -> None:
    """Write a field as JSON (values inline) or .npz (values binary, JSON header)."""
    path = Path(path)
    header = {
        "format": "qvl-field",
        "grid": f.domain.params(),
        "Q": f.Q,
        "n": f.n,
        "meta": {**f.meta, **(meta or {})},
    }
    if path.suffix == ".npz":
        np.savez_compressed(path, values=f.values, header=json.dumps(header, sort_keys=True))
    else:
        header["values"] = f.values.tolist()
        path.write_text(json.dumps(header, sort_keys=True), encoding="utf-8")


def load_field(path) -> QField:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            values = data["values"]
    else:
        header = json.loads(path.read_text(encoding="utf-8"))
        values = np.asarray(header.pop("values"), dtype=float)
    if header.get("format") != "qvl-field":
        raise ParameterError(f"{path} is not a field file")
    grid = grid_from_params(header["grid"])
    values = np.asarray(values, dtype=float).reshape(grid.size, header["Q"], header["n"])
    return QField(grid, values, meta=header.get("meta"))


def write_density_csv(path, f: QField, one_sided: bool = False) -> None:
    """Per-node coordinates and |||Df||| for plotting."""
    partials, valid = f.jets(one_sided)
    dens = np.sqrt(f.density(one_sided))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(f.m)] + ["boundary", "valid", "triple_norm"])
        for i in range(f.domain.size):
            w.writerow([repr(float(c)) for c in f.domain.coords[i]]
                       + [int(f.domain.boundary[i]), int(valid[i]), repr(float(dens[i]))])


__all__ = [
    "Ball",
    "QField",
    "MatchedJet",
    "SphereData",
    "canonicalize",
    "triple_norm",
    "energy",
    "energy_norm",
    "edge_energy",
    "edge_sq_distances",
    "trace",
    "mean_on",
    "mean_of_values",
    "oscillation",
    "sphere_integrals",
    "ring_integrals",
    "sphere_area",
    "ball_volume",
    "save_field",
    "load_field",
    "write_density_csv",
]
