"""Grid domains: Cartesian lattices (cube, box, ball, annulus) and polar discs.

A grid exposes node coordinates, a boundary mask, quadrature weights, the
edge list used by the edge energy, and neighbor tables used to build matched
difference jets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError, ShapeError


@dataclass(frozen=True)
class Ball:
    """Closed ball region B(center, radius)."""

    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.radius > 0:
            raise DomainError(f"ball radius must be positive, got {self.radius}")


def _supersample_offsets(m: int, s: int) -> np.ndarray:
    t = (np.arange(s) + 0.5) / s - 0.5
    mesh = np.meshgrid(*([t] * m), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


class Grid:
    """Shared behaviour of all grids; subclasses fill in the geometry."""

    m: int
    kind: str
    coords: np.ndarray
    boundary: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    edge_length: np.ndarray
    edge_volume: np.ndarray

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    def params(self) -> dict:
        raise NotImplementedError

    def region_weights(self, region=None) -> np.ndarray:
        """Quadrature weights restricted to ``region``.

        ``region`` may be None (whole domain), a :class:`Ball`, a boolean node
        mask, or a callable mapping an (N, m) coordinate array to a mask.
        """
        if region is None:
            return self.weights
        if isinstance(region, Ball):
            return self.ball_weights(np.asarray(region.center), region.radius)
        if callable(region):
            mask = np.asarray(region(self.coords), dtype=bool)
        else:
            mask = np.asarray(region, dtype=bool)
        if mask.shape != (self.size,):
            raise ShapeError(f"region mask has shape {mask.shape}, expected ({self.size},)")
        return np.where(mask, self.weights, 0.0)

    def region_mask(self, region=None) -> np.ndarray:
        return self.region_weights(region) > 0

    def ball_weights(self, a: np.ndarray, r: float) -> np.ndarray:
        raise NotImplementedError

    def radius_max(self) -> float:
        raise NotImplementedError


class CartesianGrid(Grid):
    """Uniform lattice of spacing ``h`` in dimension 1, 2 or 3.

    ``kind`` is ``cube`` ([-1,1]^m), ``box`` (explicit ``bounds``), ``ball``
    (B(0, radius)) or ``annulus`` (B(0, radius) minus B(0, inner)).  Ball and
    annulus lattices keep ``pad`` layers of nodes outside the nominal domain
    so that every cell meeting the domain has a full central-difference
    stencil; the outermost layer forms the boundary.
    """

    def __init__(self, m: int, kind: str = "cube", h: float = 1 / 16, *, radius: float = 1.0,
                 inner: float = 0.0, bounds=None, pad: int = 2):
        if m not in (1, 2, 3):
            raise ParameterError(f"grid dimension must be 1, 2 or 3, got {m}")
        if not h > 0:
            raise ParameterError(f"spacing must be positive, got {h}")
        if kind not in ("cube", "box", "ball", "annulus"):
            raise ParameterError(f"unknown Cartesian grid kind {kind!r}")
        self.m, self.kind, self.h = m, kind, float(h)
        self.radius, self.inner, self.pad = float(radius), float(inner), int(pad)
        if kind == "annulus" and not 0 < inner < radius:
            raise ParameterError("annulus needs 0 < inner < radius")

        if kind in ("cube", "box"):
            if kind == "cube":
                bounds = [(-1.0, 1.0)] * m
            if bounds is None or len(bounds) != m:
                raise ParameterError("box grids need one (lo, hi) pair per axis")
            self.bounds = [(float(lo), float(hi)) for lo, hi in bounds]
            axes = []
            for lo, hi in self.bounds:
                cells = (hi - lo) / h
                k = int(round(cells))
                if k < 2 or abs(cells - k) > 1e-9 * max(1.0, cells):
                    raise ParameterError(f"extent {hi - lo} is not a multiple of h={h}")
                axes.append(lo + h * np.arange(k + 1))
            shape = tuple(len(a) for a in axes)
            present = np.ones(shape, dtype=bool)
        else:
            self.bounds = None
            K = int(math.ceil(self.radius / h)) + self.pad
            ax = h * np.arange(-K, K + 1)
            axes = [ax] * m
            shape = (2 * K + 1,) * m
            mesh = np.meshgrid(*axes, indexing="ij")
            rr = np.sqrt(sum(g**2 for g in mesh))
            present = rr <= self.radius + self.pad * h + 1e-12
            if kind == "annulus":
                present &= rr >= self.inner - self.pad * h - 1e-12
        self.axes = axes
        self.shape = shape
        index_map = -np.ones(shape, dtype=np.intp)
        idx = np.argwhere(present)
        index_map[tuple(idx.T)] = np.arange(len(idx))
        self.index_map = index_map
        self.indices = idx
        self.coords = np.stack([axes[k][idx[:, k]] for k in range(m)], axis=1)

        nplus, nminus = [], []
        for k in range(m):
            for step, store in ((1, nplus), (-1, nminus)):
                j = idx.copy()
                j[:, k] += step
                ok = (j[:, k] >= 0) & (j[:, k] < shape[k])
                out = -np.ones(len(idx), dtype=np.intp)
                out[ok] = index_map[tuple(j[ok].T)]
                store.append(out)
        self.nplus = np.array(nplus)
        self.nminus = np.array(nminus)
        self.boundary = np.any(self.nplus < 0, axis=0) | np.any(self.nminus < 0, axis=0)

        edges = []
        for k in range(m):
            src = np.nonzero(self.nplus[k] >= 0)[0]
            edges.append(np.stack([src, self.nplus[k][src]], axis=1))
        self.edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.intp)
        self.edge_length = np.full(len(self.edges), h)
        self.edge_volume = np.full(len(self.edges), h**m)

        if kind in ("cube", "box"):
            w = np.ones(len(idx)) * h**m
            for k in range(m):
                edge = (idx[:, k] == 0) | (idx[:, k] == shape[k] - 1)
                w = np.where(edge, 0.5 * w, w)
            self.weights = w
        elif kind == "ball":
            self.weights = self.ball_weights(np.zeros(m), self.radius)
        else:
            self.weights = self.ball_weights(np.zeros(m), self.radius) - self.ball_weights(
                np.zeros(m), self.inner
            )

    def params(self) -> dict:
        out = {"type": "cartesian", "m": self.m, "kind": self.kind, "h": self.h}
        if self.kind in ("ball", "annulus"):
            out.update(radius=self.radius, pad=self.pad)
            if self.kind == "annulus":
                out["inner"] = self.inner
        elif self.kind == "box":
            out["bounds"] = [list(b) for b in self.bounds]
        return out

    def radius_max(self) -> float:
        if self.kind in ("ball", "annulus"):
            return self.radius
        return min(min(-lo, hi) for lo, hi in self.bounds)

    def ball_weights(self, a, r: float) -> np.ndarray:
        """Measure of (cell around each node) intersected with B(a, r).

        Cells are axis-aligned cubes of side h centered at the nodes; cut
        cells are supersampled.
        """
        a = np.asarray(a, dtype=float).reshape(self.m)
        h, m = self.h, self.m
        rel = np.abs(self.coords - a)
        near = np.maximum(rel - h / 2, 0.0)
        far = rel + h / 2
        dnear = np.sqrt((near**2).sum(axis=1))
        dfar = np.sqrt((far**2).sum(axis=1))
        w = np.where(dfar <= r, h**m, 0.0)
        cut = np.nonzero((dnear < r) & (dfar > r))[0]
        if cut.size:
            s = 16 if m <= 2 else 8
            offs = _supersample_offsets(m, s) * h
            pts = self.coords[cut, None, :] + offs[None, :, :] - a
            inside = (pts**2).sum(axis=2) <= r * r
            w[cut] = inside.mean(axis=1) * h**m
        if self.kind in ("cube", "box"):
            # respect the half cells of the domain faces
            w = np.minimum(w, self.weights)
        return w


class PolarGrid(Grid):
    """Polar grid of a disc or annulus in the plane.

    ``radii`` is an increasing array; when it starts at 0 the grid has a single
    center node and covers the disc, otherwise it covers the annulus between
    the first and last radius.  Rings carry ``ntheta`` equally spaced nodes.
    """

    def __init__(self, radii, ntheta: int, center=(0.0, 0.0)):
        radii = np.asarray(radii, dtype=float)
        if radii.ndim != 1 or radii.size < 3 or np.any(np.diff(radii) <= 0) or radii[0] < 0:
            raise ParameterError("radii must be an increasing array of at least 3 nonnegative values")
        if ntheta < 4:
            raise ParameterError(f"ntheta must be at least 4, got {ntheta}")
        self.m, self.kind = 2, "polar"
        self.radii = radii
        self.ntheta = int(ntheta)
        self.center = np.asarray(center, dtype=float).reshape(2)
        self.has_center = radii[0] == 0.0
        self.ring_radii = radii[1:] if self.has_center else radii
        self.nrings = len(self.ring_radii)
        self.dtheta = 2 * math.pi / self.ntheta
        self.theta = self.dtheta * np.arange(self.ntheta)
        off = 1 if self.has_center else 0
        self.offset = off
        R, T = np.meshgrid(self.ring_radii, self.theta, indexing="ij")
        ring_xy = np.stack([R.ravel() * np.cos(T.ravel()), R.ravel() * np.sin(T.ravel())], axis=1)
        if self.has_center:
            self.coords = np.vstack([np.zeros((1, 2)), ring_xy]) + self.center
        else:
            self.coords = ring_xy + self.center
        N = self.coords.shape[0]
        self.ring_of = np.full(N, -1, dtype=np.intp)
        self.ring_of[off:] = np.repeat(np.arange(self.nrings), self.ntheta)
        self.angle_of = np.full(N, -1, dtype=np.intp)
        self.angle_of[off:] = np.tile(np.arange(self.ntheta), self.nrings)
        self.node_r = np.zeros(N)
        self.node_r[off:] = R.ravel()
        self.node_theta = np.zeros(N)
        self.node_theta[off:] = T.ravel()

        boundary = np.zeros(N, dtype=bool)
        boundary[self.ring_nodes(self.nrings - 1)] = True
        if not self.has_center:
            boundary[self.ring_nodes(0)] = True
        self.boundary = boundary

        # neighbor tables, -1 where absent
        self.n_out = -np.ones(N, dtype=np.intp)
        self.n_in = -np.ones(N, dtype=np.intp)
        self.n_ccw = -np.ones(N, dtype=np.intp)
        self.n_cw = -np.ones(N, dtype=np.intp)
        for i in range(self.nrings):
            nodes = self.ring_nodes(i)
            self.n_ccw[nodes] = np.roll(nodes, -1)
            self.n_cw[nodes] = np.roll(nodes, 1)
            if i + 1 < self.nrings:
                self.n_out[nodes] = self.ring_nodes(i + 1)
            if i > 0:
                self.n_in[nodes] = self.ring_nodes(i - 1)
            elif self.has_center:
                self.n_in[nodes] = 0

        # edges with their finite-volume measures
        e, length, vol = [], [], []
        rr = self.radii
        dbar = self._dual_widths()
        for i in range(self.nrings):
            nodes = self.ring_nodes(i)
            r_i = self.ring_radii[i]
            e.append(np.stack([nodes, np.roll(nodes, -1)], axis=1))
            length.append(np.full(self.ntheta, r_i * self.dtheta))
            vol.append(np.full(self.ntheta, r_i * self.dtheta * dbar[i]))
        for k in range(len(rr) - 1):
            dr = rr[k + 1] - rr[k]
            rmid = 0.5 * (rr[k] + rr[k + 1])
            outer = self.ring_nodes(k + 1 - off)
            if self.has_center and k == 0:
                inner = np.zeros(self.ntheta, dtype=np.intp)
            else:
                inner = self.ring_nodes(k - off)
            e.append(np.stack([inner, outer], axis=1))
            length.append(np.full(self.ntheta, dr))
            vol.append(np.full(self.ntheta, rmid * self.dtheta * dr))
        self.edges = np.concatenate(e)
        self.edge_length = np.concatenate(length)
        self.edge_volume = np.concatenate(vol)

        self.weights = self._disc_weights(self.radii[-1], start=self.radii[0])

    def ring_nodes(self, i: int) -> np.ndarray:
        start = self.offset + i * self.ntheta
        return np.arange(start, start + self.ntheta)

    def _dual_widths(self) -> np.ndarray:
        full = self.radii
        out = np.empty(self.nrings)
        for i in range(self.nrings):
            k = i + self.offset
            left = (full[k] - full[k - 1]) / 2 if k > 0 else 0.0
            right = (full[k + 1] - full[k]) / 2 if k + 1 < len(full) else 0.0
            out[i] = left + right
        return out

    def params(self) -> dict:
        dr = np.diff(self.radii)
        uniform = bool(np.allclose(dr, dr[0], rtol=1e-12, atol=0))
        out = {"type": "polar", "m": 2, "kind": "polar", "ntheta": self.ntheta,
               "nr": int(len(self.radii) - 1), "rmin": float(self.radii[0]),
               "rmax": float(self.radii[-1]), "center": self.center.tolist(),
               "uniform": uniform}
        if not uniform:
            out["radii"] = self.radii.tolist()
        return out

    @property
    def h(self) -> float:
        return float(np.max(np.diff(self.radii)))

    def radius_max(self) -> float:
        return float(self.radii[-1])

    def _radial_weights(self, r: float, start: float) -> np.ndarray:
        """Weights per entry of ``radii`` for the trapezoid rule of
        psi(s) = phi(s) s on [start, r].  At the center psi is replaced by its
        value on the first ring, which is exact when phi ~ 1/s.
        """
        rr = self.radii
        w = np.zeros(len(rr))
        lo = int(np.searchsorted(rr, start - 1e-12 * max(1.0, abs(start))))
        k = int(np.searchsorted(rr, r + 1e-12 * max(1.0, r), side="right")) - 1
        if k < lo:
            raise DomainError(f"radius {r} is below the grid start {rr[lo]}")
        for i in range(lo, k):
            d = rr[i + 1] - rr[i]
            w[i] += d / 2
            w[i + 1] += d / 2
        tail = r - rr[k]
        if tail > 1e-12 * max(1.0, r):
            if k + 1 >= len(rr):
                raise DomainError(f"radius {r} exceeds the grid radius {rr[-1]}")
            t = tail / (rr[k + 1] - rr[k])
            w[k] += tail / 2 * (2 - t)
            w[k + 1] += tail * t / 2
        if self.has_center and lo == 0:
            w[1] += w[0]
            w[0] = 0.0
        return w

    def _disc_weights(self, r: float, start: float = 0.0) -> np.ndarray:
        rw = self._radial_weights(r, start)
        node_w = np.zeros(self.size)
        for i in range(self.nrings):
            k = i + self.offset
            node_w[self.ring_nodes(i)] = rw[k] * self.ring_radii[i] * self.dtheta
        return node_w

    def ball_weights(self, a, r: float) -> np.ndarray:
        a = np.asarray(a, dtype=float).reshape(2)
        if np.allclose(a, self.center, atol=1e-14):
            return self._disc_weights(r, start=self.radii[0])
        mask = np.linalg.norm(self.coords - a, axis=1) <= r
        return np.where(mask, self.weights, 0.0)

    def annulus_weights(self, r_in: float, r_out: float) -> np.ndarray:
        rw = self._radial_weights(r_out, r_in)
        node_w = np.zeros(self.size)
        for i in range(self.nrings):
            node_w[self.ring_nodes(i)] = rw[i + self.offset] * self.ring_radii[i] * self.dtheta
        return node_w

    def ring_index(self, r: float, tol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.ring_radii - r)))
        if abs(self.ring_radii[i] - r) > tol * max(1.0, r):
            raise DomainError(f"radius {r} is not a ring radius of this grid")
        return i


def uniform_radii(nr: int, rmax: float = 1.0, rmin: float = 0.0) -> np.ndarray:
    return np.linspace(rmin, rmax, nr + 1)


def graded_radii(nr: int, rmax: float, rmin: float, ncore: int = 4) -> np.ndarray:
    """Center, ``ncore`` uniform rings up to ``rmin`` and geometric rings to ``rmax``."""
    if not 0 < rmin < rmax:
        raise ParameterError("graded radii need 0 < rmin < rmax")
    core = np.linspace(0.0, rmin, ncore + 1)
    geo = np.geomspace(rmin, rmax, nr + 1)[1:]
    return np.concatenate([core, geo])


def grid_from_params(params: dict) -> Grid:
    """Rebuild a grid from :meth:`Grid.params` output."""
    p = dict(params)
    if p.get("type") == "polar":
        if "radii" in p:
            radii = np.asarray(p["radii"], dtype=float)
        else:
            radii = np.linspace(p["rmin"], p["rmax"], int(p["nr"]) + 1)
        return PolarGrid(radii, int(p["ntheta"]), center=p.get("center", (0.0, 0.0)))
    if p.get("type") == "cartesian":
        kind = p["kind"]
        kw = {}
        if kind in ("ball", "annulus"):
            kw.update(radius=p.get("radius", 1.0), pad=p.get("pad", 2))
            if kind == "annulus":
                kw["inner"] = p["inner"]
        if kind == "box":
            kw["bounds"] = p["bounds"]
        return CartesianGrid(int(p["m"]), kind, float(p["h"]), **kw)
    raise ParameterError(f"unknown grid description {params!r}")

