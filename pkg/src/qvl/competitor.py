"""Competitor constructions: radial homogeneous extensions and their energy,
the radial-comparison bound and gap certificate, and interpolation between
two boundary data sets across a thin slab or annulus.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConstructionError, ParameterError, ShapeError, UnsupportedDimensionError
from .grids import CartesianGrid, PolarGrid
from .qfield import QField, SphereData, _aligned, energy, mean_of_values
from .qspace import match_batch


def m_p(p: float) -> int:
    """Largest skeleton dimension handled by matched Lipschitz interpolation."""
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    if float(p).is_integer():
        return int(p) - 1
    return int(math.floor(p))


# radial extension


def radial_extension(g, alpha: float, domain) -> QField:
    """Sample v(x) = |x|^alpha g(x/|x|) on ``domain``.

    ``g`` is :class:`SphereData` (nearest sphere node, whole Q-points carried
    over) or a callable mapping unit directions (N, m) to values (N, Q, n).
    """
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    x = domain.coords - getattr(domain, "center", np.zeros(domain.m))
    r = np.linalg.norm(x, axis=1)
    safe = np.where(r > 0, r, 1.0)
    dirs = x / safe[:, None]
    if isinstance(g, SphereData):
        if g.m != domain.m:
            raise ShapeError(f"sphere data lives in R^{g.m}, domain in R^{domain.m}")
        vals = g.values[g.nearest(dirs)]
    else:
        vals = np.asarray(g(dirs), dtype=float)
    vals = (r**alpha)[:, None, None] * vals
    vals[r == 0] = 0.0
    return QField(domain, vals, meta={"family": "radial-extension", "alpha": alpha})


def radial_energy_closed_form(g: SphereData, alpha: float, p: float = 2.0, m: int | None = None) -> float:
    """Energy of the radial extension over the unit ball, from sphere data alone.

    Equals (m - p + p alpha)^(-1) times the sphere integral of
    (alpha^2 |g|^2 + |||D_S g|||^2)^(p/2).
    """
    m = g.m if m is None else m
    denom = m - p + p * alpha
    if not denom > 0:
        raise ParameterError(f"m - p + p*alpha = {denom} must be positive")
    integrand = (alpha**2 * g.norm_sq() + g.tangential_density()) ** (p / 2.0)
    return g.integrate(integrand) / denom


# the radial-comparison bound


def default_C(p: float) -> float:
    """Constant in (a+b)^(p/2) <= (1+d) a^(p/2) + C d^(1-p/2) b^(p/2), 0 < d <= 1.

    For p <= 2 subadditivity gives C = 1.  Otherwise the supremum over t >= 0,
    d in (0, 1] of [(t+1)^q - (1+d) t^q] d^(q-1), q = p/2, is found numerically
    (the maximizing t is explicit for each d).
    """
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    if p <= 2:
        return 1.0
    q = p / 2.0

    def best(d):
        # (1 + d)^(1/(q-1)) - 1, capped so that q near 1 cannot overflow
        c = math.expm1(min(math.log1p(d) / (q - 1.0), 700.0))
        t = 1.0 / c if c > 0 else 0.0
        vals = [((t + 1) ** q - (1 + d) * t**q) * d ** (q - 1), d ** (q - 1)]
        return max(vals)

    grid = np.concatenate([np.geomspace(1e-8, 1.0, 4001)])
    vals = np.array([best(d) for d in grid])
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    for _ in range(200):
        a = lo + (hi - lo) / 3
        b = hi - (hi - lo) / 3
        if best(a) < best(b):
            lo = a
        else:
            hi = b
    sup = max(float(vals.max()), best(0.5 * (lo + hi)))
    return sup * (1 + 1e-9)


def m_bound(m: float, p: float, M: float, alpha: float, delta: float = 0.0, C: float | None = None) -> float:
    """Upper bound for the radial competitor energy with unit boundary energy."""
    if not 1 < p <= m:
        raise ParameterError(f"need 1 < p <= m, got p={p}, m={m}")
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if M < 0:
        raise ParameterError(f"M must be nonnegative, got {M}")
    C = default_C(p) if C is None else C
    if not C > 0:
        raise ParameterError(f"C must be positive, got {C}")
    denom = m - p + p * alpha
    if p <= 2:
        return (1 + C * (1 + M**p) * alpha**p) / denom
    if not delta > 0:
        raise ParameterError(f"delta must be positive for p > 2, got {delta}")
    return ((1 + delta) + C * delta ** (-(p / 2 - 1)) * (1 + M**p) * alpha**p) / denom


@dataclass(frozen=True)
class GapCertificate:
    m: float
    p: float
    M: float
    C: float
    alpha0: float
    delta0: float
    eta0: float
    mval: float
    eps0: float

    def check(self) -> bool:
        return (self.alpha0 > 0 and self.eta0 > 0
                and self.mval <= 1.0 / (self.m - self.p) - 2 * self.eta0)

    def to_json(self) -> dict:
        return asdict(self)


def _gap_slope_numerator(m, p, K, C, alpha):
    # sign of d/d alpha of the bound, with delta = alpha^2 when p > 2
    den = m - p + p * alpha
    if p <= 2:
        num = 1 + C * K * alpha**p
        dnum = C * K * p * alpha ** (p - 1)
    else:
        B = 1 + C * K
        num = 1 + B * alpha**2
        dnum = 2 * B * alpha
    return dnum * den - p * num


def find_gap(m: float, p: float, M: float = 0.0, C: float | None = None) -> GapCertificate:
    """Choose alpha0 (and delta0 = alpha0^2 when p > 2) maximizing the gap
    eta0 = (1/(m-p) - bound) / 2, by bisection on the sign of the bound's slope.
    """
    if not 1 < p < m:
        raise ParameterError(f"need 1 < p < m, got p={p}, m={m}")
    C = default_C(p) if C is None else float(C)
    K = 1 + M**p
    lo, hi = 0.0, 1.0
    while _gap_slope_numerator(m, p, K, C, hi) < 0:
        hi *= 2.0
        if hi > 1e12:
            raise ConstructionError("could not bracket the optimal alpha")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _gap_slope_numerator(m, p, K, C, mid) < 0:
            lo = mid
        else:
            hi = mid
    alpha0 = 0.5 * (lo + hi)
    delta0 = alpha0**2 if p > 2 else 0.0
    mval = m_bound(m, p, M, alpha0, delta0 if p > 2 else 1.0, C)
    top = 1.0 / (m - p)
    eta0 = (top - mval) / 2.0
    if not eta0 > 0:
        raise ConstructionError(f"no positive gap for m={m}, p={p}, M={M}, C={C}")
    while mval > top - 2 * eta0:
        eta0 = math.nextafter(eta0, 0.0)
    cert = GapCertificate(m=m, p=p, M=M, C=C, alpha0=alpha0, delta0=delta0, eta0=eta0,
                          mval=mval, eps0=(m - p) * eta0)
    if not cert.check():
        raise ConstructionError("gap certificate failed its defining inequality")
    return cert


# interpolation


@dataclass
class InterpolationReport:
    energy: float
    bound: float
    boundary_term: float
    gap_term: float
    constant: float
    trace_residual_top: float
    trace_residual_bottom: float
    eps: float
    p: float
    K_p: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def _transit(A: np.ndarray, B: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Matched linear path from A (s=0) to B (s=1), per row."""
    Bal = _aligned(A, B)
    return A + s[:, None, None] * (Bal - A)


def _zones(eps: float, t: np.ndarray, top_zone: bool, bottom_zone: bool):
    """Split the slab coordinate t in [-eps, eps] into three transit zones.

    Returns zone labels (0 top, 1 middle, 2 bottom) and the local parameter
    running from the upper to the lower end of each zone.
    """
    w = eps / 4.0
    upper = eps - w if top_zone else eps
    lower = -eps + w if bottom_zone else -eps
    zone = np.where(t > upper, 0, np.where(t < lower, 2, 1))
    s = np.empty_like(t)
    s[zone == 0] = (eps - t[zone == 0]) / w
    s[zone == 1] = (upper - t[zone == 1]) / (upper - lower)
    s[zone == 2] = (lower - t[zone == 2]) / w
    return zone, np.clip(s, 0.0, 1.0)


def _layered(g1, g2, H1, H2, eps, t, tol):
    """Values on the slab from top data g1 down to bottom data g2 through H1, H2."""
    scale = max(1.0, float(np.abs(g1).max()), float(np.abs(g2).max()))
    top = bool(np.sqrt(match_batch(g1, H1)[1]).max() > tol * scale)
    bottom = bool(np.sqrt(match_batch(g2, H2)[1]).max() > tol * scale)
    zone, s = _zones(eps, t, top, bottom)
    out = np.empty_like(g1)
    for z, (A, B) in enumerate(((g1, H1), (H1, H2), (H2, g2))):
        sel = zone == z
        if np.any(sel):
            out[sel] = _transit(A[sel], B[sel], s[sel])
    return out, top, bottom


def _vertex_means_1d(values, weights, coords, vertices, half):
    means = []
    for v in vertices:
        sel = np.abs(coords - v) <= half + 1e-12
        means.append(mean_of_values(values[sel], weights[sel]).points)
    return np.array(means)


def _extend_1d(vertex_vals, vertex_pos, x):
    """Matched piecewise-linear extension of vertex values to positions x."""
    k = np.clip(np.searchsorted(vertex_pos, x, side="right") - 1, 0, len(vertex_pos) - 2)
    a, b = vertex_pos[k], vertex_pos[k + 1]
    s = (x - a) / (b - a)
    return _transit(vertex_vals[k], vertex_vals[k + 1], s)


def _extend_cells_2d(V, xs, ys, X, Y):
    """Extension of vertex values V[i, j] (at xs[i], ys[j]) to points (X, Y).

    Cells whose matchings compose consistently around the cycle are filled
    sheetwise bilinearly; other cells are coned from their mean to the
    piecewise-linear boundary values.
    """
    nx, ny = len(xs) - 1, len(ys) - 1
    out = np.empty((len(X),) + V.shape[2:])
    ci = np.clip(np.searchsorted(xs, X, side="right") - 1, 0, nx - 1)
    cj = np.clip(np.searchsorted(ys, Y, side="right") - 1, 0, ny - 1)
    inconsistent = 0
    for i in range(nx):
        for j in range(ny):
            sel = np.nonzero((ci == i) & (cj == j))[0]
            if sel.size == 0:
                continue
            v00, v10, v01, v11 = V[i, j], V[i + 1, j], V[i, j + 1], V[i + 1, j + 1]
            a10 = _aligned(v00[None], v10[None])[0]
            a01 = _aligned(v00[None], v01[None])[0]
            p1 = _aligned(a10[None], v11[None])[0]
            p2 = _aligned(a01[None], v11[None])[0]
            u = (X[sel] - xs[i]) / (xs[i + 1] - xs[i])
            w = (Y[sel] - ys[j]) / (ys[j + 1] - ys[j])
            if np.array_equal(p1, p2):
                out[sel] = ((1 - u) * (1 - w))[:, None, None] * v00 + (u * (1 - w))[:, None, None] * a10 \
                    + ((1 - u) * w)[:, None, None] * a01 + (u * w)[:, None, None] * p1
                continue
            inconsistent += 1
            corners = np.array([v00, v10, v01, v11])
            mean = mean_of_values(corners, np.ones(4)).points
            du, dw = u - 0.5, w - 0.5
            rad = np.maximum(np.abs(du), np.abs(dw)) * 2.0
            safe = np.where(rad > 0, rad, 1.0)
            bu, bw = 0.5 + du / safe, 0.5 + dw / safe
            bvals = np.empty((sel.size,) + V.shape[2:])
            on_x = np.isclose(np.abs(bw - 0.5), 0.5)
            for side, mask in ((0, on_x & (bw < 0.5)), (1, on_x & (bw >= 0.5)),
                               (2, ~on_x & (bu < 0.5)), (3, ~on_x & (bu >= 0.5))):
                if not np.any(mask):
                    continue
                A, B, par = {
                    0: (v00, v10, bu), 1: (v01, v11, bu), 2: (v00, v01, bw), 3: (v10, v11, bw),
                }[side]
                nsel = int(mask.sum())
                bvals[mask] = _transit(np.broadcast_to(A, (nsel,) + A.shape).copy(),
                                       np.broadcast_to(B, (nsel,) + B.shape).copy(), par[mask])
            out[sel] = _transit(np.broadcast_to(mean, bvals.shape).copy(), bvals, rad)
    return out, inconsistent


def slab_interpolate(g1: QField, g2: QField, eps: float, p: float = 2.0, *, cell: float | None = None,
                     tol: float = 1e-12):
    """Interpolate from g1 (top face t = eps) to g2 (bottom face t = -eps) over I^m x [-eps, eps].

    Vertex means of each datum on a cube decomposition of side ``cell`` are
    extended over the cubes by matched interpolation; in the slab direction the
    map passes linearly (sheetwise, after matching) from g1 to the first
    extension, to the second extension, and to g2.  A transit zone is dropped
    when the extension already equals the datum.
    """
    dom = g1.domain
    if not isinstance(dom, CartesianGrid) or dom.kind not in ("cube", "box"):
        raise ShapeError("slab interpolation needs data on a cube or box grid")
    if g2.domain.params() != dom.params() or g1.values.shape != g2.values.shape:
        raise ShapeError("both data sets must live on the same grid with the same Q, n")
    m = dom.m
    if m > m_p(p):
        raise UnsupportedDimensionError(f"m={m} exceeds m_p({p})={m_p(p)}")
    h = dom.h
    nt = int(round(2 * eps / h))
    if nt < 2 or abs(2 * eps / h - nt) > 1e-9 * nt:
        raise ParameterError(f"2*eps={2 * eps} must be a multiple of h={h} with at least 2 steps")
    cell = max(eps, 2 * h) if cell is None else cell
    steps = max(1, int(round(cell / h)))

    # vertices on grid lines, windows of one cell on each side
    vpos = []
    for ax in dom.axes:
        idx = list(range(0, len(ax), steps))
        if idx[-1] != len(ax) - 1:
            idx.append(len(ax) - 1)
        vpos.append(ax[idx])
    half = steps * h
    H = []
    inconsistent = 0
    for g in (g1, g2):
        if m == 1:
            vv = _vertex_means_1d(g.values, dom.weights, dom.coords[:, 0], vpos[0], half)
            H.append(_extend_1d(vv, vpos[0], dom.coords[:, 0]))
        else:
            V = np.empty((len(vpos[0]), len(vpos[1]), g.Q, g.n))
            for i, xv in enumerate(vpos[0]):
                for j, yv in enumerate(vpos[1]):
                    sel = (np.abs(dom.coords[:, 0] - xv) <= half + 1e-12) & \
                          (np.abs(dom.coords[:, 1] - yv) <= half + 1e-12)
                    V[i, j] = mean_of_values(g.values[sel], dom.weights[sel]).points
            ext, bad = _extend_cells_2d(V, vpos[0], vpos[1], dom.coords[:, 0], dom.coords[:, 1])
            inconsistent += bad
            H.append(ext)

    bounds = [b for b in dom.bounds] + [(-eps, eps)]
    slab = CartesianGrid(m + 1, "box", h, bounds=bounds)
    base = np.array([dom.index_map[tuple(ix[:m])] for ix in slab.indices])
    t = slab.coords[:, m]
    vals, top, bottom = _layered(g1.values[base], g2.values[base], H[0][base], H[1][base], eps, t, tol)
    hfield = QField(slab, vals, meta={"construction": "slab-interpolation"})

    E = energy(hfield, None, p, one_sided=True)
    report = _report(hfield, E, [energy(g1, None, p, one_sided=True), energy(g2, None, p, one_sided=True)],
                     g1.values, g2.values, dom.weights, eps, p,
                     top_sel=np.isclose(t, eps), bottom_sel=np.isclose(t, -eps), base=base)
    report.extra.update(cells=int(len(vpos[0]) - 1), top_zone=top, bottom_zone=bottom,
                        inconsistent_cells=inconsistent)
    return hfield, report


def _report(hfield, E, boundary_energies, v1, v2, w, eps, p, top_sel, bottom_sel, base):
    _, sq = match_batch(v1, v2)
    gap = float(np.sum(w * sq ** (p / 2.0)))
    bterm = eps * sum(boundary_energies)
    gterm = eps ** (1 - p) * gap
    bound = bterm + gterm
    top_res = float(np.sqrt(match_batch(hfield.values[top_sel], v1[base[top_sel]])[1]).max())
    bot_res = float(np.sqrt(match_batch(hfield.values[bottom_sel], v2[base[bottom_sel]])[1]).max())
    const = E / bound if bound > 0 else (0.0 if E == 0 else math.inf)
    return InterpolationReport(energy=E, bound=bound, boundary_term=bterm, gap_term=gterm,
                               constant=const, trace_residual_top=top_res,
                               trace_residual_bottom=bot_res, eps=eps, p=p)


def circle_energy(g: SphereData, p: float = 2.0) -> float:
    """Integral over the unit circle of |||D_T g|||^p."""
    return g.integrate(g.tangential_density() ** (p / 2.0))


def annulus_interpolate_2d(g1: SphereData, g2: SphereData, eps: float, p: float = 2.0, *,
                           nr: int | None = None, tol: float = 1e-12):
    """Interpolate from g1 on the unit circle to g2 (rescaled) on the circle of radius 1 - eps.

    The circle is cut into about 2 pi / eps arcs; the arc offset is chosen
    among all node shifts to minimize the cost of the data at the arc
    endpoints.  Arc-endpoint means are extended along arcs by matched
    interpolation and the radial direction is filled as in the slab case.
    """
    if g1.m != 2 or g2.m != 2:
        raise UnsupportedDimensionError("annulus interpolation is implemented for m = 2 only")
    if g1.shape != g2.shape or g1.values.shape != g2.values.shape:
        raise ShapeError("both circles need the same resolution, Q and n")
    if not 0 < eps < 1:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    (K,) = g1.shape
    dth = 2 * math.pi / K
    narcs = max(3, int(round(2 * math.pi / eps)))
    narcs = min(narcs, K)
    starts = np.rint(np.arange(narcs) * K / narcs).astype(np.intp)
    spacing = int(np.min(np.diff(np.append(starts, K))))

    d1, d2 = g1.tangential_density(), g2.tangential_density()
    _, gap_sq = match_batch(g1.values, g2.values)
    node_cost = d1 ** (p / 2) + d2 ** (p / 2) + eps ** (-p) * gap_sq ** (p / 2)
    costs = [float(node_cost[(starts + s) % K].sum()) for s in range(spacing)]
    shift = int(np.argmin(costs))
    verts = (starts + shift) % K

    theta = dth * np.arange(K)
    # unwrap so that arcs are increasing in angle from the first vertex
    vpos = theta[verts]
    vpos_ext = np.append(vpos, vpos[0] + 2 * math.pi)
    rel = (theta - vpos[0]) % (2 * math.pi) + vpos[0]
    half = spacing * dth
    H = []
    for g in (g1, g2):
        vv = []
        for v in vpos:
            dist = np.abs((theta - v + math.pi) % (2 * math.pi) - math.pi)
            sel = dist <= half + 1e-12
            vv.append(mean_of_values(g.values[sel], g.weights[sel]).points)
        vv = np.array(vv)
        vv = np.concatenate([vv, vv[:1]])
        H.append(_extend_1d(vv, vpos_ext, rel))

    if nr is None:
        nr = max(4, int(round(eps / dth)))
    radii = np.linspace(1 - eps, 1.0, nr + 1)
    grid = PolarGrid(radii, K)
    ring = grid.ring_of
    ang = grid.angle_of
    # radial position mapped to the slab coordinate in [-eps, eps]
    t = 2 * (grid.node_r - (1 - eps / 2))
    vals, top, bottom = _layered(g1.values[ang], g2.values[ang], H[0][ang], H[1][ang], eps, t, tol)
    hfield = QField(grid, vals, meta={"construction": "annulus-interpolation"})
    E = energy(hfield, None, p, one_sided=True)

    e1, e2 = circle_energy(g1, p), circle_energy(g2, p)
    gap = g1.integrate(gap_sq ** (p / 2.0))
    Kp = e1 + e2 + eps ** (-p) * gap
    top_sel = ring == grid.nrings - 1
    bottom_sel = ring == 0
    report = _report(hfield, E, [e1, e2], g1.values, g2.values, g1.weights, eps, p,
                     top_sel, bottom_sel, base=ang)
    report.K_p = Kp
    report.extra.update(arcs=narcs, offset=shift, top_zone=top, bottom_zone=bottom, nr=nr)
    return hfield, report


def homogeneous0_extension(g, cell_dim: int, eps: float, p: float = 2.0, h: float | None = None,
                           resolution: int = 64):
    """Degree-0 homogeneous extension z -> g(eps z/|z|) over the ball B^(j+1)(0, eps).

    ``g`` gives the values g(eps w) at unit directions w of S^j, either as
    :class:`SphereData` (nearest node) or as a callable on (N, j+1) directions,
    in which case the boundary energy uses sphere data of the given
    ``resolution``.  Returns the field on a Cartesian ball grid and a report
    comparing its energy with eps times the boundary energy, using the radial
    factor int_0^eps (r/eps)^(j-p) dr = eps / (j + 1 - p).
    """
    j = int(cell_dim)
    if not j + 1 > p:
        raise ParameterError(f"cell dimension {j} needs j + 1 > p = {p}")
    if j + 1 not in (2, 3):
        raise UnsupportedDimensionError(f"cell dimension {j} is not supported")
    if isinstance(g, SphereData):
        if g.m != j + 1:
            raise ShapeError(f"sphere data in R^{g.m} does not match cell dimension {j}")
        sphere = g
    elif j + 1 == 2:
        sphere = SphereData.circle(g, 4 * resolution)
    else:
        sphere = SphereData.latlong(g, resolution, 2 * resolution)
    h = eps / 16 if h is None else h
    grid = CartesianGrid(j + 1, "ball", h, radius=eps)
    x = grid.coords
    r = np.linalg.norm(x, axis=1)
    dirs = x / np.where(r > 0, r, 1.0)[:, None]
    if isinstance(g, SphereData):
        vals = g.values[g.nearest(dirs)].copy()
    else:
        vals = np.asarray(g(dirs), dtype=float).copy()
    # the value at the vertex itself is immaterial; use the mean
    vals[r == 0] = mean_of_values(sphere.values, sphere.weights).points
    field_ = QField(grid, vals, meta={"construction": "homogeneous-degree-0"})
    E = energy(field_, None, p)
    tang = sphere.tangential_density() / eps**2
    boundary = eps**j * sphere.integrate(tang ** (p / 2.0))
    factor = eps / (j + 1 - p)
    ratio = E / (eps * boundary) if boundary > 0 else 0.0
    return field_, {"energy": E, "boundary_energy": boundary, "radial_factor": factor,
                    "predicted": factor * boundary, "ratio": ratio}


def random_circle_data(rng: np.random.Generator, Q: int, n: int, K: int, modes: int = 3) -> SphereData:
    """Smooth random circle data: per sheet a constant plus trigonometric modes
    up to ``modes`` with standard normal coefficients damped by 1/k^2."""
    c = rng.standard_normal((Q, n))
    A = rng.standard_normal((modes, Q, n))
    B = rng.standard_normal((modes, Q, n))

    def func(d):
        th = np.arctan2(d[:, 1], d[:, 0])
        out = np.broadcast_to(c, (len(th), Q, n)).copy()
        for j in range(modes):
            k = j + 1
            out += (A[j] * np.cos(k * th)[:, None, None] + B[j] * np.sin(k * th)[:, None, None]) / k**2
        return out

    return SphereData.circle(func, K)


def interpolation_study(rng: np.random.Generator, count: int = 20, *, Q: int = 2, n: int = 2,
                        K: int = 256, eps: float = 0.125, p: float = 2.0) -> dict:
    """Empirical interpolation constants over independent random data pairs."""
    consts, residuals = [], []
    for _ in range(count):
        g1 = random_circle_data(rng, Q, n, K)
        g2 = random_circle_data(rng, Q, n, K)
        _, rep = annulus_interpolate_2d(g1, g2, eps, p)
        consts.append(rep.constant)
        residuals.append(max(rep.trace_residual_top, rep.trace_residual_bottom))
    c = np.asarray(consts)
    med = float(np.median(c))
    return {"constants": c.tolist(), "median": med, "min_ratio": float(c.min() / med),
            "max_ratio": float(c.max() / med), "max_trace_residual": float(max(residuals)),
            "eps": eps, "p": p, "K": K, "count": count}
