"""Discrete Dirichlet problem for Q-valued maps and almost-minimality audits.

The solver minimizes the edge energy with the boundary trace held fixed.
With the per-edge matchings frozen, the sheets of all nodes form a graph and
the energy is a weighted p-Dirichlet sum on that graph: for p = 2 this is a
sparse linear solve, otherwise it is handed to L-BFGS.  Matchings are then
recomputed and the two steps alternate until no matching changes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize as sp_minimize
from scipy.sparse.linalg import splu

from .competitor import GapCertificate
from .errors import ConvergenceError, DomainError, ParameterError
from .grids import Ball, PolarGrid
from .qfield import QField, energy, sphere_area
from .qspace import QPoint, match_batch, metric, retraction, separate, splitting

log = logging.getLogger(__name__)


@dataclass
class SolveOptions:
    p: float = 2.0
    max_sweeps: int = 100
    tol: float = 1e-10
    rematch_period: int = 1
    restarts: int = 1
    seed: int = 0
    noise: float = 0.1

    def __post_init__(self):
        if not self.tol > 0:
            raise ParameterError("tolerance must be positive")
        if self.max_sweeps < 1:
            raise ParameterError("max_sweeps must be at least 1")
        if not self.p > 1:
            raise ParameterError(f"p must exceed 1, got {self.p}")
        if self.restarts < 1:
            raise ParameterError("restarts must be at least 1")
        if self.rematch_period < 1:
            raise ParameterError("rematch_period must be at least 1")


@dataclass
class SolveResult:
    field: QField
    energy: float
    energies: list
    rematches: list
    sweeps: int
    restart: int
    converged: bool
    restart_energies: list = field(default_factory=list)

    def trace_rows(self):
        """(sweep, energy, rematch count) rows for CSV export."""
        return [(i, e, c) for i, (e, c) in enumerate(zip(self.energies, self.rematches))]


def _boundary_values(domain, boundary) -> np.ndarray:
    if isinstance(boundary, QField):
        if boundary.domain.size != domain.size:
            raise DomainError("boundary field lives on a different grid")
        return boundary.values
    vals = np.asarray(boundary(domain.coords), dtype=float)
    if vals.ndim == 2:
        vals = vals[:, :, None]
    return vals


def radial_start(domain, values: np.ndarray, fixed: np.ndarray, center=None) -> np.ndarray:
    """Degree-one radial extension of the values on ``fixed`` nodes to all nodes.

    Each node takes the value of the fixed node whose direction from the
    center is closest, scaled by the ratio of distances.
    """
    from scipy.spatial import cKDTree

    c = np.zeros(domain.m) if center is None else np.asarray(center, dtype=float)
    x = domain.coords - c
    r = np.linalg.norm(x, axis=1)
    fidx = np.nonzero(fixed)[0]
    fr = r[fidx]
    outer = fidx[fr >= np.max(fr) - 1e-9 * max(1.0, np.max(fr)) - 2.5 * _spacing(domain)]
    or_ = r[outer]
    dirs = x[outer] / np.where(or_ > 0, or_, 1.0)[:, None]
    tree = cKDTree(dirs)
    _, nearest = tree.query(x / np.where(r > 0, r, 1.0)[:, None])
    src = outer[nearest]
    scale = np.where(r[src] > 0, r / np.where(r[src] > 0, r[src], 1.0), 0.0)
    out = scale[:, None, None] * values[src]
    out[fixed] = values[fixed]
    return out


def _spacing(domain) -> float:
    return float(domain.h)


class _SheetProblem:
    """Edge energy of sheet values under frozen matchings."""

    def __init__(self, domain, edges, vol, length, perms, Q, p):
        self.N = domain.size
        self.Q = Q
        self.p = p
        a = np.repeat(edges[:, 0] * Q, Q) + np.tile(np.arange(Q), len(edges))
        b = np.repeat(edges[:, 1] * Q, Q) + perms.ravel()
        self.a, self.b = a, b
        self.w = np.repeat(vol / length**p, Q)
        self.wlap = np.repeat(vol / length**2, Q)

    def energy(self, X):
        d = X[self.a] - X[self.b]
        sq = np.sum(d * d, axis=1)
        return float(np.sum(self.w * sq ** (self.p / 2.0)))

    def laplacian(self):
        n = self.N * self.Q
        rows = np.concatenate([self.a, self.b, self.a, self.b])
        cols = np.concatenate([self.b, self.a, self.a, self.b])
        data = np.concatenate([-self.wlap, -self.wlap, self.wlap, self.wlap])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def grad(self, X):
        d = X[self.a] - X[self.b]
        sq = np.sum(d * d, axis=1)
        coef = self.w * self.p * np.where(sq > 0, sq, 1.0) ** (self.p / 2.0 - 1.0)
        coef = np.where(sq > 0, coef, 0.0)
        g = np.zeros_like(X)
        np.add.at(g, self.a, coef[:, None] * d)
        np.add.at(g, self.b, -coef[:, None] * d)
        return g


def _edge_subset(domain, free):
    e = domain.edges
    keep = free[e[:, 0]] | free[e[:, 1]]
    return e[keep], domain.edge_volume[keep], domain.edge_length[keep]


def _matched_energy(V, edges, vol, length, p):
    perms, sq = match_batch(V[edges[:, 0]], V[edges[:, 1]])
    return float(np.sum(vol * (sq / length**2) ** (p / 2.0))), perms


def _relax(domain, V, free, edges, vol, length, perms, p, tol):
    """Minimize the frozen-matching energy over the free sheets."""
    N, Q, n = V.shape
    prob = _SheetProblem(domain, edges, vol, length, perms, Q, p)
    X = V.reshape(N * Q, n).copy()
    free_s = np.repeat(free, Q)
    if p == 2.0:
        L = prob.laplacian()
        fi = np.nonzero(free_s)[0]
        bi = np.nonzero(~free_s)[0]
        A = L[fi][:, fi].tocsc()
        rhs = -(L[fi][:, bi] @ X[bi])
        X[fi] = splu(A).solve(np.asarray(rhs))
    else:
        fi = np.nonzero(free_s)[0]
        x0 = X[fi].ravel()

        def fun(z):
            Y = X.copy()
            Y[fi] = z.reshape(-1, n)
            return prob.energy(Y), prob.grad(Y)[fi].ravel()

        res = sp_minimize(fun, x0, jac=True, method="L-BFGS-B",
                          options={"maxiter": 5000, "ftol": tol * 1e-3, "gtol": 1e-12})
        Y = X.copy()
        Y[fi] = res.x.reshape(-1, n)
        if prob.energy(Y) <= prob.energy(X):
            X = Y
    return X.reshape(N, Q, n)


def relax_free(domain, V0: np.ndarray, free: np.ndarray, opts: SolveOptions):
    """Alternate frozen-matching minimization and rematching on the free nodes.

    Returns the final values, the energy trace (optimally matched edge energy
    over edges touching free nodes), the rematch counts and a convergence flag.
    """
    edges, vol, length = _edge_subset(domain, free)
    V = V0.copy()
    E, perms = _matched_energy(V, edges, vol, length, opts.p)
    energies, rematches = [E], [0]
    converged = False
    for sweep in range(opts.max_sweeps):
        Vn = _relax(domain, V, free, edges, vol, length, perms, opts.p, opts.tol)
        if (sweep + 1) % opts.rematch_period == 0:
            En, pn = _matched_energy(Vn, edges, vol, length, opts.p)
        else:
            pn = perms
            En = _SheetProblem(domain, edges, vol, length, perms, V.shape[1], opts.p).energy(
                Vn.reshape(-1, V.shape[2]))
        if En > E * (1 + 1e-12) + 1e-300:
            # numerical noise only; keep the previous iterate
            converged = True
            break
        changed = int(np.count_nonzero(np.any(pn != perms, axis=1)))
        V, perms = Vn, pn
        decrease = E - En
        E = En
        energies.append(E)
        rematches.append(changed)
        if changed == 0 or decrease <= opts.tol * max(E, 1e-300):
            converged = True
            break
    return V, energies, rematches, converged


def solve_dirichlet(domain, boundary, opts: SolveOptions | None = None) -> SolveResult:
    """Minimize the edge energy among fields with the given boundary trace.

    ``boundary`` is a field on ``domain`` (only its boundary values are read)
    or a callable evaluated at the boundary nodes.  Restart 0 starts from the
    degree-one radial extension of the boundary data; later restarts add
    seeded noise of relative size ``opts.noise``.  The lowest-energy result is
    returned.
    """
    opts = opts or SolveOptions()
    bvals = _boundary_values(domain, boundary)
    fixed = domain.boundary.copy()
    free = ~fixed
    if not np.any(free):
        raise DomainError("the domain has no interior nodes")
    center = getattr(domain, "center", None)
    start = radial_start(domain, bvals, fixed, center)
    start[fixed] = bvals[fixed]
    rms = math.sqrt(float(np.mean(np.sum(bvals[fixed] ** 2, axis=(1, 2))))) or 1.0
    rng = np.random.default_rng(opts.seed)
    best = None
    restart_energies = []
    last = None
    for k in range(opts.restarts):
        V0 = start.copy()
        if k > 0:
            V0[free] += opts.noise * rms * rng.standard_normal(V0[free].shape)
        V, energies, rematches, ok = relax_free(domain, V0, free, opts)
        V[fixed] = bvals[fixed]
        last = (V, energies, rematches, ok, k)
        restart_energies.append(energies[-1])
        log.debug("restart %d: energy %.12g after %d sweeps", k, energies[-1], len(energies) - 1)
        if ok and (best is None or energies[-1] < best[1][-1]):
            best = last
    if best is None:
        V, energies, _, _, _ = last
        raise ConvergenceError(
            f"no restart converged within {opts.max_sweeps} sweeps",
            field=QField(domain, V), energies=energies,
        )
    V, energies, rematches, ok, k = best
    fieldv = QField(domain, V, meta={"solver": "dirichlet", "p": opts.p, "seed": opts.seed})
    return SolveResult(field=fieldv, energy=energies[-1], energies=energies, rematches=rematches,
                       sweeps=len(energies) - 1, restart=k, converged=ok,
                       restart_energies=restart_energies)


# audits


def _balls(balls):
    out = []
    for b in balls:
        if isinstance(b, Ball):
            out.append(b)
        else:
            c, r = b
            out.append(Ball(tuple(np.atleast_1d(c)), float(r)))
    return out


def _check_inside(domain, ball: Ball):
    c = np.asarray(ball.center)
    if np.linalg.norm(c - getattr(domain, "center", np.zeros(domain.m))) + ball.radius > domain.radius_max() + 1e-12:
        raise DomainError(f"ball {ball} exits the domain")


def verify_almost_min(u: QField, omega=None, balls=(), *, cert: GapCertificate | None = None,
                      opts: SolveOptions | None = None, tol: float = 1e-9) -> dict:
    """Compare u on each ball with competitors sharing its values outside the ball.

    Competitors: the radial extension (exponent ``cert.alpha0`` or 1) of the
    values just outside the ball, and a re-solved Dirichlet field started from
    u.  Energies are edge energies over edges touching the free nodes.  The
    check passes when E(u) <= (1 + omega(r)) min(competitors) (1 + tol).
    This is a necessary condition only.
    """
    opts = opts or SolveOptions()
    omega = omega or (lambda r: 0.0)
    dom = u.domain
    alpha = cert.alpha0 if cert is not None else 1.0
    rows = []
    worst = 0.0
    for ball in _balls(balls):
        _check_inside(dom, ball)
        c = np.asarray(ball.center)
        dist = np.linalg.norm(dom.coords - c, axis=1)
        free = (dist < ball.radius) & ~dom.boundary
        if not np.any(free):
            raise DomainError(f"ball {ball} contains no interior nodes")
        edges, vol, length = _edge_subset(dom, free)
        Eu, _ = _matched_energy(u.values, edges, vol, length, opts.p)
        fixed = ~free
        # radial competitor anchored at the ring of fixed nodes around the ball
        ring = fixed & np.isin(np.arange(dom.size), edges.ravel())
        radial = u.values.copy()
        x = dom.coords - c
        r = np.linalg.norm(x, axis=1)
        from scipy.spatial import cKDTree

        ridx = np.nonzero(ring)[0]
        tree = cKDTree(x[ridx] / np.maximum(r[ridx], 1e-300)[:, None])
        fidx = np.nonzero(free)[0]
        _, near = tree.query(x[fidx] / np.maximum(r[fidx], 1e-300)[:, None])
        src = ridx[near]
        radial[fidx] = ((r[fidx] / r[src]) ** alpha)[:, None, None] * u.values[src]
        Erad, _ = _matched_energy(radial, edges, vol, length, opts.p)
        V, energies, _, _ = relax_free(dom, u.values.copy(), free, opts)
        Esol = energies[-1]
        best = min(Erad, Esol)
        ratio = Eu / best if best > 0 else (1.0 if Eu == 0 else math.inf)
        allowed = 1.0 + float(omega(ball.radius))
        ok = ratio <= allowed * (1 + tol)
        worst = max(worst, ratio)
        rows.append({"center": list(ball.center), "radius": ball.radius, "energy": Eu,
                     "radial_competitor": Erad, "solved_competitor": Esol, "ratio": ratio,
                     "allowed": allowed, "pass": bool(ok)})
    return {"balls": rows, "worst_ratio": worst, "pass": all(r["pass"] for r in rows),
            "competitor_note": "best competitor found; an upper bound for the infimum"}


def tangential_sphere_energy(u: QField, a, r: float, p: float = 2.0) -> float:
    """Integral over the sphere of radius r about a of |||D_T u|||^p."""
    dom = u.domain
    a = np.asarray(a, dtype=float).reshape(dom.m)
    if isinstance(dom, PolarGrid):
        if not np.allclose(a, dom.center):
            raise DomainError("polar sphere energies are only available about the grid center")
        i = dom.ring_index(r)
        _, ft, _ = u.polar_derivatives(one_sided=True)
        nodes = dom.ring_nodes(i)
        dens = np.sum(ft[nodes] ** 2, axis=(1, 2))
        return float(dom.ring_radii[i] * dom.dtheta * np.sum(dens ** (p / 2.0)))
    rel = dom.coords - a
    dist = np.linalg.norm(rel, axis=1)
    shell = (dist >= r - dom.h / 2) & (dist < r + dom.h / 2)
    if not np.any(shell):
        raise DomainError(f"no nodes in the shell of radius {r}")
    partials, valid = u.jets(one_sided=True)
    if not np.all(valid[shell]):
        raise DomainError("shell nodes lack difference stencils")
    nu = rel[shell] / dist[shell][:, None]
    J = partials[shell]
    dnu = np.einsum("iqnm,im->iqn", J, nu)
    tang = np.sum(J**2, axis=(1, 2, 3)) - np.sum(dnu**2, axis=(1, 2))
    return sphere_area(dom.m, r) * float(np.mean(np.maximum(tang, 0.0) ** (p / 2.0)))


def radial_comparison_check(u: QField, cert: GapCertificate, balls, *, tol: float = 0.0) -> dict:
    """Check E(u, B(x,r)) <= (1/(m-p) - eta0) r E(u, dB(x,r)) on each ball."""
    m, p = u.m, cert.p
    if not 1 < p < m:
        raise ParameterError(f"need 1 < p < m, got p={p}, m={m}")
    coef = 1.0 / (m - p) - cert.eta0
    rows = []
    for ball in _balls(balls):
        _check_inside(u.domain, ball)
        lhs = energy(u, ball, p)
        bd = tangential_sphere_energy(u, ball.center, ball.radius, p)
        rhs = coef * ball.radius * bd
        ratio = lhs / (ball.radius * bd) if bd > 0 else (0.0 if lhs == 0 else math.inf)
        rows.append({"center": list(ball.center), "radius": ball.radius, "lhs": lhs, "rhs": rhs,
                     "ratio": ratio, "coefficient": coef, "margin": rhs - lhs,
                     "pass": bool(lhs <= rhs * (1 + tol) + 1e-300)})
    return {"balls": rows, "pass": all(r["pass"] for r in rows)}


@dataclass
class DecayReport:
    center: list
    radii: list
    energies: list
    boundary_energies: list
    ratios: list
    slope: float
    eta_hat: float
    holder_exponent: float
    fit_residual: float
    monotone_margin: float
    degenerate: bool

    def to_json(self) -> dict:
        return asdict(self)


def decay_profile(u: QField, a, radii, p: float = 2.0) -> DecayReport:
    """Energy on balls B(a, r) against r, with a least-squares power-law fit."""
    radii = np.asarray(sorted(radii), dtype=float)
    if radii.size < 3:
        raise ParameterError("decay profile needs at least 3 radii")
    if np.any(np.diff(radii) <= 0):
        raise ParameterError("radii must be distinct")
    a = np.asarray(a, dtype=float).reshape(u.m)
    m = u.m
    E = np.array([energy(u, Ball(tuple(a), float(r)), p) for r in radii])
    bd = []
    for r in radii:
        try:
            bd.append(r * tangential_sphere_energy(u, a, float(r), p))
        except DomainError:
            bd.append(float("nan"))
    bd = np.array(bd)
    ratios = np.where(bd > 0, E / np.where(bd > 0, bd, 1.0), np.nan)
    degenerate = bool(np.all(E <= 0))
    if degenerate:
        slope = eta = resid = margin = float("nan")
    else:
        pos = E > 0
        lr, le = np.log(radii[pos]), np.log(E[pos])
        A = np.vstack([lr, np.ones_like(lr)]).T
        coef, res, *_ = np.linalg.lstsq(A, le, rcond=None)
        slope = float(coef[0])
        fit = A @ coef
        resid = float(np.sqrt(np.mean((le - fit) ** 2)))
        eta = slope - (m - p)
        normalized = E / radii ** (m - p + eta)
        margin = float(np.min(np.diff(normalized))) if normalized.size > 1 else 0.0
    return DecayReport(center=a.tolist(), radii=radii.tolist(), energies=E.tolist(),
                       boundary_energies=[float(x) for x in bd], ratios=[float(x) for x in ratios],
                       slope=slope, eta_hat=eta, holder_exponent=(eta / p if not degenerate else float("nan")),
                       fit_residual=resid, monotone_margin=margin, degenerate=degenerate)


# constants of the induction on Q


def holder_constants(m: int, p: float, eta0: float, C: float = 1.0, q: float | None = None) -> dict:
    """Sobolev exponent p* on the sphere and the choices eta = eta0/C,
    M = (C^2/eta0^2)^(p*/(p*-p)).  Diagnostic only.
    """
    if not 1 < p:
        raise ParameterError(f"p must exceed 1, got {p}")
    if not eta0 > 0 or not C > 0:
        raise ParameterError("eta0 and C must be positive")
    if p < m - 1:
        pstar = (m - 1) * p / (m - 1 - p)
    else:
        pstar = 2 * p if q is None else float(q)
        if not pstar > p:
            raise ParameterError(f"exponent q={pstar} must exceed p={p}")
    eta = eta0 / C
    M = (C**2 / eta0**2) ** (pstar / (pstar - p))
    return {"m": m, "p": p, "p_star": pstar, "eta": eta, "M": M, "eta0": eta0, "C": C}


def exceptional_set(values: np.ndarray, weights: np.ndarray, p: float = 2.0, eps: float = 1 / 16) -> dict:
    """Size of the set where boundary values leave the retraction ball.

    ``values`` are samples (K, Q, n) of a map on a sphere with quadrature
    ``weights``.  With a mean ``ubar``, a separated point ``P = separate(ubar,
    eps)`` and the retraction onto B(P, s(P)/8), reports the measure of the
    set moved by the retraction, the Chebyshev bound
    16^p / s(P)^p * int G^p(u, ubar), and int G^p(u, Phi(u)).
    """
    from .qfield import mean_of_values

    ubar = mean_of_values(values, weights)
    if not math.isfinite(splitting(ubar)):
        return {"applicable": False, "reason": "mean is a single repeated point"}
    P = separate(ubar, eps)
    s = splitting(P)
    moved = np.zeros(len(values), dtype=bool)
    gap = np.zeros(len(values))
    dev = np.zeros(len(values))
    for i, v in enumerate(values):
        u = QPoint(v)
        phi = retraction(P, s / 8.0, u)
        gap[i] = metric(u, phi)
        moved[i] = gap[i] > 0
        dev[i] = metric(u, ubar)
    measure = float(np.sum(weights[moved]))
    cheb = float(16.0**p / s**p * np.sum(weights * dev**p))
    return {"applicable": True, "mean": ubar.to_json(), "separated": P.to_json(), "splitting": s,
            "measure": measure, "chebyshev_bound": cheb,
            "retraction_defect": float(np.sum(weights * gap**p)),
            "pass": bool(measure <= cheb * (1 + 1e-12))}
