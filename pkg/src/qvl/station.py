"""Stationarity calculus: inner and outer variations, frequency, density and decay."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, ParameterError
from .grids import Ball, PolarGrid, uniform_radii
from .qfield import (
    QField,
    _checked_weights,
    energy,
    oscillation,
    sphere_integrals,
    ring_integrals,
)
from .qspace import match_batch


def smoothstep(t):
    """Quintic smoothstep on [0, 1] and its derivative."""
    t = np.clip(t, 0.0, 1.0)
    s = t**3 * (10 - 15 * t + 6 * t**2)
    ds = 30 * t**2 * (1 - t) ** 2
    return s, ds


def cutoff(rho, r_in: float, r_out: float):
    """chi = 1 on [0, r_in], 0 beyond r_out, quintic in between; returns (chi, chi')."""
    if not 0 <= r_in < r_out:
        raise ParameterError("cutoff needs 0 <= r_in < r_out")
    s, ds = smoothstep((np.asarray(rho, dtype=float) - r_in) / (r_out - r_in))
    return 1.0 - s, -ds / (r_out - r_in)


@dataclass
class VectorField:
    """Closed-form vector field on the domain: values and Jacobians at points."""

    value: Callable
    jacobian: Callable
    center: tuple
    support: float


@dataclass
class FiberField:
    """Closed-form Y(x, y) with its x- and y-Jacobians.

    ``dx(x, y)`` maps (N, m) points and (N, Q, n) values to (N, Q, n, m);
    ``dy(x, y)`` maps them to (N, Q, n, n).
    """

    dx: Callable
    dy: Callable
    center: tuple
    support: float


def radial_squeeze(center, r_in: float, r_out: float) -> VectorField:
    """X(x) = chi(|x - a|) (x - a)."""
    a = np.asarray(center, dtype=float)

    def value(x):
        y = x - a
        chi, _ = cutoff(np.linalg.norm(y, axis=1), r_in, r_out)
        return chi[:, None] * y

    def jacobian(x):
        y = x - a
        rho = np.linalg.norm(y, axis=1)
        chi, dchi = cutoff(rho, r_in, r_out)
        m = x.shape[1]
        safe = np.where(rho > 0, rho, 1.0)
        outer = np.einsum("ia,ib->iab", y, y) / safe[:, None, None]
        return chi[:, None, None] * np.eye(m) + dchi[:, None, None] * outer

    return VectorField(value, jacobian, tuple(a.tolist()), float(r_out))


def radial_squash(center, r_in: float, r_out: float) -> FiberField:
    """Y(x, y) = chi(|x - a|) y."""
    a = np.asarray(center, dtype=float)

    def dx(x, y):
        rel = x - a
        rho = np.linalg.norm(rel, axis=1)
        _, dchi = cutoff(rho, r_in, r_out)
        grad = dchi[:, None] * rel / np.where(rho > 0, rho, 1.0)[:, None]
        return np.einsum("iqn,im->iqnm", y, grad)

    def dy(x, y):
        chi, _ = cutoff(np.linalg.norm(x - a, axis=1), r_in, r_out)
        n = y.shape[2]
        return np.broadcast_to(chi[:, None, None, None] * np.eye(n),
                               (y.shape[0], y.shape[1], n, n))

    return FiberField(dx, dy, tuple(a.tolist()), float(r_out))


def _support_weights(f: QField, center, support: float):
    g = f.domain
    a = np.asarray(center, dtype=float)
    dist = np.linalg.norm(g.coords - a, axis=1)
    touched = dist < support
    if np.any(touched & g.boundary):
        raise DomainError("variation field support touches the boundary")
    return _checked_weights(f, Ball(tuple(a), support), one_sided=False)


def squeeze_residual(f: QField, X: VectorField) -> float:
    """First inner variation: 2 sum_i int <Df_i, Df_i DX> - int |||Df|||^2 div X."""
    w = _support_weights(f, X.center, X.support)
    nodes = np.nonzero(w > 0)[0]
    J, _ = f.jets()
    J = J[nodes]
    DX = X.jacobian(f.domain.coords[nodes])
    term = 2.0 * np.einsum("iqnm,iqnk,ikm->i", J, J, DX)
    div = np.trace(DX, axis1=1, axis2=2)
    dens = np.einsum("iqnm,iqnm->i", J, J)
    return float(np.sum(w[nodes] * (term - dens * div)))


def squash_residual(f: QField, Y: FiberField) -> float:
    """First outer variation: sum_i int <Df_i, D_xY(x, f_i)> + <Df_i, D_yY(x, f_i) Df_i>."""
    w = _support_weights(f, Y.center, Y.support)
    nodes = np.nonzero(w > 0)[0]
    J, _ = f.jets()
    J = J[nodes]
    x = f.domain.coords[nodes]
    V = f.values[nodes]
    t1 = np.einsum("iqnm,iqnm->i", J, Y.dx(x, V))
    t2 = np.einsum("iqnm,iqnk,iqkm->i", J, Y.dy(x, V), J)
    return float(np.sum(w[nodes] * (t1 + t2)))


def squash_identity_residual(f: QField, a, r: float) -> float:
    """int_B |||Df|||^2 - int_dB sum_i <d_nu f_i, f_i>; zero for stationary maps."""
    if a is None:
        a = getattr(f.domain, "center", np.zeros(f.m))
    D = energy(f, Ball(tuple(np.atleast_1d(a)), r))
    _, pair, _ = sphere_integrals(f, a, r)
    return D - pair


# frequency


@dataclass
class FrequencyProfile:
    center: list
    radii: list
    D: list
    H: list
    N: list
    theta: list
    pair: list
    normal_sq: list
    h: float
    m: int
    H_prime_residual: list = field(default_factory=list)
    theta_prime_residual: list = field(default_factory=list)
    squash_residual: list = field(default_factory=list)
    N_margin: float = float("nan")
    theta_margin: float = float("nan")
    degenerate: bool = False
    vanishing_violation: bool = False

    def to_json(self) -> dict:
        return asdict(self)

    def rows(self):
        """Per-radius rows (r, D, H, N, Theta, H' residual, Theta' residual, squash residual)."""
        out = []
        for i, r in enumerate(self.radii):
            out.append((r, self.D[i], self.H[i], self.N[i], self.theta[i],
                        self.H_prime_residual[i], self.theta_prime_residual[i],
                        self.squash_residual[i]))
        return out


def _nan_to_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def _radial_derivatives(f: QField, a, radii):
    """H' and Theta' by centered differences with step equal to the grid spacing."""
    m = f.m
    step = float(f.domain.h)
    dH, dT = [], []
    for r in radii:
        lo, hi = r - step, r + step
        vals = []
        for s in (lo, hi):
            D = energy(f, Ball(tuple(a), float(s)))
            H = sphere_integrals(f, a, float(s))[0]
            vals.append((H, D / s ** (m - 2)))
        dH.append((vals[1][0] - vals[0][0]) / (hi - lo))
        dT.append((vals[1][1] - vals[0][1]) / (hi - lo))
    return np.array(dH), np.array(dT)


def frequency_profile(f: QField, a, radii) -> FrequencyProfile:
    """D, H, N and Theta on spheres about ``a`` with the derivative identities checked.

    H' and Theta' are centered differences with a step of one grid spacing,
    so every radius must sit at least that far inside the domain.  Margins
    are the smallest consecutive increments of N and Theta.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 2:
        raise ParameterError("frequency profile needs at least 2 radii")
    if np.any(np.diff(radii) <= 0) or radii[0] <= 0:
        raise ParameterError("radii must be positive and strictly increasing")
    m = f.m
    a = np.asarray(a, dtype=float).reshape(m)
    D = np.array([energy(f, Ball(tuple(a), float(r))) for r in radii])
    sph = np.array([sphere_integrals(f, a, float(r)) for r in radii])
    H, pair, sq = sph[:, 0], sph[:, 1], sph[:, 2]
    scale = float(np.max(np.abs(f.values))) if f.values.size else 0.0
    degenerate = scale == 0.0
    vanishing = False
    # sphere integrals this far below the largest one are rounding noise
    nonzero = H > 1e-24 * max(float(np.max(H)), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        N = np.where(nonzero, radii * D / np.where(nonzero, H, 1.0), np.nan)
    if not degenerate and not np.all(nonzero):
        # a stationary map with H(r) = 0 vanishes on the whole ball B(a, r)
        for r in radii[~nonzero]:
            inside = np.linalg.norm(f.domain.coords - a, axis=1) <= r
            if np.any(f.values[inside] != 0):
                vanishing = True
    theta = D / radii ** (m - 2)
    dH, dT = _radial_derivatives(f, a, radii)
    hres = dH - (m - 1) * H / radii - 2 * D
    tres = dT - 2 * sq / radii ** (m - 2)
    sres = D - pair
    finite_N = N[np.isfinite(N)]
    N_margin = float(np.min(np.diff(finite_N))) if finite_N.size > 1 else float("nan")
    T_margin = float(np.min(np.diff(theta)))
    return FrequencyProfile(
        center=a.tolist(), radii=radii.tolist(), D=D.tolist(), H=H.tolist(),
        N=[_nan_to_none(float(x)) for x in N], theta=theta.tolist(), pair=pair.tolist(),
        normal_sq=sq.tolist(), h=float(f.domain.h), m=m,
        H_prime_residual=hres.tolist(), theta_prime_residual=tres.tolist(),
        squash_residual=sres.tolist(), N_margin=N_margin, theta_margin=T_margin,
        degenerate=bool(degenerate), vanishing_violation=bool(vanishing),
    )


def frequency_bounds_check(profile: FrequencyProfile, r0: float | None = None, *, tol=None) -> dict:
    """Two-sided bound on H(r)/r^(m-1) and the energy bound for r <= r0, in log form.

    Margins are log(rhs) - log(lhs) and are nonnegative when a bound holds.
    ``tol`` defaults to 5 h.  Exactly homogeneous profiles make both sides of
    the H bound equal, reported as ``equality_gap``.
    """
    radii = np.asarray(profile.radii)
    m = profile.m
    if r0 is None:
        r0 = float(radii[-1])
    i0 = int(np.argmin(np.abs(radii - r0)))
    if abs(radii[i0] - r0) > 1e-12 * max(1.0, r0):
        raise ParameterError(f"r0={r0} is not a sampled radius")
    tol = 5 * profile.h if tol is None else tol
    H = np.asarray(profile.H)
    D = np.asarray(profile.D)
    N = np.array([np.nan if x is None else x for x in profile.N], dtype=float)
    N0 = N[i0]
    lh0 = math.log(H[i0] / r0 ** (m - 1))
    lower, upper, dbound, gap = [], [], [], []
    skipped_d = not N0 > 0
    for i in range(i0):
        r = radii[i]
        lr = math.log(r / r0)
        lh = math.log(H[i] / r ** (m - 1))
        lo = 2 * N0 * lr + lh0
        hi = 2 * N[i] * lr + lh0
        lower.append(lh - lo)
        upper.append(hi - lh)
        gap.append(abs(hi - lo))
        if not skipped_d and N[i] > 0 and D[i] > 0:
            lhs = math.log(D[i] / r ** (m - 2))
            rhs = 2 * N[i] * lr + math.log(D[i0] / r0 ** (m - 2)) + math.log(N[i] / N0)
            dbound.append(rhs - lhs)
    worst = min(lower + upper + dbound) if (lower or dbound) else 0.0
    return {"r0": r0, "tolerance": tol, "lower_margins": lower, "upper_margins": upper,
            "energy_margins": dbound, "energy_bound_skipped": bool(skipped_d),
            "worst_margin": worst, "equality_gap": max(gap) if gap else 0.0,
            "pass": bool(worst >= -tol)}


def linf_bound_check(f: QField, a, r0: float, *, branch_value=None) -> dict:
    """Empirical constant in sup_{B(a,r0)} |f|^2 <= C r0^-m int_{B(a,3r0)} |f|^2.

    With ``branch_value`` y, also reports sup and mean of G^2(f, Q[[y]]) on
    shrinking balls about a, the quantities behind continuity at a total
    branch point.
    """
    g = f.domain
    m = g.m
    a = np.asarray(a, dtype=float).reshape(m)
    center = getattr(g, "center", np.zeros(m))
    if np.linalg.norm(a - center) + 3 * r0 > g.radius_max() + 1e-12:
        raise DomainError(f"B(a, 3 r0) exits the domain for r0={r0}")
    dist = np.linalg.norm(g.coords - a, axis=1)
    sq = np.sum(f.values**2, axis=(1, 2))
    inner = dist <= r0
    sup = float(np.max(sq[inner]))
    w = g.region_weights(Ball(tuple(a), 3 * r0))
    integral = float(np.sum(w * sq))
    C = sup * r0**m / integral if integral > 0 else (0.0 if sup == 0 else math.inf)
    out = {"center": a.tolist(), "r0": r0, "sup_sq": sup, "integral": integral, "C_hat": C}
    if branch_value is not None:
        y = np.asarray(branch_value, dtype=float).reshape(-1)
        rows = []
        for k in range(4):
            r = r0 / 2**k
            w_r = g.region_weights(Ball(tuple(a), r))
            nodes = np.nonzero(w_r > 0)[0]
            if nodes.size == 0:
                break
            base = np.broadcast_to(y, f.values[nodes].shape)
            _, d2 = match_batch(base, f.values[nodes])
            rows.append({"r": r, "sup": float(np.max(d2)),
                         "mean": float(np.sum(w_r[nodes] * d2) / np.sum(w_r[nodes]))})
        out["branch_point"] = rows
    return out


# energy modulus and logarithmic decay


def local_field(func, a, r: float, nr: int = 32, ntheta: int = 64) -> QField:
    """Samples of ``func`` on a polar grid of radius r centered at a."""
    g = PolarGrid(uniform_radii(nr, r), ntheta, center=a)
    return QField.from_function(g, func)


def _ball_stats(func, a, r, nr, ntheta, with_osc=True):
    f = local_field(func, a, r, nr, ntheta)
    D = energy(f, None, 2.0, one_sided=True)
    _, H, _, _ = ring_integrals(f)
    Hr = float(H[-1])
    N = r * D / Hr if Hr > 0 else float("nan")
    osc = oscillation(f, None)[0] if with_osc else None
    return D, Hr, N, osc


# ball energies below this are rounding noise of difference stencils
_FLOOR = 1e-20


@dataclass
class VMOReport:
    radii: list
    centers: list
    omega: list
    oscillation: list
    ratio: list
    oscillation_multiple: float
    omega_margin: float
    rho: list
    omega_rho: list
    theta_rho: list
    N_rho: list
    dichotomy: list
    contraction: list
    C_hat: float
    fit_C: float
    fit_alpha: float
    better_than_log: bool
    tolerance: float
    passed: bool

    def to_json(self) -> dict:
        return asdict(self)


def _map(fn, jobs, workers):
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def vmo_report(source, centers, radii, *, jmax: int = 4, nr: int = 32, ntheta: int = 64,
               tol: float | None = None, workers: int = 1) -> VMOReport:
    """Energy modulus, mean oscillation and the dyadic-squared decay dichotomy.

    ``source`` is a callable (N, 2) -> (N, Q, n) sampled afresh on a polar grid
    for every (center, radius), so radii down to 2^(-2^(jmax+1)) are
    resolved; m = 2, where Theta is the ball energy itself.
    """
    if isinstance(source, QField):
        raise ParameterError("vmo_report samples a callable; wrap fields with local sampling first")
    radii = np.asarray(sorted(radii), dtype=float)
    if radii.size < 3:
        raise ParameterError("vmo_report needs at least 3 radii")
    if radii[0] <= 0 or radii[-1] > 0.5:
        raise ParameterError("radii must lie in (0, 1/2]")
    centers = [np.asarray(c, dtype=float).reshape(2) for c in centers]
    if not centers:
        raise ParameterError("no centers given")
    for c in centers:
        if np.linalg.norm(c) >= 0.5:
            raise DomainError(f"center {c.tolist()} is not in B(0, 1/2)")
    tol = 5.0 / nr if tol is None else tol

    stats = _map(lambda job: _ball_stats(source, job[1], job[0], nr, ntheta),
                 [(float(r), c) for r in radii for c in centers], workers)
    omega, osc_max, ratios = [], [], []
    k = 0
    for r in radii:
        Ds, oscs = [], []
        for _ in centers:
            D, _, _, osc = stats[k]
            k += 1
            Ds.append(D)
            oscs.append(osc)
        w = max(Ds)
        w = w if w > _FLOOR else 0.0
        omega.append(w)
        osc_max.append(max(oscs))
        ratios.append([o / w if w > 0 else 0.0 for o in oscs])
    multiple = max(max(rw) for rw in ratios)
    omega_margin = float(np.min(np.diff(omega)) / max(max(omega), _FLOOR))

    rho = [2.0 ** (-(2**j)) for j in range(jmax + 2)]
    stats = _map(lambda job: _ball_stats(source, job[0], job[1], nr, ntheta, with_osc=False),
                 [(c, p) for c in centers for p in rho], workers)
    theta_rho, N_rho, H_rho = [], [], []
    k = 0
    for c in centers:
        t_c, n_c, h_c = [], [], []
        for p in rho:
            D, H, N, _ = stats[k]
            k += 1
            t_c.append(D if D > _FLOOR else 0.0)
            n_c.append(N)
            h_c.append(H / p)
        theta_rho.append(t_c)
        N_rho.append(n_c)
        H_rho.append(h_c)
    C_hat = float(np.nanmax(np.asarray(H_rho)))
    dichotomy = []
    for ci, c in enumerate(centers):
        for j in range(jmax + 1):
            t0, t1 = theta_rho[ci][j], theta_rho[ci][j + 1]
            N = N_rho[ci][j]
            halves = t1 <= 0.5 * t0 * (1 + tol) + 1e-300
            small = bool(np.isfinite(N) and N < 2.0 ** (-j - 1) * (1 + tol))
            dichotomy.append({"center": c.tolist(), "j": j, "theta_j": t0, "theta_next": t1,
                              "N_j": _nan_to_none(float(N)), "halves": bool(halves),
                              "small_frequency": small, "pass": bool(halves or small)})
    omega_rho = [max(theta_rho[ci][j] for ci in range(len(centers))) for j in range(len(rho))]
    contraction = []
    for j in range(jmax + 1):
        bound = max(C_hat * 2.0 ** (-j - 1), 0.5 * omega_rho[j])
        contraction.append({"j": j, "omega_next": omega_rho[j + 1], "bound": bound,
                            "pass": bool(omega_rho[j + 1] <= bound * (1 + tol))})
    pos = [(p, w) for p, w in zip(rho, omega_rho) if w > 0]
    if len(pos) >= 3:
        x = np.log(np.abs(np.log([p for p, _ in pos])))
        y = np.log([w for _, w in pos])
        A = np.vstack([np.ones_like(x), -x]).T
        (lc, alpha), *_ = np.linalg.lstsq(A, y, rcond=None)
        fit_C, fit_alpha = float(math.exp(lc)), float(alpha)
    else:
        fit_C, fit_alpha = 0.0, float("inf")
    better = bool(fit_alpha > 1.0)
    passed = (all(d["pass"] for d in dichotomy) and all(c["pass"] for c in contraction)
              and omega_margin >= -tol)
    return VMOReport(
        radii=radii.tolist(), centers=[c.tolist() for c in centers], omega=omega,
        oscillation=osc_max, ratio=ratios, oscillation_multiple=multiple,
        omega_margin=omega_margin, rho=rho, omega_rho=omega_rho, theta_rho=theta_rho,
        N_rho=[[_nan_to_none(float(x)) for x in row] for row in N_rho],
        dichotomy=dichotomy, contraction=contraction, C_hat=C_hat, fit_C=fit_C,
        fit_alpha=fit_alpha, better_than_log=better, tolerance=tol, passed=bool(passed),
    )
