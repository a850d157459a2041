from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvl.competitor import (
    annulus_interpolate_2d,
    circle_energy,
    default_C,
    find_gap,
    homogeneous0_extension,
    interpolation_study,
    m_bound,
    m_p,
    radial_energy_closed_form,
    radial_extension,
    random_circle_data,
    slab_interpolate,
)
from qvl.errors import ParameterError, ShapeError, UnsupportedDimensionError
from qvl.grids import CartesianGrid, PolarGrid, uniform_radii
from qvl.qfield import QField, SphereData, energy

GOLDEN = (math.sqrt(5) - 1) / 2


def test_m_p():
    assert [m_p(p) for p in (2, 3, 4)] == [1, 2, 3]
    assert m_p(2.5) == 2
    assert m_p(1.2) == 1
    with pytest.raises(ParameterError):
        m_p(1.0)


def test_closed_form_circle():
    g = SphereData.circle(lambda d: d[:, None, :1], 512)
    for alpha in (0.5, 1.0, 2.0):
        exact = math.pi * (alpha**2 + 1) / (2 * alpha)
        assert radial_energy_closed_form(g, alpha) == pytest.approx(exact, rel=1e-4)
    with pytest.raises(ParameterError):
        radial_energy_closed_form(g, 0.25, p=4)


def test_closed_form_sphere():
    # x3 on S^2 with alpha = 1 recovers the energy of x3 on the unit ball
    g = SphereData.latlong(lambda d: d[:, None, 2:3], 64, 128)
    assert radial_energy_closed_form(g, 1.0) == pytest.approx(4 * math.pi / 3, rel=2e-3)


@pytest.mark.parametrize("alpha", [0.75, 1.5])
def test_closed_form_matches_grid_energy(alpha):
    grid = PolarGrid(uniform_radii(128), 256)

    def g(d):
        t = np.arctan2(d[:, 1], d[:, 0])
        return np.stack([np.cos(t), -np.cos(t)], axis=1)[:, :, None] + 0.5 * np.sin(2 * t)[:, None, None]

    v = radial_extension(g, alpha, grid)
    closed = radial_energy_closed_form(SphereData.circle(g, 1024), alpha)
    assert energy(v, one_sided=True) == pytest.approx(closed, rel=1e-2)


@given(st.floats(0.2, 3.0), st.floats(0.1, 0.9), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_radial_extension_is_homogeneous(alpha, lam, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 2, 3))

    def g(d):
        return np.einsum("qnm,km->kqn", A[:, :, :2], d) + A[:, :, 2]

    grid = PolarGrid(uniform_radii(8), 16)
    v = radial_extension(g, alpha, grid)
    scaled = PolarGrid(lam * uniform_radii(8), 16)
    w = radial_extension(g, alpha, scaled)
    assert np.allclose(w.values, lam**alpha * v.values, rtol=1e-10, atol=1e-14)


def test_radial_extension_dimension_mismatch():
    g = SphereData.latlong(lambda d: d[:, None, :1], 4, 8)
    with pytest.raises(ShapeError):
        radial_extension(g, 1.0, PolarGrid(uniform_radii(4), 8))
    with pytest.raises(ParameterError):
        radial_extension(g, 0.0, CartesianGrid(3, "ball", 1 / 4))


def test_default_C_values():
    assert default_C(1.5) == 1.0
    assert default_C(2.0) == 1.0
    assert default_C(4.0) == pytest.approx(2.0, rel=1e-8)
    assert default_C(3.0) == pytest.approx(2 / math.sqrt(3), rel=1e-8)


@pytest.mark.parametrize("p", [2.5, 3.0, 4.0, 5.0])
def test_default_C_dominates_brute_force(p):
    q = p / 2
    t = np.geomspace(1e-4, 1e4, 600)[:, None]
    d = np.geomspace(1e-4, 1.0, 400)[None, :]
    vals = ((t + 1) ** q - (1 + d) * t**q) * d ** (q - 1)
    C = default_C(p)
    assert vals.max() <= C
    assert vals.max() >= C * (1 - 1e-3)


@given(st.floats(1.05, 2.0), st.floats(0.0, 3.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_defining_inequality_of_C_subquadratic(p, t, s, d):
    # for p <= 2 the constant 1 works for every split a + b
    a, b = t, s
    assert (a + b) ** (p / 2) <= (1 + d) * a ** (p / 2) + b ** (p / 2) + 1e-12


def test_m_bound_formula():
    assert m_bound(3, 2, 0.0, 1.0, C=1.0) == pytest.approx(2 / 3)
    assert m_bound(3, 2, 1.0, 0.5, C=1.0) == pytest.approx((1 + 2 * 0.25) / 2)
    assert m_bound(4, 3, 0.0, 0.5, delta=0.25, C=1.0) == pytest.approx(
        (1.25 + 0.25**-0.5 * 0.125) / 2.5)
    with pytest.raises(ParameterError):
        m_bound(3, 3.5, 0.0, 1.0)
    with pytest.raises(ParameterError):
        m_bound(4, 3, 0.0, 1.0, delta=0.0)


def test_find_gap_golden_ratio():
    cert = find_gap(3, 2, 0.0, C=1.0)
    assert cert.alpha0 == pytest.approx(GOLDEN, rel=1e-12)
    assert cert.mval == pytest.approx(GOLDEN, rel=1e-12)
    assert cert.eta0 == pytest.approx((1 - GOLDEN) / 2, rel=1e-12)
    assert cert.eps0 == pytest.approx(cert.eta0)
    assert cert.check()
    assert set(cert.to_json()) >= {"alpha0", "eta0", "mval"}


@given(st.integers(3, 6), st.floats(1.1, 2.9), st.floats(0.0, 2.0))
@settings(max_examples=40, deadline=None)
def test_find_gap_certificate_holds(m, p, M):
    if p >= m:
        return
    cert = find_gap(m, p, M)
    assert cert.check()
    assert cert.mval <= 1 / (m - p) - 2 * cert.eta0
    # alpha0 is a minimizer of the bound along alpha
    def bound(a):
        return m_bound(m, p, M, a, a * a if p > 2 else 1.0, cert.C)

    for a in (0.9 * cert.alpha0, 1.1 * cert.alpha0):
        assert bound(a) >= cert.mval * (1 - 1e-9)


def test_find_gap_rejects_p_at_least_m():
    with pytest.raises(ParameterError):
        find_gap(2, 2)


def test_slab_constant_gap_exact():
    g = CartesianGrid(1, "cube", 1 / 64)
    a = QField(g, np.zeros((g.size, 1, 1)))
    b = QField(g, np.full((g.size, 1, 1), 0.3))
    field, rep = slab_interpolate(a, b, 0.125)
    # linear transit across a slab of width 2 eps and length 2: delta^2 / eps
    assert rep.energy == pytest.approx(0.09 / 0.125, rel=1e-12)
    assert rep.trace_residual_top < 1e-15 and rep.trace_residual_bottom < 1e-15
    assert field.m == 2


def test_slab_sheet_swap_costs_nothing():
    g = CartesianGrid(1, "cube", 1 / 32)
    vals = np.stack([np.full(g.size, -1.0), np.full(g.size, 1.0)], axis=1)[:, :, None]
    a = QField(g, vals)
    b = QField(g, vals[:, ::-1])
    _, rep = slab_interpolate(a, b, 0.25)
    assert rep.energy == pytest.approx(0.0, abs=1e-20)


def test_slab_traces_for_varying_data():
    g = CartesianGrid(1, "cube", 1 / 32)
    x = g.coords[:, 0]
    a = QField(g, np.stack([np.sin(3 * x), np.cos(x)], axis=1)[:, :, None])
    b = QField(g, np.stack([np.sin(3 * x) + 0.2, -np.cos(x)], axis=1)[:, :, None])
    _, rep = slab_interpolate(a, b, 0.125)
    assert rep.trace_residual_top < 1e-12 and rep.trace_residual_bottom < 1e-12
    assert 0 < rep.constant < 10


def test_slab_dimension_limit():
    g = CartesianGrid(2, "cube", 1 / 8)
    f = QField(g, np.zeros((g.size, 1, 1)))
    with pytest.raises(UnsupportedDimensionError):
        slab_interpolate(f, f, 0.25, p=2)
    with pytest.raises(ParameterError):
        slab_interpolate(QField(CartesianGrid(1, "cube", 1 / 8), np.zeros((17, 1, 1))),
                         QField(CartesianGrid(1, "cube", 1 / 8), np.zeros((17, 1, 1))), 0.1)


def test_annulus_constant_gap():
    eps, delta = 0.125, 0.2
    base = np.array([[0.0], [1.0]])
    g1 = SphereData.circle(lambda d: np.broadcast_to(base, (len(d), 2, 1)).copy(), 256)
    g2 = SphereData.circle(lambda d: np.broadcast_to(base + [[delta], [0.0]], (len(d), 2, 1)).copy(), 256)
    _, rep = annulus_interpolate_2d(g1, g2, eps)
    exact = (delta / eps) ** 2 * math.pi * (1 - (1 - eps) ** 2)
    assert rep.energy == pytest.approx(exact, rel=1e-2)
    assert rep.trace_residual_top < 1e-12 and rep.trace_residual_bottom < 1e-12


def test_annulus_rejects_spheres():
    g = SphereData.latlong(lambda d: d[:, None, :1], 4, 8)
    with pytest.raises(UnsupportedDimensionError):
        annulus_interpolate_2d(g, g, 0.1)
    c = SphereData.circle(lambda d: d[:, None, :1], 16)
    with pytest.raises(ParameterError):
        annulus_interpolate_2d(c, c, 1.5)


def test_circle_energy():
    c = SphereData.circle(lambda d: d[:, None, :1], 512)
    assert circle_energy(c) == pytest.approx(math.pi, rel=1e-4)


def test_homogeneous0_converges_to_prediction():
    def g(d):
        return d[:, None, :1]

    ratios = [homogeneous0_extension(g, 1, 0.25, 1.5, h=0.25 / k)[1] for k in (16, 32, 64)]
    r = [x["energy"] / x["predicted"] for x in ratios]
    assert r[0] < r[1] < r[2] <= 1.0
    assert r[2] > 0.9
    with pytest.raises(ParameterError):
        homogeneous0_extension(g, 1, 0.25, 2.0)
    with pytest.raises(UnsupportedDimensionError):
        homogeneous0_extension(g, 3, 0.25, 2.0)


def test_random_circle_data_is_seeded():
    a = random_circle_data(np.random.default_rng(3), 2, 2, 64)
    b = random_circle_data(np.random.default_rng(3), 2, 2, 64)
    assert np.array_equal(a.values, b.values)


def test_interpolation_study_small():
    out = interpolation_study(np.random.default_rng(0), 4, K=128)
    assert len(out["constants"]) == 4
    assert out["max_trace_residual"] < 1e-12
    assert 0.8 < out["min_ratio"] <= 1.0 <= out["max_ratio"] < 1.2
