from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvl.errors import DomainError, ParameterError, ShapeError
from qvl.families import branch_pair, constant, harmonic, linear
from qvl.grids import Ball, CartesianGrid, PolarGrid, grid_from_params, uniform_radii
from qvl.qfield import (
    QField,
    SphereData,
    canonicalize,
    edge_energy,
    energy,
    load_field,
    mean_of_values,
    mean_on,
    oscillation,
    ring_integrals,
    save_field,
    sphere_integrals,
    trace,
    triple_norm,
    write_density_csv,
)


@pytest.fixture(scope="module")
def disc():
    return CartesianGrid(2, "ball", 1 / 32)


@pytest.fixture(scope="module")
def polar():
    return PolarGrid(uniform_radii(64), 128)


def test_shape_and_finiteness_checks(disc):
    with pytest.raises(ShapeError):
        QField(disc, np.zeros((3, 1, 1)))
    vals = np.zeros((disc.size, 1, 1))
    vals[0] = np.nan
    with pytest.raises(DomainError):
        QField(disc, vals)


def test_values_are_canonical_and_frozen(disc):
    f = QField.from_function(disc, branch_pair(1))
    assert np.all(f.values[:, 0, 0] <= f.values[:, 1, 0])
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0


@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_canonicalize_forgets_sheet_order(Q, n, seed):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((7, Q, n))
    perm = np.stack([rng.permutation(Q) for _ in range(7)])
    W = np.take_along_axis(V, perm[:, :, None], axis=1)
    assert np.array_equal(canonicalize(V), canonicalize(W))


def test_disc_quadrature_weights(disc, polar):
    assert abs(disc.region_weights().sum() - math.pi) < 2e-3
    assert abs(polar.region_weights().sum() - math.pi) < 2e-3
    cube = CartesianGrid(2, "cube", 1 / 8)
    assert abs(cube.region_weights().sum() - 4.0) < 1e-12


def test_linear_energy_is_area(disc, polar):
    for g in (disc, polar):
        f = QField.from_function(g, linear([[1.0, 0.0]]))
        assert energy(f, one_sided=isinstance(g, PolarGrid)) == pytest.approx(math.pi, rel=2e-3)


def test_linear_energy_cube_exact():
    g = CartesianGrid(3, "cube", 1 / 4)
    f = QField.from_function(g, linear([[1.0, 2.0, -1.0]]))
    # interior trapezoid weights, linear maps have exact central differences
    w = g.region_weights()
    partials, valid = f.jets(one_sided=True)
    assert np.allclose(partials[valid][:, 0, 0], [1.0, 2.0, -1.0])
    assert energy(f, one_sided=True) == pytest.approx(6.0 * w.sum(), rel=1e-12)


def test_energy_scaling_and_exponent(disc):
    f = QField.from_function(disc, linear([[1.0, 0.0]]))
    g = QField(disc, 3.0 * f.values)
    assert energy(g) == pytest.approx(9.0 * energy(f), rel=1e-12)
    assert energy(f, p=4) == pytest.approx(energy(f), rel=1e-12)
    with pytest.raises(ParameterError):
        energy(f, p=1.0)


def test_single_valued_edge_energy_matches_differences():
    g = CartesianGrid(1, "cube", 1 / 8)
    f = QField.from_function(g, lambda x: (x[:, 0] ** 2)[:, None, None])
    e = g.edges
    diff = f.values[e[:, 1], 0, 0] - f.values[e[:, 0], 0, 0]
    ref = np.sum(g.edge_volume * (diff / g.edge_length) ** 2)
    assert edge_energy(f) == pytest.approx(ref, rel=1e-13)


def test_duplicated_sheets_multiply_energy(disc):
    f = QField.from_function(disc, harmonic(2))
    ff = QField(disc, np.concatenate([f.values, f.values], axis=1))
    assert energy(ff) == pytest.approx(2 * energy(f), rel=1e-12)
    assert edge_energy(ff) == pytest.approx(2 * edge_energy(f), rel=1e-12)


def test_branch_pair_ring_integrals(polar):
    f = QField.from_function(polar, branch_pair(1, complex_values=True))
    for r in (0.25, 0.5, 0.75):
        H, pair, sq = sphere_integrals(f, None, r)
        assert H == pytest.approx(4 * math.pi * r * r, rel=1e-12)
        D = energy(f, Ball((0.0, 0.0), r))
        assert D / (2 * math.pi * r) == pytest.approx(1.0, abs=0.01)
        assert r * D / H == pytest.approx(0.5, abs=0.01)
        assert pair == pytest.approx(H / (2 * r), rel=1e-3)


def test_real_branch_pair_values(polar):
    f = QField.from_function(polar, branch_pair(1))
    r = 0.5
    H, _, _ = sphere_integrals(f, None, r)
    assert H == pytest.approx(2 * math.pi * r * r, rel=1e-12)
    assert energy(f, Ball((0.0, 0.0), r)) / (math.pi * r) == pytest.approx(1.0, abs=0.01)


@given(st.integers(0, 2**31))
@settings(max_examples=20, deadline=None)
def test_ring_cauchy_schwarz(seed):
    rng = np.random.default_rng(seed)
    g = PolarGrid(uniform_radii(8), 16)
    f = QField(g, rng.standard_normal((g.size, 2, 2)))
    _, H, pair, sq = ring_integrals(f)
    ok = ~np.isnan(pair)
    assert np.all(pair[ok] ** 2 <= H[ok] * sq[ok] * (1 + 1e-12) + 1e-300)


def test_sphere_integrals_cartesian(disc):
    f = QField.from_function(disc, harmonic(1))
    H, pair, _ = sphere_integrals(f, None, 0.5)
    assert H == pytest.approx(math.pi * 0.25 ** 1 * 0.5 * 2 * 0.5, rel=0.05)
    assert pair == pytest.approx(H / 0.5, rel=0.05)
    with pytest.raises(DomainError):
        sphere_integrals(f, (0.6, 0.0), 0.6)


def test_polar_sphere_integrals_center_only(polar):
    f = QField.from_function(polar, harmonic(1))
    with pytest.raises(DomainError):
        sphere_integrals(f, (0.1, 0.0), 0.3)
    with pytest.raises(DomainError):
        sphere_integrals(f, None, 1.5)


def test_interior_jet_and_boundary(disc):
    f = QField.from_function(disc, linear([[2.0, 0.0]]))
    i = int(np.argmin(np.linalg.norm(disc.coords, axis=1)))
    assert triple_norm(f.jet(i)) == pytest.approx(2.0, rel=1e-12)
    b = int(np.nonzero(disc.boundary)[0][0])
    with pytest.raises(DomainError):
        f.jet(b)
    with pytest.raises(DomainError):
        energy(f, Ball((0.0, 0.0), 1.1))


def test_mean_of_constant_and_symmetric(disc):
    f = QField.from_function(disc, constant([1.0, -2.0], Q=2))
    m = mean_on(f, Ball((0.0, 0.0), 0.5))
    assert np.allclose(np.sort(m.points, axis=0), [[1.0, -2.0], [1.0, -2.0]])
    osc, _ = oscillation(f, Ball((0.0, 0.0), 0.5))
    assert osc == pytest.approx(0.0, abs=1e-20)


def test_mean_of_values_two_clusters():
    vals = np.array([[[-1.0], [1.0]], [[-1.2], [0.8]], [[-0.8], [1.2]]])
    m = mean_of_values(vals, np.ones(3))
    assert np.allclose(np.sort(m.points[:, 0]), [-1.0, 1.0])
    with pytest.raises(DomainError):
        mean_of_values(np.zeros((0, 2, 1)), np.zeros(0))


@given(st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_mean_is_a_matched_average(seed):
    rng = np.random.default_rng(seed)
    from qvl.qspace import QPoint, metric

    vals = rng.standard_normal((9, 2, 2))
    w = rng.uniform(0.1, 1.0, 9)
    m = mean_of_values(vals, w)

    def cost(c):
        return sum(wi * metric(c, QPoint(v)) ** 2 for wi, v in zip(w, vals))

    # the iteration starts at the first sample and never increases the cost
    assert cost(m) <= cost(QPoint(vals[0])) + 1e-12
    # fixed point: averaging the samples matched to the mean returns it
    from qvl.qspace import match_batch

    base = np.broadcast_to(m.points, vals.shape)
    perm, _ = match_batch(base, vals)
    aligned = np.take_along_axis(vals, perm[:, :, None], axis=1)
    avg = np.einsum("k,kqn->qn", w / w.sum(), aligned)
    assert np.allclose(avg, m.points, atol=1e-10)


def test_trace_returns_boundary_values(disc):
    f = QField.from_function(disc, harmonic(1))
    idx, vals = trace(f)
    assert np.all(disc.boundary[idx])
    assert np.array_equal(vals, f.values[idx])


@pytest.mark.parametrize("suffix", [".json", ".npz"])
def test_save_load_roundtrip(tmp_path, suffix, disc):
    f = QField.from_function(disc, branch_pair(1, complex_values=True), meta={"source": "pair"})
    path = tmp_path / f"field{suffix}"
    save_field(path, f, {"note": 1})
    g = load_field(path)
    assert np.array_equal(g.values, f.values)
    assert g.domain.params() == disc.params()
    assert g.meta == {"source": "pair", "note": 1}


def test_load_rejects_foreign_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other", "values": []}')
    with pytest.raises(ParameterError):
        load_field(p)


def test_grid_params_roundtrip(disc, polar):
    for g in (disc, polar, CartesianGrid(3, "annulus", 1 / 4, inner=0.5)):
        h = grid_from_params(g.params())
        assert h.size == g.size
        assert np.array_equal(h.coords, g.coords)


def test_density_csv(tmp_path):
    g = CartesianGrid(2, "cube", 1 / 4)
    f = QField.from_function(g, linear([[1.0, 1.0]]))
    p = tmp_path / "d.csv"
    write_density_csv(p, f, one_sided=True)
    rows = p.read_text().splitlines()
    assert rows[0] == "x1,x2,boundary,valid,triple_norm"
    assert len(rows) == g.size + 1
    assert float(rows[1].split(",")[-1]) == pytest.approx(math.sqrt(2))


def test_sphere_data_quadrature():
    c = SphereData.circle(lambda d: d[:, None, :1], 256)
    assert c.integrate(np.ones(256)) == pytest.approx(2 * math.pi)
    # tangential derivative of cos t is -sin t
    assert c.integrate(c.tangential_density()) == pytest.approx(math.pi, rel=1e-3)
    s = SphereData.latlong(lambda d: d[:, None, 2:3], 32, 64)
    assert s.integrate(np.ones(s.directions.shape[0])) == pytest.approx(4 * math.pi, rel=1e-3)
    # |grad_T x3|^2 = sin^2 theta integrates to 8 pi / 3
    assert s.integrate(s.tangential_density()) == pytest.approx(8 * math.pi / 3, rel=1e-2)
    with pytest.raises(ParameterError):
        SphereData(4, np.zeros((1, 1, 1)), (1,))
    with pytest.raises(ShapeError):
        SphereData(2, np.zeros((3, 1, 1)), (4,))


def test_sphere_data_nearest():
    c = SphereData.circle(lambda d: d[:, None, :1], 16)
    assert np.array_equal(c.nearest(c.directions), np.arange(16))
    s = SphereData.latlong(lambda d: d[:, None, :1], 8, 16)
    assert np.array_equal(s.nearest(s.directions), np.arange(128))
