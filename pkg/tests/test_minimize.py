from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvl.competitor import find_gap
from qvl.errors import ConvergenceError, DomainError, ParameterError
from qvl.families import branch_pair, constant, harmonic, linear
from qvl.grids import Ball, CartesianGrid, PolarGrid, uniform_radii
from qvl.minimize import (
    SolveOptions,
    decay_profile,
    exceptional_set,
    holder_constants,
    radial_comparison_check,
    radial_start,
    relax_free,
    solve_dirichlet,
    tangential_sphere_energy,
    verify_almost_min,
)
from qvl.qfield import QField, edge_energy, edge_sq_distances


def crossing(x):
    """Two-valued circle data whose sheets must rematch during the solve."""
    t = np.arctan2(x[:, 1], x[:, 0])
    a = np.stack([np.cos(t), np.sin(2 * t)], axis=1)
    b = np.stack([np.sin(3 * t), np.cos(t)], axis=1)
    return np.stack([a, b], axis=1)


@pytest.fixture(scope="module")
def disc16():
    return CartesianGrid(2, "ball", 1 / 16)


@pytest.fixture(scope="module")
def polar32():
    return PolarGrid(uniform_radii(32), 64)


def test_options_validation():
    for kw in ({"tol": 0}, {"max_sweeps": 0}, {"p": 1.0}, {"restarts": 0}, {"rematch_period": 0}):
        with pytest.raises(ParameterError):
            SolveOptions(**kw)


def test_single_valued_harmonic_is_reproduced(disc16):
    # x1^2 - x2^2 is harmonic for the five-point stencil
    res = solve_dirichlet(disc16, harmonic(2))
    exact = harmonic(2)(disc16.coords)
    assert np.abs(res.field.values - exact).max() < 1e-12
    assert res.converged


def test_separated_sheets_solve_independently(disc16):
    def two(x):
        return np.stack([x[:, :1], x[:, :1] + 5.0], axis=1)

    res = solve_dirichlet(disc16, two)
    assert np.abs(res.field.values - two(disc16.coords)).max() < 1e-12
    assert res.rematches == [0, 0]


def test_constant_boundary_gives_zero_energy(disc16):
    res = solve_dirichlet(disc16, constant([1.0, 2.0], Q=2))
    assert res.energy == pytest.approx(0.0, abs=1e-20)


def test_p4_linear_data(disc16):
    res = solve_dirichlet(disc16, linear([[1.0, 0.5]]), SolveOptions(p=4))
    assert np.abs(res.field.values[:, 0, 0] - disc16.coords @ [1.0, 0.5]).max() < 1e-5


def test_energy_trace_is_monotone_and_reproducible(polar32):
    a = solve_dirichlet(polar32, crossing)
    b = solve_dirichlet(polar32, crossing)
    assert a.sweeps > 1 and sum(a.rematches) > 0
    assert all(y <= x * (1 + 1e-12) for x, y in zip(a.energies, a.energies[1:]))
    assert a.energies == b.energies
    assert np.array_equal(a.field.values, b.field.values)
    # the solver counts edges with at least one free end
    g = a.field.domain
    e = g.edges
    keep = ~(g.boundary[e[:, 0]] & g.boundary[e[:, 1]])
    sq = edge_sq_distances(a.field, e[keep])
    ref = np.sum(g.edge_volume[keep] * sq / g.edge_length[keep] ** 2)
    assert a.energy == pytest.approx(ref, rel=1e-10)
    assert [r[1] for r in a.trace_rows()] == a.energies


def test_restarts_pick_the_lowest_energy(polar32):
    res = solve_dirichlet(polar32, crossing, SolveOptions(restarts=3, seed=7))
    assert len(res.restart_energies) == 3
    assert res.energy == min(res.restart_energies)


def test_convergence_error_carries_the_last_iterate(polar32):
    with pytest.raises(ConvergenceError) as err:
        solve_dirichlet(polar32, crossing, SolveOptions(max_sweeps=1))
    assert err.value.field is not None
    assert len(err.value.energies) == 2


def test_real_pair_solution_undercuts_the_pair(polar32):
    # for scalar sheets the minimizer orders them, so the solve beats +-Re z^(1/2)
    pair = QField.from_function(polar32, branch_pair(1))
    res = solve_dirichlet(polar32, branch_pair(1))
    assert res.energy < 0.5 * edge_energy(pair)


def test_boundary_field_on_other_grid(disc16):
    other = QField.from_function(CartesianGrid(2, "ball", 1 / 8), harmonic(1))
    with pytest.raises(DomainError):
        solve_dirichlet(disc16, other)


def test_radial_start_matches_linear_data_on_rays():
    g = PolarGrid(uniform_radii(8), 16)
    vals = linear([[1.0, 0.0]])(g.coords)
    out = radial_start(g, vals, g.boundary)
    assert np.allclose(out, vals, atol=1e-12)


@given(st.integers(0, 2**31))
@settings(max_examples=15, deadline=None)
def test_relaxation_never_increases_energy(seed):
    rng = np.random.default_rng(seed)
    g = CartesianGrid(2, "cube", 1 / 4)
    V0 = rng.standard_normal((g.size, 2, 2))
    V, energies, _, _ = relax_free(g, V0, ~g.boundary, SolveOptions())
    assert all(y <= x * (1 + 1e-12) + 1e-15 for x, y in zip(energies, energies[1:]))
    assert np.array_equal(V[g.boundary], V0[g.boundary])


def test_almost_min_passes_for_solution_and_fails_for_bump(disc16):
    res = solve_dirichlet(disc16, harmonic(1))
    balls = [Ball((0.0, 0.0), 0.5), Ball((0.25, 0.0), 0.25)]
    ok = verify_almost_min(res.field, None, balls)
    assert ok["pass"] and ok["worst_ratio"] <= 1 + 1e-9
    x = disc16.coords
    bump = np.maximum(0.0, 0.25 - np.sum(x**2, axis=1))[:, None, None]
    bad = res.field.with_values(res.field.values + bump)
    out = verify_almost_min(bad, None, balls[:1])
    assert not out["pass"] and out["worst_ratio"] > 1.1
    loose = verify_almost_min(bad, lambda r: 10.0, balls[:1])
    assert loose["pass"]


def test_almost_min_ball_checks(disc16):
    f = QField.from_function(disc16, harmonic(1))
    with pytest.raises(DomainError):
        verify_almost_min(f, None, [((0.8, 0.0), 0.5)])
    with pytest.raises(DomainError):
        verify_almost_min(f, None, [((0.03, 0.03), 1e-3)])


def test_decay_slope_of_linear_map():
    g = CartesianGrid(2, "ball", 1 / 64)
    f = QField.from_function(g, harmonic(1))
    rep = decay_profile(f, (0.0, 0.0), [0.125, 0.25, 0.5, 0.75])
    assert rep.slope == pytest.approx(2.0, rel=0.02)
    assert rep.eta_hat == pytest.approx(2.0, abs=0.04)
    assert not rep.degenerate
    json.dumps(rep.to_json())


def test_decay_profile_errors_and_degenerate(disc16):
    f = QField.from_function(disc16, constant([1.0]))
    with pytest.raises(ParameterError):
        decay_profile(f, (0.0, 0.0), [0.25, 0.5])
    with pytest.raises(ParameterError):
        decay_profile(f, (0.0, 0.0), [0.25, 0.25, 0.5])
    rep = decay_profile(f, (0.0, 0.0), [0.25, 0.5, 0.75])
    assert rep.degenerate and math.isnan(rep.slope)


def test_tangential_energy_of_linear_map():
    pg = PolarGrid(uniform_radii(64), 256)
    f = QField.from_function(pg, harmonic(1))
    # |d_tau x1|^2 = sin^2 t on the circle of radius r integrates to pi r
    assert tangential_sphere_energy(f, (0.0, 0.0), 0.5) == pytest.approx(math.pi * 0.5, rel=1e-3)
    g = CartesianGrid(2, "ball", 1 / 64)
    h = QField.from_function(g, harmonic(1))
    assert tangential_sphere_energy(h, (0.0, 0.0), 0.5) == pytest.approx(math.pi * 0.5, rel=0.05)
    with pytest.raises(DomainError):
        tangential_sphere_energy(f, (0.1, 0.0), 0.5)


def test_radial_comparison_in_three_dimensions():
    g = CartesianGrid(3, "ball", 1 / 8)
    f = QField.from_function(g, linear([[1.0, 0.0, 0.0]]))
    cert = find_gap(3, 2, 0.0, C=1.0)
    out = radial_comparison_check(f, cert, [((0.0, 0.0, 0.0), 0.5)])
    row = out["balls"][0]
    # E(B_r) = 4 pi r^3 / 3 and r E(dB_r) = 8 pi r^3 / 3 give the ratio 1/2
    assert row["ratio"] == pytest.approx(0.5, rel=0.05)
    assert row["coefficient"] == pytest.approx(1 - cert.eta0)
    assert out["pass"]
    with pytest.raises(ParameterError):
        radial_comparison_check(QField.from_function(CartesianGrid(2, "ball", 1 / 8), harmonic(1)),
                                cert, [((0.0, 0.0), 0.5)])


def test_holder_constants():
    cert = find_gap(3, 2, 0.0, C=1.0)
    out = holder_constants(3, 2, cert.eta0)
    assert out["p_star"] == 4
    assert out["M"] == pytest.approx(cert.eta0**-4, rel=1e-12)
    assert holder_constants(4, 2, 0.1)["p_star"] == pytest.approx(6.0)
    with pytest.raises(ParameterError):
        holder_constants(3, 2, 0.1, q=1.5)
    with pytest.raises(ParameterError):
        holder_constants(3, 2, 0.0)


@given(st.integers(0, 2**31), st.sampled_from([1.5, 2.0, 3.0]))
@settings(max_examples=25, deadline=None)
def test_exceptional_set_chebyshev(seed, p):
    rng = np.random.default_rng(seed)
    K = 64
    base = rng.standard_normal((3, 2))
    vals = base + 0.3 * rng.standard_normal((K, 3, 2))
    w = np.full(K, 2 * math.pi / K)
    out = exceptional_set(vals, w, p)
    assert out["applicable"]
    assert out["measure"] <= out["chebyshev_bound"] * (1 + 1e-12)
    assert out["retraction_defect"] >= 0


def test_exceptional_set_repeated_mean():
    vals = np.zeros((8, 2, 1))
    out = exceptional_set(vals, np.ones(8))
    assert not out["applicable"]
