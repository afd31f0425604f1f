import math

import numpy as np
import pytest

from laughlin_plasma.ground_state import (
    MinimizeSettings, PreconditionError, density_counts, density_slack, exclusion_check,
    grow_cluster, min_pairwise_distance, minimize, verify_boundary_descent,
)
from laughlin_plasma.states import (
    Configuration, PlasmaParams, QuasiHoleProduct, scaled_hamiltonian,
)
from laughlin_plasma.tf_model import UNIT_DISK_RADIUS, NucleiSet, auto_grid, single_nucleus_phi, tf_solve

from oracles import nelder_mead_energy

HOLE = QuasiHoleProduct((((0.0, 0.0), 1),))


@pytest.fixture(scope="module")
def n10():
    return minimize(PlasmaParams(10, 2), None, MinimizeSettings(restarts=8, seed=2))


@pytest.fixture(scope="module")
def n20():
    return minimize(PlasmaParams(20, 2), None, MinimizeSettings(restarts=8, seed=1))


def test_single_point():
    r = minimize(PlasmaParams(1), None, MinimizeSettings(restarts=2))
    assert r.converged
    np.testing.assert_allclose(r.points, [[0.0, 0.0]], atol=1e-9)
    assert r.energy == pytest.approx(0.0, abs=1e-16)


def test_two_points():
    r = minimize(PlasmaParams(2), None, MinimizeSettings(restarts=3, seed=4))
    d = float(np.hypot(*(r.points[0] - r.points[1])))
    assert d == pytest.approx(math.sqrt(2 / math.pi), rel=1e-8)
    np.testing.assert_allclose(r.points.sum(axis=0), 0.0, atol=1e-8)
    assert r.energy == pytest.approx(0.5 - 0.5 * math.log(2 / math.pi), rel=1e-12)
    assert min_pairwise_distance(r) >= 1 / math.sqrt(math.pi)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_matches_nelder_mead_oracle(n):
    r = minimize(PlasmaParams(n), None, MinimizeSettings(restarts=8, seed=0))
    oracle = nelder_mead_energy(n)
    assert r.converged
    assert abs(r.energy - oracle) <= 1e-6 * abs(oracle)


def test_energy_never_above_initial(n20):
    for t in n20.traces:
        assert t.energy <= t.initial_energy
    assert n20.energy == min(t.energy for t in n20.traces if t.converged)


def test_center_of_mass_at_origin(n20):
    assert n20.converged
    assert np.all(np.abs(n20.points.mean(axis=0)) <= 1e-6)


def test_rotation_invariance(n20):
    th = 0.7
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    rotated = scaled_hamiltonian(Configuration(n20.points @ R.T, n20.configuration.params))
    assert abs(rotated - n20.energy) <= 1e-9 * abs(n20.energy)


def test_not_converged_is_flagged():
    r = minimize(PlasmaParams(12), None, MinimizeSettings(restarts=2, max_iterations=3))
    assert not r.converged
    assert r.max_gradient > 1e-8


def test_hole_minimizer_keeps_exclusion():
    r = minimize(PlasmaParams(20), HOLE, MinimizeSettings(restarts=8, seed=3))
    assert r.converged
    assert min_pairwise_distance(r) >= 0.98 / math.sqrt(math.pi)


def test_result_serializes(n10):
    d = n10.to_dict()
    assert d["converged"] and len(d["points"]) == 10 and len(d["restarts"]) == 8


# -- geometry helpers --------------------------------------------------------------

def test_min_distance_of_coincident_points_is_zero():
    assert min_pairwise_distance(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])) == 0.0


def test_density_counts_single_point():
    for R, n, ratio in density_counts(np.array([[0.0, 0.0]]), [0.5, 1.0, 3.0]):
        assert n == 1 and ratio == pytest.approx(1 / (math.pi * R * R))


def test_density_counts_square_lattice_tends_to_one():
    g = np.arange(-60, 61, dtype=float)
    X, Y = np.meshgrid(g, g)
    pts = np.stack([X.ravel() + 0.5, Y.ravel() + 0.5], axis=1)
    ratios = [r for _, _, r in density_counts(pts, [5.0, 20.0, 50.0])]
    errs = [abs(r - 1) for r in ratios]
    assert errs[-1] < 0.01 and errs[-1] < errs[0]


def test_density_counts_within_slack(n20):
    p = n20.configuration.params
    for R, n, ratio in density_counts(n20, [1.0, 2.0, 0.5 * p.droplet_radius_ground]):
        assert ratio <= 1 + density_slack(R)


def test_grow_cluster_nearest_neighbours():
    x = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [0.0, 0.3]])
    assert grow_cluster(x, 0, 3) == [0, 1, 3]


# -- exclusion -----------------------------------------------------------------------

def test_exclusion_pair_optimum_passes():
    d = math.sqrt(2 / math.pi)
    rep = exclusion_check(np.array([[-d / 2, 0.0], [d / 2, 0.0]]), k_max=1)
    assert rep.passed
    assert rep.min_margin[1] == pytest.approx(d - UNIT_DISK_RADIUS)


def test_exclusion_synthetic_violation():
    rep = exclusion_check(np.array([[0.0, 0.0], [0.5, 0.0]]), k_max=1)
    assert not rep.passed
    (v,) = rep.violations
    assert v["margin"] == pytest.approx(0.5 - 1 / math.sqrt(math.pi))


def test_exclusion_k2_on_minimizer(n20):
    rep = exclusion_check(n20, k_max=2)
    assert rep.passed
    assert any(c["K"] == 2 for c in rep.checks)
    assert rep.to_dict()["n_violations"] == 0


def test_exclusion_k2_detects_point_inside_pair_region():
    # third point in the middle of the screening region of a tight pair
    x = np.array([[-0.3, 0.0], [0.3, 0.0], [0.0, 0.35], [3.0, 3.0]])
    rep = exclusion_check(x, k_max=2, slack=0.0)
    assert not rep.passed


# -- boundary descent ------------------------------------------------------------------

def test_single_nucleus_probe_phi_closed_form():
    p = PlasmaParams(2)
    config = Configuration([[0.0, 0.0], [1.5, 0.0]], p)
    rep = verify_boundary_descent(config, [0], (0.2, 0.0), 1)
    assert single_nucleus_phi(0.2) == pytest.approx(0.5999048, abs=1e-7)
    assert rep.phi_probe == pytest.approx(single_nucleus_phi(0.2), abs=2e-3)
    assert rep.phi_probe > 0
    assert rep.n_boundary >= 64
    assert rep.passed


def test_phi_vanishes_on_boundary():
    nuclei = NucleiSet([[0.0, 0.0]])
    sol = tf_solve(nuclei, auto_grid(nuclei))
    b = sol.region.boundary_points(64)
    assert np.max(np.abs(sol.phi_at(b))) <= sol.eps_grid


def test_probe_outside_region_is_rejected():
    config = Configuration([[0.0, 0.0], [1.5, 0.0]], PlasmaParams(2))
    with pytest.raises(PreconditionError):
        verify_boundary_descent(config, [0], (0.9, 0.0), 1)
    with pytest.raises(PreconditionError):
        verify_boundary_descent(config, [0], (0.1, 0.0), 0)


def test_descent_midway_between_nearest_pair(n10):
    x = n10.points
    d = np.hypot(x[:, None, 0] - x[None, :, 0], x[:, None, 1] - x[None, :, 1])
    np.fill_diagonal(d, np.inf)
    i, j = np.unravel_index(np.argmin(d), d.shape)
    probe = 0.5 * (x[i] + x[j])
    rep = verify_boundary_descent(n10.configuration, [int(j)], probe, int(i))
    assert rep.descent_margin > 0 and rep.phi_probe > 0
    # R = G - Phi attains its minimum on the boundary
    assert rep.r_boundary_min <= rep.r_probe + rep.phi_boundary_max
