import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from laughlin_plasma.states import (
    Configuration, Identity, PlasmaParams, QuadraticExponential, QuasiHoleProduct,
    SingularConfigurationError, gibbs_weight_parts, ground_to_sampling, log_gibbs_weight,
    prefactor_from_dict, prefactor_log_modulus, scaled_energy_change, scaled_gradient,
    scaled_hamiltonian,
)


def cfg(points, ell=2):
    pts = np.asarray(points, dtype=float)
    return Configuration(pts, PlasmaParams(len(pts), ell))


def naive_log_F_squared(pf, physical):
    """2 log|F| by multiplying complex factors directly, no logs until the end."""
    w = [complex(x, y) for x, y in physical]
    if isinstance(pf, QuasiHoleProduct):
        val = 1.0 + 0j
        for wi in w:
            for (ax, ay), m in pf.holes:
                val *= (wi - complex(ax, ay)) ** m
        return math.log(abs(val) ** 2)
    if isinstance(pf, QuadraticExponential):
        import cmath
        val = cmath.exp(pf.coefficient * sum(wi * wi for wi in w))
        return math.log(abs(val) ** 2)
    return 0.0


# -- PlasmaParams ------------------------------------------------------------------

@given(st.integers(1, 10_000), st.integers(1, 9))
def test_temperature_times_n_is_exactly_one(n, ell):
    p = PlasmaParams(n, ell)
    assert p.temperature * n == 1
    assert p.droplet_radius_scaled == pytest.approx(math.sqrt(ell))


@pytest.mark.parametrize("n, ell", [(0, 2), (3, 0), (2.5, 2), (-1, 1)])
def test_params_reject_invalid(n, ell):
    with pytest.raises(ValueError):
        PlasmaParams(n, ell)


def test_statistics_is_metadata_only():
    assert PlasmaParams(3, 3).statistics == "fermions"
    assert PlasmaParams(3, 2).statistics == "bosons"


# -- log Gibbs weight ----------------------------------------------------------------

def test_two_particles_unit_distance():
    assert log_gibbs_weight(cfg([[0, 0], [1, 0]])) == pytest.approx(-2.0, abs=1e-14)


def test_two_particles_distance_two():
    assert log_gibbs_weight(cfg([[0, 0], [2, 0]])) == pytest.approx(4 * math.log(2) - 8, abs=1e-12)
    assert log_gibbs_weight(cfg([[0, 0], [2, 0]])) == pytest.approx(-5.2274, abs=1e-4)


def test_hole_prefactor_against_naive_product():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(3, 2))
    c = cfg(z)
    pf = QuasiHoleProduct((((0.0, 0.0), 1),))
    base = log_gibbs_weight(c)
    with_hole = log_gibbs_weight(c, pf)
    assert with_hole - base == pytest.approx(naive_log_F_squared(pf, math.sqrt(3) * z), abs=1e-12)
    assert with_hole - base == pytest.approx(2 * np.sum(np.log(np.hypot(*(math.sqrt(3) * z).T))))


@pytest.mark.parametrize("pf", [
    QuasiHoleProduct((((0.3, -0.2), 2), ((1.0, 1.0), 1))),
    QuadraticExponential(0.1 + 0.05j),
])
def test_prefactor_part_against_naive_product(pf):
    rng = np.random.default_rng(2)
    z = rng.normal(size=(4, 2))
    parts = gibbs_weight_parts(cfg(z), pf)
    assert parts.prefactor == pytest.approx(naive_log_F_squared(pf, 2.0 * z), abs=1e-10)
    assert parts.total == pytest.approx(parts.confinement + parts.interaction + parts.prefactor)


def test_coincident_points_raise_typed_error():
    with pytest.raises(SingularConfigurationError):
        log_gibbs_weight(cfg([[0.5, 0.5], [0.5, 0.5]]))


def test_permutation_invariance_exact():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(12, 2))
    ref = log_gibbs_weight(cfg(z))
    for _ in range(5):
        perm = rng.permutation(12)
        assert log_gibbs_weight(cfg(z[perm])) == pytest.approx(ref, rel=1e-14)


@given(st.floats(0, 2 * math.pi))
@settings(max_examples=30, deadline=None)
def test_rotation_invariance_identity(theta):
    z = np.random.default_rng(4).normal(size=(8, 2))
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    assert log_gibbs_weight(cfg(z @ R.T)) == pytest.approx(log_gibbs_weight(cfg(z)), rel=1e-12)


# -- prefactors ---------------------------------------------------------------------------

def test_identity_modulus_is_zero():
    assert prefactor_log_modulus(Identity(), [[1, 2], [3, 4]]) == 0.0


def test_triple_hole_at_e():
    pf = QuasiHoleProduct((((0.0, 0.0), 3),))
    assert prefactor_log_modulus(pf, [[math.e, 0.0]]) == pytest.approx(3.0, abs=1e-14)


def test_quadratic_cancellation():
    assert prefactor_log_modulus(QuadraticExponential(0.1), [[1, 0], [0, 1]]) == pytest.approx(0.0, abs=1e-15)


def test_point_on_hole_is_singular():
    with pytest.raises(SingularConfigurationError):
        prefactor_log_modulus(QuasiHoleProduct((((1.0, 1.0), 1),)), [[1.0, 1.0]])


def test_quadratic_cap():
    QuadraticExponential(0.4)
    with pytest.raises(ValueError):
        QuadraticExponential(0.41)


@pytest.mark.parametrize("pf", [Identity(), QuasiHoleProduct((((1.0, -2.0), 2),)),
                                QuadraticExponential(0.2 - 0.1j)])
def test_prefactor_dict_roundtrip(pf):
    assert prefactor_from_dict(pf.to_dict()) == pf


def test_hole_log_modulus_superharmonic():
    pf = QuasiHoleProduct((((0.0, 0.0), 2), ((1.5, 0.5), 1)))
    rng = np.random.default_rng(5)
    near = pf.locations[0] + 10 ** rng.uniform(-3, -1, size=(50, 1)) * rng.normal(size=(50, 2))
    pts = np.concatenate([rng.uniform(-3, 3, size=(200, 2)), near])

    def f(q):
        return prefactor_log_modulus(pf, [q])

    checked = 0
    for p in pts:
        dist = np.min(np.hypot(*(pf.locations - p).T))
        if dist < 1e-3:
            continue
        # step proportional to the distance keeps truncation and round-off
        # errors scale-free; the test is on the dimensionless Laplacian
        h = 1e-4 * dist
        lap = (f(p + [h, 0]) + f(p - [h, 0]) + f(p + [0, h]) + f(p - [0, h]) - 4 * f(p)) / h ** 2
        assert lap * dist ** 2 <= 1e-6
        checked += 1
    assert checked > 200


# -- scaled Hamiltonian --------------------------------------------------------------------

def test_single_point_at_origin():
    assert scaled_hamiltonian(cfg([[0, 0]])) == 0.0
    np.testing.assert_array_equal(scaled_gradient(cfg([[0, 0]])), [[0.0, 0.0]])


def test_pair_unit_distance():
    assert scaled_hamiltonian(cfg([[0, 0], [1, 0]])) == pytest.approx(math.pi / 2)
    g = scaled_gradient(cfg([[0, 0], [1, 0]]))
    np.testing.assert_allclose(g, [[1.0, 0.0], [math.pi - 1.0, 0.0]], atol=1e-14)


def test_pair_optimum_matches_one_dimensional_calculus():
    # minimize (pi/4) d^2 - log d independently on a fine bracket
    from scipy.optimize import minimize_scalar
    res = minimize_scalar(lambda d: math.pi / 4 * d * d - math.log(d), bounds=(0.1, 3),
                          method="bounded", options={"xatol": 1e-12})
    d_star = math.sqrt(2 / math.pi)
    assert res.x == pytest.approx(d_star, rel=1e-6)
    e = scaled_hamiltonian(cfg([[-d_star / 2, 0], [d_star / 2, 0]]))
    assert e == pytest.approx(0.5 - 0.5 * math.log(2 / math.pi), abs=1e-14)


def test_equilateral_triangle_gradient_norms_equal():
    t = 2 * math.pi * np.arange(3) / 3
    g = scaled_gradient(cfg(np.stack([np.cos(t), np.sin(t)], axis=1)))
    norms = np.hypot(g[:, 0], g[:, 1])
    assert np.ptp(norms) < 1e-12


@pytest.mark.parametrize("w_ext", [None, QuasiHoleProduct((((0.3, 0.1), 1), ((-1.0, 0.0), 2))),
                                   QuadraticExponential(0.15 + 0.05j)])
def test_gradient_matches_finite_differences(w_ext):
    rng = np.random.default_rng(6)
    for _ in range(5):
        x = rng.normal(scale=2.0, size=(7, 2))
        c = cfg(x)
        g = scaled_gradient(c, w_ext)
        fd = np.zeros_like(x)
        h = 1e-6
        for i in range(7):
            for k in range(2):
                e = np.zeros_like(x)
                e[i, k] = h
                fd[i, k] = (scaled_hamiltonian(cfg(x + e), w_ext)
                            - scaled_hamiltonian(cfg(x - e), w_ext)) / (2 * h)
        assert np.max(np.abs(g - fd)) <= 1e-5 * max(1.0, np.max(np.abs(g)))


def test_correspondence_constant_is_configuration_independent():
    # N H_N(Z) - 2 ell H(X) with z = sqrt(pi ell / N) x; -log weight = N H_N
    p = PlasmaParams(9, 2)
    rng = np.random.default_rng(7)
    diffs = []
    for _ in range(10):
        x = rng.normal(scale=1.5, size=(9, 2))
        z = ground_to_sampling(x, p)
        diffs.append(-log_gibbs_weight(Configuration(z, p)) - 2 * p.ell * scaled_hamiltonian(Configuration(x, p)))
    diffs = np.array(diffs)
    assert np.ptp(diffs) <= 1e-9 * np.max(np.abs(diffs))


def test_correspondence_with_prefactor():
    p = PlasmaParams(6, 3)
    pf = QuasiHoleProduct((((0.5, 0.2), 1),))
    rng = np.random.default_rng(8)
    diffs = []
    for _ in range(10):
        x = rng.normal(scale=1.0, size=(6, 2))
        z = ground_to_sampling(x, p)
        diffs.append(-log_gibbs_weight(Configuration(z, p), pf)
                     - 2 * p.ell * scaled_hamiltonian(Configuration(x, p), pf))
    assert np.ptp(diffs) <= 1e-9 * np.max(np.abs(diffs))


@pytest.mark.parametrize("w_ext", [None, QuasiHoleProduct((((0.0, 0.0), 1),)), QuadraticExponential(0.1)])
def test_energy_change_matches_difference(w_ext):
    rng = np.random.default_rng(9)
    x = rng.normal(size=(10, 2))
    step = 1e-2 * rng.normal(size=(10, 2))
    ref = scaled_hamiltonian(cfg(x + step), w_ext) - scaled_hamiltonian(cfg(x), w_ext)
    assert scaled_energy_change(x, step, w_ext, 2) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_energy_change_collision_is_infinite():
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    step = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert scaled_energy_change(x, step, None, 2) == math.inf


def test_configuration_validation():
    p = PlasmaParams(2)
    with pytest.raises(ValueError):
        Configuration(np.zeros((3, 2)), p)
    with pytest.raises(ValueError):
        Configuration([[0, 0], [np.nan, 0]], p)
    c = Configuration([[0, 0], [1, 0]], p)
    with pytest.raises(ValueError):
        c.points[0, 0] = 5.0
