import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from akpz.lattice import (SpectralField, TestFunction, build_lattice, height_from_velocity, kernel,
                          project_cutoff, restrict, sample_white_noise, white_noise_coeffs)


def brute_count(n):
    return sum(1 for a, b in itertools.product(range(-n, n + 1), repeat=2) if 0 < a * a + b * b <= n * n)


def test_unit_lattice_modes():
    lat = build_lattice(1)
    assert {tuple(k) for k in lat.modes} == {(1, 0), (-1, 0), (0, 1), (0, -1)}


@pytest.mark.parametrize("n", [1, 2, 3, 5, 16])
def test_mode_count_matches_brute_force(n):
    assert len(build_lattice(n)) == brute_count(n)


def test_n16_count_frozen():
    # Gauss circle count for radius 16 is 797 including the origin
    assert len(build_lattice(16)) == 796


def test_zero_cutoff_rejected():
    with pytest.raises(ValueError):
        build_lattice(0)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_lattice_invariants(n):
    lat = build_lattice(n)
    assert not np.any(np.all(lat.modes == 0, axis=1))
    assert np.array_equal(lat.modes[lat.conj_index], -lat.modes)
    assert np.array_equal(lat.conj_index[lat.conj_index], np.arange(len(lat)))
    assert np.all(lat.norms2 <= n * n)
    assert len({tuple(k) for k in lat.modes}) == len(lat)
    # lexicographic order
    assert [tuple(k) for k in lat.modes] == sorted(tuple(k) for k in lat.modes)


def test_kernel_examples():
    assert kernel((1, 0), (0, 1), 2) == 0.0
    assert kernel((1, 0), (1, 0), 2) == pytest.approx(-1 / (2 * np.pi), rel=1e-15)
    assert kernel((1, 0), (1, 0), 1) == 0.0


def test_kernel_zero_mode_rejected():
    with pytest.raises(ValueError):
        kernel((0, 0), (1, 0), 2)


vec = st.tuples(st.integers(-4, 4), st.integers(-4, 4)).filter(lambda v: v != (0, 0))


@given(vec, vec, st.integers(1, 6))
@settings(max_examples=300, deadline=None)
def test_kernel_properties(l, m, n):
    k = kernel(l, m, n)
    assert k == kernel(m, l, n)
    swap = kernel(l[::-1], m[::-1], n)
    assert swap == pytest.approx(-k, abs=1e-15)
    lm = (l[0] + m[0], l[1] + m[1])
    inside = max(l[0] ** 2 + l[1] ** 2, m[0] ** 2 + m[1] ** 2, lm[0] ** 2 + lm[1] ** 2) <= n * n
    if not inside:
        assert k == 0.0
    assert abs(k) <= 1 / (2 * np.pi) + 1e-15


def test_white_noise_moments():
    lat = build_lattice(2)
    rng = np.random.default_rng(11)
    eta = white_noise_coeffs(lat, rng, (100_000,))
    m2 = np.abs(eta) ** 2
    se = m2.std(axis=0) / np.sqrt(len(m2))
    assert np.all(np.abs(m2.mean(axis=0) - 1) < 3.5 * se)
    # E[eta_k eta_j] = 0 unless j = -k
    for s in range(len(lat)):
        j = (s + 3) % len(lat)
        if j == lat.conj_index[s]:
            continue
        prod = eta[:, s] * eta[:, j]
        assert abs(prod.mean()) < 4 * prod.std() / np.sqrt(len(prod))


def test_white_noise_reality_and_determinism():
    lat = build_lattice(3)
    a = sample_white_noise(lat, np.random.default_rng(5))
    b = sample_white_noise(lat, np.random.default_rng(5))
    assert a.is_real() and a.is_finite()
    assert np.array_equal(a.coeffs, b.coeffs)


def test_projection():
    lat = build_lattice(2)
    f = sample_white_noise(lat, np.random.default_rng(1))
    assert np.array_equal(project_cutoff(f, 2).coeffs, f.coeffs)
    p1 = project_cutoff(f, 1)
    assert np.count_nonzero(p1.coeffs) == 4
    assert np.array_equal(project_cutoff(p1, 1).coeffs, p1.coeffs)
    r = restrict(f, build_lattice(1))
    assert len(r.coeffs) == 4 and r.is_real()


def test_height_from_velocity():
    lat = build_lattice(2)
    h = height_from_velocity(SpectralField(lat, lat.norms.astype(complex), 0.0))
    assert np.allclose(h.coeffs, 1.0)
    assert np.all(height_from_velocity(SpectralField(lat, np.zeros(len(lat), complex), 0.0)).coeffs == 0)
    f = sample_white_noise(lat, np.random.default_rng(2))
    assert height_from_velocity(f).is_real()


def test_test_function_reality_enforced():
    lat = build_lattice(1)
    with pytest.raises(ValueError):
        TestFunction("bad", lat, np.array([1, 0, 0, 0], dtype=complex))
    p = TestFunction.from_modes("p", lat, {(1, 0): 0.5j}, zero=0.2)
    assert p.norm2() == pytest.approx(0.5 + 0.04)
