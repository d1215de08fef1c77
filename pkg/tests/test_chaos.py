import itertools

import numpy as np
import pytest

from akpz import chaos
from akpz.lattice import TestFunction, build_lattice
from akpz.observables import wick_variance_nonlinearity


def test_L0_eigenvalues():
    b1 = chaos.chaos_basis(2, 1)
    lat = build_lattice(2)
    assert b1.lam0[b1.index[(lat.slot((1, 0)),)]] == 0.5
    b2 = chaos.chaos_basis(2, 2)
    key = tuple(sorted((lat.slot((1, 0)), lat.slot((1, 1)))))
    assert b2.lam0[b2.index[key]] == 1.5
    for n in (1, 2, 3):
        assert np.all(chaos.chaos_basis(2, n).lam0 > 0)


def test_fock_weights_count_orderings():
    b = chaos.chaos_basis(1, 3)
    for e, w in zip(b.elements, b.weights):
        orderings = len(set(itertools.permutations(e)))
        assert w == 6 * orderings


def test_lambda_zero_operators_vanish():
    b, bu = chaos.chaos_basis(2, 2), chaos.chaos_basis(2, 3)
    assert chaos.build_Aplus(b, bu, 0.0).matrix.count_nonzero() == 0
    assert chaos.build_Aminus(bu, b, 0.0).matrix.count_nonzero() == 0


@pytest.mark.parametrize("n_cut,order", [(1, 1), (1, 3), (2, 1), (2, 2), (2, 3), (2, 4)])
def test_adjointness(n_cut, order):
    rng = np.random.default_rng(order)
    b, bu = chaos.chaos_basis(n_cut, order), chaos.chaos_basis(n_cut, order + 1)
    Ap, Am = chaos.build_Aplus(b, bu, 0.7), chaos.build_Aminus(bu, b, 0.7)
    for _ in range(50):
        f = rng.standard_normal(len(b)) + 1j * rng.standard_normal(len(b))
        g = rng.standard_normal(len(bu)) + 1j * rng.standard_normal(len(bu))
        lhs = chaos.fock_inner(bu, Ap @ f, g)
        rhs = -chaos.fock_inner(b, f, Am @ g)
        scale = np.sqrt(abs(chaos.fock_inner(b, f, f) * chaos.fock_inner(bu, g, g)))
        assert abs(lhs - rhs) <= 1e-10 * scale


def test_aplus_n1_matches_enumeration():
    # at N=1 no two unit modes add up to a unit mode, so nothing is allowed
    lat = build_lattice(1)
    allowed = [(a, b) for a, b in itertools.product(lat.modes, repeat=2)
               if 0 < np.sum((a + b) ** 2) <= 1]
    assert allowed == []
    A = chaos.build_Aplus(chaos.chaos_basis(1, 1), chaos.chaos_basis(1, 2), 1.0)
    assert A.matrix.count_nonzero() == 0


@pytest.mark.parametrize("order", [3, 4, 5])
def test_triple_contraction_vanishes(order):
    assert np.max(np.abs(chaos.triple_contraction(chaos.chaos_basis(2, order), 1.0))) < 1e-13


def test_n_phi_e0_n1():
    lat = build_lattice(1)
    b2 = chaos.chaos_basis(1, 2)
    nv = chaos.n_phi_vector(TestFunction.e0(lat), 0.5, b2)
    f = nv.parts[2]
    got = {}
    for e, v in zip(b2.elements, f):
        ks = [tuple(lat.modes[i]) for i in e]
        if abs(v) > 0:
            got[tuple(sorted(ks))] = v
    assert set(got) == {((-1, 0), (1, 0)), ((0, -1), (0, 1))}
    assert got[((-1, 0), (1, 0))] == pytest.approx(0.5 / (2 * np.pi))
    assert got[((0, -1), (0, 1))] == pytest.approx(-0.5 / (2 * np.pi))
    assert np.all(chaos.n_phi_vector(TestFunction.e0(lat), 0.0, b2).parts[2] == 0)


@pytest.mark.parametrize("n", [1, 2])
def test_n_phi_norm_is_wick_variance(n):
    lat = build_lattice(n)
    phi = TestFunction.from_modes("p", lat, {(1, 0): 0.4, (0, 1): 0.2j}, zero=0.7)
    nv = chaos.n_phi_vector(phi, 1.3, chaos.chaos_basis(n, 2))
    w = wick_variance_nonlinearity(phi, n, 1.3)
    assert np.real(nv.inner(nv)) == pytest.approx(w, rel=1e-10)


def test_n1_value_frozen():
    lat = build_lattice(1)
    nv = chaos.n_phi_vector(TestFunction.e0(lat), 1.0, chaos.chaos_basis(1, 2))
    _, v = chaos.solve_truncated(1.0, 3, nv, 1.0)
    assert v == pytest.approx(1 / np.pi ** 2, rel=1e-14)
    assert v == pytest.approx(0.10132118364233779, rel=1e-14)


@pytest.mark.parametrize("n_cut", [1, 2])
def test_solve_matches_dense(n_cut):
    lat = build_lattice(n_cut)
    nv = chaos.n_phi_vector(TestFunction.e0(lat), 1.0, chaos.chaos_basis(n_cut, 2))
    hr = chaos.hierarchy(n_cut, 1.0)
    M, off = hr.dense_matrix(1.0, 3)
    rhs = np.zeros(off[-1], complex)
    rhs[off[1]:off[2]] = nv.parts[2]
    h = np.linalg.solve(M, rhs)
    dense = chaos.fock_inner(chaos.chaos_basis(n_cut, 2), nv.parts[2], h[off[1]:off[2]])
    _, v = chaos.solve_truncated(1.0, 3, nv, 1.0)
    assert v == pytest.approx(np.real(dense), rel=1e-9)


def test_small_lambda_diagonal_closed_form():
    lat = build_lattice(2)
    b2 = chaos.chaos_basis(2, 2)
    lam, mu = 1e-4, 0.7
    n1 = chaos.n_phi_vector(TestFunction.e0(lat), 1.0, b2).parts[2]
    diag = np.sum(b2.weights * np.abs(n1) ** 2 / (mu + b2.lam0))
    nv = chaos.n_phi_vector(TestFunction.e0(lat), lam, b2)
    _, v = chaos.solve_truncated(mu, 4, nv, lam)
    assert v / lam ** 2 == pytest.approx(diag, rel=1e-6)


def test_sandwich_n1_ordering():
    lat = build_lattice(1)
    nv = chaos.n_phi_vector(TestFunction.e0(lat), 0.5, chaos.chaos_basis(1, 2))
    lo, hi, vals = chaos.sandwich(1.0, [2, 3, 4, 5, 6], nv, 0.5)
    assert lo <= hi + 1e-12


def test_sandwich_n2_interleaves_and_tightens():
    lat = build_lattice(2)
    nv = chaos.n_phi_vector(TestFunction.e0(lat), 1.0, chaos.chaos_basis(2, 2))
    _, _, v = chaos.sandwich(1.0, [2, 3, 4, 5], nv, 1.0)
    assert v[3] <= v[5] <= v[4] <= v[2]
    assert (v[4] - v[5]) < 0.05 * (v[2] - v[3])
    # frozen from this implementation (regression, cross-checked by MC in the acceptance suite)
    assert v[2] == pytest.approx(0.14184965709927289, rel=1e-10)
    assert v[5] == pytest.approx(0.13340598944339127, rel=1e-10)


def test_schur_positivity():
    for n_cut, mu in ((1, 1.0), (2, 0.5), (2, 0.1)):
        rep = chaos.schur_positivity_check(mu, 4, n_cut, 1.0)
        assert all(r["ok"] for r in rep.values())


def test_schur_zero_at_lambda_zero():
    hr = chaos.hierarchy(2, 0.0)
    assert np.max(np.abs(hr.H_on_level(1.0, 3, 2))) == 0


def test_theorem_probe_reports():
    for mu in (0.1, 1.0):
        for k in (0, 1):
            p = chaos.theorem_bound_probe(mu, k, 2, 1.0, n_test_vectors=20)
            assert "upper" in p and "lower" in p
            if k == 1:
                assert p["upper"]["finite"] and p["upper"]["exact_max_ratio"] > 0
    p0 = chaos.theorem_bound_probe(1.0, 1, 2, 0.0, n_test_vectors=10)
    assert p0["upper"]["sampled_max_ratio"] == 0.0
