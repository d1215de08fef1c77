import numpy as np
import pytest

from akpz import chaos, observables as obs
from akpz.burgers import SimConfig, simulate
from akpz.harness import bump_hat
from akpz.lattice import TestFunction, build_lattice


@pytest.fixture(scope="module")
def ens_n2():
    cfg = SimConfig(cutoff_n=2, lam=1.0, dt=0.01, t_final=7.5, seed=21)
    return simulate(cfg, [TestFunction.e0(build_lattice(2))], n_traj=1500)


def test_batch_means_needs_enough_samples():
    with pytest.raises(ValueError):
        obs.batch_means(np.ones(10), 30)
    m, se = obs.batch_means(np.arange(60.0), 30)
    assert m == pytest.approx(29.5)


def test_wick_variance_e0_n1_closed_form():
    # four unit modes, each K_{l,-l}^2 = 1/(2 pi)^2, variance 2 lam^2 sum
    lat = build_lattice(1)
    assert obs.wick_variance_nonlinearity(TestFunction.e0(lat), 1, 1.0) == pytest.approx(2 / np.pi ** 2, rel=1e-14)
    assert obs.wick_variance_nonlinearity(TestFunction.e0(lat), 1, 0.0) == 0.0


@pytest.mark.parametrize("n", [1, 2])
def test_wick_variance_vs_gaussian_mc(n):
    lat = build_lattice(n)
    phi = TestFunction.from_modes("p", lat, {(1, 0): 0.6, (0, 1): 0.3j}, zero=0.5)
    x = obs.nonlinearity_samples(phi, 1.0, 400_000, np.random.default_rng(n))
    w = obs.wick_variance_nonlinearity(phi, n, 1.0)
    se = x.var() * np.sqrt(2 / len(x)) * 1.5  # generous: fourth moments of a chaos-2 variable
    assert abs(x.var() - w) < 4 * se


def test_small_time_B_matches_wick():
    lat = build_lattice(2)
    cfg = SimConfig(cutoff_n=2, lam=1.0, dt=0.0005, t_final=0.01, seed=3)
    tr = simulate(cfg, [TestFunction.e0(lat)], n_traj=3000)
    t = tr.times[-1]
    m, se = obs.batch_means(tr.b_series("e0")[:, -1] ** 2 / t ** 2)
    w = obs.wick_variance_nonlinearity(TestFunction.e0(lat), 2, 1.0)
    # O(t) drift of the autocovariance is ~1% here
    assert abs(m - w) < 3 * se + 0.02 * w


def test_lambda_zero_D_is_one():
    lat = build_lattice(2)
    tr = simulate(SimConfig(cutoff_n=2, lam=0.0, dt=0.01, t_final=2.0), [TestFunction.e0(lat)], n_traj=30)
    d = obs.green_kubo_D(tr, [0.0, 1.0, 8.0])
    assert np.all(d.mean == 1.0)
    assert np.all(obs.direct_green_kubo(tr, [1.0, 8.0]).mean == 1.0)


def test_D_tends_to_one_at_small_t(ens_n2):
    d = obs.green_kubo_D(ens_n2, [0.01, 0.04])
    assert abs(d.mean[0] - 1) < 0.01 and d.mean[0] < d.mean[1] + 3 * d.stderr[1]


def test_green_kubo_two_estimators_agree(ens_n2):
    a = obs.green_kubo_D(ens_n2, [1.0])
    b = obs.direct_green_kubo(ens_n2, [1.0])
    assert abs(a.mean[0] - b.mean[0]) < 3 * np.hypot(a.stderr[0], b.stderr[0])


def test_autocovariance_stationary(ens_n2):
    a = obs.autocovariance(ens_n2, origin=0)
    b = obs.autocovariance(ens_n2, origin=300)
    lags = slice(0, 100, 10)
    z = np.abs(a.mean[lags] - b.mean[lags]) / np.hypot(a.stderr[lags], b.stderr[lags])
    assert np.all(z < 3.5)


def test_laplace_weighted_exact_cases():
    t = np.linspace(0, 40, 40001)
    assert obs.laplace_weighted((t, np.ones_like(t)), 1.0).value == pytest.approx(1.0, rel=1e-8)
    for mu in (0.5, 1.0, 3.0):
        assert obs.laplace_weighted((t, t), mu).value == pytest.approx(1 / mu, rel=1e-6)


def test_laplace_short_horizon_raises():
    t = np.linspace(0, 1, 101)
    with pytest.raises(ValueError, match="too short"):
        obs.laplace_weighted((t, t), 0.5)


def test_laplace_identity(ens_n2):
    for mu in (0.5, 1.0):
        d = obs.laplace_D(ens_n2, mu, "direct")
        b = obs.laplace_B_variance(ens_n2, "e0", 4 * mu)
        err = np.hypot(d.stderr, 4 * b.stderr) + d.tail + 4 * b.tail
        assert abs(d.value - 1 / mu - 4 * b.value) < 3 * err


def test_laplace_B_large_mu_asymptote():
    # mu^2 B(mu) -> 2 Var(lam N[eta][phi]) as mu -> infinity (E B(t)^2 ~ t^2 Var)
    n, mu = 2, 50 * 4
    lat = build_lattice(n)
    phi = TestFunction.e0(lat)
    nv = chaos.n_phi_vector(phi, 1.0, chaos.chaos_basis(n, 2))
    _, v = chaos.solve_truncated(mu, 4, nv, 1.0)
    w = obs.wick_variance_nonlinearity(phi, n, 1.0)
    assert mu * v == pytest.approx(w, rel=0.05)  # mu^2 (2/mu) v / 2
    tr = simulate(SimConfig(cutoff_n=n, lam=1.0, dt=2e-4, t_final=0.08, seed=5), [phi], n_traj=1500)
    est = obs.laplace_B_variance(tr, "e0", mu)
    assert mu ** 2 * est.value / 2 == pytest.approx(w, rel=0.05 + 3 * est.stderr / est.value)


def test_laplace_B_lambda_zero():
    lat = build_lattice(2)
    tr = simulate(SimConfig(cutoff_n=2, lam=0.0, dt=0.01, t_final=20.0), [TestFunction.e0(lat)], n_traj=30)
    assert obs.laplace_B_variance(tr, "e0", 1.0).value == 0.0


def test_B_laplace_within_sandwich_n2():
    lam, mu = 0.5, 1.0
    lat = build_lattice(2)
    phi = TestFunction.e0(lat)
    lo, hi, _ = chaos.resolvent_target(phi, lam, mu, (4, 5))
    tr = simulate(SimConfig(cutoff_n=2, lam=lam, dt=0.01, t_final=12.0, seed=9, record_stride=2), [phi],
                  n_traj=2000)
    est = obs.laplace_B_variance(tr, "e0", mu)
    assert min(lo, hi) - 3 * est.stderr <= est.value <= max(lo, hi) + 3 * est.stderr


@pytest.fixture(scope="module")
def abc_ens():
    lat = build_lattice(2)
    phi = TestFunction.from_modes("p", lat, {(1, 0): 0.5, (1, 1): 0.25j}, zero=0.3)
    cfg = SimConfig(cutoff_n=2, lam=1.0, dt=0.01, t_final=4.0, seed=12, record_stride=5)
    return phi, simulate(cfg, [phi], n_traj=1200)


def test_abc_residual_small(abc_ens):
    phi, tr = abc_ens
    d = obs.decompose_ABC(tr, "p")
    r = np.max(np.abs(d["residual"]), axis=0) / np.maximum(tr.times, 1.0)
    assert r.max() <= 10 * tr.config.dt


def test_C_variance_is_t_norm(abc_ens):
    phi, tr = abc_ens
    c = obs.decompose_ABC(tr, "p")["C"]
    for j in (20, 80):
        m, se = obs.batch_means(c[:, j] ** 2)
        assert abs(m - tr.times[j] * phi.norm2()) < 3.5 * se


def test_linear_V_closed_form_vs_mc():
    lat = build_lattice(2)
    phi = TestFunction.from_modes("p", lat, {(1, 0): 0.5, (1, 1): 0.3}, zero=0.4)
    tr = simulate(SimConfig(cutoff_n=2, lam=0.0, dt=0.01, t_final=3.0, seed=2, record_stride=10), [phi],
                  n_traj=3000)
    # eps N = 1, so (eps, N) time equals unit-torus time
    v = obs.variance_increment_V(tr, "p", 0.5, [0.0, 0.5, 1.5, 3.0])
    exact = obs.linear_V(phi, v.abscissae)
    assert v.mean[0] == 0.0
    assert np.all(np.abs(v.mean[1:] - exact[1:]) < 3.5 * v.stderr[1:])
    assert np.all(np.diff(exact) > 0)


def test_zero_mass_V_saturates_at_twice_gff_variance():
    lat = build_lattice(3)
    phi = TestFunction.from_modes("p", lat, {(1, 0): 0.5, (2, 1): 0.3}, zero=0.0)
    var_h = np.sum(np.abs(phi.coeffs) ** 2 / lat.norms2)
    assert obs.linear_V(phi, 200.0)[0] == pytest.approx(2 * var_h, rel=1e-12)
    # and the stationary law of h[phi] has that variance
    tr = simulate(SimConfig(cutoff_n=3, lam=0.0, dt=0.05, t_final=0.05), [phi], n_traj=20000)
    m, se = obs.batch_means(tr.series["p"]["h"][:, 0] ** 2)
    assert abs(m - var_h) < 3.5 * se


def test_scaled_test_function_support():
    obs.scaled_test_function(bump_hat, 1.0, 8)
    with pytest.raises(ValueError, match="not supported"):
        obs.scaled_test_function(lambda p: bump_hat(np.asarray(p) / 2), 1.0, 8)


def test_dirichlet_rhs_e0():
    lat = build_lattice(2)
    assert obs.dirichlet_rhs(TestFunction.e0(lat), 2, 1.0, 3.0) == pytest.approx(3 * np.log(4))


def test_dirichlet_bound_n4():
    lat = build_lattice(4)
    phi = TestFunction.e0(lat)
    tr = simulate(SimConfig(cutoff_n=4, lam=1.0, dt=0.03, t_final=16.02, seed=4, record_stride=10), [phi],
                  n_traj=120)
    rep = obs.dirichlet_bound_check(phi, 4, 1.0, tr, [1.0, 4.0, 16.0])
    assert rep["ok"] and rep["ratio"][-1] <= 100
    tr0 = simulate(SimConfig(cutoff_n=4, lam=0.0, dt=0.03, t_final=1.02), [phi], n_traj=30)
    assert np.all(obs.dirichlet_bound_check(phi, 4, 0.0, tr0, [1.0])["ratio"] == 0)
