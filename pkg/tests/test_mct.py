import json

import numpy as np
import pytest
from scipy import integrate

from akpz import mct


@pytest.fixture(scope="module")
def full_grid():
    return mct.evolve_S(mct.MctGrid.build())


def test_angular_average_by_quadrature():
    assert mct.angular_average_quadrature() == pytest.approx(0.5, abs=1e-12)
    w = mct.angular_kernel(np.array([0.3, 1.0, 1.5]), normalization=(2 * np.pi) ** 2)
    assert np.allclose(w, [0.5, 0.5, 0.0])
    assert np.all(mct.angular_kernel(0.4, q_prime=0.5) == 0)
    with pytest.raises(ValueError):
        mct.angular_kernel(np.array([0.0, 0.5]))


def test_params_validation():
    with pytest.raises(ValueError):
        mct.MctParams(kernel="other")
    with pytest.raises(ValueError):
        mct.MctParams(closure="other")


def test_self_energy_initial_value():
    # m(0) = 2 pi * w * int_0^1 q dq = pi w for S = S0 = 1
    errs = []
    for n_q in (300, 600, 1200):
        g = mct.MctGrid.build(n_q=n_q)
        errs.append(abs(mct.self_energy(np.zeros(n_q), g.q, mct.MctParams()) / (np.pi / 2) - 1))
    assert errs[0] < 1e-3
    # second order in the log-q spacing
    assert errs[1] == pytest.approx(errs[0] / 4, rel=0.05)
    assert errs[2] == pytest.approx(errs[1] / 4, rel=0.05)


def test_lambda_zero_is_exact():
    g = mct.MctGrid.build(n_q=60, t_final=1e3)
    out = mct.evolve_S(g, lam=0.0)
    exact = -0.5 * out.q[None, :] ** 2 * out.t[:, None]
    assert np.max(np.abs(out.logS - exact)) <= 1e-8


def _ode_oracle(q, t_eval, p):
    """Same closure as an ODE system in (log S_q, Phi_q) using Phi' = m - b Phi."""
    a = 0.5 * q * q
    b = a if p.kernel == "full" else 0 * q
    gam = 2 * p.lam ** 2 * p.c0 * q * q
    n = len(q)

    def rhs(_, y):
        logS, Phi = y[:n], y[n:]
        m = mct.self_energy(logS, q, p)
        return np.concatenate([-a - gam * Phi, m - b * Phi])

    sol = integrate.solve_ivp(rhs, [0, t_eval[-1]], np.zeros(2 * n), t_eval=t_eval,
                              rtol=1e-10, atol=1e-13, method="DOP853")
    return sol.y[:n].T


@pytest.mark.parametrize("kernel", ["full", "flat"])
def test_time_stepping_matches_ode_solver(kernel):
    g = mct.MctGrid.build(n_q=40, t_final=20.0)
    p = mct.MctParams(kernel=kernel)
    out = mct.evolve_S(g, params=p)
    ref = _ode_oracle(out.q, out.t, p)
    assert np.max(np.abs(out.logS[1] - ref[1])) <= 1e-6
    assert np.max(np.abs(out.logS - ref)) <= 1e-5 * np.max(np.abs(ref))


def test_flat_kernel_closed_form_oracle():
    g = mct.MctGrid.build(n_q=300, t_final=1e4)
    p = mct.MctParams(kernel="flat")
    out = mct.evolve_S(g, params=p)
    sel = out.t > 1
    X = mct.flat_kernel_oracle(out.t[sel], p)
    Xnum = -out.logS[sel, 0] / out.q[0] ** 2
    assert np.max(np.abs(Xnum / X - 1)) <= 1e-3


def test_positive_and_monotone(full_grid):
    # S itself underflows at large q and late times, log S does not
    assert np.all(np.isfinite(full_grid.logS))
    assert np.all(full_grid.S >= 0)
    assert np.all(np.diff(full_grid.logS, axis=0) <= 1e-12)
    # the smallest mode has barely decayed by the final time
    assert full_grid.S[-1, 0] == pytest.approx(1.0, abs=0.01)


def test_synthetic_delta_recovered():
    t = np.logspace(2, 6, 400)
    for delta in (0.5, 0.33):
        d, c, diag = mct.fit_delta_series(t, 0.3 * t * np.log(t) ** delta)
        assert d == pytest.approx(delta, abs=1e-6)
        assert c == pytest.approx(0.3, rel=1e-5)
        assert diag["n_local_minima"] == 1


def test_fit_landscape_is_convex():
    # the model is linear in delta after taking logs, so the residual is a parabola
    t = np.logspace(2, 6, 400)
    rng = np.random.default_rng(3)
    y = t * np.log(t) ** 0.4 * np.exp(0.05 * rng.standard_normal(t.size))
    _, _, diag = mct.fit_delta_series(t, y)
    res = np.array(diag["scan_residual"])
    assert np.all(np.diff(res, 2) > 0)
    assert diag["n_local_minima"] <= 1


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        mct.fit_delta_series([0.5, 2.0, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        mct.fit_delta_series([2.0, 3.0, 4.0], [1.0, -2.0, 3.0])


def test_fit_requires_four_decades(full_grid):
    with pytest.raises(ValueError):
        mct.fit_delta(full_grid, window=(1e3, 1e6))
    with pytest.raises(ValueError):
        mct.fit_delta(mct.MctGrid.build(n_q=10, t_final=1e3))


def test_delta_in_band_and_residual_ordering(full_grid):
    rep = mct.fit_report(full_grid)
    assert 0.4 <= rep["delta"] <= 0.6 and not rep["at_boundary"]
    r = rep["residuals"]
    assert r["0.5"] < r["0.3"] and r["0.5"] < r["0.7"]
    for x in np.linspace(0.2, 0.8, 13):
        assert np.isfinite(mct.consistency_residual(x, full_grid))


def test_consistency_residual_zero_at_lambda_zero():
    g = mct.evolve_S(mct.MctGrid.build(n_q=20, t_final=1e6), lam=0.0)
    assert mct.consistency_residual(0.5, g) == 0.0


def test_time_refinement_stability(full_grid):
    fine = mct.evolve_S(mct.MctGrid.build(dt0=5e-4, n_ramp=200, growth=1.0025))
    assert abs(mct.fit_delta(fine)[0] - mct.fit_delta(full_grid)[0]) < 0.02


def test_additive_closure_breaks_down():
    g = mct.MctGrid.build(n_q=60, t_final=100.0)
    with pytest.raises(FloatingPointError, match="negative"):
        mct.evolve_S(g, params=mct.MctParams(closure="additive"))


def test_report_roundtrip(tmp_path, full_grid):
    rep = mct.fit_report(full_grid)
    mct.write_report(tmp_path / "fit.json", rep)
    assert json.loads((tmp_path / "fit.json").read_text()) == json.loads(json.dumps(rep))
    small = mct.evolve_S(mct.MctGrid.build(n_q=5, t_final=1.0))
    small.to_csv(tmp_path / "S.csv", every=50)
    lines = (tmp_path / "S.csv").read_text().splitlines()
    assert lines[0] == "t,q,S" and len(lines) == 1 + 5 * len(range(0, len(small.t), 50))
