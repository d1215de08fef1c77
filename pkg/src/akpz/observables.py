"""Monte Carlo estimators built on simulated ensembles.

Big-torus quantities are always obtained from the unit-torus process through
the diffusive rescaling (time t on the big torus is t/N^2 here); there is no
second simulator.
"""
from dataclasses import dataclass, field

import numpy as np

from .burgers import Trajectory, _engine, white_noise_coeffs
from .lattice import TestFunction, build_lattice

__all__ = [
    "SeriesEstimate", "LaplaceEstimate", "batch_means", "wick_variance_nonlinearity",
    "nonlinearity_samples", "green_kubo_D", "direct_green_kubo", "autocovariance",
    "laplace_weighted", "laplace_samples", "laplace_D", "laplace_B_variance",
    "decompose_ABC", "scaled_test_function", "variance_increment_V", "laplace_V",
    "linear_V", "dirichlet_rhs", "dirichlet_bound_check",
]


@dataclass
class SeriesEstimate:
    abscissae: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int
    meta: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("abscissa,mean,stderr,n_samples\n")
            for a, m, s in zip(self.abscissae, self.mean, self.stderr):
                fh.write(f"{a!r},{m!r},{s!r},{self.n_samples}\n")


@dataclass
class LaplaceEstimate:
    mu: float
    value: float
    stderr: float
    tail: float
    n_samples: int = 0

    @property
    def error(self):
        """Statistical error plus the (one-sided) truncation bound."""
        return self.stderr + self.tail


def batch_means(samples, n_batches=30):
    """Mean and standard error over axis 0 from non-overlapping batch means.

    Works for any trailing shape; batches are contiguous in index order so the
    result does not depend on how the samples were produced.
    """
    x = np.asarray(samples, dtype=float)
    m = x.shape[0]
    if m < n_batches:
        raise ValueError(f"need at least {n_batches} samples for batch means, got {m}")
    means = np.stack([b.mean(axis=0) for b in np.array_split(x, n_batches)])
    return x.mean(axis=0), means.std(axis=0, ddof=1) / np.sqrt(n_batches)


# --------------------------------------------------------------- closed forms

def _kernel_sq_sums(cutoff_n):
    """sum_{l+m=k} K_{l,m}^2 per output slot and for k = 0."""
    eng = _engine(cutoff_n, cutoff_n, "direct")
    mat = eng.matrix.copy()
    mat.data = mat.data ** 2
    rows = np.asarray(mat.sum(axis=1)).ravel()
    return rows[1:], rows[0]


def wick_variance_nonlinearity(phi: TestFunction, cutoff_n: int, lam: float) -> float:
    """Var(lam N[eta][phi]) = 2 lam^2 sum_k |phi_k|^2 sum_{l+m=k} K_{l,m}^2."""
    ks, k0 = _kernel_sq_sums(cutoff_n)
    out = build_lattice(cutoff_n)
    coeffs = np.array([phi.coeffs[phi.lattice.slot(k)] if phi.lattice.contains(k) else 0.0
                       for k in out.modes])
    return float(2 * lam ** 2 * (np.sum(np.abs(coeffs) ** 2 * ks) + phi.zero ** 2 * k0))


def nonlinearity_samples(phi: TestFunction, lam, n_samples, rng, backend="direct"):
    """Samples of lam N[eta][phi] under the white-noise law (MC oracle)."""
    lat = phi.lattice
    eta = white_noise_coeffs(lat, rng, (n_samples,))
    c, c0 = _engine(lat.cutoff_n, lat.cutoff_n, backend)(eta)
    return lam * np.real(c @ np.conj(phi.coeffs) + c0 * phi.zero)


# --------------------------------------------------------------- Green-Kubo

def _big_to_unit(traj: Trajectory, t):
    n2 = traj.config.cutoff_n ** 2
    s = np.asarray(t, dtype=float) / n2
    if np.any(s > traj.times[-1] * (1 + 1e-12)) or np.any(s < 0):
        raise ValueError(f"requested times exceed the simulated horizon {traj.times[-1] * n2}")
    return s


def _interp_rows(times, rows, s):
    return np.stack([np.interp(s, times, r) for r in rows])


def green_kubo_D(traj: Trajectory, t_grid, phi_id="e0", n_batches=30) -> SeriesEstimate:
    """D(t) = 1 + (N^2/t) E[B_e0(t/N^2)^2], t on the big torus."""
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    s = _big_to_unit(traj, t)
    n2 = traj.config.cutoff_n ** 2
    b = _interp_rows(traj.times, traj.b_series(phi_id), s)
    with np.errstate(divide="ignore", invalid="ignore"):
        samples = np.where(t > 0, 1 + n2 * b ** 2 / np.where(t > 0, t, 1), 1.0)
    mean, se = batch_means(samples, n_batches)
    return SeriesEstimate(t, mean, se, traj.n_traj, {"estimator": "B-variance"})


def _autocorr_rows(x):
    """Time-origin averaged autocovariance sum_o x[o] x[o+j] / (T - j), per row."""
    T = x.shape[-1]
    f = np.fft.rfft(x, n=2 * T)
    ac = np.fft.irfft(f * np.conj(f), n=2 * T)[..., :T]
    return ac / (T - np.arange(T))


def autocovariance(traj: Trajectory, phi_id="e0", origin=None, n_batches=30) -> SeriesEstimate:
    """E[n(r) n(0)] for n = lam N[u][phi]; averaged over all origins unless one is given."""
    n = traj.series[phi_id]["n"]
    if origin is None:
        rows = _autocorr_rows(n)
        r = traj.times - traj.times[0]
    else:
        rows = n[:, origin:] * n[:, [origin]]
        r = traj.times[origin:] - traj.times[origin]
    mean, se = batch_means(rows, n_batches)
    return SeriesEstimate(r, mean, se, traj.n_traj)


def _double_integral(r, c):
    """G(s) = 2 int_0^s (s - r') c(r') dr' on the grid r, by nested trapezoid."""
    inner = np.concatenate([np.zeros(c.shape[:-1] + (1,)),
                            np.cumsum(0.5 * np.diff(r) * (c[..., 1:] + c[..., :-1]), axis=-1)], axis=-1)
    outer = np.concatenate([np.zeros(c.shape[:-1] + (1,)),
                            np.cumsum(0.5 * np.diff(r) * (inner[..., 1:] + inner[..., :-1]), axis=-1)],
                           axis=-1)
    return 2 * outer


def _direct_G(traj, phi_id):
    n = traj.series[phi_id]["n"]
    return _double_integral(traj.times, _autocorr_rows(n))


def direct_green_kubo(traj: Trajectory, t_grid, phi_id="e0", n_batches=30) -> SeriesEstimate:
    """1 + (2 N^2/t) int_0^{t/N^2} int_0^s E[n(r)n(0)] dr ds (nested trapezoid)."""
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    s = _big_to_unit(traj, t)
    n2 = traj.config.cutoff_n ** 2
    g = _interp_rows(traj.times, _direct_G(traj, phi_id), s)
    with np.errstate(divide="ignore", invalid="ignore"):
        samples = np.where(t > 0, 1 + n2 * g / np.where(t > 0, t, 1), 1.0)
    mean, se = batch_means(samples, n_batches)
    return SeriesEstimate(t, mean, se, traj.n_traj, {"estimator": "autocovariance"})


# ------------------------------------------------------------------ Laplace

def _laplace_rows(t, f, mu):
    """mu int e^{-mu t} f dt for f linear between samples, plus a linear-continuation tail.

    The exponential is integrated exactly on each interval, so constant and
    linear f are transformed without quadrature error.
    """
    h = np.diff(t)
    e = np.exp(-mu * t[:-1])
    a = -np.expm1(-mu * h)                   # mu int_0^h e^{-mu s} ds
    b = a / (mu * h) - np.exp(-mu * h)       # mu int_0^h (s/h) e^{-mu s} ds
    df = np.diff(f, axis=-1)
    body = np.sum(e * (a * f[..., :-1] + b * df), axis=-1)
    T = t[-1]
    slope = (f[..., -1] - f[..., -2]) / (t[-1] - t[-2])
    # exact integral of mu e^{-mu t} (f(T) + slope (t - T)) over [T, inf)
    tail = np.exp(-mu * T) * (f[..., -1] + slope / mu)
    return body, tail


def laplace_samples(t, samples, mu, n_batches=30, rel_tol=0.01) -> LaplaceEstimate:
    """Laplace weighting applied per sample row, then batch means."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    t = np.asarray(t, dtype=float)
    body, tail = _laplace_rows(t, np.asarray(samples, dtype=float), mu)
    value, se = batch_means(body + tail, n_batches)
    tail_bound = float(np.max(np.abs(tail)))
    _check_tail(value, tail_bound, rel_tol, mu, t[-1])
    return LaplaceEstimate(mu, float(value), float(se), tail_bound, len(body))


def _check_tail(value, tail, rel_tol, mu, T):
    if tail > rel_tol * max(abs(value), 1e-300) and tail > 1e-14:
        raise ValueError(f"horizon T={T} too short for mu={mu}: tail bound {tail:.3g} vs value {value:.3g}")


def laplace_weighted(series, mu, rel_tol=0.01) -> LaplaceEstimate:
    """mu int_0^inf e^{-mu t} f(t) dt for a SeriesEstimate (or (t, f) pair).

    The error bar adds the pointwise standard errors with the quadrature
    weights, which is conservative because it ignores cancellations.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if isinstance(series, SeriesEstimate):
        t, f, se, n = series.abscissae, series.mean, series.stderr, series.n_samples
    else:
        t, f = (np.asarray(a, dtype=float) for a in series)
        se, n = np.zeros_like(f), 0
    body, tail = _laplace_rows(t, f, mu)
    w = mu * np.exp(-mu * t) * np.gradient(t)
    err = float(np.sum(w * se))
    _check_tail(body + tail, abs(tail), rel_tol, mu, t[-1])
    return LaplaceEstimate(mu, float(body + tail), err, float(abs(tail)), n)


def laplace_D(traj: Trajectory, mu, estimator="direct", phi_id="e0", n_batches=30, rel_tol=0.01):
    """Laplace transform of t D(t) on the big torus, from either estimator.

    ``direct`` uses the autocovariance route, ``bsq`` the B-variance route.
    """
    n2 = traj.config.cutoff_n ** 2
    t_big = traj.times * n2
    if estimator == "direct":
        g = _direct_G(traj, phi_id)
    elif estimator == "bsq":
        g = traj.b_series(phi_id) ** 2
    else:
        raise ValueError("estimator must be 'direct' or 'bsq'")
    return laplace_samples(t_big, t_big + n2 * g, mu, n_batches, rel_tol)


def laplace_B_variance(traj: Trajectory, phi_id, mu, n_batches=30, rel_tol=0.01) -> LaplaceEstimate:
    """mu int e^{-mu t} E[B_phi(t)^2] dt on the unit torus."""
    return laplace_samples(traj.times, traj.b_series(phi_id) ** 2, mu, n_batches, rel_tol)


# -------------------------------------------------------- height observables

def decompose_ABC(traj: Trajectory, phi_id):
    """Pathwise A, B, C parts of h(t)[phi] - h(0)[phi] and the residual."""
    s = traj.series[phi_id]
    dh = s["h"] - s["h"][:, :1]
    resid = dh - s["A"] - s["B"] - s["C"]
    return {"A": s["A"], "B": s["B"], "C": s["C"], "dh": dh, "residual": resid}


def scaled_test_function(phi_hat, eps, cutoff_n, id="phi", support_tol=1e-12) -> TestFunction:
    """Lattice coefficients phi_hat(k/(eps N)) of the rescaled test function.

    ``phi_hat`` is a vectorised callable on (..., 2) frequency arrays returning
    the continuum transform of a real function (so phi_hat(-p) = conj).  Its
    support after rescaling must fit inside |k| <= N.
    """
    lat = build_lattice(cutoff_n)
    scale = eps * cutoff_n
    coeffs = np.asarray(phi_hat(lat.modes / scale), dtype=complex)
    zero = complex(np.asarray(phi_hat(np.zeros((1, 2))))[0])
    big = build_lattice(2 * cutoff_n)
    outside = big.norms2 > cutoff_n ** 2
    leak = np.max(np.abs(phi_hat(big.modes[outside] / scale)))
    ref = max(np.max(np.abs(coeffs)), abs(zero))
    if leak > support_tol * ref:
        raise ValueError(f"test function not supported in |k| <= {cutoff_n} after rescaling "
                         f"(max outside = {leak:.3g})")
    return TestFunction(id, lat, coeffs, zero.real)


def variance_increment_V(traj: Trajectory, phi_id, eps, t_grid, n_batches=30) -> SeriesEstimate:
    """V(t) = E[(h(t)[phi] - h(0)[phi])^2] in (eps, N) time, via t -> t/(eps N)^2."""
    scale2 = (eps * traj.config.cutoff_n) ** 2
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    s = t / scale2
    if np.any(s > traj.times[-1] * (1 + 1e-12)):
        raise ValueError("requested times exceed the simulated horizon")
    h = traj.series[phi_id]["h"]
    dh = _interp_rows(traj.times, h - h[:, :1], s)
    mean, se = batch_means(dh ** 2, n_batches)
    return SeriesEstimate(t, mean, se, traj.n_traj, {"eps": eps})


def laplace_V(traj: Trajectory, phi_id, eps, mu, n_batches=30, rel_tol=0.01) -> LaplaceEstimate:
    """Laplace transform of V in (eps, N) units, computed at eps^2 N^2 mu on the unit torus."""
    scale2 = (eps * traj.config.cutoff_n) ** 2
    h = traj.series[phi_id]["h"]
    est = laplace_samples(traj.times, (h - h[:, :1]) ** 2, mu * scale2, n_batches, rel_tol)
    est.mu = mu
    return est


def linear_V(phi: TestFunction, t):
    """Closed-form V(t) on the unit torus when lam = 0 (OU modes + Brownian zero mode)."""
    lat = phi.lattice
    t = np.atleast_1d(np.asarray(t, dtype=float))[:, None]
    modes = np.sum(np.abs(phi.coeffs) ** 2 * 2 * -np.expm1(-0.5 * lat.norms2 * t) / lat.norms2, axis=-1)
    return modes + t[:, 0] * phi.zero ** 2


def dirichlet_rhs(phi: TestFunction, cutoff_n, lam, t):
    """lam^2 t sum_{|k|<=N} |phi_k|^2 log(1/(|k/N|^2 v N^-2)), the zero mode included."""
    lat = phi.lattice
    inside = lat.norms2 <= cutoff_n ** 2
    floor = 1.0 / cutoff_n ** 2
    w = np.log(1.0 / np.maximum(lat.norms2[inside] / cutoff_n ** 2, floor))
    total = np.sum(np.abs(phi.coeffs[inside]) ** 2 * w) + phi.zero ** 2 * np.log(cutoff_n ** 2)
    return lam ** 2 * np.asarray(t, dtype=float) * total


def dirichlet_bound_check(phi: TestFunction, cutoff_n, lam, traj: Trajectory, t, constant=100.0,
                          n_batches=30):
    """Ratio E[B_phi(t)^2] / RHS at unit-torus times t; asserts ratio <= constant."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    b = _interp_rows(traj.times, traj.b_series(phi.id), t)
    lhs, se = batch_means(b ** 2, n_batches)
    rhs = dirichlet_rhs(phi, cutoff_n, lam, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1), 0.0)
    ok = bool(np.all(ratio <= constant))
    return {"t": t, "lhs": lhs, "lhs_stderr": se, "rhs": rhs, "ratio": ratio,
            "constant": constant, "ok": ok}
