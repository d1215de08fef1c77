"""Mode-coupling closure for the two-point function and the exponent fit.

Small-k form of the closure, radially symmetric, with Phi_q the memory
integral of the self-energy m(s):

    d/dt log S(t,q) = -q^2/2 - 2 lam^2 c0 q^2 Phi_q(t)
    Phi_q(t)        = int_0^t e^{-q^2 (t-s)/2} m(s) ds       (kernel="full")
                    = int_0^t m(s) ds                         (kernel="flat")
    m(s)            = int_{|l|<=1} w(l) S(s,|l|)^2 / S0 d^2l

w is the squared interaction kernel on the circle |l| = q, with angular
average kernel_norm/(2 (2 pi)^2).  The defaults c0 = 1, kernel_norm = (2 pi)^2
drop every Fourier-convention factor of 2 pi; c0 = (2 pi)^-4, kernel_norm = 1
give the literal constants.  Only the exponent is meaningful, the constants
set how early the asymptotic regime starts.  The "additive" closure integrates the same right-hand side
without exponentiating and aborts when S turns negative.
"""
import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import integrate, optimize


@dataclass(frozen=True)
class MctParams:
    lam: float = 1.0
    c0: float = 1.0
    kernel_norm: float = (2 * np.pi) ** 2
    S0: float = 1.0
    kernel: str = "full"          # "full" keeps e^{-q^2(t-s)/2}, "flat" sets it to 1
    closure: str = "exponential"  # or "additive"

    def __post_init__(self):
        if self.kernel not in ("full", "flat"):
            raise ValueError("kernel must be 'full' or 'flat'")
        if self.closure not in ("exponential", "additive"):
            raise ValueError("closure must be 'exponential' or 'additive'")


@dataclass
class MctGrid:
    q: np.ndarray
    t: np.ndarray
    params: MctParams | None = None
    logS: np.ndarray | None = None   # (n_t, n_q), log(S/S0)
    memory: np.ndarray | None = None  # m(t)
    phi0: np.ndarray | None = None    # q -> 0 memory integral, int_0^t m
    meta: dict = field(default_factory=dict)

    @property
    def S(self):
        return self.params.S0 * np.exp(self.logS)

    @classmethod
    def build(cls, q_min=1e-6, n_q=300, t_final=1e6, dt0=1e-3, n_ramp=100, growth=1.005):
        """Log-spaced wavenumbers in [q_min, 1]; linear ramp then geometric time steps."""
        q = np.logspace(np.log10(q_min), 0.0, n_q)
        ramp = dt0 * np.arange(n_ramp + 1)
        n_geo = int(np.ceil(np.log(t_final / ramp[-1]) / np.log(growth)))
        geo = ramp[-1] * growth ** np.arange(1, n_geo + 1)
        t = np.concatenate([ramp, geo[geo < t_final], [t_final]])
        return cls(q=q, t=t)

    def to_csv(self, path, every=1):
        S = self.S
        with open(path, "w") as fh:
            fh.write("t,q,S\n")
            for i in range(0, len(self.t), every):
                for j, qq in enumerate(self.q):
                    fh.write(f"{self.t[i]!r},{qq!r},{S[i, j]!r}\n")


def angular_kernel(q, q_prime=None, normalization=1.0):
    """Angle average of the squared interaction kernel on the circle |l| = q.

    In the k -> 0 limit the self-energy pairs l with -l, so q_prime (if
    given) must equal q.  Returns 0 outside the unit cutoff.
    """
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("angular kernel needs q > 0")
    if q_prime is not None and not np.allclose(q_prime, q):
        return np.zeros_like(q)
    return np.where(q <= 1.0, 0.5 * normalization / (2 * np.pi) ** 2, 0.0)


def angular_average_quadrature(n=2048):
    """Average over theta of (c(l,-l)/|l|^2)^2 = cos^2(2 theta), by quadrature."""
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    l = np.stack([np.cos(th), np.sin(th)], -1)
    c = l[:, 1] * (-l[:, 1]) - l[:, 0] * (-l[:, 0])
    return float(np.mean(c ** 2))


def _phis(z):
    """phi_1, phi_2, phi_3 at z <= 0, with series near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, -1.0, z)
    e = np.expm1(zs)
    p1 = np.where(small, 1 + z / 2 + z ** 2 / 6 + z ** 3 / 24, e / zs)
    p2 = np.where(small, 0.5 + z / 6 + z ** 2 / 24 + z ** 3 / 120, (e - zs) / zs ** 2)
    p3 = np.where(small, 1 / 6 + z / 24 + z ** 2 / 120 + z ** 3 / 720, (e - zs - zs ** 2 / 2) / zs ** 3)
    return p1, p2, p3


def self_energy(logS, q, params: MctParams):
    """m = 2 pi int_0^1 q w(q) S(q)^2 / S0 dq on the log-spaced grid (plus [0, q_min])."""
    S2 = params.S0 * np.exp(2 * logS)
    w = angular_kernel(q, normalization=params.kernel_norm)
    f = q * q * w * S2  # integrand in d(log q)
    body = np.sum(0.5 * np.diff(np.log(q)) * (f[..., 1:] + f[..., :-1]), axis=-1)
    head = 0.5 * q[0] ** 2 * w[0] * S2[..., 0]
    return 2 * np.pi * (body + head)


def evolve_S(grid: MctGrid, lam=None, t_final=None, params: MctParams | None = None, n_corr=2):
    """Integrate the closure on ``grid`` (predictor-corrector, exact memory recursion)."""
    p = params or MctParams()
    if lam is not None:
        p = MctParams(**{**asdict(p), "lam": lam})
    t = grid.t if t_final is None else grid.t[grid.t <= t_final]
    q = grid.q
    a = 0.5 * q * q
    b = a if p.kernel == "full" else np.zeros_like(q)
    gam = 2 * p.lam ** 2 * p.c0 * q * q
    nt, nq = len(t), len(q)
    logS = np.zeros((nt, nq))
    mem = np.zeros(nt)
    phi0 = np.zeros(nt)
    Phi = np.zeros(nq)
    S_lin = np.ones(nq)  # S/S0 for the additive closure
    mem[0] = self_energy(logS[0], q, p)
    for i in range(nt - 1):
        h = t[i + 1] - t[i]
        p1b, p2b, p3b = _phis(-b * h)
        p1a, p2a, _ = _phis(-a * h)
        m0 = mem[i]
        m1 = m0
        for _ in range(n_corr + 1):
            dm = m1 - m0
            Phi_new = np.exp(-b * h) * Phi + h * (m0 * p1b + dm * p2b)
            if p.closure == "exponential":
                intPhi = h * Phi * p1b + h * h * (m0 * p2b + dm * p3b)
                new = logS[i] - a * h - gam * intPhi
            else:
                S_new = np.exp(-a * h) * S_lin - gam * h * (Phi * p1a + (Phi_new - Phi) * p2a)
                if np.any(S_new < 0):
                    bad = q[S_new < 0]
                    raise FloatingPointError(
                        f"additive closure turned negative at t={t[i + 1]:.4g} for q in "
                        f"[{bad.min():.3g}, {bad.max():.3g}]")
                new = np.log(np.maximum(S_new, 1e-300))
            m1 = self_energy(new, q, p)
        logS[i + 1] = new
        if p.closure == "additive":
            S_lin = S_new
        Phi = Phi_new
        mem[i + 1] = m1
        phi0[i + 1] = phi0[i] + 0.5 * h * (m0 + m1)
    if np.any(np.diff(logS, axis=0) > 1e-12):
        raise FloatingPointError("S increased in time; the closure is unstable on this grid")
    return MctGrid(q=q, t=t, params=p, logS=logS, memory=mem, phi0=phi0, meta=dict(grid.meta))


def flat_kernel_oracle(t_eval, params: MctParams, q_max=1.0):
    """Independent solution for kernel='flat': S stays Gaussian in q.

    Then log(S/S0) = -q^2 X(t) with X' = 1/2 + 2 lam^2 c0 Phi and
    Phi' = m(X) = 2 pi w S0 (1 - e^{-2 X q_max^2}) / (4 X) in closed form.
    Integrated with an adaptive solver in log time.
    """
    p = params
    coef = 2 * np.pi * float(angular_kernel(0.5, normalization=p.kernel_norm)) * p.S0 / 2

    def m_of(X):
        if X < 1e-12:
            return coef * q_max ** 2
        return coef * -np.expm1(-2 * X * q_max ** 2) / (2 * X)

    def rhs(s, y):
        tt = np.exp(s)
        X, Phi = y
        return [tt * (0.5 + 2 * p.lam ** 2 * p.c0 * Phi), tt * m_of(X)]

    s0 = np.log(1e-9)
    y0 = [0.5e-9, m_of(0.0) * 1e-9]
    sol = integrate.solve_ivp(rhs, [s0, np.log(np.max(t_eval))], y0, rtol=1e-11, atol=1e-14,
                              dense_output=True, method="LSODA")
    return sol.sol(np.log(t_eval))[0]


# ------------------------------------------------------------------ fitting

def _fit_residual(t, y, delta):
    """Least squares in log space of y = c t (log t)^delta; returns (rss, c)."""
    x = np.log(t) + delta * np.log(np.log(t))
    r = np.log(y) - x
    logc = np.mean(r)
    return float(np.mean((r - logc) ** 2)), float(np.exp(logc))


def fit_delta_series(t, y, lo=0.1, hi=0.9, n_scan=81):
    """Golden-section minimisation of the fit residual over delta in [lo, hi]."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or np.any(t <= 1):
        raise ValueError("fit needs y > 0 and t > 1")
    scan = np.linspace(lo, hi, n_scan)
    res = np.array([_fit_residual(t, y, d)[0] for d in scan])
    i = int(np.argmin(res))
    local_min = np.sum((res[1:-1] < res[:-2]) & (res[1:-1] < res[2:]))
    diag = {"scan_delta": scan.tolist(), "scan_residual": res.tolist(), "n_local_minima": int(local_min)}
    if local_min > 1:
        raise ValueError(f"non-monotone residual landscape ({local_min} local minima): {diag}")
    if i == 0 or i == n_scan - 1:
        diag["at_boundary"] = True
        d = scan[i]
    else:
        sol = optimize.minimize_scalar(lambda d: _fit_residual(t, y, d)[0],
                                       bracket=(scan[i - 1], scan[i], scan[i + 1]),
                                       method="golden", tol=1e-10)
        d = float(np.clip(sol.x, scan[i - 1], scan[i + 1]))
    rss, c = _fit_residual(t, y, d)
    diag["rss"] = rss
    return float(d), c, diag


def _tracer(grid: MctGrid, q_window):
    """y(t) = -log(S/S0)/q^2 - t/2 per q column in the window."""
    sel = np.flatnonzero(grid.q <= q_window)
    return sel, -grid.logS[:, sel] / grid.q[sel] ** 2 - 0.5 * grid.t[:, None]


def fit_delta(grid: MctGrid, window=(1e2, 1e6), q_window=None, n_q=8):
    """Pooled delta and c over the smallest-q columns; band from their spread."""
    if grid.logS is None:
        raise ValueError("grid has not been evolved")
    t = grid.t
    if window[1] / window[0] < 1e4 or t[-1] < window[1] * (1 - 1e-12):
        raise ValueError("fit needs an evolved grid spanning at least four decades of time")
    in_win = (t >= window[0]) & (t <= window[1] * (1 + 1e-12))
    q_window = grid.q[min(n_q, len(grid.q)) - 1] if q_window is None else q_window
    sel, y = _tracer(grid, q_window)
    deltas, cs = [], []
    for j in range(len(sel)):
        d, c, _ = fit_delta_series(t[in_win], y[in_win, j])
        deltas.append(d)
        cs.append(c)
    deltas = np.array(deltas)
    _, _, diag = fit_delta_series(t[in_win], y[in_win, 0])
    diag.setdefault("at_boundary", False)
    return float(np.mean(deltas)), float(np.mean(cs)), {
        "per_q_delta": deltas.tolist(), "q": grid.q[sel].tolist(),
        "band": [float(deltas.min()), float(deltas.max())], "window": list(window),
        "n_local_minima": diag["n_local_minima"], "rss": diag["rss"],
        "at_boundary": diag["at_boundary"],
    }


def consistency_residual(delta, grid: MctGrid, window=(1e2, 1e6)):
    """Log-log slope mismatch between the two sides of the matching condition.

    Left side: d/dt of c t (log t)^delta with c fitted on the evolved solution.
    Right side: the memory term 2 lam^2 c0 Phi(t) of the evolved solution in
    the q -> 0 limit.  Slopes are taken against log log t and averaged over
    the window; the mismatch is their mean absolute difference.
    """
    p = grid.params
    if p.lam == 0:
        return 0.0
    t = grid.t
    w = (t >= window[0]) & (t <= window[1] * (1 + 1e-12))
    tw = t[w]
    rhs = 2 * p.lam ** 2 * p.c0 * grid.phi0[w]
    y = -grid.logS[w, 0] / grid.q[0] ** 2 - 0.5 * tw
    _, c = _fit_residual(tw, y, delta)
    L = np.log(tw)
    lhs = c * (L ** delta + delta * L ** (delta - 1))
    x = np.log(L)
    s_l = np.gradient(np.log(lhs), x)
    s_r = np.gradient(np.log(rhs), x)
    return float(np.mean(np.abs(s_l - s_r)))


def fit_report(grid: MctGrid, window=(1e2, 1e6)):
    d, c, diag = fit_delta(grid, window)
    res = {x: consistency_residual(x, grid, window) for x in (0.3, 0.5, 0.7)}
    return {"delta": d, "c": c, "band": diag["band"], "window": list(window),
            "at_boundary": diag["at_boundary"],
            "residuals": {str(k): v for k, v in res.items()},
            "params": asdict(grid.params)}


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
