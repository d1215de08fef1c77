"""Scalar multiplier functions used to bound the Schur operators.

    L(x, z)    = lam^2 (z + log(1 + 1/x)) + 1
    LB_k(x, z) = sum_{j <= k} (log(L)/2)^j / j!
    UB_k(x, z) = L / LB_k
    sigma_k    = UB_{(k-3)/2} for odd k >= 3, LB_{k/2-1} for even k >= 4

F^N(x, z) = F(x/N^2, z) is the rescaled version used on the cut-off lattice.
"""
from dataclasses import dataclass, replace
from math import factorial

import numpy as np
from scipy import integrate


@dataclass(frozen=True)
class MultiplierParams:
    lam: float
    z: float = 1.0
    k: int = 0
    cutoff_n: int = 1
    schur_K: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.z < 1:
            raise ValueError("z must be >= 1")
        if self.k < 0:
            raise ValueError("level k must be nonnegative")


def L(x, z, lam):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("multipliers are defined for x > 0")
    return lam ** 2 * (z + np.log1p(1.0 / x)) + 1.0


def LB(x, z, lam, k):
    if k < 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    half_log = 0.5 * np.log(L(x, z, lam))
    return sum(half_log ** j / factorial(j) for j in range(k + 1))


def UB(x, z, lam, k):
    return L(x, z, lam) / LB(x, z, lam, k)


def sigma(x, z, lam, k):
    if k < 3:
        raise ValueError("sigma_k is defined for k >= 3")
    if k % 2:
        return UB(x, z, lam, (k - 3) // 2)
    return LB(x, z, lam, k // 2 - 1)


def f_k(n, k, lam, K=1.0):
    return 4.0 * max(lam * np.sqrt(K) * (n + k), 1.0)


def z_k(n, k, K=1.0):
    return K * (n + k) ** 2


def S_diag(x, mu, n, k, lam, cutoff_n, K=1.0):
    """Eigenvalue of S^N_k on a chaos-n slot where -L0 acts as x.

    S_2 is identically zero; odd and even k >= 3 follow the two branches of
    the definition, with sigma evaluated at the rescaled argument.
    """
    x = np.asarray(x, dtype=float)
    if k == 2:
        return np.zeros_like(x)
    if k < 2:
        raise ValueError("S_k is defined for k >= 2")
    fk, zk = f_k(n, k, lam, K), z_k(n, k, K)
    n2 = cutoff_n ** 2
    if k % 2:
        return fk * sigma((mu + x) / n2, zk, lam, k)
    arg = 1.25 * (mu + np.maximum(x, 0.5))
    return (sigma(arg / n2, zk, lam, k) - fk) / fk


def multiplier(name, params: MultiplierParams, x, mu=None, n=None, scaled=False):
    """Evaluate one of L, LB, UB, sigma, S_diag.

    For L/LB/UB/sigma, ``scaled=True`` gives F^N(x, z) = F(x/N^2, z).  S_diag
    needs the resolvent shift ``mu`` and chaos order ``n``; it always uses the
    rescaled sigma and takes its own z from z_k(n).
    """
    p = params
    if name == "S_diag":
        if mu is None or n is None:
            raise ValueError("S_diag needs mu and the chaos order n")
        return S_diag(x, mu, n, p.k, p.lam, p.cutoff_n, p.schur_K)
    x = np.asarray(x, dtype=float)
    if scaled:
        x = x / p.cutoff_n ** 2
    if name == "L":
        return L(x, p.z, p.lam)
    if name == "LB":
        return LB(x, p.z, p.lam, p.k)
    if name == "UB":
        return UB(x, p.z, p.lam, p.k)
    if name == "sigma":
        return sigma(x, p.z, p.lam, p.k)
    raise ValueError(f"unknown multiplier {name!r}")


def multiplier_identities_check(params: MultiplierParams, a, b, k=None, n_grid=1000, rtol=1e-8):
    """Integral identity, integral inequality and the LB/UB chains.

    Returns a dict of numbers plus an ``ok`` flag.
    """
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    k = params.k if k is None else k
    lam, z = params.lam, params.z
    w = lambda x: lam ** 2 / (x * x + x)
    # integrate in log x: the integrand is smooth there over many decades
    quad = lambda g: integrate.quad(lambda s: np.exp(s) * g(np.exp(s)), np.log(a), np.log(b),
                                    epsabs=0, epsrel=1e-13, limit=200)[0]
    lhs_ub = quad(lambda x: w(x) / UB(x, z, lam, k))
    rhs_ub = 2 * (LB(a, z, lam, k + 1) - LB(b, z, lam, k + 1))
    lhs_lb = quad(lambda x: w(x) / LB(x, z, lam, k))
    rhs_lb = 2 * (UB(a, z, lam, k) - UB(b, z, lam, k))
    rel = abs(lhs_ub - rhs_ub) / max(abs(rhs_ub), 1e-300)

    xs = np.logspace(np.log10(a), np.log10(b), n_grid)
    Lx = L(xs, z, lam)
    lb, ub = LB(xs, z, lam, k), UB(xs, z, lam, k)
    tol = 1e-12
    lb_chain = bool(np.all(1 - tol <= lb) and np.all(lb <= np.sqrt(Lx) * (1 + tol)))
    ub_chain = bool(np.all(np.sqrt(Lx) * (1 - tol) <= ub) and np.all(ub <= Lx * (1 + tol)))
    return {
        "k": k, "a": a, "b": b,
        "identity_lhs": lhs_ub, "identity_rhs": float(rhs_ub), "identity_rel_err": float(rel),
        "inequality_lhs": lhs_lb, "inequality_rhs": float(rhs_lb),
        "inequality_ok": bool(lhs_lb <= rhs_lb * (1 + tol)),
        "lb_chain_ok": lb_chain, "ub_chain_ok": ub_chain,
        "ok": bool(rel <= rtol and lhs_lb <= rhs_lb * (1 + tol) and lb_chain and ub_chain),
    }


def monotonicity_check(params: MultiplierParams, names=("L", "LB", "UB", "sigma"),
                       xs=None, zs=None):
    """Decreasing in x and nondecreasing in z on sampled grids."""
    xs = np.logspace(-4, 4, 200) if xs is None else np.asarray(xs)
    zs = np.linspace(1, 50, 60) if zs is None else np.asarray(zs)
    out = {}
    for nm in names:
        if nm == "sigma" and params.k < 3:
            continue
        vals = np.array([multiplier(nm, replace(params, z=z), xs) for z in zs])
        dec_x = bool(np.all(np.diff(vals, axis=1) <= 1e-14 * np.abs(vals[:, 1:])))
        inc_z = bool(np.all(np.diff(vals, axis=0) >= -1e-14 * np.abs(vals[1:])))
        # LB_0 is constant, which counts as monotone both ways
        out[nm] = dec_x and inc_z
    return out


def lm_bounds(l, k1, tail=()):
    """(1/4 base, middle, 4 base) for l + m = k1 with the tail k_2..k_n."""
    l, k1 = np.asarray(l), np.asarray(k1)
    m = k1 - l
    if not l.any() or not m.any():
        raise ValueError("l and m = k1 - l must both be nonzero")
    t = float(sum(np.dot(k, k) for k in np.asarray(tail).reshape(-1, 2)))
    base = float(l @ l + k1 @ k1) + t
    return 0.25 * base, float(l @ l + m @ m) + t, 4 * base


def lm_inequality_check(n_tails=200, max_entry=8, max_order=3, seed=0):
    """Check 1/4 (|l|^2 + |k_{1:n}|^2) <= |l|^2 + |m|^2 + |k_{2:n}|^2 <= 4 (...) for l + m = k1.

    Exhaustive over l, k1 with entries in [-max_entry, max_entry] (l, m, k1
    nonzero), combined with random tails k_2..k_n, n <= max_order.
    """
    rng = np.random.default_rng(seed)
    r = np.arange(-max_entry, max_entry + 1)
    g = np.stack(np.meshgrid(r, r, indexing="ij"), -1).reshape(-1, 2)
    g = g[np.any(g != 0, axis=1)]
    l = np.repeat(g, len(g), axis=0)
    k1 = np.tile(g, (len(g), 1))
    m = k1 - l
    keep = np.any(m != 0, axis=1)
    l, k1, m = l[keep], k1[keep], m[keep]
    sq = lambda v: (v ** 2).sum(axis=-1)
    worst_low, worst_high, n_checked, ok = np.inf, np.inf, 0, True
    for _ in range(n_tails):
        order = rng.integers(1, max_order + 1)
        tail = rng.integers(-max_entry, max_entry + 1, size=(order - 1, 2))
        tail_sq = float(sq(tail).sum()) if order > 1 else 0.0
        base = sq(l) + sq(k1) + tail_sq
        mid = sq(l) + sq(m) + tail_sq
        ok &= bool(np.all(0.25 * base <= mid) and np.all(mid <= 4 * base))
        worst_low = min(worst_low, float(np.min(mid / (0.25 * base))))
        worst_high = min(worst_high, float(np.min(4 * base / mid)))
        n_checked += len(l)
    return {"ok": ok, "n_checked": n_checked, "min_lower_margin": worst_low,
            "min_upper_margin": worst_high, "strict": worst_low > 1 and worst_high > 1}
