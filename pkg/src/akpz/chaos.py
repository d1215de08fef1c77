"""Generator of the cut-off dynamics on Wiener chaos, truncated resolvents.

A chaos-n element is stored by its symmetric kernel f evaluated on sorted
multisets S of lattice slots.  The random variable it represents is

    I_n(f) = sum over ordered tuples f(k_1..k_n) :x_{k_1} ... x_{k_n}:
           = sum_S mult(S) f(S) W_S,

with W_S the Wick monomial and mult(S) = n!/prod(c!) the number of
orderings.  Then E|I_n(f)|^2 = n! sum_S mult(S) |f(S)|^2, which fixes the
Gram weights n! * mult(S).

The generator L = L0 + A+ + A- is derived from the Fourier SDE:

    L0 W_S = -(1/2)|k_S|^2 W_S
    A      = lam sum_{l,m} |l+m| K_{l,m} x_l x_m d/dx_{l+m}

and splitting x_l x_m :Y: into Wick products gives the raising part A+ and
the lowering part A- (the triple contraction cancels, see
``triple_contraction``).  Operators here act on kernels; ``build_L0``
returns -L0, which is positive.
"""
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from math import factorial

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .lattice import TestFunction, build_lattice, kernel


class ChaosBasis:
    """Sorted multisets of ``order`` lattice slots."""

    def __init__(self, cutoff_n: int, order: int):
        self.lattice = build_lattice(cutoff_n)
        self.cutoff_n = cutoff_n
        self.order = order
        self.elements = list(combinations_with_replacement(range(len(self.lattice)), order))
        self.index = {e: i for i, e in enumerate(self.elements)}
        nf = factorial(order)
        self.mult = np.array([nf // np.prod([factorial(c) for c in Counter(e).values()])
                              for e in self.elements], dtype=float)
        n2 = self.lattice.norms2
        self.lam0 = np.array([0.5 * sum(n2[s] for s in e) for e in self.elements])
        self.weights = nf * self.mult

    def __len__(self):
        return len(self.elements)

    def __repr__(self):
        return f"ChaosBasis(N={self.cutoff_n}, order={self.order}, dim={len(self)})"


@lru_cache(maxsize=None)
def chaos_basis(cutoff_n: int, order: int) -> ChaosBasis:
    return ChaosBasis(cutoff_n, order)


@dataclass
class SparseOperator:
    source: int
    target: int
    matrix: sparse.csr_matrix

    def __matmul__(self, v):
        return self.matrix @ v


@dataclass
class ChaosVector:
    """Kernels per chaos order; missing orders are zero."""

    cutoff_n: int
    parts: dict

    def inner(self, other) -> complex:
        tot = 0.0
        for n, f in self.parts.items():
            if n in other.parts:
                b = chaos_basis(self.cutoff_n, n)
                tot = tot + np.sum(b.weights * f * np.conj(other.parts[n]))
        return tot

    def norm(self) -> float:
        return float(np.sqrt(np.real(self.inner(self))))


def fock_inner(basis: ChaosBasis, f, g):
    return np.sum(basis.weights * f * np.conj(g))


# ---------------------------------------------------------------- assembly

@lru_cache(maxsize=None)
def _pair_table(cutoff_n: int):
    """For every slot j: list of (l, m, K_{l,m}) with k_l + k_m = k_j, K != 0."""
    lat = build_lattice(cutoff_n)
    modes = lat.modes
    table = [[] for _ in range(len(lat))]
    for a in range(len(lat)):
        for b in range(len(lat)):
            s = modes[a] + modes[b]
            if not lat.contains(s):
                continue
            kv = kernel(modes[a], modes[b], cutoff_n)
            if kv != 0.0:
                table[lat.slot(s)].append((a, b, kv))
    return table


def _to_kernel_rep(mat_w, src: ChaosBasis, tgt: ChaosBasis):
    """Convert a matrix acting on Wick coefficients F = mult * f to kernels."""
    return sparse.diags(1.0 / tgt.mult) @ mat_w @ sparse.diags(src.mult)


def _sorted_replace(elem, remove, add):
    c = list(elem)
    for r in remove:
        c.remove(r)
    c.extend(add)
    return tuple(sorted(c))


@lru_cache(maxsize=None)
def _aplus_unit(cutoff_n: int, order: int):
    src, tgt = chaos_basis(cutoff_n, order), chaos_basis(cutoff_n, order + 1)
    lat = src.lattice
    table = _pair_table(cutoff_n)
    rows, cols, vals = [], [], []
    for i, e in enumerate(src.elements):
        for j, cj in Counter(e).items():
            pref = cj * lat.norms[j]
            for a, b, kv in table[j]:
                rows.append(tgt.index[_sorted_replace(e, (j,), (a, b))])
                cols.append(i)
                vals.append(pref * kv)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(len(tgt), len(src)))
    return _to_kernel_rep(mat, src, tgt).tocsr()


@lru_cache(maxsize=None)
def _aminus_unit(cutoff_n: int, order: int):
    src, tgt = chaos_basis(cutoff_n, order), chaos_basis(cutoff_n, order - 1)
    lat = src.lattice
    rows, cols, vals = [], [], []
    for i, e in enumerate(src.elements):
        cnt = Counter(e)
        for j, cj in cnt.items():
            rest = Counter(e)
            rest[j] -= 1
            for p, cp in rest.items():
                if cp == 0:
                    continue
                # d/dx_j then d/dx_p with p = -m, multiplied back by x_l, l = k_j - m
                lvec = lat.modes[j] + lat.modes[p]
                if not lat.contains(lvec):
                    continue
                l = lat.slot(lvec)
                m = lat.conj_index[p]
                kv = kernel(lat.modes[l], lat.modes[m], cutoff_n)
                if kv == 0.0:
                    continue
                rows.append(tgt.index[_sorted_replace(e, (j, p), (l,))])
                cols.append(i)
                vals.append(2.0 * lat.norms[j] * kv * cj * cp)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(len(tgt), len(src)))
    return _to_kernel_rep(mat, src, tgt).tocsr()


def build_L0(basis: ChaosBasis) -> SparseOperator:
    """-L0 on a chaos level: diagonal with entries |k_S|^2 / 2."""
    return SparseOperator(basis.order, basis.order, sparse.diags(basis.lam0).tocsr())


def build_Aplus(basis_n: ChaosBasis, basis_up: ChaosBasis, lam, cutoff_n=None) -> SparseOperator:
    cutoff_n = basis_n.cutoff_n if cutoff_n is None else cutoff_n
    if basis_up.order != basis_n.order + 1 or cutoff_n != basis_n.cutoff_n:
        raise ValueError("A+ maps order n to n+1 on the same lattice")
    if basis_n.order == 0:
        return SparseOperator(0, 1, sparse.csr_matrix((len(basis_up), 1)))
    return SparseOperator(basis_n.order, basis_up.order, lam * _aplus_unit(cutoff_n, basis_n.order))


def build_Aminus(basis_n: ChaosBasis, basis_down: ChaosBasis, lam, cutoff_n=None) -> SparseOperator:
    cutoff_n = basis_n.cutoff_n if cutoff_n is None else cutoff_n
    if basis_down.order != basis_n.order - 1 or cutoff_n != basis_n.cutoff_n:
        raise ValueError("A- maps order n to n-1 on the same lattice")
    if basis_n.order <= 1:
        return SparseOperator(basis_n.order, basis_down.order,
                              sparse.csr_matrix((len(basis_down), len(basis_n))))
    return SparseOperator(basis_n.order, basis_down.order, lam * _aminus_unit(cutoff_n, basis_n.order))


def triple_contraction(basis_n: ChaosBasis, lam=1.0):
    """The order n -> n-3 piece of the generator (Wick coefficient form).

    lam sum_{l,m} |l+m| K_{l,m} d_{-l} d_{-m} d_{l+m}; it must vanish identically,
    which is how invariance of white noise shows up on Wick polynomials.
    """
    n = basis_n.order
    lat = basis_n.lattice
    if n < 3:
        return np.zeros((0, len(basis_n)))
    tgt = chaos_basis(basis_n.cutoff_n, n - 3)
    table = _pair_table(basis_n.cutoff_n)
    out = np.zeros((len(tgt), len(basis_n)))
    for i, e in enumerate(basis_n.elements):
        cnt = Counter(e)
        for j, cj in cnt.items():
            for a, b, kv in table[j]:
                r = Counter(e)
                coef = cj
                r[j] -= 1
                na, nb = lat.conj_index[a], lat.conj_index[b]
                coef *= r[na]
                if coef == 0:
                    continue
                r[na] -= 1
                coef *= r[nb]
                if coef == 0:
                    continue
                r[nb] -= 1
                t = tuple(sorted(r.elements()))
                out[tgt.index[t], i] += lam * lat.norms[j] * kv * coef
    return out


def n_phi_vector(phi: TestFunction, lam, basis_2: ChaosBasis) -> ChaosVector:
    """Chaos-2 kernel of lam N[eta][phi]: f({l, m}) = lam K_{l,m} phi_{-l-m}."""
    lat = basis_2.lattice
    if phi.lattice.cutoff_n != basis_2.cutoff_n:
        raise ValueError("test function and chaos basis live on different lattices")
    N = basis_2.cutoff_n
    f = np.zeros(len(basis_2), dtype=complex)
    for i, (a, b) in enumerate(basis_2.elements):
        s = lat.modes[a] + lat.modes[b]
        kv = kernel(lat.modes[a], lat.modes[b], N)
        if kv == 0.0:
            continue
        ph = phi.zero if not s.any() else np.conj(phi.coeffs[lat.slot(s)])
        f[i] = lam * kv * ph
    return ChaosVector(N, {2: f})


# ------------------------------------------------------------------ solving

class _Factor:
    """Solve against a diagonal, sparse or dense block."""

    def __init__(self, mat):
        if isinstance(mat, np.ndarray) and mat.ndim == 1:
            self.kind, self.diag = "diag", mat
        elif sparse.issparse(mat):
            self.kind, self.lu = "sparse", spla.splu(sparse.csc_matrix(mat))
        else:
            self.kind, self.lu = "dense", sla.lu_factor(mat)

    def solve(self, rhs):
        if sparse.issparse(rhs):
            rhs = rhs.toarray()
        if self.kind == "diag":
            return rhs / (self.diag[:, None] if rhs.ndim == 2 else self.diag)
        if self.kind == "sparse":
            return self.lu.solve(rhs)
        return sla.lu_solve(self.lu, rhs)


class Hierarchy:
    """Truncated generator equation on chaos levels 1..n for fixed (N, lam)."""

    def __init__(self, cutoff_n: int, lam: float):
        self.cutoff_n = cutoff_n
        self.lam = lam

    def basis(self, n):
        return chaos_basis(self.cutoff_n, n)

    def up(self, n):
        """A+ from level n to n+1 (kernel representation)."""
        return self.lam * _aplus_unit(self.cutoff_n, n)

    def down(self, n):
        """A- from level n+1 to n."""
        return self.lam * _aminus_unit(self.cutoff_n, n + 1)

    def schur_level(self, mu, top, level):
        """Factorisations of S_j for j = level..top (S_top = mu - L0)."""
        if top < level:
            return {}
        facs = {top: _Factor(mu + self.basis(top).lam0)}
        S = None
        for j in range(top - 1, level - 1, -1):
            X = facs[j + 1].solve(self.up(j))
            D = np.diag(mu + self.basis(j).lam0)
            W = self.down(j)
            prod = W @ X
            S = D - (prod.toarray() if sparse.issparse(prod) else prod)
            facs[j] = _Factor(S)
        return facs

    def H_on_level(self, mu, k, level=2):
        """Schur operator H_k restricted to a chaos level (dense matrix)."""
        if k <= 2:
            return np.zeros((len(self.basis(level)),) * 2)
        facs = self.schur_level(mu, level + k - 2, level + 1)
        X = facs[level + 1].solve(self.up(level))
        return -np.asarray(self.down(level) @ X)

    def solve(self, mu, n_max, n_phi: ChaosVector):
        if mu <= 0:
            raise ValueError("mu must be positive")
        if n_max < 2:
            raise ValueError("truncation level must be at least 2")
        rhs = n_phi.parts[2]
        facs = self.schur_level(mu, n_max, 3)
        b1, b2 = self.basis(1), self.basis(2)
        T = np.diag(mu + b2.lam0)
        if n_max >= 3:
            X = facs[3].solve(self.up(2))
            T = T - np.asarray(self.down(2) @ X)
        U1, W1 = self.up(1).toarray(), self.down(1).toarray()
        T = T - U1 @ (W1 / (mu + b1.lam0)[:, None])
        h = {2: sla.solve(T, rhs)}
        h[1] = (W1 @ h[2]) / (mu + b1.lam0)
        for j in range(3, n_max + 1):
            h[j] = facs[j].solve(self.up(j - 1) @ h[j - 1])
        value = fock_inner(b2, rhs, h[2])
        return ChaosVector(self.cutoff_n, h), value

    def apply(self, mu, h: ChaosVector, n_max):
        """(mu - L_{n_max}) h with the truncation at level n_max."""
        out = {}
        for j in range(1, n_max + 1):
            v = (mu + self.basis(j).lam0) * h.parts.get(j, 0)
            if j - 1 >= 1 and j - 1 in h.parts:
                v = v - self.up(j - 1) @ h.parts[j - 1]
            if j + 1 <= n_max and j + 1 in h.parts:
                v = v - self.down(j) @ h.parts[j + 1]
            out[j] = v
        return ChaosVector(self.cutoff_n, out)

    def dense_matrix(self, mu, n_max):
        """Full block matrix of mu - L on levels 1..n_max (oracle only)."""
        dims = [len(self.basis(j)) for j in range(1, n_max + 1)]
        off = np.concatenate([[0], np.cumsum(dims)])
        M = np.zeros((off[-1], off[-1]))
        for j in range(1, n_max + 1):
            a = slice(off[j - 1], off[j])
            M[a, a] = np.diag(mu + self.basis(j).lam0)
            if j < n_max:
                b = slice(off[j], off[j + 1])
                M[b, a] = -self.up(j).toarray()
                M[a, b] = -self.down(j).toarray()
        return M, off


@lru_cache(maxsize=16)
def hierarchy(cutoff_n: int, lam: float) -> Hierarchy:
    return Hierarchy(cutoff_n, lam)


def solve_truncated(mu, n_max, n_phi: ChaosVector, lam, tol=1e-9):
    """Solve the truncated system; returns (h, value) and checks the residual."""
    hr = hierarchy(n_phi.cutoff_n, lam)
    h, value = hr.solve(mu, n_max, n_phi)
    res = hr.apply(mu, h, n_max)
    res.parts[2] = res.parts[2] - n_phi.parts[2]
    nrm = n_phi.norm()
    if nrm > 0 and res.norm() > tol * nrm:
        raise RuntimeError(f"truncated solve residual {res.norm():.3g} exceeds {tol}*|n|")
    if abs(np.imag(value)) > 1e-9 * max(abs(value), 1e-300):
        raise RuntimeError("resolvent quadratic form is not real")
    return h, float(np.real(value))


def sandwich(mu, n_list, n_phi: ChaosVector, lam, tol=1e-9):
    """Values v_n for n in n_list with the monotone/interleaving checks.

    Returns (lower, upper, {n: v_n}) with lower = max over odd n, upper = min
    over even n.
    """
    vals = {n: solve_truncated(mu, n, n_phi, lam)[1] for n in sorted(n_list)}
    odd = [vals[n] for n in sorted(vals) if n % 2]
    even = [vals[n] for n in sorted(vals) if n % 2 == 0]
    scale = max(1.0, *(abs(v) for v in vals.values()))
    if any(b < a - tol * scale for a, b in zip(odd, odd[1:])):
        raise RuntimeError(f"odd truncations not increasing: {vals}")
    if any(b > a + tol * scale for a, b in zip(even, even[1:])):
        raise RuntimeError(f"even truncations not decreasing: {vals}")
    if odd and even and max(odd) > min(even) + tol * scale:
        raise RuntimeError(f"odd and even truncations do not interleave: {vals}")
    lower = max(odd) if odd else -np.inf
    upper = min(even) if even else np.inf
    return lower, upper, vals


def resolvent_target(phi: TestFunction, lam, mu, n_list=(3, 4)):
    """Bounds on (2/mu)<n_phi, (mu - L)^{-1} n_phi>, i.e. on the Laplace transform of E[B^2]."""
    nv = n_phi_vector(phi, lam, chaos_basis(phi.lattice.cutoff_n, 2))
    lo, hi, vals = sandwich(mu, n_list, nv, lam)
    return 2 / mu * lo, 2 / mu * hi, vals


# ------------------------------------------------------------ diagnostics

def _weighted_eigs(A, weights, B=None):
    """Eigenvalues of a G-self-adjoint matrix A (G = diag(weights))."""
    GA = weights[:, None] * A
    sym = 0.5 * (GA + GA.conj().T)
    asym = np.max(np.abs(GA - GA.conj().T)) / max(np.max(np.abs(GA)), 1e-300)
    Bm = np.diag(weights) if B is None else B
    return sla.eigh(sym, Bm, eigvals_only=True), asym


def schur_positivity_check(mu, k_max, cutoff_n, lam, level=2):
    """Minimal eigenvalue of H_3..H_{k_max} on Fock_level relative to the norm."""
    hr = hierarchy(cutoff_n, lam)
    w = hr.basis(level).weights
    report = {}
    for k in range(3, k_max + 1):
        H = hr.H_on_level(mu, k, level)
        ev, asym = _weighted_eigs(H, w)
        norm = max(np.max(np.abs(ev)), 1e-300)
        report[k] = {"min_eig": float(ev[0]), "max_eig": float(ev[-1]), "asymmetry": float(asym),
                     "ok": bool(ev[0] >= -1e-10 * norm and asym < 1e-10)}
    return report


def theorem_bound_probe(mu, k, cutoff_n, lam, n_test_vectors=200, schur_K=1.0, seed=0):
    """Empirical constants in H_{2k+1} <= C (-L0) S_{2k+1} and H_{2k+2} >= C^{-1} (-L0) S_{2k+2}.

    Works on Fock_2.  The upper probe reports the largest Rayleigh ratio
    <H psi, psi> / <(-L0) S psi, psi>; the lower probe the smallest.  Order 1
    has no Schur operator and order 2 is zero by convention, so those slots
    are reported as not applicable / trivial.
    """
    from .multipliers import S_diag

    hr = hierarchy(cutoff_n, lam)
    b2 = hr.basis(2)
    w = b2.weights
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal((n_test_vectors, len(b2))) + 1j * rng.standard_normal((n_test_vectors, len(b2)))
    out = {"mu": mu, "k": k, "cutoff_n": cutoff_n, "lam": lam, "schur_K": schur_K}
    for side, order in (("upper", 2 * k + 1), ("lower", 2 * k + 2)):
        if order < 3:
            out[side] = {"order": order, "status": "trivial" if order == 2 else "not applicable"}
            continue
        H = hr.H_on_level(mu, order, 2)
        dvals = b2.lam0 * S_diag(b2.lam0, mu, 2, order, lam, cutoff_n, schur_K)
        num = np.real(np.einsum("i,ti,ti->t", w, psi @ H.T, psi.conj()))
        den = np.real(np.einsum("i,ti,ti->t", w * dvals, psi, psi.conj()))
        entry = {"order": order, "S_min": float(dvals.min()), "S_max": float(dvals.max())}
        if np.all(dvals > 0):
            ev, _ = _weighted_eigs(H, w, np.diag(w * dvals))
            entry["exact_max_ratio"] = float(ev[-1])
            entry["exact_min_ratio"] = float(ev[0])
        good = den > 0
        if good.any():
            r = num[good] / den[good]
            entry["sampled_max_ratio"] = float(r.max())
            entry["sampled_min_ratio"] = float(r.min())
        else:
            entry["status"] = "trivial: (-L0) S <= 0 on Fock_2, so the lower bound holds with any constant"
        entry["finite"] = bool(np.all(np.isfinite(num)) and np.all(np.isfinite(den)))
        out[side] = entry
    return out
