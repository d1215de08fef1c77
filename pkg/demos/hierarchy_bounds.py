# Truncated chaos hierarchy: odd truncations bound from below, even from above.
import numpy as np

from akpz import chaos
from akpz.lattice import TestFunction, build_lattice

lam = 1.0
for N in (1, 2):
    nv = chaos.n_phi_vector(TestFunction.e0(build_lattice(N)), lam, chaos.chaos_basis(N, 2))
    print(f"N={N}, |N phi|^2 = {np.real(nv.inner(nv)):.6f}")
    for mu in (0.1, 1.0):
        lo, hi, vals = chaos.sandwich(mu, [2, 3, 4, 5], nv, lam)
        seq = "  ".join(f"n={n}: {v:.6f}" for n, v in vals.items())
        print(f"  mu={mu}: {seq}   width {hi - lo:.2e}")

# N=1 is degenerate: no two unit modes add up to a unit mode
print("1/pi^2 =", 1 / np.pi ** 2)
