# Green-Kubo diffusivity at N=2 by the two estimators, plus its Laplace transform.
# Takes about 10 s on one core.
import numpy as np

from akpz.burgers import SimConfig
from akpz.harness import run_blocks
from akpz.lattice import TestFunction, build_lattice
from akpz import observables as obs

N = 2
lat = build_lattice(N)
print("modes at N=2:", len(lat.modes))

sim = SimConfig(cutoff_n=N, lam=1.0, dt=0.01, t_final=7.5, seed=1)
tr, _ = run_blocks(sim, [TestFunction.e0(lat)], 1000, block_size=100)

t = [0.5, 1.0, 2.0, 4.0]
a = obs.green_kubo_D(tr, t)
b = obs.direct_green_kubo(tr, t)
print(" t     D (B^2)          D (direct)")
for i, tt in enumerate(t):
    print(f"{tt:4.1f}  {a.mean[i]:.4f} +- {a.stderr[i]:.4f}  {b.mean[i]:.4f} +- {b.stderr[i]:.4f}")

# the transform and 1/mu + N^2 B-transform should agree
for mu in (0.5, 1.0):
    d = obs.laplace_D(tr, mu, "direct")
    bb = obs.laplace_B_variance(tr, "e0", mu * N ** 2)
    print(f"mu={mu}: {d.value:.4f}  vs  {1 / mu + N ** 2 * bb.value:.4f}")
