"""Time integration of the cut-off stochastic Burgers system in Fourier space.

    du_k = (-|k|^2/2 u_k + lam M_k[u]) dt + |k| dB_k,   0 < |k| <= N
    dh_0 = lam N_0[u] dt + dB_0

with M_k = |k| C_k and C_k = sum_{l+m=k} K_{l,m} u_l u_m.  Everything is
vectorised over a leading trajectory axis; every trajectory owns its own
random stream so a block of trajectories gives the same numbers as running
them one by one.
"""
import struct
from dataclasses import dataclass, asdict, field
from functools import lru_cache

import numpy as np
from scipy import sparse

from .lattice import (
    ModeLattice, SpectralField, TestFunction, build_lattice, kernel, white_noise_coeffs,
)

BACKENDS = ("direct", "fft")


# ---------------------------------------------------------------- nonlinearity

class DirectConvolution:
    """O(N^4) pair sum, used as the reference implementation."""

    def __init__(self, lattice: ModeLattice, cutoff_n: int):
        out = build_lattice(cutoff_n)
        modes = lattice.modes
        inside = np.flatnonzero(lattice.norms2 <= cutoff_n ** 2)
        a, b = np.meshgrid(inside, inside, indexing="ij")
        a, b = a.ravel(), b.ravel()
        s = modes[a] + modes[b]
        ok = (s ** 2).sum(axis=1) <= cutoff_n ** 2
        a, b, s = a[ok], b[ok], s[ok]
        kv = kernel(modes[a], modes[b], cutoff_n)
        nz = kv != 0.0
        a, b, s, kv = a[nz], b[nz], s[nz], kv[nz]
        # row 0 collects the k = 0 component, rows 1.. the output lattice slots
        rows = np.array([0 if (x == 0 and y == 0) else 1 + out.index[(x, y)] for x, y in s])
        self.a, self.b = a, b
        self.matrix = sparse.csr_matrix((kv, (rows, np.arange(len(kv)))), shape=(len(out) + 1, len(kv)))
        self.out = out

    def __call__(self, u):
        prod = u[..., self.a] * u[..., self.b]
        c = (self.matrix @ prod.reshape(-1, prod.shape[-1]).T).T.reshape(u.shape[:-1] + (-1,))
        return c[..., 1:], c[..., 0]


class FFTConvolution:
    """Pseudo-spectral evaluation on a zero-padded grid (real fields only).

    With r_j the real field with coefficients (i k_j/|k|) u_k, the pair sum is
    the projection onto |k| <= N of (r_1^2 - r_2^2) / (2 pi).
    """

    def __init__(self, lattice: ModeLattice, cutoff_n: int, grid: int | None = None):
        grid = 4 * cutoff_n if grid is None else int(grid)
        if grid < 4 * cutoff_n:
            raise ValueError(f"fft grid {grid} too small for cutoff {cutoff_n}; need >= {4 * cutoff_n}")
        self.grid = grid
        self.out = build_lattice(cutoff_n)
        inside = np.flatnonzero(lattice.norms2 <= cutoff_n ** 2)
        m = lattice.modes[inside]
        half = m[:, 1] >= 0
        self.src = inside[half]
        self.src_i = (m[half, 0] % grid, m[half, 1])
        riesz = 1j * lattice.modes / lattice.norms[:, None]
        self.w1 = riesz[self.src, 0]
        self.w2 = riesz[self.src, 1]
        om = self.out.modes
        up = om[:, 1] >= 0
        self.dst_up = np.flatnonzero(up)
        self.dst_up_i = (om[up, 0] % grid, om[up, 1])
        self.dst_dn = np.flatnonzero(~up)
        self.dst_dn_i = ((-om[~up, 0]) % grid, -om[~up, 1])

    def _to_grid(self, vals, batch):
        g = np.zeros(batch + (self.grid, self.grid // 2 + 1), dtype=complex)
        g[..., self.src_i[0], self.src_i[1]] = vals
        return np.fft.irfft2(g, s=(self.grid, self.grid), norm="forward")

    def __call__(self, u):
        batch = u.shape[:-1]
        us = u[..., self.src]
        p = self._to_grid(us * self.w1, batch) ** 2 - self._to_grid(us * self.w2, batch) ** 2
        ph = np.fft.rfft2(p, norm="forward") / (2.0 * np.pi)
        c = np.empty(batch + (len(self.out),), dtype=complex)
        c[..., self.dst_up] = ph[..., self.dst_up_i[0], self.dst_up_i[1]]
        c[..., self.dst_dn] = np.conj(ph[..., self.dst_dn_i[0], self.dst_dn_i[1]])
        return c, ph[..., 0, 0]


@lru_cache(maxsize=32)
def _engine(field_cutoff: int, cutoff_n: int, backend: str, grid=None):
    lat = build_lattice(field_cutoff)
    if backend == "direct":
        return DirectConvolution(lat, cutoff_n)
    if backend == "fft":
        return FFTConvolution(lat, cutoff_n, grid)
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


def pair_sum(u, lattice: ModeLattice, cutoff_n: int, backend="direct", grid=None):
    """C_k = sum_{l+m=k} K_{l,m} u_l u_m on the cutoff lattice, plus C_0."""
    if cutoff_n > lattice.cutoff_n:
        raise ValueError("nonlinearity cutoff exceeds the field lattice")
    return _engine(lattice.cutoff_n, cutoff_n, backend, grid)(np.asarray(u, dtype=complex))


def nonlinearity(f: SpectralField, cutoff_n: int, backend="direct", grid=None):
    """Return (M[u] as a SpectralField on the cutoff lattice, zero component N_0)."""
    c, c0 = pair_sum(f.coeffs, f.lattice, cutoff_n, backend, grid)
    out = build_lattice(cutoff_n)
    return SpectralField(out, out.norms * c, 0.0), np.real(c0)


# ------------------------------------------------------------------ stepping

@dataclass(frozen=True)
class SimConfig:
    cutoff_n: int
    lam: float
    dt: float
    t_final: float
    record_stride: int = 1
    seed: int = 0
    backend: str = ""
    allow_large_dt: bool = False

    def __post_init__(self):
        if self.cutoff_n < 1:
            raise ValueError("cutoff_n must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.dt <= 0 or self.t_final < self.dt:
            raise ValueError("need 0 < dt <= t_final")
        if not self.allow_large_dt and self.dt > 0.5 / self.cutoff_n ** 2 + 1e-15:
            raise ValueError(
                f"dt={self.dt} violates the stability rule dt <= 0.5/N^2 = {0.5 / self.cutoff_n ** 2}")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if not self.backend:
            object.__setattr__(self, "backend", "direct" if self.cutoff_n <= 4 else "fft")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def to_dict(self):
        return asdict(self)


def phi1(z):
    """(e^z - 1)/z, stable near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-5
    zs = np.where(small, 1.0, z)
    return np.where(small, 1 + z / 2 + z * z / 6, np.expm1(zs) / zs)


class Stepper:
    """Exponential Euler-Maruyama coefficients for one (N, lam, dt)."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.lattice = build_lattice(cfg.cutoff_n)
        lat = self.lattice
        a = 0.5 * lat.norms2 * cfg.dt
        self.decay = np.exp(-a)
        self.drift = cfg.lam * cfg.dt * phi1(-a) * lat.norms
        # u-noise: complex standard Gaussian times sqrt(1 - e^{-|k|^2 dt})
        self.noise_std = np.sqrt(-np.expm1(-lat.norms2 * cfg.dt))
        self.sqrt_dt = np.sqrt(cfg.dt)
        self.n_normals = 2 * len(lat.pair_reps) + 1
        self.engine = _engine(cfg.cutoff_n, cfg.cutoff_n, cfg.backend, None)

    def noise(self, g):
        """Map a (..., n_normals) array of standard normals to (xi, dB_0)."""
        lat = self.lattice
        reps = lat.pair_reps
        r = len(reps)
        z = (g[..., :r] + 1j * g[..., r:2 * r]) / np.sqrt(2.0)
        xi = np.empty(g.shape[:-1] + (len(lat),), dtype=complex)
        xi[..., reps] = z
        xi[..., lat.conj_index[reps]] = np.conj(z)
        return self.noise_std * xi, self.sqrt_dt * g[..., -1]

    def advance(self, u, h0, c, c0, g):
        """One step given the pair sum (c, c0) at the current state."""
        du, db0 = self.noise(g)
        u_new = self.decay * u + self.drift * c + du
        h0_new = h0 + self.cfg.lam * self.cfg.dt * np.real(c0) + db0
        return u_new, h0_new, du, db0


def step(state: SpectralField, cfg: SimConfig, rng: np.random.Generator) -> SpectralField:
    """Single exponential Euler-Maruyama step of one field."""
    st = Stepper(cfg)
    c, c0 = st.engine(state.coeffs)
    g = rng.standard_normal(st.n_normals)
    u, h0, _, _ = st.advance(state.coeffs, float(np.real(state.zero_mode)), c, c0, g)
    if not np.all(np.isfinite(u)) or not np.isfinite(h0):
        raise FloatingPointError("non-finite state after step (blow-up)")
    return SpectralField(state.lattice, u, h0)


# ------------------------------------------------------------------ ensembles

def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory ``index`` of a run."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),)))


PROBES = ("n", "B", "h", "A", "C")


@dataclass
class Trajectory:
    """Recorded output of a block of trajectories (leading axis = trajectory).

    ``series[phi_id][name]`` has shape (n_traj, n_times) for name in
    n (lam N[u][phi]), B (its time integral), h (h[phi]), A, C (the linear
    drift and noise parts of h[phi] - h[phi](0)).
    """

    config: SimConfig
    times: np.ndarray
    indices: np.ndarray
    zero_mode: np.ndarray
    fields: np.ndarray | None = None
    series: dict = field(default_factory=dict)

    @property
    def n_traj(self) -> int:
        return len(self.indices)

    def b_series(self, phi_id):
        return self.series[phi_id]["B"]

    @staticmethod
    def concat(blocks):
        blocks = sorted(blocks, key=lambda b: b.indices[0])
        first = blocks[0]
        series = {
            pid: {nm: np.concatenate([b.series[pid][nm] for b in blocks]) for nm in first.series[pid]}
            for pid in first.series
        }
        fields = None if first.fields is None else np.concatenate([b.fields for b in blocks])
        return Trajectory(first.config, first.times, np.concatenate([b.indices for b in blocks]),
                          np.concatenate([b.zero_mode for b in blocks]), fields, series)


def _phi_matrix(phis, lattice):
    # columns phi_{-k} = conj(phi_k); the zero mode handled separately
    P = np.stack([np.conj(p.coeffs) for p in phis], axis=1) if phis else np.zeros((len(lattice), 0))
    z = np.array([p.zero for p in phis], dtype=float)
    return P, z


def simulate(cfg: SimConfig, phis=(), n_traj: int = 1, first_index: int = 0,
             record_fields: bool = False, u0=None) -> Trajectory:
    """Run ``n_traj`` trajectories from white noise (or ``u0``) to t_final.

    Trajectory i uses the stream trajectory_rng(cfg.seed, first_index + i)
    for its initial condition and then for its noise, step by step.
    """
    st = Stepper(cfg)
    lat = st.lattice
    for p in phis:
        if p.lattice.cutoff_n != lat.cutoff_n:
            raise ValueError(f"test function {p.id!r} lives on a different lattice")
    idx = np.arange(first_index, first_index + n_traj)
    rngs = [trajectory_rng(cfg.seed, i) for i in idx]
    if u0 is None:
        u = np.stack([white_noise_coeffs(lat, r) for r in rngs])
    else:
        u = np.broadcast_to(np.asarray(u0, dtype=complex), (n_traj, len(lat))).copy()
    h0 = np.zeros(n_traj)
    P, pz = _phi_matrix(list(phis), lat)
    lam = cfg.lam
    inv_norm = 1.0 / lat.norms

    n_steps = cfg.n_steps
    rec_steps = np.arange(0, n_steps + 1, cfg.record_stride)
    times = rec_steps * cfg.dt
    n_rec = len(rec_steps)
    out = {nm: np.zeros((n_traj, n_rec, len(phis))) for nm in PROBES}
    zero_rec = np.zeros((n_traj, n_rec))
    fields_rec = np.zeros((n_traj, n_rec, len(lat)), dtype=complex) if record_fields else None

    def observe(u, h0, c, c0):
        nval = lam * np.real(c @ P + np.real(c0)[:, None] * pz)
        hval = np.real((u * inv_norm) @ P) + h0[:, None] * pz
        aval = np.real((u * (-0.5 * lat.norms)) @ P)
        return nval, hval, aval

    c, c0 = st.engine(u)
    n_cur, h_cur, a_cur = observe(u, h0, c, c0)
    acc = {nm: np.zeros((n_traj, len(phis))) for nm in ("B", "A", "C")}

    def record(j, u, h0):
        out["n"][:, j] = n_cur
        out["h"][:, j] = h_cur
        for nm in ("B", "A", "C"):
            out[nm][:, j] = acc[nm]
        zero_rec[:, j] = h0
        if fields_rec is not None:
            fields_rec[:, j] = u

    record(0, u, h0)
    j = 1
    chunk = max(1, int(4e6 // max(1, n_traj * st.n_normals)))
    s = 0
    dt = cfg.dt
    while s < n_steps:
        m = min(chunk, n_steps - s)
        g = np.stack([r.standard_normal((m, st.n_normals)) for r in rngs], axis=1)
        for i in range(m):
            u, h0, du, db0 = st.advance(u, h0, c, c0, g[i])
            c, c0 = st.engine(u)
            n_new, h_new, a_new = observe(u, h0, c, c0)
            acc["B"] += 0.5 * dt * (n_cur + n_new)
            acc["A"] += 0.5 * dt * (a_cur + a_new)
            acc["C"] += np.real((du * inv_norm) @ P) + db0[:, None] * pz
            n_cur, h_cur, a_cur = n_new, h_new, a_new
            s += 1
            if s % cfg.record_stride == 0:
                if not np.all(np.isfinite(u)):
                    bad = idx[~np.all(np.isfinite(u), axis=1)]
                    raise FloatingPointError(
                        f"blow-up at step {s} (t={s * dt:.6g}) in trajectories {bad.tolist()} "
                        f"(master seed {cfg.seed})")
                record(j, u, h0)
                j += 1
    series = {p.id: {nm: out[nm][:, :, q] for nm in PROBES} for q, p in enumerate(phis)}
    return Trajectory(cfg, times, idx, zero_rec, fields_rec, series)


# ------------------------------------------------------------- persistence

_MAGIC = b"AKPZSNAP"
_HEADER = struct.Struct("<8sIdIII")  # magic, cutoff, dt, stride, n_modes, n_snapshots


def write_snapshots(path, cfg: SimConfig, snapshots):
    """Binary dump: little-endian header then complex128 values in lattice order."""
    snaps = np.ascontiguousarray(snapshots, dtype="<c16")
    n_snap, n_modes = snaps.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, cfg.cutoff_n, cfg.dt, cfg.record_stride, n_modes, n_snap))
        fh.write(snaps.tobytes())


def read_snapshots(path):
    """Inverse of write_snapshots; returns (header dict, array (n_snap, n_modes))."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, cutoff, dt, stride, n_modes, n_snap = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError("not a snapshot file")
    body = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if body.size != n_modes * n_snap:
        raise ValueError("truncated snapshot file")
    header = dict(cutoff_n=cutoff, dt=dt, record_stride=stride)
    return header, body.reshape(n_snap, n_modes).astype(complex)


def snapshots_csv(path, cfg: SimConfig, times, snapshots, max_cutoff=8):
    lat = build_lattice(cfg.cutoff_n)
    if cfg.cutoff_n > max_cutoff:
        raise ValueError("CSV export is meant for small N")
    with open(path, "w") as fh:
        fh.write("t,k1,k2,re,im\n")
        for t, row in zip(times, snapshots):
            for (k1, k2), v in zip(lat.modes, row):
                fh.write(f"{t!r},{k1},{k2},{v.real!r},{v.imag!r}\n")
