"""Fourier lattice bookkeeping for the cut-off AKPZ / Burgers system.

Modes are the integer pairs k with 0 < |k| <= N (Euclidean norm), stored in
lexicographic order on (k1, k2).  Fields on the torus of side 2*pi are
expanded as f(x) = sum_k f_k e^{i k.x} / (2 pi), so that ||f||^2 = sum |f_k|^2
and f[phi] = sum_k f_k phi_{-k}.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * np.pi


class ModeLattice:
    """All integer modes 0 < |k| <= N, lexicographically ordered.

    Attributes
    ----------
    cutoff_n : int
    modes : (n, 2) int array
    norms, norms2 : |k| and |k|^2 per slot
    conj_index : slot of -k for every slot
    """

    def __init__(self, cutoff_n: int):
        cutoff_n = int(cutoff_n)
        if cutoff_n < 1:
            raise ValueError(f"cutoff must be a positive integer, got {cutoff_n}")
        self.cutoff_n = cutoff_n
        r = np.arange(-cutoff_n, cutoff_n + 1)
        k1, k2 = np.meshgrid(r, r, indexing="ij")
        n2 = k1 ** 2 + k2 ** 2
        keep = (n2 > 0) & (n2 <= cutoff_n ** 2)
        # meshgrid with ij indexing already walks (k1, k2) lexicographically
        self.modes = np.stack([k1[keep], k2[keep]], axis=1)
        self.modes.flags.writeable = False
        self.norms2 = (self.modes ** 2).sum(axis=1).astype(float)
        self.norms = np.sqrt(self.norms2)
        self.index = {tuple(int(c) for c in k): s for s, k in enumerate(self.modes)}
        self.conj_index = np.array([self.index[(-int(a), -int(b))] for a, b in self.modes])
        # one representative per conjugate pair: the lexicographically larger one
        self.pair_reps = np.flatnonzero(self.conj_index < np.arange(len(self.modes)))

    def __len__(self):
        return len(self.modes)

    def __repr__(self):
        return f"ModeLattice(N={self.cutoff_n}, modes={len(self)})"

    def slot(self, k) -> int:
        return self.index[(int(k[0]), int(k[1]))]

    def contains(self, k) -> bool:
        return (int(k[0]), int(k[1])) in self.index


@lru_cache(maxsize=None)
def build_lattice(cutoff_n: int) -> ModeLattice:
    """Cached constructor; lattices are immutable so sharing is safe."""
    return ModeLattice(cutoff_n)


def kernel(l, m, cutoff_n):
    """Interaction coefficient K^N_{l,m}.

    Works on single modes or on broadcastable arrays of shape (..., 2).
    Returns exactly 0.0 outside the triple cutoff.
    """
    l = np.asarray(l)
    m = np.asarray(m)
    l2 = (l ** 2).sum(axis=-1)
    m2 = (m ** 2).sum(axis=-1)
    if np.any(l2 == 0) or np.any(m2 == 0):
        raise ValueError("kernel is undefined on the zero mode")
    s = l + m
    n2 = cutoff_n ** 2
    inside = (l2 <= n2) & (m2 <= n2) & ((s ** 2).sum(axis=-1) <= n2)
    c = l[..., 1] * m[..., 1] - l[..., 0] * m[..., 0]
    val = np.where(inside, c / (TWO_PI * np.sqrt(l2 * m2.astype(float))), 0.0)
    return float(val) if val.ndim == 0 else val


@dataclass
class SpectralField:
    """Complex coefficients on a lattice plus a real zero mode.

    ``coeffs`` may carry leading batch axes; the last axis is the slot axis.
    """

    lattice: ModeLattice
    coeffs: np.ndarray
    zero_mode: np.ndarray | float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape[-1] != len(self.lattice):
            raise ValueError("coefficient array does not match lattice size")

    def is_real(self, atol=1e-12) -> bool:
        c = self.coeffs
        return bool(np.allclose(c[..., self.lattice.conj_index], np.conj(c), atol=atol, rtol=0))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.coeffs)) and np.all(np.isfinite(self.zero_mode)))

    def copy(self):
        return SpectralField(self.lattice, self.coeffs.copy(), np.copy(self.zero_mode))


def white_noise_coeffs(lattice: ModeLattice, rng: np.random.Generator, size=()):
    """Raw coefficient array of a white-noise sample, shape size + (n_modes,)."""
    size = tuple(np.atleast_1d(size)) if size != () else ()
    reps = lattice.pair_reps
    g = rng.standard_normal(size + (2, len(reps)))
    z = (g[..., 0, :] + 1j * g[..., 1, :]) / np.sqrt(2.0)
    out = np.empty(size + (len(lattice),), dtype=complex)
    out[..., reps] = z
    out[..., lattice.conj_index[reps]] = np.conj(z)
    return out


def sample_white_noise(lattice: ModeLattice, rng: np.random.Generator) -> SpectralField:
    """Exact sample of spatial white noise restricted to the lattice."""
    return SpectralField(lattice, white_noise_coeffs(lattice, rng), 0.0)


def project_cutoff(f: SpectralField, m: int) -> SpectralField:
    """Zero every coefficient with |k| > m (sharp Fourier cutoff)."""
    if m > f.lattice.cutoff_n:
        raise ValueError("projection radius exceeds the lattice cutoff")
    mask = f.lattice.norms2 <= m * m
    return SpectralField(f.lattice, np.where(mask, f.coeffs, 0.0), np.copy(f.zero_mode))


def restrict(f: SpectralField, target: ModeLattice) -> SpectralField:
    """Re-express a field on a smaller lattice (drops |k| > target cutoff)."""
    idx = [f.lattice.slot(k) for k in target.modes]
    return SpectralField(target, f.coeffs[..., idx], np.copy(f.zero_mode))


def height_from_velocity(f: SpectralField) -> SpectralField:
    """h_k = u_k / |k|; the zero mode is passed through."""
    return SpectralField(f.lattice, f.coeffs / f.lattice.norms, np.copy(f.zero_mode))


@dataclass
class TestFunction:
    """Real test function given by its Fourier coefficients on a lattice.

    ``coeffs[s]`` is phi_k for the mode in slot s and ``zero`` is phi_0.
    """

    id: str
    lattice: ModeLattice
    coeffs: np.ndarray
    zero: complex = 0.0

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (len(self.lattice),):
            raise ValueError("test function coefficients do not match lattice")
        if abs(np.imag(self.zero)) > 1e-14:
            raise ValueError("zero mode of a real test function must be real")
        self.zero = float(np.real(self.zero))
        if not np.allclose(self.coeffs[self.lattice.conj_index], np.conj(self.coeffs), atol=1e-14):
            raise ValueError(f"test function {self.id!r} is not real (phi_-k != conj phi_k)")

    @property
    def zero_mass(self) -> bool:
        return self.zero == 0.0

    def norm2(self) -> float:
        """Squared L2 norm on the torus, sum_k |phi_k|^2 including k=0."""
        return float(np.sum(np.abs(self.coeffs) ** 2) + self.zero ** 2)

    @classmethod
    def e0(cls, lattice):
        """The constant function with unit zero mode and nothing else."""
        return cls("e0", lattice, np.zeros(len(lattice)), 1.0)

    @classmethod
    def from_modes(cls, id, lattice, values: dict, zero=0.0):
        """Build from {k: phi_k}; conjugates are filled in automatically."""
        c = np.zeros(len(lattice), dtype=complex)
        for k, v in values.items():
            s = lattice.slot(k)
            c[s] = v
            c[lattice.conj_index[s]] = np.conj(v)
        return cls(id, lattice, c, zero)
