"""Gray-labeled constellations, Maxwell-Boltzmann priors and normalization."""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConstellation, UnsupportedOrder

KINDS = ("qam", "pam", "imdd-pam")
CONSTRAINTS = ("average-power", "peak-power", "none")


def gray(i):
    """Binary-reflected Gray code of integer(s) ``i``."""
    i = np.asarray(i)
    return i ^ (i >> 1)


def _is_pow2(m):
    return m >= 2 and (m & (m - 1)) == 0


@dataclass(frozen=True, eq=False)
class Constellation:
    points: np.ndarray  # complex, shape (M,)
    labels: np.ndarray  # int, shape (M,); bit k of the label is ``bits[:, k]``
    kind: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        lab = np.asarray(self.labels, dtype=np.int64)
        m = pts.size
        if not _is_pow2(m):
            raise UnsupportedOrder(f"constellation size {m} is not a power of two")
        if sorted(lab.tolist()) != list(range(m)):
            raise ValueError("labels must be a bijection onto {0,1}^K")
        if self.kind not in KINDS:
            raise ValueError(f"unknown constellation kind {self.kind!r}")
        pts.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @property
    def M(self):
        return self.points.size

    @property
    def K(self):
        return self.M.bit_length() - 1

    @property
    def bits(self):
        """(M, K) array of label bits, most significant first."""
        shifts = np.arange(self.K - 1, -1, -1)
        return (self.labels[:, None] >> shifts[None, :]) & 1

    @property
    def label_strings(self):
        return [format(int(v), f"0{self.K}b") for v in self.labels]

    @property
    def energies(self):
        return np.abs(self.points) ** 2

    def to_dict(self):
        return {
            "kind": self.kind,
            "M": self.M,
            "points": [[float(z.real), float(z.imag)] for z in self.points],
            "labels": self.label_strings,
        }

    @classmethod
    def from_dict(cls, d):
        pts = np.array([complex(re, im) for re, im in d["points"]])
        labels = [int(s, 2) for s in d["labels"]]
        c = cls(pts, labels, d["kind"])
        if c.M != int(d["M"]):
            raise ValueError("M does not match number of points")
        return c


@dataclass(frozen=True, eq=False)
class NormalizedConstellation:
    points: np.ndarray
    constraint: str
    scale: float  # c_tilde = c / scale


def build_pam(M):
    """M-PAM on the odd-integer grid with Gray labels in ascending order."""
    if not _is_pow2(M):
        raise UnsupportedOrder(f"PAM order {M} is not a power of two")
    idx = np.arange(M)
    return Constellation((2 * idx - (M - 1)).astype(complex), gray(idx), "pam")


def build_qam(M):
    """Square M-QAM, odd-integer grid, per-axis Gray labels with I bits first."""
    if M not in (4, 16, 64, 256, 1024):
        raise UnsupportedOrder(f"square QAM order must be 4, 16, 64, 256 or 1024, got {M}")
    side = int(round(np.sqrt(M)))
    k = side.bit_length() - 1
    axis = 2 * np.arange(side) - (side - 1)
    i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    i, j = i.ravel(), j.ravel()
    points = axis[i] + 1j * axis[j]
    labels = (gray(i) << k) | gray(j)
    return Constellation(points, labels, "qam")


def build_imdd_pam(M):
    """Amplitudes sqrt(0.1 + i), i = 0..M-1, Gray-labeled in ascending order."""
    if not _is_pow2(M):
        raise UnsupportedOrder(f"IM/DD PAM order {M} is not a power of two")
    idx = np.arange(M)
    return Constellation(np.sqrt(0.1 + idx).astype(complex), gray(idx), "imdd-pam")


def build(kind, M):
    builders = {"qam": build_qam, "pam": build_pam, "imdd-pam": build_imdd_pam}
    if kind not in builders:
        raise ValueError(f"unknown constellation kind {kind!r}")
    return builders[kind](M)


def normalization_scale(energies, p, constraint):
    """Divisor applied to the points for a given constraint."""
    energies = np.asarray(energies, dtype=float)
    if not np.any(energies > 0):
        raise DegenerateConstellation("all constellation points are zero")
    if constraint == "average-power":
        return float(np.sqrt(np.dot(p, energies)))
    if constraint == "peak-power":
        return float(np.sqrt(energies.max()))
    if constraint == "none":
        return 1.0
    raise ValueError(f"unknown normalization constraint {constraint!r}")


def normalize(c, p, constraint="average-power"):
    scale = normalization_scale(c.energies, np.asarray(p, dtype=float), constraint)
    if scale <= 0.0:
        raise DegenerateConstellation("probability mass sits on zero-energy points only")
    return NormalizedConstellation(c.points / scale, constraint, scale)


def mb_distribution(c, nu):
    """Maxwell-Boltzmann prior p_m proportional to exp(-nu |c_m|^2)."""
    if nu < 0:
        raise ValueError("nu must be non-negative")
    logits = -nu * c.energies
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def entropy_bits(p):
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def mb_nu_for_entropy(c, target_bits, tol=1e-10):
    """Bisection for nu with H(MB(nu)) = target_bits."""
    if not 0.0 < target_bits < c.K:
        raise ValueError("target entropy must lie strictly between 0 and K")
    lo, hi = 0.0, 1.0 / c.energies.mean()
    while entropy_bits(mb_distribution(c, hi)) > target_bits:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("target entropy is below the MB family's floor")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if entropy_bits(mb_distribution(c, mid)) > target_bits:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
