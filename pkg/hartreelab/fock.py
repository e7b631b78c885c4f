"""
Occupation-number representation of the symmetric sectors and of the
particle-number truncated symmetric Fock space.

Sector n (the bosonic space of n particles in d modes) is spanned by the
normalized symmetric vectors |m>, m a count vector with |m| = n. Count vectors
are ranked lexicographically, first mode most significant, descending, so
that sector 1 lists e_0, ..., e_{d-1} in mode order. This ordering is part of
the file format.

Ladder operators carry the semiclassical parameter eps:

    a_j |m>  = sqrt(eps * m_j)     |m - e_j>
    a*_j |m> = sqrt(eps * (m_j+1)) |m + e_j>

so that [a(z1), a*(z2)] = eps <z1, z2>, with a(z) antilinear and a*(z) linear.
"""
import itertools
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sps
import scipy.sparse.linalg as spsla
from scipy.special import gammaln

from hartreelab.exceptions import (
    DimensionCapExceeded,
    TruncationError,
    ValidationError,
    throw,
)
from hartreelab.logger import get_logger

logger = get_logger(__name__)

DIMENSION_CAP = 50_000
FOCK_DENSE_CAP = 2_500
TENSOR_CAP = 4_096

HERMITIAN_TOL = 1e-12


def sector_dimension(d: int, n: int, cap: int | None = DIMENSION_CAP) -> int:
    """Dimension C(n+d-1, d-1) of the n-particle sector; 0 for n < 0."""
    if d < 1:
        throw(f"mode count must be positive, got {d}")
    if n < 0:
        return 0
    dim = math.comb(n + d - 1, d - 1)
    if cap is not None and dim > cap:
        raise DimensionCapExceeded(f"sector n={n}, d={d}", dim, cap)
    return dim


def fock_dimension(d: int, n_max: int, cap: int | None = DIMENSION_CAP) -> int:
    """Dimension of the direct sum of sectors 0..n_max."""
    dim = math.comb(n_max + d, d)
    if cap is not None and dim > cap:
        raise DimensionCapExceeded(f"Fock space n_max={n_max}, d={d}", dim, cap)
    return dim


@lru_cache(maxsize=None)
def _compositions(d: int, n: int) -> tuple:
    if n < 0:
        return ()
    if d == 1:
        return ((n,),)
    out = []
    for first in range(n, -1, -1):
        for rest in _compositions(d - 1, n - first):
            out.append((first,) + rest)
    return tuple(out)


class SectorBasis:
    """Lexicographically ranked occupation basis of one sector."""

    def __init__(self, d: int, n: int):
        sector_dimension(d, n)
        self.d = d
        self.n = n
        compositions = _compositions(d, n)
        self.states = np.array(compositions, dtype=np.int64).reshape(-1, d)
        self.states.setflags(write=False)
        self._index = {counts: i for i, counts in enumerate(compositions)}

    @property
    def dim(self) -> int:
        return len(self._index)

    def __len__(self):
        return self.dim

    def rank(self, counts) -> int:
        key = tuple(int(c) for c in counts)
        try:
            return self._index[key]
        except KeyError:
            raise ValidationError(f"{key} is not an occupation of sector n={self.n}, d={self.d}") from None

    def ranks(self, states: np.ndarray) -> np.ndarray:
        """Vectorized rank lookup for an array of count vectors."""
        flat = np.asarray(states).reshape(-1, self.d)
        out = np.fromiter((self._index[tuple(row)] for row in flat.tolist()), dtype=np.int64, count=len(flat))
        return out.reshape(np.asarray(states).shape[:-1])


@lru_cache(maxsize=512)
def sector_basis(d: int, n: int) -> SectorBasis:
    return SectorBasis(d, n)


@dataclass(frozen=True)
class ModeBasis:
    """The one-particle space C^d."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            throw(f"mode count must be positive, got {self.d}")

    def sector(self, n: int) -> SectorBasis:
        return sector_basis(self.d, n)

    def vector(self, z) -> np.ndarray:
        """z as a complex d-vector."""
        z = np.asarray(z, dtype=complex).reshape(-1)
        if z.shape[0] != self.d:
            throw(f"expected a vector of C^{self.d}, got {z.shape[0]} entries")
        return z


@dataclass(frozen=True)
class OccupationIndex:
    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            throw(f"occupations must be non-negative, got {counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def rank(self) -> int:
        return sector_basis(len(self.counts), self.total).rank(self.counts)


@lru_cache(maxsize=512)
def sqrt_multinomials(d: int, n: int) -> np.ndarray:
    """sqrt(n! / prod(m_j!)) for every basis state m of sector n."""
    states = sector_basis(d, n).states
    logs = gammaln(n + 1) - gammaln(states + 1).sum(axis=1)
    out = np.exp(0.5 * logs)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SectorVector:
    """Coefficients of an n-particle vector in the occupation basis."""

    d: int
    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=complex).reshape(-1)
        expected = sector_dimension(self.d, self.n)
        if coeffs.shape[0] != expected:
            throw(f"sector n={self.n}, d={self.d} has dimension {expected}, got {coeffs.shape[0]} coefficients")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, d: int, n: int) -> "SectorVector":
        return cls(d, n, np.zeros(sector_dimension(d, n), dtype=complex))

    @classmethod
    def empty(cls, d: int) -> "SectorVector":
        """The zero vector of the (empty) sector below the vacuum."""
        return cls(d, -1, np.zeros(0, dtype=complex))

    @classmethod
    def basis_vector(cls, d: int, counts) -> "SectorVector":
        index = OccupationIndex(tuple(counts))
        coeffs = np.zeros(sector_dimension(d, index.total), dtype=complex)
        coeffs[index.rank] = 1.0
        return cls(d, index.total, coeffs)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def inner(self, other: "SectorVector") -> complex:
        """<self, other>, antilinear in self."""
        if (self.d, self.n) != (other.d, other.n):
            throw("inner product between different sectors")
        return complex(np.vdot(self.coeffs, other.coeffs))

    def normalized(self) -> "SectorVector":
        nrm = self.norm()
        if nrm == 0:
            throw("cannot normalize the zero vector")
        return SectorVector(self.d, self.n, self.coeffs / nrm)

    def __add__(self, other: "SectorVector") -> "SectorVector":
        if (self.d, self.n) != (other.d, other.n):
            throw("cannot add vectors from different sectors")
        return SectorVector(self.d, self.n, self.coeffs + other.coeffs)

    def __mul__(self, scalar) -> "SectorVector":
        return SectorVector(self.d, self.n, self.coeffs * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True)
class TruncationPolicy:
    """Cutoff of the Fock space and the certification of its boundary."""

    n_max: int
    buffer: int = 4
    tail_tol: float = 1e-10

    def __post_init__(self):
        if self.buffer < 1:
            throw(f"buffer must be at least 1, got {self.buffer}")
        if self.n_max < self.buffer:
            throw(f"n_max={self.n_max} leaves no retained sector with buffer={self.buffer}")
        if not self.tail_tol > 0:
            throw(f"tail_tol must be positive, got {self.tail_tol}")

    @property
    def retained(self) -> int:
        """Largest sector on which identities are asserted."""
        return self.n_max - self.buffer

    @classmethod
    def around(cls, n: int, margin: int, buffer: int = 4, tail_tol: float = 1e-10) -> "TruncationPolicy":
        return cls(n_max=n + margin, buffer=buffer, tail_tol=tail_tol)


@lru_cache(maxsize=128)
def fock_offsets(d: int, n_max: int) -> tuple:
    """Start index of every sector inside a flattened Fock vector."""
    offsets = [0]
    for n in range(n_max + 1):
        offsets.append(offsets[-1] + sector_dimension(d, n))
    return tuple(offsets)


@dataclass(frozen=True)
class FockVector:
    """Vector of the truncated Fock space, sectors 0..cutoff."""

    d: int
    epsilon: float
    sectors: tuple

    def __post_init__(self):
        if not self.epsilon > 0:
            throw(f"epsilon must be positive, got {self.epsilon}")
        blocks = []
        for n, block in enumerate(self.sectors):
            blocks.append(SectorVector(self.d, n, block).coeffs)
        object.__setattr__(self, "sectors", tuple(blocks))

    @property
    def cutoff(self) -> int:
        return len(self.sectors) - 1

    @classmethod
    def zeros(cls, d: int, n_max: int, epsilon: float) -> "FockVector":
        return cls(d, epsilon, tuple(np.zeros(sector_dimension(d, n), dtype=complex) for n in range(n_max + 1)))

    @classmethod
    def from_sector(cls, v: SectorVector, n_max: int, epsilon: float) -> "FockVector":
        if v.n > n_max:
            throw(f"sector {v.n} lies beyond the cutoff {n_max}")
        blocks = [np.zeros(sector_dimension(v.d, n), dtype=complex) for n in range(n_max + 1)]
        blocks[v.n] = v.coeffs
        return cls(v.d, epsilon, tuple(blocks))

    @classmethod
    def from_flat(cls, flat: np.ndarray, d: int, n_max: int, epsilon: float) -> "FockVector":
        offsets = fock_offsets(d, n_max)
        flat = np.asarray(flat)
        if flat.shape[0] != offsets[-1]:
            throw(f"flat vector has length {flat.shape[0]}, expected {offsets[-1]}")
        return cls(d, epsilon, tuple(flat[offsets[n]:offsets[n + 1]] for n in range(n_max + 1)))

    def flat(self) -> np.ndarray:
        return np.concatenate(self.sectors)

    def sector(self, n: int) -> SectorVector:
        if n < 0:
            return SectorVector.empty(self.d)
        if n > self.cutoff:
            return SectorVector.zeros(self.d, n)
        return SectorVector(self.d, n, self.sectors[n])

    def sector_masses(self) -> np.ndarray:
        return np.array([float(np.vdot(b, b).real) for b in self.sectors])

    def norm(self) -> float:
        return float(np.sqrt(self.sector_masses().sum()))

    def tail_mass(self, buffer: int) -> float:
        """Squared norm carried by sectors cutoff-buffer..cutoff."""
        start = max(self.cutoff - buffer, 0)
        return float(self.sector_masses()[start:].sum())

    def check_compatible(self, other: "FockVector"):
        if self.epsilon != other.epsilon:
            throw(f"epsilon mismatch: {self.epsilon} != {other.epsilon}")
        if (self.d, self.cutoff) != (other.d, other.cutoff):
            throw("Fock vectors live on different truncated spaces")

    def inner(self, other: "FockVector") -> complex:
        self.check_compatible(other)
        return complex(np.vdot(self.flat(), other.flat()))


# ---------------------------------------------------------------------------
# ladder operators
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1024)
def _lowering(d: int, n: int, j: int) -> sps.csr_matrix:
    """Unscaled a_j from sector n to sector n-1."""
    src = sector_basis(d, n)
    dst = sector_basis(d, n - 1)
    cols = np.flatnonzero(src.states[:, j] > 0)
    targets = np.array(src.states[cols])
    targets[:, j] -= 1
    rows = dst.ranks(targets) if len(cols) else np.zeros(0, dtype=np.int64)
    vals = np.sqrt(src.states[cols, j].astype(float))
    return sps.csr_matrix((vals, (rows, cols)), shape=(dst.dim, src.dim))


def _check_mode(d: int, j: int):
    if not 0 <= j < d:
        throw(f"mode index {j} outside 0..{d - 1}")


def annihilation_matrix(d: int, n: int, j: int, epsilon: float) -> sps.csr_matrix:
    """a_j restricted to sector n (n >= 1), as a map into sector n-1."""
    _check_mode(d, j)
    return math.sqrt(epsilon) * _lowering(d, n, j)


def creation_matrix(d: int, n: int, j: int, epsilon: float) -> sps.csr_matrix:
    """a*_j restricted to sector n, as a map into sector n+1."""
    _check_mode(d, j)
    return (math.sqrt(epsilon) * _lowering(d, n + 1, j)).T.tocsr()


def annihilation_field_matrix(z: np.ndarray, n: int, epsilon: float) -> sps.csr_matrix:
    """a(z) = sum_j conj(z_j) a_j from sector n to n-1."""
    z = np.asarray(z, dtype=complex)
    d = z.shape[0]
    out = sps.csr_matrix((sector_dimension(d, n - 1), sector_dimension(d, n)), dtype=complex)
    if n == 0:
        return out
    for j in np.flatnonzero(z):
        out = out + np.conj(z[j]) * annihilation_matrix(d, n, j, epsilon)
    return out.tocsr()


def creation_field_matrix(z: np.ndarray, n: int, epsilon: float) -> sps.csr_matrix:
    """a*(z) = sum_j z_j a*_j from sector n to n+1."""
    z = np.asarray(z, dtype=complex)
    d = z.shape[0]
    out = sps.csr_matrix((sector_dimension(d, n + 1), sector_dimension(d, n)), dtype=complex)
    for j in np.flatnonzero(z):
        out = out + z[j] * creation_matrix(d, n, j, epsilon)
    return out.tocsr()


def annihilate(j: int, v: SectorVector, epsilon: float) -> SectorVector:
    if v.n <= 0:
        return SectorVector.empty(v.d)
    out = annihilation_matrix(v.d, v.n, j, epsilon) @ v.coeffs
    return SectorVector(v.d, v.n - 1, out)


def create(j: int, v: SectorVector, epsilon: float, cutoff: int | None = None) -> SectorVector:
    if v.n < 0:
        return SectorVector.zeros(v.d, 0)
    out = SectorVector(v.d, v.n + 1, creation_matrix(v.d, v.n, j, epsilon) @ v.coeffs)
    if cutoff is not None and out.n > cutoff:
        raise TruncationError(f"a*_{j} maps sector {v.n} beyond the cutoff {cutoff}", out.norm() ** 2)
    return out


def a_field(z: np.ndarray, v: SectorVector, epsilon: float) -> SectorVector:
    z = ModeBasis(v.d).vector(z)
    if v.n <= 0:
        return SectorVector.empty(v.d)
    return SectorVector(v.d, v.n - 1, annihilation_field_matrix(z, v.n, epsilon) @ v.coeffs)


def a_dag_field(z: np.ndarray, v: SectorVector, epsilon: float, cutoff: int | None = None) -> SectorVector:
    z = ModeBasis(v.d).vector(z)
    if v.n < 0:
        return SectorVector.zeros(v.d, 0)
    out = SectorVector(v.d, v.n + 1, creation_field_matrix(z, v.n, epsilon) @ v.coeffs)
    if cutoff is not None and out.n > cutoff:
        raise TruncationError(f"a*(z) maps sector {v.n} beyond the cutoff {cutoff}", out.norm() ** 2)
    return out


def fock_annihilation(z: np.ndarray, n_max: int, epsilon: float) -> sps.csr_matrix:
    """a(z) on the whole truncated Fock space; its adjoint is the truncated a*(z)."""
    z = np.asarray(z, dtype=complex)
    d = z.shape[0]
    blocks = [[None] * (n_max + 1) for _ in range(n_max + 1)]
    for n in range(n_max + 1):
        blocks[n][n] = sps.csr_matrix((sector_dimension(d, n), sector_dimension(d, n)), dtype=complex)
    for n in range(1, n_max + 1):
        blocks[n - 1][n] = annihilation_field_matrix(z, n, epsilon)
    return sps.bmat(blocks, format="csr")


# ---------------------------------------------------------------------------
# second quantization
# ---------------------------------------------------------------------------


def check_hermitian(matrix: np.ndarray, what: str, tol: float = HERMITIAN_TOL) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        throw(f"{what} must be a square matrix, got shape {matrix.shape}")
    scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
    if np.abs(matrix - matrix.conj().T).max(initial=0.0) > tol * scale:
        throw(f"{what} is not Hermitian")
    return matrix


def dgamma_block(C: np.ndarray, n: int, epsilon: float = 1.0) -> np.ndarray:
    """eps * sum_i C_i on sector n, as a dense matrix."""
    C = np.asarray(C, dtype=complex)
    d = C.shape[0]
    dim = sector_dimension(d, n)
    out = np.zeros((dim, dim), dtype=complex)
    if n == 0:
        return out
    for j, k in zip(*np.nonzero(C)):
        hop = _lowering(d, n, j).T @ _lowering(d, n, k)
        out += C[j, k] * hop.toarray()
    return epsilon * out


def _hermitian_exp(block: np.ndarray, factor: complex) -> np.ndarray:
    vals, vecs = spla.eigh(block)
    return (vecs * np.exp(factor * vals)) @ vecs.conj().T


@dataclass(frozen=True)
class BlockDiagonal:
    """Number-conserving operator, one dense block per sector."""

    d: int
    epsilon: float
    blocks: tuple

    @property
    def cutoff(self) -> int:
        return len(self.blocks) - 1

    def block(self, n: int) -> np.ndarray:
        return self.blocks[n]

    def apply(self, v: FockVector) -> FockVector:
        if v.epsilon != self.epsilon:
            throw(f"epsilon mismatch: operator {self.epsilon}, vector {v.epsilon}")
        if v.cutoff != self.cutoff:
            throw("operator and vector have different cutoffs")
        return FockVector(self.d, self.epsilon, tuple(b @ s for b, s in zip(self.blocks, v.sectors)))

    def exp(self, factor: complex) -> "BlockDiagonal":
        """exp(factor * X) blockwise; blocks must be Hermitian."""
        return BlockDiagonal(self.d, self.epsilon, tuple(_hermitian_exp(b, factor) for b in self.blocks))


def second_quantize(C: np.ndarray, epsilon: float, n_max: int) -> BlockDiagonal:
    """dGamma(C) on sectors 0..n_max: eps * sum_i C_i on sector n."""
    C = check_hermitian(C, "one-particle operator")
    d = C.shape[0]
    return BlockDiagonal(d, epsilon, tuple(dgamma_block(C, n, epsilon) for n in range(n_max + 1)))


def number_operator(d: int, epsilon: float, n_max: int) -> BlockDiagonal:
    return second_quantize(np.eye(d), epsilon, n_max)


# ---------------------------------------------------------------------------
# Weyl operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeylOperator:
    """
    W(f) = exp(i(a(f) + a*(f))/sqrt(2)) on a truncated Fock space, kept as its
    sparse anti-Hermitian generator. Vectors are moved with expm_multiply; the
    dense matrix exists only on request.
    """

    f: np.ndarray
    epsilon: float
    policy: TruncationPolicy
    generator: sps.csr_matrix

    @property
    def d(self) -> int:
        return self.f.shape[0]

    @cached_property
    def matrix(self) -> np.ndarray:
        fock_dimension(self.d, self.policy.n_max, cap=FOCK_DENSE_CAP)
        return spla.expm(self.generator.toarray())

    def adjoint(self) -> "WeylOperator":
        """W(f)* = W(-f)."""
        return WeylOperator(-self.f, self.epsilon, self.policy, (-self.generator).tocsr())

    def apply(self, v: FockVector, certify: bool = True) -> FockVector:
        if v.epsilon != self.epsilon:
            throw(f"epsilon mismatch: Weyl operator {self.epsilon}, vector {v.epsilon}")
        if v.cutoff != self.policy.n_max or v.d != self.d:
            throw("vector does not live on the Weyl operator's truncated space")
        flat = v.flat()
        if np.any(self.f):
            flat = spsla.expm_multiply(self.generator, flat)
        out = FockVector.from_flat(flat, self.d, self.policy.n_max, self.epsilon)
        if certify:
            mass = v.norm() ** 2
            tail = out.tail_mass(self.policy.buffer) / mass if mass > 0 else 0.0
            if tail > self.policy.tail_tol:
                raise TruncationError(
                    f"W(f) leaks into sectors {self.policy.retained}..{self.policy.n_max}", tail
                )
        return out


def weyl_operator(f: np.ndarray, policy: TruncationPolicy, epsilon: float) -> WeylOperator:
    f = np.asarray(f, dtype=complex)
    d = f.shape[0]
    fock_dimension(d, policy.n_max)
    a = fock_annihilation(f, policy.n_max, epsilon)
    generator = (1j / math.sqrt(2.0)) * (a + a.conj().T)
    return WeylOperator(f, epsilon, policy, generator.tocsr())


# ---------------------------------------------------------------------------
# full-tensor embedding
# ---------------------------------------------------------------------------


def _check_tensor_cap(d: int, n: int) -> int:
    size = d ** n
    if size > TENSOR_CAP:
        raise DimensionCapExceeded(f"tensor power n={n}, d={d}", size, TENSOR_CAP)
    return size


def symmetrizer_matrix(d: int, n: int) -> np.ndarray:
    """S_n = (1/n!) sum over permutations of the tensor factors, on (C^d)^{(x)n}."""
    size = _check_tensor_cap(d, n)
    if n == 0:
        return np.ones((1, 1))
    identity = np.eye(size).reshape((d,) * n + (size,))
    out = np.zeros((size, size))
    perms = list(itertools.permutations(range(n)))
    for perm in perms:
        out += identity.transpose(perm + (n,)).reshape(size, size)
    return out / len(perms)


def sector_embedding(d: int, n: int) -> np.ndarray:
    """Isometry from sector coordinates into (C^d)^{(x)n}; columns are the basis |m>."""
    size = _check_tensor_cap(d, n)
    basis = sector_basis(d, n)
    out = np.zeros((size, basis.dim))
    if n == 0:
        out[0, 0] = 1.0
        return out
    weights = sqrt_multinomials(d, n)
    for flat, word in enumerate(itertools.product(range(d), repeat=n)):
        col = basis.rank(np.bincount(word, minlength=d))
        out[flat, col] = 1.0 / weights[col]
    return out


# ---------------------------------------------------------------------------
# tensor powers inside sectors
# ---------------------------------------------------------------------------


def tensor_power(z: np.ndarray, n: int) -> np.ndarray:
    """Sector coordinates of z^{(x)n} (not normalized)."""
    z = np.asarray(z, dtype=complex)
    d = z.shape[0]
    states = sector_basis(d, n).states
    return sqrt_multinomials(d, n) * np.prod(z[None, :] ** states, axis=1)


def symmetric_product(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sector-2 coordinates of S_2(x (x) y)."""
    return (creation_field_matrix(x, 1, 1.0) @ np.asarray(y, dtype=complex)) / math.sqrt(2.0)


def sector_power(U: np.ndarray, n: int) -> np.ndarray:
    """U^{(x)n} restricted to sector n, built as products of a*(U e_j) on the vacuum."""
    U = np.asarray(U, dtype=complex)
    d = U.shape[0]
    basis = sector_basis(d, n)
    if n == 0:
        return np.ones((1, 1), dtype=complex)
    raising = [[creation_field_matrix(U[:, j], k, 1.0) for k in range(n)] for j in range(d)]
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    for col, counts in enumerate(basis.states):
        vec = np.ones(1, dtype=complex)
        level = 0
        for j, count in enumerate(counts):
            for _ in range(count):
                vec = raising[j][level] @ vec
                level += 1
        norm = math.sqrt(float(np.prod([math.factorial(c) for c in counts])))
        out[:, col] = vec / norm
    return out


@lru_cache(maxsize=256)
def split_embedding(d: int, n: int, k: int) -> np.ndarray:
    """
    Coefficients of |m> in sector n along |alpha> (x) |r>, alpha in sector k,
    r in sector n-k. Shape (dim_k, dim_{n-k}, dim_n); the map is an isometry
    of sector n into sector k (x) sector n-k.
    """
    if not 0 <= k <= n:
        throw(f"cannot split {n} particles into a block of {k}")
    left = sector_basis(d, k)
    right = sector_basis(d, n - k)
    target = sector_basis(d, n)
    total = left.states[:, None, :] + right.states[None, :, :]
    ranks = target.ranks(total)
    logs = (
        gammaln(k + 1) + gammaln(n - k + 1) - gammaln(n + 1)
        + gammaln(total + 1).sum(axis=-1)
        - gammaln(left.states + 1).sum(axis=-1)[:, None]
        - gammaln(right.states + 1).sum(axis=-1)[None, :]
    )
    out = np.zeros((left.dim, right.dim, target.dim))
    a_idx, r_idx = np.meshgrid(np.arange(left.dim), np.arange(right.dim), indexing="ij")
    out[a_idx, r_idx, ranks] = np.exp(0.5 * logs)
    out.setflags(write=False)
    return out
