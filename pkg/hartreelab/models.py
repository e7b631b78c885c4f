"""
Model specifications: a one-particle operator A >= 0 on C^d and a two-body
kernel q~ in two-particle sector coordinates, plus the shipped presets.
"""
from dataclasses import dataclass

import numpy as np

from hartreelab.exceptions import throw
from hartreelab.fock import check_hermitian, sector_basis, sector_dimension, sector_embedding
from hartreelab.logger import get_logger
from hartreelab.utils import get_attr, get_hooks

logger = get_logger(__name__)

PSD_TOL = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    d: int
    A: np.ndarray
    q_kernel: np.ndarray
    label: str = "inline"

    def __post_init__(self):
        if self.d < 1:
            throw(f"mode count must be positive, got {self.d}")
        A = check_hermitian(self.A, "A")
        if A.shape != (self.d, self.d):
            throw(f"A must be {self.d}x{self.d}, got {A.shape}")
        lowest = float(np.linalg.eigvalsh(A)[0])
        if lowest < -PSD_TOL * max(1.0, float(np.abs(A).max())):
            throw(f"A must be non-negative, its lowest eigenvalue is {lowest:.3e}")
        dim2 = sector_dimension(self.d, 2)
        K = check_hermitian(self.q_kernel, "two-body kernel")
        if K.shape != (dim2, dim2):
            throw(f"two-body kernel must be {dim2}x{dim2} on the two-particle sector, got {K.shape}")
        A.setflags(write=False)
        K.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "q_kernel", K)

    @classmethod
    def from_pair_matrix(cls, A: np.ndarray, pair: np.ndarray, label: str = "inline") -> "ModelSpec":
        """Compress a d^2 x d^2 kernel on C^d (x) C^d to the two-particle sector."""
        A = np.asarray(A, dtype=complex)
        d = A.shape[0]
        pair = np.asarray(pair, dtype=complex)
        if pair.shape != (d * d, d * d):
            throw(f"pair kernel must be {d * d}x{d * d}, got {pair.shape}")
        V = sector_embedding(d, 2)
        return cls(d, A, V.T @ pair @ V, label)

    def pair_matrix(self) -> np.ndarray:
        """The kernel as S_2 q~ S_2 on C^d (x) C^d."""
        V = sector_embedding(self.d, 2)
        return V @ self.q_kernel @ V.T

    def with_kernel(self, q_kernel: np.ndarray) -> "ModelSpec":
        return ModelSpec(self.d, self.A, q_kernel, self.label)

    def is_free(self) -> bool:
        return not np.any(self.q_kernel)

    def is_position_diagonal(self) -> bool:
        """True when q~ is a multiplication operator W(x,y) on pairs of sites."""
        K = self.q_kernel
        return bool(np.allclose(K, np.diag(np.diag(K)), rtol=0.0, atol=1e-14))

    def pair_potential(self) -> np.ndarray:
        """W with q(u,u) = sum W[x,y] |u(x,y)|^2; only for position-diagonal kernels."""
        if not self.is_position_diagonal():
            throw("the two-body kernel is not a pair potential")
        basis = sector_basis(self.d, 2)
        diag = np.diag(self.q_kernel).real
        W = np.empty((self.d, self.d))
        for x in range(self.d):
            for y in range(self.d):
                counts = np.zeros(self.d, dtype=int)
                counts[x] += 1
                counts[y] += 1
                W[x, y] = diag[basis.rank(counts)]
        return W


def kerr1(omega: float = 1.0, g: float = 1.0) -> ModelSpec:
    """Single mode: A = omega, q~ = g."""
    if omega < 0:
        throw(f"omega must be non-negative, got {omega}")
    return ModelSpec(1, np.array([[omega]]), np.array([[g]]), "kerr1")


def _cycle_laplacian(d: int, hopping: float) -> np.ndarray:
    adjacency = np.zeros((d, d))
    for x in range(d - 1):
        adjacency[x, x + 1] = adjacency[x + 1, x] = 1.0
    if d > 2:
        adjacency[0, d - 1] = adjacency[d - 1, 0] = 1.0
    return hopping * (np.diag(adjacency.sum(axis=1)) - adjacency)


def _one_particle(d: int, hopping: float, trap: float) -> np.ndarray:
    if hopping < 0 or trap < 0:
        throw("hopping and trap strengths must be non-negative")
    sites = np.arange(d)
    centre = (d - 1) / 2.0
    return _cycle_laplacian(d, hopping) + trap * np.diag((sites - centre) ** 2)


def lattice_delta(d: int = 2, hopping: float = 1.0, trap: float = 0.0, kappa: float = 1.0) -> ModelSpec:
    """Discrete Laplacian on a ring plus a harmonic trap, on-site contact interaction."""
    A = _one_particle(d, hopping, trap)
    pair = np.zeros((d * d, d * d))
    for x in range(d):
        pair[x * d + x, x * d + x] = kappa
    return ModelSpec.from_pair_matrix(A, pair, "lattice-delta")


def ring_distance(d: int) -> np.ndarray:
    sites = np.arange(d)
    gap = np.abs(sites[:, None] - sites[None, :])
    return np.minimum(gap, d - gap)


def lattice_hartree(
    d: int = 3, hopping: float = 1.0, trap: float = 0.0, kappa: float = 1.0, softening: float = 1.0
) -> ModelSpec:
    """Ring with the even, softened Coulomb-like pair potential W(r) = kappa / (r + softening)."""
    if softening <= 0:
        throw(f"softening must be positive, got {softening}")
    A = _one_particle(d, hopping, trap)
    W = kappa / (ring_distance(d) + softening)
    return ModelSpec.from_pair_matrix(A, np.diag(W.reshape(-1)), "lattice-hartree")


def get_preset(name: str, **params) -> ModelSpec:
    presets = get_hooks("model_presets")
    if name not in presets:
        throw(f"unknown model preset {name!r}; choose one of {sorted(presets)}")
    logger.debug("building preset %s with %s", name, params)
    return get_attr(presets[name])(**params)
