"""
N-body operators on the symmetric sector N: the free Hamiltonian, the pair
form, the KLMN certificate and exact propagation.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as spla

from hartreelab.exceptions import ValidationError, throw
from hartreelab.fock import SectorVector, check_hermitian, dgamma_block, sector_dimension, split_embedding
from hartreelab.logger import get_logger, log_error
from hartreelab.models import ModelSpec
from hartreelab.wick import SymbolPQ, wick_matrix

logger = get_logger(__name__)

DEFAULT_A_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))
NORM_TOL = 1e-10


@dataclass(frozen=True)
class FormBoundCertificate:
    """(a, b) with +-q~ <= a (A_1 + A_2) + b on the two-particle sector."""

    a: float
    b: float

    def __post_init__(self):
        if not 0 < self.a < 1:
            throw(f"form bound requires 0 < a < 1, got a={self.a}")
        if self.b < 0:
            throw(f"form bound requires b >= 0, got b={self.b}")

    def energy_constant(self, C: float) -> float:
        """((1+a) C + 2b) / (1-a), the per-particle kinetic bound along the evolution."""
        return ((1 + self.a) * C + 2 * self.b) / (1 - self.a)


@dataclass(frozen=True, eq=False)
class NBodyOperator:
    N: int
    matrix: np.ndarray
    epsilon: float

    def __post_init__(self):
        matrix = check_hermitian(self.matrix, f"{self.N}-body operator")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def spectrum(self) -> tuple:
        """(eigenvalues, eigenvectors); computed once."""
        return spla.eigh(self.matrix)

    def expectation(self, psi: SectorVector) -> float:
        self._check(psi)
        return float(np.vdot(psi.coeffs, self.matrix @ psi.coeffs).real)

    def evolve(self, psi: SectorVector, t: float) -> SectorVector:
        """exp(-itH) psi."""
        self._check(psi)
        if t == 0:
            return psi
        try:
            vals, vecs = self.spectrum
        except (np.linalg.LinAlgError, ValueError) as exc:
            cond = np.linalg.cond(self.matrix)
            log_error(f"eigh failed for N={self.N} ({exc}); using expm, condition number {cond:.3e}", __name__)
            coeffs = spla.expm(-1j * t * self.matrix) @ psi.coeffs
        else:
            coeffs = vecs @ (np.exp(-1j * t * vals) * (vecs.conj().T @ psi.coeffs))
        return SectorVector(psi.d, psi.n, coeffs)

    def _check(self, psi: SectorVector):
        if psi.n != self.N or psi.coeffs.shape[0] != self.dim:
            throw(f"state lives in sector {psi.n}, operator acts on sector {self.N}")


def _check_sector(model: ModelSpec, N: int) -> int:
    if N < 1:
        throw(f"particle number must be positive, got {N}")
    return sector_dimension(model.d, N)


def build_free_hamiltonian(model: ModelSpec, N: int) -> NBodyOperator:
    """H_N^0 = sum_i A_i on sector N."""
    _check_sector(model, N)
    return NBodyOperator(N, dgamma_block(model.A, N, 1.0), 1.0 / N)


def pair_operator(kernel: np.ndarray, d: int, N: int) -> np.ndarray:
    """(K (x) Id) on sector N through the split into two particles and N-2."""
    P = split_embedding(d, N, 2)
    return np.einsum("brm,ba,arn->mn", P, kernel, P, optimize=True)


def build_pair_form(model: ModelSpec, N: int) -> NBodyOperator:
    """q_N = (1/N) sum_{i<j} q_ij, i.e. ((N-1)/2) (q~ (x) Id) on symmetric vectors."""
    dim = _check_sector(model, N)
    if N < 2:
        return NBodyOperator(N, np.zeros((dim, dim), dtype=complex), 1.0 / N)
    matrix = 0.5 * (N - 1) * pair_operator(model.q_kernel, model.d, N)
    return NBodyOperator(N, matrix, 1.0 / N)


def build_hamiltonian(model: ModelSpec, N: int) -> NBodyOperator:
    free = build_free_hamiltonian(model, N)
    pair = build_pair_form(model, N)
    return NBodyOperator(N, free.matrix + pair.matrix, 1.0 / N)


def hamiltonian_via_wick(model: ModelSpec, N: int) -> NBodyOperator:
    """eps^{-1} h^Wick on sector N with eps = 1/N, h(z) = <z, A z> + q(z^2, z^2)/2."""
    _check_sector(model, N)
    eps = 1.0 / N
    kinetic = wick_matrix(SymbolPQ(1, 1, model.A, model.d), N, eps)
    interaction = wick_matrix(SymbolPQ(2, 2, 0.5 * model.q_kernel, model.d), N, eps)
    return NBodyOperator(N, N * (kinetic + interaction), eps)


# ---------------------------------------------------------------------------
# KLMN form bound
# ---------------------------------------------------------------------------


def form_bound_b(model: ModelSpec, a: float) -> float:
    """Smallest b >= 0 with +-q~ <= a (A_1 + A_2) + b on the two-particle sector."""
    kinetic = dgamma_block(model.A, 2, 1.0)
    lowest = min(
        float(spla.eigvalsh(a * kinetic + model.q_kernel)[0]),
        float(spla.eigvalsh(a * kinetic - model.q_kernel)[0]),
    )
    return max(0.0, -lowest)


def estimate_form_bound(
    model: ModelSpec, a_grid=DEFAULT_A_GRID, criterion: str = "b", C: float | None = None
) -> FormBoundCertificate:
    """
    Scan a_grid and return the certificate minimizing b (criterion "b") or the
    energy constant ((1+a)C + 2b)/(1-a) for the given C (criterion "energy").
    Ties go to the smaller a.
    """
    a_grid = sorted(float(a) for a in a_grid)
    if not a_grid:
        throw("a_grid is empty")
    bad = [a for a in a_grid if not 0 < a < 1]
    if bad:
        throw(f"a_grid values must lie in (0,1), got {bad}")
    if criterion not in ("b", "energy"):
        throw(f"unknown criterion {criterion!r}")
    if criterion == "energy" and C is None:
        throw("criterion 'energy' needs the kinetic constant C")

    best = None
    best_score = np.inf
    for a in a_grid:
        candidate = FormBoundCertificate(a, form_bound_b(model, a))
        score = candidate.b if criterion == "b" else candidate.energy_constant(C)
        if score < best_score:
            best, best_score = candidate, score
    logger.debug("form bound for %s: a=%s b=%s", model.label, best.a, best.b)
    return best


def replay_certificate(model: ModelSpec, certificate: FormBoundCertificate) -> float:
    """min eig of a(A_1+A_2) + b +- q~; non-negative for a valid certificate."""
    kinetic = certificate.a * dgamma_block(model.A, 2, 1.0) + certificate.b * np.eye(model.q_kernel.shape[0])
    return min(
        float(spla.eigvalsh(kinetic + model.q_kernel)[0]),
        float(spla.eigvalsh(kinetic - model.q_kernel)[0]),
    )


def form_bound_margin(model: ModelSpec, N: int, certificate: FormBoundCertificate) -> float:
    """min eig(a H_N^0 + b N +- q_N) on sector N."""
    free = build_free_hamiltonian(model, N).matrix
    pair = build_pair_form(model, N).matrix
    base = certificate.a * free + certificate.b * N * np.eye(free.shape[0])
    return min(float(spla.eigvalsh(base + pair)[0]), float(spla.eigvalsh(base - pair)[0]))


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


class SectorDynamics:
    """H_N^0 and H_N of one model on sector N, with cached spectra."""

    def __init__(self, model: ModelSpec, N: int):
        self.model = model
        self.N = N
        self.free = build_free_hamiltonian(model, N)
        self.hamiltonian = build_hamiltonian(model, N)

    def schrodinger(self, psi: SectorVector, t: float) -> SectorVector:
        return propagate(self.hamiltonian, psi, t)

    def interaction(self, psi: SectorVector, t: float) -> SectorVector:
        """exp(itH_N^0) exp(-itH_N) psi."""
        return self.free.evolve(self.schrodinger(psi, t), -t)


def _check_normalized(psi: SectorVector):
    if abs(psi.norm() - 1.0) > NORM_TOL:
        throw(f"state must be normalized, |psi| = {psi.norm():.12f}")


def propagate(H: NBodyOperator, psi: SectorVector, t: float) -> SectorVector:
    _check_normalized(psi)
    return H.evolve(psi, t)


def interaction_picture_state(model: ModelSpec, N: int, psi: SectorVector, t: float) -> SectorVector:
    _check_normalized(psi)
    return SectorDynamics(model, N).interaction(psi, t)


@dataclass(frozen=True)
class EnergyBoundReport:
    N: int
    certificate: FormBoundCertificate
    C_in: float
    bound: float
    times: tuple
    kinetic: tuple
    max_ratio: float
    satisfied: bool


def energy_bound_certificate(
    model: ModelSpec,
    N: int,
    psi: SectorVector,
    C_in: float,
    times,
    certificate: FormBoundCertificate | None = None,
) -> EnergyBoundReport:
    """Check <psi_t, H_N^0 psi_t> <= ((1+a)C_in + 2b)/(1-a) N at every sampled time."""
    _check_normalized(psi)
    dynamics = SectorDynamics(model, N)
    initial = dynamics.free.expectation(psi)
    if initial > C_in * N * (1 + 1e-12) + 1e-12:
        raise ValidationError(f"<H_N^0> = {initial:.6e} exceeds C_in * N = {C_in * N:.6e}")
    certificate = certificate or estimate_form_bound(model)
    bound = certificate.energy_constant(C_in) * N

    times = tuple(float(t) for t in times)
    kinetic = tuple(dynamics.free.expectation(dynamics.schrodinger(psi, t)) for t in times)
    max_ratio = max(kinetic, default=0.0) / bound if bound > 0 else 0.0
    satisfied = all(k <= bound for k in kinetic)
    if not satisfied:
        log_error(f"energy bound violated for N={N}: max ratio {max_ratio:.6f}", __name__, logging.ERROR)
    return EnergyBoundReport(N, certificate, C_in, bound, times, kinetic, max_ratio, satisfied)
