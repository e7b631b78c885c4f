"""
Quantum side of the mean-field comparison: N-particle preparations, the
characteristic functions G_N(t, xi), reduced density matrices and the studies
of their N -> infinity behaviour.

Factorized states z^{(x)N} are invariant under z -> e^{i theta} z, so the
classical measure attached to a preparation is a mixture of uniform
measures on the circles {e^{i theta} z_k}. Targets are computed from the
circle centres and their weights ("atoms" below).
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as spla
from scipy.integrate import simpson
from scipy.special import j0

from hartreelab.exceptions import ValidationError, throw
from hartreelab.fock import (
    FockVector,
    SectorVector,
    TruncationPolicy,
    check_hermitian,
    sector_dimension,
    split_embedding,
    tensor_power,
    weyl_operator,
)
from hartreelab.logger import get_logger
from hartreelab.many_body import SectorDynamics
from hartreelab.meanfield import FlowConfig, integrate_flow_batch, interaction_flow_batch, sample_ball
from hartreelab.models import ModelSpec
from hartreelab.wick import SymbolPQ, as_terms, commutator_monomials, wick_apply, wick_matrix

logger = get_logger(__name__)

PREPARATION_KINDS = ("hermite", "superposition", "custom")
BALL_TOL = 1e-12
DEFAULT_MARGIN = 16
PROBE_RADIUS = 0.5
PROBE_COUNT = 8


# ---------------------------------------------------------------------------
# preparations
# ---------------------------------------------------------------------------


def _unit(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex).reshape(-1)
    norm = np.linalg.norm(z)
    if norm == 0:
        throw("a factorized state needs a non-zero one-particle vector")
    if norm > 1 + BALL_TOL:
        throw(f"one-particle vectors must lie in the closed unit ball, got norm {norm:.6f}")
    return z / norm


@dataclass(frozen=True)
class StatePreparation:
    kind: str
    N: int
    z0: np.ndarray | None = None
    components: tuple = ()
    vector: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in PREPARATION_KINDS:
            throw(f"preparation kind must be one of {PREPARATION_KINDS}, got {self.kind!r}")
        if self.N < 1:
            throw(f"particle number must be positive, got {self.N}")
        if self.kind == "hermite":
            if self.z0 is None:
                throw("hermite preparation needs z0")
            object.__setattr__(self, "z0", np.asarray(self.z0, dtype=complex))
        elif self.kind == "superposition":
            if not self.components:
                throw("superposition preparation needs at least one component")
            components = tuple((complex(w), np.asarray(z, dtype=complex)) for w, z in self.components)
            units = [_unit(z) for _, z in components]
            for i in range(len(units)):
                for j in range(i):
                    if abs(np.vdot(units[i], units[j])) > 1 - 1e-9:
                        throw(f"superposition components {j} and {i} point in the same direction")
            object.__setattr__(self, "components", components)
        elif self.vector is None:
            throw("custom preparation needs a coefficient vector")

    @property
    def d(self) -> int:
        if self.kind == "hermite":
            return self.z0.shape[0]
        if self.kind == "superposition":
            return self.components[0][1].shape[0]
        return 0

    def with_N(self, N: int) -> "StatePreparation":
        if self.kind == "custom":
            throw("a custom vector fixes its particle number")
        return replace(self, N=N)

    def atoms(self) -> tuple:
        """(weight, unit vector) pairs of the circle mixture attached to the preparation."""
        if self.kind == "hermite":
            return ((1.0, _unit(self.z0)),)
        if self.kind == "superposition":
            weights = np.array([abs(w) ** 2 for w, _ in self.components])
            if weights.sum() == 0:
                throw("superposition weights are all zero")
            weights = weights / weights.sum()
            return tuple((float(p), _unit(z)) for p, (_, z) in zip(weights, self.components))
        throw("a custom vector has no known classical measure")


def hermite_state(z0: np.ndarray, N: int) -> SectorVector:
    """(z0/|z0|)^{(x)N}."""
    z = _unit(z0)
    return SectorVector(z.shape[0], N, tensor_power(z, N))


def superposition(components, N: int) -> SectorVector:
    components = list(components)
    if not components:
        throw("superposition needs at least one component")
    total = None
    for weight, z in components:
        term = hermite_state(z, N) * complex(weight)
        total = term if total is None else total + term
    return total.normalized()


def prepare(prep: StatePreparation, d: int | None = None) -> SectorVector:
    if prep.kind == "hermite":
        return hermite_state(prep.z0, prep.N)
    if prep.kind == "superposition":
        return superposition(prep.components, prep.N)
    if d is None:
        throw("the mode count of a custom vector must be given")
    psi = SectorVector(d, prep.N, prep.vector)
    if abs(psi.norm() - 1) > 1e-10:
        throw(f"custom vector must be normalized, |psi| = {psi.norm():.12f}")
    return psi


def default_probes(d: int, count: int = PROBE_COUNT, radius: float = PROBE_RADIUS, seed: int = 0) -> np.ndarray:
    """
    Seeded probe vectors xi, uniform in the Euclidean ball of radius `radius`.

    The Euclidean norm is used, not the form norm of A. Since
    |xi|_{Q(A)}^2 = <xi, (A + 1) xi> <= (|A| + 1) |xi|^2, the default radius 0.5
    keeps |xi|_{Q(A)} <= 2 whenever |A| <= 15.
    """
    return sample_ball(np.random.default_rng(seed), count, d, radius)


def required_margin(N: int, xi=None, buffer: int = 4, tail_tol: float = 1e-10) -> int:
    """
    Smallest margin k + buffer such that W(sqrt(2) pi xi) cannot push more than
    tail_tol of a sector-N state past sector N + k, at eps = 1/N.

    Uses |<N+k|D(beta)|N>| <= |beta|^k sqrt((N+k)!/N!) / k!, |beta|^2 = pi^2 |xi|^2 / N.
    """
    if xi is None:
        return buffer
    xi = np.atleast_2d(np.asarray(xi, dtype=complex))
    beta2 = math.pi**2 * float(np.max(np.sum(np.abs(xi) ** 2, axis=1), initial=0.0)) / N
    if beta2 == 0:
        return buffer
    threshold = 0.5 * math.log(1e-2 * tail_tol / (N + 1))
    log_beta = 0.5 * math.log(beta2)
    k = 1
    while True:
        bound = k * log_beta + 0.5 * (math.lgamma(N + k + 1) - math.lgamma(N + 1)) - math.lgamma(k + 1)
        step = log_beta + 0.5 * math.log(N + k + 1) - math.log(k + 1)
        if bound < threshold and step < 0:
            return k + buffer
        k += 1


def weyl_policy(
    N: int, margin: int = DEFAULT_MARGIN, buffer: int = 4, tail_tol: float = 1e-10, xi=None
) -> TruncationPolicy:
    """Cutoff for Weyl operators acting on sector N; widened for large probes `xi`."""
    margin = max(margin, required_margin(N, xi, buffer, tail_tol))
    return TruncationPolicy.around(N, margin, buffer, tail_tol)


# ---------------------------------------------------------------------------
# characteristic functions
# ---------------------------------------------------------------------------


def characteristic_function(
    model: ModelSpec,
    psi: SectorVector,
    t: float,
    xi: np.ndarray,
    policy: TruncationPolicy | None = None,
    picture: str = "interaction",
    dynamics: SectorDynamics | None = None,
) -> complex:
    """G_N(t, xi) = <psi_t, W(sqrt(2) pi xi) psi_t>, eps = 1/N."""
    N = psi.n
    if abs(psi.norm() - 1) > 1e-10:
        throw("state must be normalized")
    dynamics = dynamics or SectorDynamics(model, N)
    if picture == "interaction":
        state = dynamics.interaction(psi, t)
    elif picture == "schrodinger":
        state = dynamics.schrodinger(psi, t)
    else:
        throw(f"unknown picture {picture!r}")
    policy = policy or weyl_policy(N, xi=xi)
    eps = 1.0 / N
    v = FockVector.from_sector(state, policy.n_max, eps)
    W = weyl_operator(math.sqrt(2.0) * math.pi * np.asarray(xi, dtype=complex), policy, eps)
    return v.inner(W.apply(v))


def circle_characteristic(atoms, xi: np.ndarray) -> float:
    """Characteristic function of a mixture of phase circles: sum p_k J0(2 pi |<xi, z_k>|)."""
    xi = np.asarray(xi, dtype=complex)
    return float(sum(p * j0(2 * math.pi * abs(np.vdot(xi, z))) for p, z in atoms))


def characteristic_lipschitz_ratio(
    model: ModelSpec,
    psi: SectorVector,
    t: float,
    probes: np.ndarray,
    policy: TruncationPolicy | None = None,
) -> float:
    """max |G(xi) - G(eta)| / (|xi - eta| sqrt(|xi|^2 + |eta|^2 + 1)) over probe pairs."""
    dynamics = SectorDynamics(model, psi.n)
    values = [characteristic_function(model, psi, t, xi, policy, dynamics=dynamics) for xi in probes]
    best = 0.0
    for i in range(len(probes)):
        for j in range(i):
            gap = np.linalg.norm(probes[i] - probes[j])
            if gap == 0:
                continue
            weight = math.sqrt(np.linalg.norm(probes[i]) ** 2 + np.linalg.norm(probes[j]) ** 2 + 1)
            best = max(best, abs(values[i] - values[j]) / (gap * weight))
    return best


# ---------------------------------------------------------------------------
# reduced density matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReducedDensityMatrix:
    k: int
    matrix: np.ndarray

    def __post_init__(self):
        matrix = check_hermitian(self.matrix, f"gamma^({self.k})", tol=1e-10)
        if abs(np.trace(matrix).real - 1) > 1e-10:
            throw(f"gamma^({self.k}) must have unit trace, got {np.trace(matrix).real:.12f}")
        if spla.eigvalsh(matrix)[0] < -1e-10:
            throw(f"gamma^({self.k}) must be positive semidefinite")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def d(self) -> int:
        for d in range(1, 64):
            if sector_dimension(d, self.k, cap=None) == self.matrix.shape[0]:
                return d
        throw("cannot infer the mode count")

    def expectation(self, B: np.ndarray) -> complex:
        """Tr[gamma B]."""
        return complex(np.trace(self.matrix @ B))


def reduced_density_matrix(psi: SectorVector, k: int) -> ReducedDensityMatrix:
    """gamma^(k) with Tr[gamma B] = <psi, (B (x) Id) psi> for B on sector k."""
    if not 0 <= k <= psi.n:
        throw(f"cannot reduce an {psi.n}-particle state to {k} particles")
    P = split_embedding(psi.d, psi.n, k)
    X = P @ psi.coeffs
    return ReducedDensityMatrix(k, X @ X.conj().T)


def partial_trace(gamma: ReducedDensityMatrix) -> ReducedDensityMatrix:
    """Trace out one particle: gamma^(k) -> gamma^(k-1)."""
    if gamma.k < 1:
        throw("cannot trace out a particle from gamma^(0)")
    P = split_embedding(gamma.d, gamma.k, gamma.k - 1)
    matrix = np.einsum("ajm,mn,bjn->ab", P, gamma.matrix, P, optimize=True)
    return ReducedDensityMatrix(gamma.k - 1, matrix)


def trace_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Trace norm |x - y|_1 of Hermitian matrices."""
    diff = np.asarray(x) - np.asarray(y)
    return float(np.abs(spla.eigvalsh(diff)).sum())


def density_target(atoms, k: int) -> np.ndarray:
    """sum p |z^{(x)k}><z^{(x)k}| in sector-k coordinates."""
    out = None
    for p, z in atoms:
        zk = tensor_power(z, k)
        term = p * np.outer(zk, zk.conj())
        out = term if out is None else out + term
    return out


def evolve_atoms(model: ModelSpec, atoms, t: float, config: FlowConfig, picture: str):
    """Move the centres of (weight, z) atoms along the flow in the given picture."""
    if t == 0:
        return tuple(atoms)
    weights = [p for p, _ in atoms]
    Z0 = np.array([z for _, z in atoms])
    if picture == "interaction":
        Z = interaction_flow_batch(model, Z0, t, config)
    else:
        Z = integrate_flow_batch(model, Z0, t, config)
    return tuple(zip(weights, Z))


# ---------------------------------------------------------------------------
# N -> infinity studies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    t: float
    distance: float


def convergence_metric(
    model: ModelSpec,
    prep: StatePreparation,
    times,
    N_list,
    config: FlowConfig = FlowConfig(),
) -> tuple:
    """|gamma_N^(1)(t) - int |z><z| dmu_t|_1 for every (t, N), in (t, N) order."""
    N_list = [int(N) for N in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        throw(f"N_list must be strictly increasing, got {N_list}")
    times = [float(t) for t in times]
    targets = {t: density_target(evolve_atoms(model, prep.atoms(), t, config, "schrodinger"), 1) for t in times}
    systems = {N: (SectorDynamics(model, N), prepare(prep.with_N(N))) for N in N_list}
    rows = []
    for t in times:
        for N in N_list:
            dynamics, psi = systems[N]
            gamma = reduced_density_matrix(dynamics.schrodinger(psi, t), 1)
            rows.append(ConvergenceRow(N, t, trace_distance(gamma.matrix, targets[t])))
    return tuple(rows)


def is_non_increasing(values, floor: float = 1e-3) -> bool:
    """True when no value exceeds its predecessor by more than `floor`."""
    values = list(values)
    return all(b <= a + floor for a, b in zip(values, values[1:]))


def duhamel_residual(
    model: ModelSpec,
    prep: StatePreparation,
    xi: np.ndarray,
    t: float,
    nodes: int = 65,
    policy: TruncationPolicy | None = None,
) -> float:
    """
    |J_N(t) - J_N(0) - i int_0^t <psi~_s, W(sqrt(2) pi xi) sum_j eps^{j-1} q_j(xi,s)^Wick psi~_s> ds|

    with J_N(s) = G_N(s, xi), eps = 1/N, composite Simpson on `nodes` points.
    """
    if nodes < 3 or nodes % 2 == 0:
        throw(f"Simpson quadrature needs an odd node count >= 3, got {nodes}")
    N = prep.N
    psi = prepare(prep, model.d)
    if t == 0:
        return 0.0
    dynamics = SectorDynamics(model, N)
    policy = policy or weyl_policy(N, xi=xi)
    eps = 1.0 / N
    xi = np.asarray(xi, dtype=complex)
    weyl = weyl_operator(math.sqrt(2.0) * math.pi * xi, policy, eps)
    weyl_adjoint = weyl.adjoint()

    def J(s):
        v = FockVector.from_sector(dynamics.interaction(psi, s), policy.n_max, eps)
        return v.inner(weyl.apply(v))

    def integrand(s):
        v = FockVector.from_sector(dynamics.interaction(psi, s), policy.n_max, eps)
        monomials = commutator_monomials(model.q_kernel, xi, s, model.A)
        acted = FockVector.zeros(model.d, policy.n_max, eps)
        for j, q_j in enumerate(monomials, start=1):
            if not as_terms(q_j):
                continue
            term = wick_apply(q_j, v)
            acted = FockVector(model.d, eps, tuple(a + eps ** (j - 1) * b for a, b in zip(acted.sectors, term.sectors)))
        return weyl_adjoint.apply(v).inner(acted)

    grid = np.linspace(0.0, t, nodes)
    values = np.array([integrand(s) for s in grid])
    integral = simpson(values.real, x=grid) + 1j * simpson(values.imag, x=grid)
    return float(abs(J(t) - J(0.0) - 1j * integral))


def duhamel_refinement(
    model: ModelSpec, prep: StatePreparation, xi: np.ndarray, t: float, nodes=(9, 17, 33, 65), policy=None
) -> tuple:
    """Residuals under node doubling; a smooth integrand gives a fourth-order decrease."""
    return tuple((n, duhamel_residual(model, prep, xi, t, n, policy)) for n in nodes)


@dataclass(frozen=True)
class WickLimitReport:
    N_list: tuple
    expectations: tuple
    target: complex
    extrapolated: complex
    positive_kernel: bool

    def fatou_holds(self, tol: float = 1e-8) -> bool:
        """Estimated liminf of the expectations is at least the classical value."""
        if not self.positive_kernel:
            throw("the Fatou probe needs a positive kernel")
        return self.extrapolated.real >= self.target.real - tol


def _is_positive_kernel(b: SymbolPQ) -> bool:
    if b.p != b.q:
        return False
    kernel = b.kernel
    if np.abs(kernel - kernel.conj().T).max(initial=0.0) > 1e-12:
        return False
    return bool(spla.eigvalsh(kernel)[0] >= -1e-12)


def wick_expectation_limit(
    model: ModelSpec,
    prep: StatePreparation,
    b: SymbolPQ,
    N_list,
    t: float = 0.0,
    config: FlowConfig = FlowConfig(),
) -> WickLimitReport:
    """<psi_N(t), b^Wick psi_N(t)> at eps = 1/N against int b dmu_t."""
    if b.d != model.d:
        throw("symbol and model act on different C^d")
    N_list = tuple(int(N) for N in N_list)
    values = []
    for N in N_list:
        psi = prepare(prep.with_N(N))
        if t:
            psi = SectorDynamics(model, N).schrodinger(psi, t)
        if b.p != b.q or N < b.p:
            values.append(0j)
            continue
        values.append(complex(np.vdot(psi.coeffs, wick_matrix(b, N, 1.0 / N) @ psi.coeffs)))
    # the circle average kills every monomial with p != q
    atoms = evolve_atoms(model, prep.atoms(), t, config, "schrodinger")
    target = sum((p * b(z) for p, z in atoms), 0j) if b.p == b.q else 0j
    if len(N_list) >= 2:
        (n1, v1), (n2, v2) = zip(N_list[-2:], values[-2:])
        slope = (v2 - v1) / (1.0 / n2 - 1.0 / n1)
        extrapolated = v2 - slope / n2
    else:
        extrapolated = values[-1] if values else 0j
    return WickLimitReport(N_list, tuple(values), complex(target), complex(extrapolated), _is_positive_kernel(b))


@dataclass(frozen=True)
class MomentReport:
    N_list: tuple
    kinetic_per_particle: tuple
    measure_moment: float
    C: float
    satisfied: bool


def apriori_moment_check(
    model: ModelSpec, prep: StatePreparation, N_list, C: float | None = None
) -> MomentReport:
    """
    Kinetic expectations <H_N^0>/N and the bound int |z|_{Q(A)}^2 dmu_0 <= C,
    where C bounds <H_N^0>/N + 1 along the sequence (measured when not given).
    """
    N_list = tuple(int(N) for N in N_list)
    kinetic = []
    for N in N_list:
        psi = prepare(prep.with_N(N))
        kinetic.append(SectorDynamics(model, N).free.expectation(psi) / N)
    measured = max(kinetic) + 1.0
    if C is None:
        C = measured
    elif measured > C * (1 + 1e-12):
        raise ValidationError(f"preparation violates <H_N^0>/N + 1 <= C: {measured:.6e} > {C:.6e}")
    moment = float(sum(p * (np.vdot(z, model.A @ z).real + np.vdot(z, z).real) for p, z in prep.atoms()))
    return MomentReport(N_list, tuple(kinetic), moment, float(C), moment <= C * (1 + 1e-12) + 1e-12)
