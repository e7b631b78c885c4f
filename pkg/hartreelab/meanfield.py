"""
Classical Hartree dynamics on C^d

    i dz/dt = A z + grad q_0(z),    q_0(z) = (1/2) q(z^2, z^2),

in the Schrodinger picture (flow Phi(t,s)) and in the interaction picture
(flow of the velocity field v_t(z) = -i e^{itA} grad q_0(e^{-itA} z)).

Every integrator works on a batch of initial data of shape (M, d). The step
size is controlled by the drift of the two conserved quantities, charge
|z|^2 and energy h(z): a run whose drift exceeds the tolerance is repeated
with half the step.
"""
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from hartreelab.exceptions import DriftError, throw
from hartreelab.fock import check_hermitian, creation_matrix
from hartreelab.logger import get_logger, log_error
from hartreelab.models import ModelSpec

logger = get_logger(__name__)

INTEGRATORS = ("rk4", "splitstep")
PICTURES = ("schrodinger", "interaction")
BALL_TOL = 1e-9


@dataclass(frozen=True)
class FlowConfig:
    integrator: str = "rk4"
    step: float = 1e-3
    conservation_tol: float = 1e-10
    max_halvings: int = 6

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            throw(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if not self.step > 0:
            throw(f"step must be positive, got {self.step}")
        if not self.conservation_tol > 0:
            throw(f"conservation_tol must be positive, got {self.conservation_tol}")
        if self.max_halvings < 0:
            throw(f"max_halvings must be non-negative, got {self.max_halvings}")

    def halved(self) -> "FlowConfig":
        return FlowConfig(self.integrator, self.step / 2, self.conservation_tol, self.max_halvings)


@dataclass(frozen=True)
class ClassicalState:
    z: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        z = np.array(self.z, dtype=complex).reshape(-1)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def d(self) -> int:
        return self.z.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.z))

    def energy_norm(self, A: np.ndarray) -> float:
        """|z|_{Q(A)} = <z, (A+1) z>^{1/2}."""
        return math.sqrt(float(np.vdot(self.z, A @ self.z).real) + self.norm() ** 2)


class HartreeVectorField:
    """Vector fields and conserved quantities of one model, vectorized over a batch."""

    def __init__(self, model: ModelSpec):
        self.model = model
        self.A = model.A
        self.K = model.q_kernel
        self._vals, self._vecs = spla.eigh(self.A)
        # _raise[j] @ z are the two-particle coordinates of sqrt(2) S_2(e_j (x) z)
        self._raise = np.stack([creation_matrix(model.d, 1, j, 1.0).toarray() for j in range(model.d)])

    def pair_lift(self, Z: np.ndarray) -> np.ndarray:
        """L[m, :, j] = coordinates of S_2(e_j (x) z_m)."""
        return np.einsum("jak,mk->maj", self._raise, Z) / math.sqrt(2.0)

    def gradient(self, Z: np.ndarray) -> np.ndarray:
        """grad q_0 for each row of Z: <u, w> = <S_2(u (x) z), q~ z^2>."""
        L = self.pair_lift(Z)
        pairs = np.einsum("maj,mj->ma", L, Z)
        return np.einsum("maj,ma->mj", L.conj(), pairs @ self.K.T)

    def energy(self, Z: np.ndarray) -> np.ndarray:
        pairs = np.einsum("maj,mj->ma", self.pair_lift(Z), Z)
        kinetic = np.einsum("mj,jk,mk->m", Z.conj(), self.A, Z).real
        interaction = np.einsum("ma,ab,mb->m", pairs.conj(), self.K, pairs).real
        return kinetic + 0.5 * interaction

    @staticmethod
    def charge(Z: np.ndarray) -> np.ndarray:
        return np.sum(np.abs(Z) ** 2, axis=1)

    def propagator(self, t: float) -> np.ndarray:
        """e^{-itA}."""
        return (self._vecs * np.exp(-1j * t * self._vals)) @ self._vecs.conj().T

    def schrodinger(self, t: float, Z: np.ndarray) -> np.ndarray:
        return -1j * (Z @ self.A.T + self.gradient(Z))

    def interaction(self, t: float, Z: np.ndarray) -> np.ndarray:
        U = self.propagator(t)
        return -1j * self.gradient(Z @ U.T) @ U.conj()

    def schrodinger_energy(self, t: float, Z: np.ndarray, picture: str) -> np.ndarray:
        if picture == "interaction":
            Z = Z @ self.propagator(t).T
        return self.energy(Z)


def _as_batch(Z0, d: int) -> np.ndarray:
    Z = np.array(Z0, dtype=complex)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2 or Z.shape[1] != d:
        throw(f"initial data must have shape (M, {d}), got {Z.shape}")
    return Z


def _check_ball(Z: np.ndarray):
    norms = np.linalg.norm(Z, axis=1)
    outside = np.nonzero(norms > 1 + BALL_TOL)[0]
    if outside.size:
        throw(f"initial data must lie in the closed unit ball; row {int(outside[0])} has norm {norms[outside[0]]:.6f}")
    if np.any(np.abs(norms - 1) <= BALL_TOL):
        logger.debug("initial data on the unit sphere; the convergence estimates assume the open ball")


# ---------------------------------------------------------------------------
# single integration passes
# ---------------------------------------------------------------------------


def _rk4_pass(rhs, Z: np.ndarray, t0: float, t1: float, steps: int, monitor):
    h = (t1 - t0) / steps
    t = t0
    for _ in range(steps):
        k1 = rhs(t, Z)
        k2 = rhs(t + 0.5 * h, Z + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, Z + 0.5 * h * k2)
        k4 = rhs(t + h, Z + h * k3)
        Z = Z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        monitor(t, Z)
    return Z


def _splitstep_pass(field: HartreeVectorField, Z: np.ndarray, duration: float, steps: int, monitor, t0: float):
    """Strang splitting e^{-ihA/2} N(h) e^{-ihA/2}; the nonlinear flow is exact for pair potentials."""
    W = field.model.pair_potential()
    h = duration / steps
    half = field.propagator(0.5 * h).T
    t = t0
    for _ in range(steps):
        Z = Z @ half
        Z = Z * np.exp(-1j * h * (np.abs(Z) ** 2 @ W.T))
        Z = Z @ half
        t += h
        monitor(t, Z)
    return Z


class _DriftMonitor:
    def __init__(self, field: HartreeVectorField, Z0: np.ndarray, t0: float, picture: str):
        self.field = field
        self.picture = picture
        self.charge0 = field.charge(Z0)
        self.energy0 = field.schrodinger_energy(t0, Z0, picture)
        self.charge_drift = np.zeros(len(Z0))
        self.energy_drift = np.zeros(len(Z0))

    def __call__(self, t: float, Z: np.ndarray):
        charge = np.abs(self.field.charge(Z) - self.charge0)
        energy = np.abs(self.field.schrodinger_energy(t, Z, self.picture) - self.energy0)
        energy /= np.maximum(1.0, np.abs(self.energy0))
        np.maximum(self.charge_drift, charge, out=self.charge_drift)
        np.maximum(self.energy_drift, energy, out=self.energy_drift)

    def worst(self) -> tuple:
        drift = np.maximum(self.charge_drift, self.energy_drift)
        atom = int(np.argmax(drift)) if drift.size else 0
        return atom, float(drift[atom]) if drift.size else 0.0


def _integrate(model: ModelSpec, Z0, t0: float, t1: float, config: FlowConfig, picture: str) -> np.ndarray:
    if picture not in PICTURES:
        throw(f"picture must be one of {PICTURES}, got {picture!r}")
    field = HartreeVectorField(model)
    Z0 = _as_batch(Z0, model.d)
    _check_ball(Z0)
    if t1 == t0 or len(Z0) == 0:
        return Z0.copy()
    if config.integrator == "splitstep" and not model.is_position_diagonal():
        throw("split-step integration needs a position-diagonal two-body kernel")

    duration = t1 - t0
    limit = config.conservation_tol * max(1.0, abs(duration))
    current = config
    for halving in range(config.max_halvings + 1):
        steps = max(1, math.ceil(abs(duration) / current.step - 1e-9))
        monitor = _DriftMonitor(field, Z0, t0, picture)
        if current.integrator == "rk4":
            rhs = field.schrodinger if picture == "schrodinger" else field.interaction
            Z = _rk4_pass(rhs, Z0, t0, t1, steps, monitor)
        elif picture == "schrodinger":
            Z = _splitstep_pass(field, Z0, duration, steps, monitor, t0)
        else:
            # Phi~(t1, t0) = e^{i t1 A} Phi(t1 - t0) e^{-i t0 A}
            start = Z0 @ field.propagator(t0).T
            schrodinger_monitor = _DriftMonitor(field, start, 0.0, "schrodinger")
            Z = _splitstep_pass(field, start, duration, steps, schrodinger_monitor, 0.0)
            Z = Z @ field.propagator(-t1).T
            monitor = schrodinger_monitor
        atom, drift = monitor.worst()
        if drift <= limit:
            if halving:
                logger.debug("flow accepted after %d halvings, step %.3e", halving, current.step)
            return Z
        log_error(
            f"conservation drift {drift:.3e} above {limit:.3e} with step {current.step:.3e}; halving",
            __name__,
        )
        current = current.halved()

    report = {
        "atom": atom,
        "charge_drift": float(monitor.charge_drift[atom]),
        "energy_drift": float(monitor.energy_drift[atom]),
        "step": current.step * 2,
        "halvings": config.max_halvings,
        "limit": limit,
    }
    raise DriftError(f"conservation drift {drift:.3e} exceeds {limit:.3e} after {config.max_halvings} halvings", report)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def gradient_interaction(q_kernel: np.ndarray, z: np.ndarray) -> np.ndarray:
    """grad q_0(z) for a single vector."""
    q_kernel = check_hermitian(q_kernel, "two-body kernel")
    z = np.asarray(z, dtype=complex)
    d = z.shape[0]
    model = ModelSpec(d, np.zeros((d, d)), q_kernel)
    return HartreeVectorField(model).gradient(z[None, :])[0]


def hartree_rhs(model: ModelSpec, z: np.ndarray) -> np.ndarray:
    return HartreeVectorField(model).schrodinger(0.0, _as_batch(z, model.d))[0]


def classical_energy(model: ModelSpec, z: np.ndarray) -> float:
    """h(z) = <z, A z> + q(z^2, z^2)/2."""
    return float(HartreeVectorField(model).energy(_as_batch(z, model.d))[0])


def charge(z: np.ndarray) -> float:
    return float(np.vdot(z, z).real)


def integrate_flow(model: ModelSpec, z0, t: float, config: FlowConfig = FlowConfig()) -> ClassicalState:
    """Phi(t, 0) z0."""
    z = np.asarray(z0.z if isinstance(z0, ClassicalState) else z0, dtype=complex)
    return ClassicalState(_integrate(model, z, 0.0, t, config, "schrodinger")[0], t)


def integrate_flow_batch(model: ModelSpec, Z0, t: float, config: FlowConfig = FlowConfig()) -> np.ndarray:
    return _integrate(model, Z0, 0.0, t, config, "schrodinger")


def interaction_flow(
    model: ModelSpec, z0, t: float, config: FlowConfig = FlowConfig(), t0: float = 0.0
) -> ClassicalState:
    """Phi~(t, t0) z0."""
    z = np.asarray(z0.z if isinstance(z0, ClassicalState) else z0, dtype=complex)
    return ClassicalState(_integrate(model, z, t0, t, config, "interaction")[0], t)


def interaction_flow_batch(
    model: ModelSpec, Z0, t: float, config: FlowConfig = FlowConfig(), t0: float = 0.0
) -> np.ndarray:
    return _integrate(model, Z0, t0, t, config, "interaction")


def free_propagator(model: ModelSpec, t: float) -> np.ndarray:
    """e^{-itA}."""
    return HartreeVectorField(model).propagator(t)


# ---------------------------------------------------------------------------
# regularity probes
# ---------------------------------------------------------------------------


def sample_ball(rng: np.random.Generator, count: int, d: int, radius: float) -> np.ndarray:
    """Uniform samples of the ball of C^d = R^{2d}."""
    directions = rng.standard_normal((count, d)) + 1j * rng.standard_normal((count, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(count) ** (1.0 / (2 * d))
    return directions * radii[:, None]


def lipschitz_probe(model: ModelSpec, M: float, samples: int = 1000, seed: int = 0) -> float:
    """
    Largest observed |grad q_0(u) - grad q_0(v)| / ((|u|_Q^2 + |v|_Q^2) |u - v|)
    over pairs in the ball of radius M. Half the pairs are independent points,
    half are local perturbations v = u + delta with |delta| log-uniform in [1e-4 M, M].
    """
    if not M > 0:
        throw(f"M must be positive, got {M}")
    if samples < 2:
        throw("at least two samples are needed")
    rng = np.random.default_rng(seed)
    field = HartreeVectorField(model)
    d = model.d
    far = samples // 2
    near = samples - far
    U = sample_ball(rng, samples, d, M)
    V = np.empty_like(U)
    V[:far] = sample_ball(rng, far, d, M)
    scales = M * 10.0 ** rng.uniform(-4.0, 0.0, near)
    delta = rng.standard_normal((near, d)) + 1j * rng.standard_normal((near, d))
    delta *= (scales / np.linalg.norm(delta, axis=1))[:, None]
    V[far:] = U[far:] + delta
    norms = np.linalg.norm(V, axis=1)
    V[norms > M] *= (M / norms[norms > M])[:, None]

    def q_norm2(Z):
        return np.einsum("mj,jk,mk->m", Z.conj(), model.A, Z).real + field.charge(Z)

    numerator = np.linalg.norm(field.gradient(U) - field.gradient(V), axis=1)
    denominator = (q_norm2(U) + q_norm2(V)) * np.linalg.norm(U - V, axis=1)
    mask = denominator > 0
    if not np.any(mask):
        return 0.0
    return float(np.max(numerator[mask] / denominator[mask]))


@dataclass(frozen=True)
class ContinuityReport:
    t: float
    delta: float
    constant: float
    constant_half: float

    @property
    def stable(self) -> bool:
        """The measured constant changes by less than 10% when delta is halved."""
        scale = max(self.constant, self.constant_half, 1e-300)
        return abs(self.constant - self.constant_half) <= 0.1 * scale


def continuity_probe(
    model: ModelSpec,
    z0,
    t: float,
    delta: float = 1e-4,
    config: FlowConfig = FlowConfig(),
    directions: int = 4,
    seed: int = 0,
) -> ContinuityReport:
    """Measured K(t) in |Phi(t,0)(z0 + delta e) - Phi(t,0) z0| <= K(t) delta, at delta and delta/2."""
    z0 = np.asarray(z0, dtype=complex)
    if not delta > 0:
        throw(f"delta must be positive, got {delta}")
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((directions, model.d)) + 1j * rng.standard_normal((directions, model.d))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    if np.linalg.norm(z0) > 1.0 - delta:
        throw(f"|z0| = {np.linalg.norm(z0):.6g} leaves no room for a perturbation of size {delta} inside the unit ball")
    reference = integrate_flow_batch(model, z0, t, config)[0]

    def constant(step):
        moved = integrate_flow_batch(model, z0[None, :] + step * e, t, config)
        return float(np.max(np.linalg.norm(moved - reference, axis=1)) / step)

    return ContinuityReport(t, delta, constant(delta), constant(delta / 2))
