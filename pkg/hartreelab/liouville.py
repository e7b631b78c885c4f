"""
Particle representation of probability measures on C^d, their transport
along the Hartree flow, and the weak form of the Liouville equation

    d/dt mu_t + div(v_t mu_t) = 0

tested against cylindrical functions f(t, z) = chi(t) phi(s(z)),
s_k(z) = (Re<g_k, z> - c_k) / R.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from hartreelab.exceptions import HartreeLabError, TransportError, ValidationError, throw
from hartreelab.logger import get_logger
from hartreelab.meanfield import FlowConfig, HartreeVectorField, integrate_flow_batch, interaction_flow_batch
from hartreelab.models import ModelSpec
from hartreelab.utils import get_attr, get_hooks
from hartreelab.wick import interaction_symbol

logger = get_logger(__name__)

WEIGHT_TOL = 1e-12
BALL_TOL = 1e-9
CHUNK_SIZE = 64


@dataclass(frozen=True, eq=False)
class ParticleMeasure:
    """sum_k weights[k] delta_{atoms[k]}."""

    weights: np.ndarray
    atoms: np.ndarray
    seed: int | None = None
    unit_ball: bool = False

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float).reshape(-1)
        atoms = np.array(self.atoms, dtype=complex)
        if atoms.ndim == 1:
            atoms = atoms[None, :]
        if atoms.ndim != 2 or atoms.shape[0] != weights.shape[0]:
            throw(f"{weights.shape[0]} weights for atoms of shape {atoms.shape}")
        if weights.size == 0:
            throw("a measure needs at least one atom")
        if np.any(weights <= 0):
            throw("atom weights must be positive")
        if abs(weights.sum() - 1) > WEIGHT_TOL * max(1, weights.size):
            throw(f"weights must sum to 1, got {weights.sum():.15f}")
        if self.unit_ball:
            norms = np.linalg.norm(atoms, axis=1)
            if np.any(norms > 1 + BALL_TOL):
                throw(f"unit-ball measure has an atom of norm {norms.max():.6f}")
        weights.setflags(write=False)
        atoms.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "atoms", atoms)

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def __len__(self):
        return self.weights.shape[0]

    def with_atoms(self, atoms: np.ndarray) -> "ParticleMeasure":
        return ParticleMeasure(self.weights, atoms, self.seed, self.unit_ball)

    def columns(self) -> list:
        return ["weight"] + [f"re_z{j}" for j in range(self.d)] + [f"im_z{j}" for j in range(self.d)]

    def to_records(self) -> np.ndarray:
        """Rows (weight, Re z_0..Re z_{d-1}, Im z_0..Im z_{d-1})."""
        return np.column_stack([self.weights, self.atoms.real, self.atoms.imag])

    @classmethod
    def from_records(cls, records, seed: int | None = None, unit_ball: bool = False) -> "ParticleMeasure":
        records = np.asarray(records, dtype=float)
        if records.ndim != 2 or records.shape[1] < 3 or records.shape[1] % 2 == 0:
            throw(f"measure records must have 1 + 2d columns, got shape {records.shape}")
        d = (records.shape[1] - 1) // 2
        atoms = records[:, 1:1 + d] + 1j * records[:, 1 + d:]
        return cls(records[:, 0], atoms, seed, unit_ball)


# ---------------------------------------------------------------------------
# measure families
# ---------------------------------------------------------------------------


def dirac_measure(z0, seed: int = 0) -> ParticleMeasure:
    z0 = np.asarray(z0, dtype=complex)
    return ParticleMeasure(np.ones(1), z0[None, :], seed, np.linalg.norm(z0) <= 1 + BALL_TOL)


def atomic_measure(atoms, seed: int = 0) -> ParticleMeasure:
    """From (weight, z) pairs; weights must already sum to 1."""
    atoms = list(atoms)
    if not atoms:
        throw("atomic measure needs at least one atom")
    weights = np.array([float(w) for w, _ in atoms])
    Z = np.array([np.asarray(z, dtype=complex) for _, z in atoms])
    return ParticleMeasure(weights, Z, seed, bool(np.all(np.linalg.norm(Z, axis=1) <= 1 + BALL_TOL)))


def gaussian_on_sphere(center, spread: float, M: int, seed: int = 0) -> ParticleMeasure:
    """
    M atoms center + spread * g, g standard complex Gaussian; samples leaving
    the closed unit ball are rescaled onto the unit sphere. Atom k draws from
    its own stream spawned from the seed.
    """
    if M < 1:
        throw(f"M must be at least 1, got {M}")
    if spread < 0:
        throw(f"spread must be non-negative, got {spread}")
    center = np.asarray(center, dtype=complex)
    d = center.shape[0]
    streams = np.random.SeedSequence(seed).spawn(M)
    Z = np.empty((M, d), dtype=complex)
    for k, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        g = (rng.standard_normal(d) + 1j * rng.standard_normal(d)) / math.sqrt(2.0)
        Z[k] = center + spread * g
    norms = np.linalg.norm(Z, axis=1)
    outside = norms > 1
    Z[outside] /= norms[outside][:, None]
    return ParticleMeasure(np.full(M, 1.0 / M), Z, seed, True)


def circle_measure(z0, M: int, seed: int = 0) -> ParticleMeasure:
    """M equally spaced atoms on the phase circle {e^{i theta} z0/|z0|}."""
    if M < 1:
        throw(f"M must be at least 1, got {M}")
    z0 = np.asarray(z0, dtype=complex)
    norm = np.linalg.norm(z0)
    if norm == 0:
        throw("circle measure needs a non-zero centre")
    phases = np.exp(2j * math.pi * np.arange(M) / M)
    return ParticleMeasure(np.full(M, 1.0 / M), phases[:, None] * (z0 / norm)[None, :], seed, True)


def sample_measure(family: str, seed: int = 0, **params) -> ParticleMeasure:
    families = get_hooks("measure_families")
    if family not in families:
        throw(f"unknown measure family {family!r}; choose one of {sorted(families)}")
    return get_attr(families[family])(seed=seed, **params)


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------


PICTURES = ("schrodinger", "interaction")


def _transport_chunk(model, Z, t, t0, config, picture):
    if picture == "interaction":
        return interaction_flow_batch(model, Z, t, config, t0=t0)
    return integrate_flow_batch(model, Z, t - t0, config)


def push_forward(
    model: ModelSpec,
    mu: ParticleMeasure,
    t: float,
    picture: str = "interaction",
    config: FlowConfig = FlowConfig(),
    threads: int = 1,
    t0: float = 0.0,
) -> ParticleMeasure:
    """
    Move every atom by Phi(t, t0) or Phi~(t, t0). Atoms are integrated in fixed
    chunks so the result does not depend on the thread count.
    """
    if picture not in PICTURES:
        throw(f"picture must be one of {PICTURES}, got {picture!r}")
    if mu.d != model.d:
        throw("measure and model act on different C^d")
    if t == t0:
        return mu
    starts = list(range(0, len(mu), CHUNK_SIZE))

    def run(start):
        try:
            return _transport_chunk(model, mu.atoms[start:start + CHUNK_SIZE], t, t0, config, picture)
        except HartreeLabError as exc:
            local = getattr(exc, "report", {}).get("atom", 0)
            raise TransportError(start + local, exc) from exc

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        chunks = list(executor.map(run, starts))
    return mu.with_atoms(np.concatenate(chunks))


def transport_path(
    model: ModelSpec,
    mu0: ParticleMeasure,
    times,
    picture: str = "interaction",
    config: FlowConfig = FlowConfig(),
    threads: int = 1,
) -> tuple:
    """(t, mu_t) on an increasing time grid starting from mu_0 at time 0."""
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times, times[1:])):
        throw("path times must be strictly increasing")
    path = []
    current, clock = mu0, 0.0
    for t in times:
        current = push_forward(model, current, t, picture, config, threads, t0=clock)
        clock = t
        path.append((t, current))
    return tuple(path)


def frozen_path(mu0: ParticleMeasure, times) -> tuple:
    """mu_t = mu_0 for every t; the negative control for the weak residual."""
    return tuple((float(t), mu0) for t in times)


# ---------------------------------------------------------------------------
# cylindrical test functions
# ---------------------------------------------------------------------------


def _bump(x: np.ndarray) -> tuple:
    """(1 - x^2)^4 on |x| < 1 and its derivative in x^2."""
    inside = np.clip(1.0 - x, 0.0, None)
    return inside ** 4, -4.0 * inside ** 3


@dataclass(frozen=True, eq=False)
class CylindricalTestFunction:
    directions: np.ndarray
    centre: np.ndarray
    radius: float
    window: tuple

    def __post_init__(self):
        G = np.array(self.directions, dtype=complex)
        if G.ndim == 1:
            G = G[None, :]
        # orthonormal for the real inner product Re<.,.> on C^d = R^{2d}
        real = np.concatenate([G.real, G.imag], axis=1).T
        q, r = np.linalg.qr(real)
        if np.min(np.abs(np.diag(r))) < 1e-12:
            throw("cylindrical directions must be real-linearly independent")
        d = G.shape[1]
        G = (q[:d] + 1j * q[d:]).T
        centre = np.asarray(self.centre, dtype=float).reshape(-1)
        if centre.shape[0] != G.shape[0]:
            throw(f"centre must have {G.shape[0]} coordinates, got {centre.shape[0]}")
        if not self.radius > 0:
            throw(f"radius must be positive, got {self.radius}")
        a, b = (float(x) for x in self.window)
        if not b > a:
            throw(f"time window must be increasing, got {self.window}")
        G.setflags(write=False)
        object.__setattr__(self, "directions", G)
        object.__setattr__(self, "centre", centre)
        object.__setattr__(self, "window", (a, b))

    @classmethod
    def around(
        cls, mu: ParticleMeasure, rank: int, radius: float, window: tuple, offset: float = 0.4, seed: int = 0
    ) -> "CylindricalTestFunction":
        """Random directions; the centre sits `offset * radius` from the mean coordinates of mu."""
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((rank, mu.d)) + 1j * rng.standard_normal((rank, mu.d))
        probe = cls(G, np.zeros(rank), radius, window)
        mean = mu.weights @ probe.coordinates(mu.atoms, raw=True)
        shift = np.zeros(rank)
        shift[0] = offset * radius
        return cls(probe.directions, mean + shift, radius, window)

    @property
    def rank(self) -> int:
        return self.directions.shape[0]

    def coordinates(self, Z: np.ndarray, raw: bool = False) -> np.ndarray:
        """s(z) for each row of Z."""
        s = (Z @ self.directions.conj().T).real
        if raw:
            return s
        return (s - self.centre) / self.radius

    def time_window(self, t: float) -> tuple:
        """chi(t) and chi'(t)."""
        a, b = self.window
        tau = (2 * t - a - b) / (b - a)
        value, slope = _bump(np.array(tau * tau))
        return float(value), float(slope * 2 * tau * 2 / (b - a))

    def profile(self, Z: np.ndarray) -> tuple:
        """phi(s) and d phi / d s for each row."""
        s = self.coordinates(Z)
        value, slope = _bump(np.sum(s * s, axis=1))
        return value, (slope * 2)[:, None] * s

    def __call__(self, t: float, Z: np.ndarray) -> np.ndarray:
        return self.time_window(t)[0] * self.profile(Z)[0]

    def gradient(self, t: float, Z: np.ndarray) -> np.ndarray:
        """grad f for the real inner product: df(z)[h] = Re<grad f, h>."""
        chi = self.time_window(t)[0]
        return chi * (self.profile(Z)[1] @ self.directions) / self.radius

    def dbar(self, t: float, Z: np.ndarray) -> np.ndarray:
        """Wirtinger derivative d f / d conj(z), from d s_k / d conj(z) = g_k / (2R)."""
        chi = self.time_window(t)[0]
        return chi * (self.profile(Z)[1] @ self.directions) / (2 * self.radius)

    def time_derivative(self, t: float, Z: np.ndarray) -> np.ndarray:
        return self.time_window(t)[1] * self.profile(Z)[0]


# ---------------------------------------------------------------------------
# weak residual
# ---------------------------------------------------------------------------


FORMS = ("gradient", "bracket")


class _Velocity:
    def __init__(self, model: ModelSpec, picture: str):
        self.model = model
        self.picture = picture
        self.field = HartreeVectorField(model)

    def gradient_form(self, t: float, Z: np.ndarray, f: CylindricalTestFunction) -> np.ndarray:
        """Re<v_t(z), grad f(t, z)>."""
        v = self.field.interaction(t, Z) if self.picture == "interaction" else self.field.schrodinger(t, Z)
        return np.sum((v.conj() * f.gradient(t, Z)).real, axis=1)

    def bracket_form(self, t: float, Z: np.ndarray, f: CylindricalTestFunction) -> np.ndarray:
        """i{h_t, f} = -2 Im<dh_t/d conj(z), df/d conj(z)> with h_t the evolved Hamiltonian symbol."""
        if self.picture == "interaction":
            symbol = interaction_symbol(self.model.q_kernel, self.model.A, t)
            evolved = HartreeVectorField(self.model.with_kernel(2 * symbol.kernel))
            dh = evolved.gradient(Z)
        else:
            dh = Z @ self.model.A.T + self.field.gradient(Z)
        return -2.0 * np.sum((dh.conj() * f.dbar(t, Z)).imag, axis=1)


def weak_liouville_residual(
    model: ModelSpec,
    path,
    f: CylindricalTestFunction,
    form: str = "gradient",
    picture: str = "interaction",
) -> float:
    """
    |int int [d_t f + Re<v_t, grad f>] dmu_t dt| on the path's time grid
    (trapezoid in time, exact sums over atoms).
    """
    if form not in FORMS:
        throw(f"form must be one of {FORMS}, got {form!r}")
    if picture not in PICTURES:
        throw(f"picture must be one of {PICTURES}, got {picture!r}")
    path = list(path)
    if len(path) < 2:
        throw("a path needs at least two times")
    times = np.array([t for t, _ in path])
    a, b = f.window
    if times[0] > a or times[-1] < b:
        raise ValidationError(f"time window [{a}, {b}] is not covered by the path [{times[0]}, {times[-1]}]")
    velocity = _Velocity(model, picture)
    transport = velocity.gradient_form if form == "gradient" else velocity.bracket_form
    values = []
    for t, mu in path:
        if mu.d != model.d:
            throw("measure and model act on different C^d")
        integrand = f.time_derivative(t, mu.atoms) + transport(t, mu.atoms, f)
        values.append(float(mu.weights @ integrand))
    return float(abs(trapezoid(values, x=times)))


def liouville_refinement(
    model: ModelSpec,
    mu0: ParticleMeasure,
    f: CylindricalTestFunction,
    points: int = 17,
    max_doublings: int = 4,
    picture: str = "interaction",
    config: FlowConfig = FlowConfig(),
    threads: int = 1,
) -> tuple:
    """
    Residuals of the transported path on grids over the window with
    points, 2 points - 1, ... nodes, stopping once the change drops below 10%.
    """
    a, b = f.window
    if a < 0:
        throw(f"the time window must start at t >= 0, got {a}")
    history = []
    for _ in range(max_doublings + 1):
        path = transport_path(model, mu0, np.linspace(a, b, points), picture, config, threads)
        residual = weak_liouville_residual(model, path, f, picture=picture)
        history.append((points, residual))
        if len(history) >= 2:
            previous = history[-2][1]
            if abs(residual - previous) < 0.1 * max(previous, 1e-300):
                break
        points = 2 * points - 1
    return tuple(history)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasureMoments:
    m2_QA: float
    unit_ball_mass: float
    moments: tuple

    def as_dict(self) -> dict:
        out = {"m2_QA": self.m2_QA, "unit_ball_mass": self.unit_ball_mass}
        out.update({f"m{2 * k}": value for k, value in enumerate(self.moments, start=1)})
        return out


def moment_report(mu: ParticleMeasure, model: ModelSpec) -> MeasureMoments:
    """int |z|_{Q(A)}^2, the mass of the closed unit ball and int |z|^{2k} for k <= 4."""
    Z = mu.atoms
    charge = np.sum(np.abs(Z) ** 2, axis=1)
    kinetic = np.einsum("mj,jk,mk->m", Z.conj(), model.A, Z).real
    inside = np.sqrt(charge) <= 1 + BALL_TOL
    moments = tuple(float(mu.weights @ charge ** k) for k in range(1, 5))
    return MeasureMoments(float(mu.weights @ (kinetic + charge)), float(mu.weights[inside].sum()), moments)


def characteristic_of_measure(mu: ParticleMeasure, xi) -> complex:
    """sum_k w_k exp(2 i pi Re<xi, z_k>)."""
    xi = np.asarray(xi, dtype=complex)
    phases = (mu.atoms @ xi.conj()).real
    return complex(mu.weights @ np.exp(2j * math.pi * phases))
