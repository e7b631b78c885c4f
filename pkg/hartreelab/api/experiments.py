"""
Experiment orchestration: N-sweeps, time grids and probe sets dispatched to a
worker pool, assembled into ResultTables in grid order.

Every metric row carries the (N, t, probe_id) coordinates that produced it.
Classical rows (Liouville transport) use N = "inf".
"""
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.linalg as spla

from hartreelab.api.tables import ResultTable, emit, table_path
from hartreelab.config import ExperimentConfig
from hartreelab.exceptions import ExperimentError, HartreeLabError, throw
from hartreelab.fock import (
    FockVector,
    SectorVector,
    TruncationPolicy,
    annihilation_field_matrix,
    creation_field_matrix,
    dgamma_block,
    sector_dimension,
    weyl_operator,
)
from hartreelab.liouville import (
    CylindricalTestFunction,
    frozen_path,
    liouville_refinement,
    moment_report,
    sample_measure,
    transport_path,
    weak_liouville_residual,
)
from hartreelab.logger import get_logger, log_error
from hartreelab.many_body import (
    SectorDynamics,
    energy_bound_certificate,
    estimate_form_bound,
    form_bound_margin,
)
from hartreelab.utils import get_attr, get_hooks
from hartreelab.wick import (
    SymbolPQ,
    adjoint_symbol,
    commutator_monomials,
    evolve_symbol,
    interaction_symbol,
    translate_symbol,
    wick_apply,
    wick_matrix,
)
from hartreelab.wigner import (
    characteristic_function,
    circle_characteristic,
    density_target,
    duhamel_refinement,
    duhamel_residual,
    evolve_atoms,
    prepare,
    reduced_density_matrix,
    trace_distance,
)

logger = get_logger(__name__)

CLASSICAL_N = "inf"
ALGEBRA_TOL = 1e-10
COMMUTATOR_TOL = 1e-8
AUDIT_CUTOFF = 20
AUDIT_BUFFER = 4
AUDIT_MAX_SECTOR = 4
REFINEMENT_NODES = (9, 17, 33, 65)


def _grid(config: ExperimentConfig, points, task, module: str, op: str) -> list:
    """
    Run `task` on every grid point through the worker pool. Results come back
    in grid order whatever the completion order; failures carry the point.
    """
    points = list(points)

    def run(point):
        try:
            return task(point)
        except ExperimentError:
            raise
        except HartreeLabError as exc:
            raise ExperimentError(module, op, point, exc) from exc

    if config.threads == 1:
        return [run(point) for point in points]
    with ThreadPoolExecutor(max_workers=config.threads) as executor:
        return list(executor.map(run, points))


def _probe_id(k: int) -> str:
    return f"xi{k}"


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------


def run_convergence(config: ExperimentConfig) -> list:
    """
    Reduced-density and characteristic-function distances to the classical
    targets on the (t, N) grid, with the energy-bound and form-bound checks
    per N.
    """
    model, times, probes = config.model, config.times, config.probes
    atoms = config.prep.atoms()
    density_targets = [density_target(evolve_atoms(model, atoms, t, config.flow, "schrodinger"), 1) for t in times]
    circle_atoms = [evolve_atoms(model, atoms, t, config.flow, "interaction") for t in times]
    certificate = estimate_form_bound(model, config.a_grid)

    def per_N(point):
        N = point["N"]
        dynamics = SectorDynamics(model, N)
        psi = prepare(config.preparation(N))
        policy = config.policy(N)
        distances, characteristic = [], []
        for i, t in enumerate(times):
            gamma = reduced_density_matrix(dynamics.schrodinger(psi, t), 1)
            distances.append(trace_distance(gamma.matrix, density_targets[i]))
            row = []
            for xi in probes:
                value = characteristic_function(model, psi, t, xi, policy, dynamics=dynamics)
                target = circle_characteristic(circle_atoms[i], xi)
                row.append((value, target))
            characteristic.append(row)
        C_in = dynamics.free.expectation(psi) / N
        energy = energy_bound_certificate(model, N, psi, C_in, times, certificate)
        margin = form_bound_margin(model, N, certificate)
        return distances, characteristic, energy, margin

    N_list = config.N_list
    results = _grid(config, [{"N": N} for N in N_list], per_N, "wigner", "convergence_metric")

    distance_rows, characteristic_rows, energy_rows = [], [], []
    for i, t in enumerate(times):
        for j, N in enumerate(N_list):
            distances, characteristic, energy, _ = results[j]
            distance_rows.append((N, t, "gamma1", distances[i]))
            for k, (value, target) in enumerate(characteristic[i]):
                characteristic_rows.append((N, t, _probe_id(k), value, target, abs(value - target)))
            satisfied = "true" if energy.kinetic[i] <= energy.bound else "false"
            energy_rows.append((N, t, "H0", energy.kinetic[i], energy.bound, satisfied))
    form_rows = [(N, 0.0, "klmn", certificate.a, certificate.b, results[j][3]) for j, N in enumerate(N_list)]

    return [
        ResultTable(
            "rdm_distance",
            (("N", "int"), ("t", "real"), ("probe_id", "str"), ("distance", "real")),
            distance_rows,
        ),
        ResultTable(
            "characteristic_distance",
            (
                ("N", "int"),
                ("t", "real"),
                ("probe_id", "str"),
                ("G", "complex"),
                ("target", "real"),
                ("distance", "real"),
            ),
            characteristic_rows,
        ),
        ResultTable(
            "energy_bound",
            (
                ("N", "int"),
                ("t", "real"),
                ("probe_id", "str"),
                ("kinetic", "real"),
                ("bound", "real"),
                ("satisfied", "str"),
            ),
            energy_rows,
        ),
        ResultTable(
            "form_bound",
            (("N", "int"), ("t", "real"), ("probe_id", "str"), ("a", "real"), ("b", "real"), ("margin", "real")),
            form_rows,
        ),
    ]


# ---------------------------------------------------------------------------
# duhamel
# ---------------------------------------------------------------------------


def run_duhamel(config: ExperimentConfig) -> list:
    """Duhamel residuals on the (N, t > 0, probe) grid plus a node-doubling study per N."""
    model, probes = config.model, config.probes
    times = [t for t in config.times if t > 0]
    if not times:
        log_error("duhamel needs a positive time; the residual table is empty", __name__)

    def residual(point):
        N, t, k = point["N"], point["t"], point["probe"]
        return duhamel_residual(model, config.preparation(N), probes[k], t, config.quadrature_nodes, config.policy(N))

    def refinement(point):
        N, t = point["N"], point["t"]
        return duhamel_refinement(model, config.preparation(N), probes[0], t, REFINEMENT_NODES, config.policy(N))

    points = [{"N": N, "t": t, "probe": k} for N in config.N_list for t in times for k in range(len(probes))]
    values = _grid(config, points, residual, "wigner", "duhamel_residual")
    rows = [
        (p["N"], p["t"], _probe_id(p["probe"]), config.quadrature_nodes, value) for p, value in zip(points, values)
    ]

    refine_rows = []
    if times:
        refine_points = [{"N": N, "t": times[-1]} for N in config.N_list]
        histories = _grid(config, refine_points, refinement, "wigner", "duhamel_refinement")
        for point, history in zip(refine_points, histories):
            refine_rows.extend((point["N"], point["t"], _probe_id(0), nodes, value) for nodes, value in history)

    columns = (("N", "int"), ("t", "real"), ("probe_id", "str"), ("nodes", "int"), ("residual", "real"))
    return [ResultTable("duhamel", columns, rows), ResultTable("duhamel_refinement", columns, refine_rows)]


# ---------------------------------------------------------------------------
# liouville
# ---------------------------------------------------------------------------


def initial_measure(config: ExperimentConfig):
    settings = config.liouville
    return sample_measure(settings.family, seed=config.seed, **settings.params)


def run_liouville(config: ExperimentConfig) -> list:
    """
    Weak Liouville residuals of the transported path against the frozen-path
    control, the refinement history, and moment diagnostics along the path.
    """
    model, settings = config.model, config.liouville
    try:
        mu0 = initial_measure(config)
        f = CylindricalTestFunction.around(mu0, settings.rank, settings.radius, settings.window, seed=config.seed)
        history = liouville_refinement(
            model, mu0, f, settings.points, settings.max_doublings, settings.picture, config.flow, config.threads
        )
        points = history[-1][0]
        grid = np.linspace(settings.window[0], settings.window[1], points)
        path = transport_path(model, mu0, grid, settings.picture, config.flow, config.threads)
        transported = {
            form: weak_liouville_residual(model, path, f, form, settings.picture) for form in ("gradient", "bracket")
        }
        frozen = weak_liouville_residual(model, frozen_path(mu0, grid), f, settings.form, settings.picture)
    except HartreeLabError as exc:
        raise ExperimentError("liouville", "weak_liouville_residual", {"family": settings.family}, exc) from exc

    end = settings.window[1]
    floor = abs(history[-1][1] - history[-2][1]) if len(history) >= 2 else history[-1][1]
    residual_rows = [
        (CLASSICAL_N, end, "transported-gradient", points, transported["gradient"], floor),
        (CLASSICAL_N, end, "transported-bracket", points, transported["bracket"], floor),
        (CLASSICAL_N, end, f"frozen-{settings.form}", points, frozen, floor),
    ]
    refine_rows = [(CLASSICAL_N, end, "transported-gradient", n, value) for n, value in history]

    moment_rows = [(CLASSICAL_N, 0.0, "mu") + _moments(mu0, model)]
    for t, mu in path:
        report = moment_report(mu, model)
        if report.unit_ball_mass < 1 - 1e-12 and mu0.unit_ball:
            log_error(f"unit-ball mass dropped to {report.unit_ball_mass:.15f} at t={t}", __name__)
        moment_rows.append((CLASSICAL_N, float(t), "mu") + _moments(mu, model))
    logger.info("liouville residual %.3e against frozen control %.3e", transported["gradient"], frozen)

    return [
        ResultTable(
            "liouville",
            (
                ("N", "str"),
                ("t", "real"),
                ("probe_id", "str"),
                ("points", "int"),
                ("residual", "real"),
                ("floor", "real"),
            ),
            residual_rows,
        ),
        ResultTable(
            "liouville_refinement",
            (("N", "str"), ("t", "real"), ("probe_id", "str"), ("points", "int"), ("residual", "real")),
            refine_rows,
        ),
        ResultTable(
            "measure_moments",
            (
                ("N", "str"),
                ("t", "real"),
                ("probe_id", "str"),
                ("m2_QA", "real"),
                ("unit_ball_mass", "real"),
                ("m2", "real"),
                ("m4", "real"),
                ("m6", "real"),
                ("m8", "real"),
            ),
            moment_rows,
        ),
    ]


def _moments(mu, model) -> tuple:
    report = moment_report(mu, model)
    return (report.m2_QA, report.unit_ball_mass) + report.moments


# ---------------------------------------------------------------------------
# algebra audit
# ---------------------------------------------------------------------------


def _random_vector(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


def _random_symbol(rng: np.random.Generator, d: int, p: int, q: int) -> SymbolPQ:
    kernel = rng.standard_normal((sector_dimension(d, q), sector_dimension(d, p)))
    kernel = kernel + 1j * rng.standard_normal(kernel.shape)
    return SymbolPQ(p, q, kernel / max(1.0, np.linalg.norm(kernel, 2)), d)


def _sector_propagator(A: np.ndarray, n: int, t: float) -> np.ndarray:
    return spla.expm(-1j * t * dgamma_block(A, n, 1.0))


def _retained_gap(x: FockVector, y: FockVector, retained: int) -> float:
    return math.sqrt(sum(np.linalg.norm(a - b) ** 2 for a, b in zip(x.sectors[:retained + 1], y.sectors[:retained + 1])))


def _audit_case(model, N: int, rng: np.random.Generator) -> dict:
    """Residuals of the four symbol-calculus identities on one random case."""
    d, eps = model.d, 1.0 / N
    p, q = int(rng.integers(0, 3)), int(rng.integers(0, 3))
    n = int(rng.integers(p, AUDIT_MAX_SECTOR + 1))
    t = float(rng.uniform(-1.0, 1.0))
    b = _random_symbol(rng, d, p, q)
    m = n - p + q

    z1, z2 = _random_vector(rng, d), _random_vector(rng, d)
    up = annihilation_field_matrix(z1, n + 1, eps) @ creation_field_matrix(z2, n, eps)
    ccr = up.toarray() - eps * np.vdot(z1, z2) * np.eye(sector_dimension(d, n))
    if n > 0:
        ccr = ccr - (creation_field_matrix(z2, n - 1, eps) @ annihilation_field_matrix(z1, n, eps)).toarray()

    forward = wick_matrix(b, n, eps)
    adjoint = wick_matrix(adjoint_symbol(b), m, eps)

    conjugated = _sector_propagator(model.A, m, t).conj().T @ forward @ _sector_propagator(model.A, n, t)
    covariance = conjugated - wick_matrix(evolve_symbol(b, model.A, t), n, eps)

    xi = _random_vector(rng, d)
    xi *= 0.3 * math.sqrt(eps) / np.linalg.norm(xi)
    policy = TruncationPolicy(AUDIT_CUTOFF, AUDIT_BUFFER)
    weyl = weyl_operator(-1j * math.sqrt(2.0) * xi / eps, policy, eps)
    low = FockVector.zeros(d, policy.n_max, eps)
    sectors = list(low.sectors)
    for level in range(3):
        sectors[level] = _random_vector(rng, sector_dimension(d, level))
    v = FockVector(d, eps, tuple(sectors))
    v = FockVector(d, eps, tuple(s / v.norm() for s in v.sectors))
    left = wick_apply(b, weyl.apply(v, certify=False))
    right = weyl.apply(wick_apply(translate_symbol(b, xi), v), certify=False)

    return {
        "ccr": (n, t, float(np.linalg.norm(ccr, 2))),
        "adjointness": (n, t, float(np.abs(adjoint - forward.conj().T).max(initial=0.0))),
        "covariance": (n, t, float(np.abs(covariance).max(initial=0.0))),
        "translation": (n, t, _retained_gap(left, right, policy.retained - q)),
    }


def _commutator_case(model, N: int, t: float, xi: np.ndarray, policy: TruncationPolicy, seed: int) -> float:
    """|(1/eps)[q_s^Wick, W] v - W sum_j eps^{j-1} q_j^Wick v| on retained sectors, v a random unit vector of sector N."""
    eps = 1.0 / N
    rng = np.random.default_rng(seed)
    psi = SectorVector(model.d, N, _random_vector(rng, sector_dimension(model.d, N))).normalized()
    v = FockVector.from_sector(psi, policy.n_max, eps)
    weyl = weyl_operator(math.sqrt(2.0) * math.pi * xi, policy, eps)
    q_s = interaction_symbol(model.q_kernel, model.A, t)
    Wv = weyl.apply(v)
    commutator = [(a - b) / eps for a, b in zip(wick_apply(q_s, Wv).sectors, weyl.apply(wick_apply(q_s, v)).sectors)]
    expansion = FockVector.zeros(model.d, policy.n_max, eps)
    for j, q_j in enumerate(commutator_monomials(model.q_kernel, xi, t, model.A), start=1):
        term = wick_apply(q_j, v)
        expansion = FockVector(model.d, eps, tuple(a + eps ** (j - 1) * b for a, b in zip(expansion.sectors, term.sectors)))
    rhs = weyl.apply(expansion, certify=False)
    return _retained_gap(FockVector(model.d, eps, tuple(commutator)), rhs, policy.retained - 2)


def run_algebra_audit(config: ExperimentConfig) -> list:
    """
    CCR, Wick adjointness, evolution covariance and the translation identity
    on randomized cases, and the commutator expansion on every (N, s, probe).
    """
    model = config.model
    N = config.N_list[0]
    seeds = np.random.SeedSequence(config.seed).spawn(config.audit_cases)
    cases = _grid(
        config,
        [{"case": k, "N": N} for k in range(config.audit_cases)],
        lambda point: _audit_case(model, point["N"], np.random.default_rng(seeds[point["case"]])),
        "wick",
        "algebra_audit",
    )
    thresholds = {
        "ccr": ALGEBRA_TOL,
        "adjointness": ALGEBRA_TOL,
        "covariance": ALGEBRA_TOL,
        "translation": ALGEBRA_TOL,
        "commutator": COMMUTATOR_TOL,
    }
    rows = []
    for check in ("ccr", "adjointness", "covariance", "translation"):
        for k, case in enumerate(cases):
            n, t, residual = case[check]
            rows.append((check, N, t, f"case{k}", n, residual, thresholds[check]))

    probes = config.probes
    points = [{"N": n, "s": s, "probe": k} for n in config.N_list for s in config.audit_times for k in range(len(probes))]
    values = _grid(
        config,
        points,
        lambda p: _commutator_case(model, p["N"], p["s"], probes[p["probe"]], config.policy(p["N"]), config.seed + p["probe"]),
        "wick",
        "commutator_monomials",
    )
    for point, residual in zip(points, values):
        rows.append(("commutator", point["N"], point["s"], _probe_id(point["probe"]), point["N"], residual, COMMUTATOR_TOL))

    summary = []
    for check, threshold in thresholds.items():
        residuals = [row[5] for row in rows if row[0] == check]
        worst = max(residuals, default=0.0)
        summary.append((check, len(residuals), worst, threshold, "true" if worst <= threshold else "false"))
        if worst > threshold:
            log_error(f"{check} residual {worst:.3e} exceeds {threshold:.0e}", __name__)

    return [
        ResultTable(
            "algebra_audit",
            (
                ("check", "str"),
                ("N", "int"),
                ("t", "real"),
                ("probe_id", "str"),
                ("sector", "int"),
                ("residual", "real"),
                ("threshold", "real"),
            ),
            rows,
        ),
        ResultTable(
            "algebra_audit_summary",
            (("check", "str"), ("cases", "int"), ("max_residual", "real"), ("threshold", "real"), ("passed", "str")),
            summary,
        ),
    ]


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig, kind: str) -> list:
    kinds = get_hooks("experiment_kinds")
    if kind not in kinds:
        throw(f"unknown experiment kind {kind!r}; choose one of {sorted(kinds)}")
    logger.info("running %s on %s with N_list=%s", kind, config.model.label, list(config.N_list))
    return get_attr(kinds[kind])(config)


def emit_all(config: ExperimentConfig, tables) -> list:
    """Write every table under the configured output directory; single writer."""
    out = config.output
    return [emit(table, out.format, table_path(out.directory, table, out.format, out.prefix)) for table in tables]
