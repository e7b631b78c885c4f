"""
Experiment configuration.

Experiment files are TOML with the sections [model], [prep], [sweep],
[numerics], [liouville] and [output], plus an optional top-level ``seed``.
Complex vectors and matrices are written as two keys, ``name`` for the real
part and ``name_imag`` for the imaginary part. The grammar is documented in
docs/experiment_config.md.
"""
import inspect
import math
from dataclasses import dataclass, field, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from hartreelab.exceptions import ConfigValidationError, HartreeLabError
from hartreelab.fock import HERMITIAN_TOL, TruncationPolicy, sector_dimension
from hartreelab.logger import get_logger
from hartreelab.many_body import DEFAULT_A_GRID
from hartreelab.meanfield import INTEGRATORS, PICTURES, FlowConfig
from hartreelab.models import ModelSpec
from hartreelab.utils import get_attr, get_hooks
from hartreelab.wigner import PROBE_COUNT, PROBE_RADIUS, StatePreparation, default_probes, weyl_policy

logger = get_logger(__name__)

SECTIONS = ("model", "prep", "sweep", "numerics", "liouville", "output")
TOP_LEVEL_KEYS = ("seed",)
MODEL_INLINE_KEYS = ("d", "A", "A_imag", "q_kernel", "q_kernel_imag", "pair_kernel", "pair_kernel_imag", "label")
PREP_KEYS = ("kind", "z0", "z0_imag", "weights", "weights_imag", "components", "components_imag")
SWEEP_KEYS = ("N_list", "times", "t_max", "t_points", "probes", "probes_imag", "probe_count", "probe_radius")
NUMERICS_KEYS = (
    "integrator",
    "step",
    "conservation_tol",
    "max_halvings",
    "margin",
    "buffer",
    "tail_tol",
    "a",
    "a_grid",
    "quadrature_nodes",
    "audit_cases",
    "audit_times",
)
LIOUVILLE_KEYS = (
    "family",
    "M",
    "spread",
    "center",
    "center_imag",
    "rank",
    "radius",
    "window",
    "points",
    "max_doublings",
    "picture",
    "form",
)
OUTPUT_KEYS = ("dir", "format", "prefix")
MAX_PROBE_RADIUS = 2.0


@dataclass(frozen=True)
class LiouvilleSettings:
    family: str = "dirac"
    params: dict = field(default_factory=dict)
    rank: int = 2
    radius: float = 0.5
    window: tuple = (0.1, 0.9)
    points: int = 17
    max_doublings: int = 4
    picture: str = "interaction"
    form: str = "gradient"


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "results"
    format: str = "csv"
    prefix: str = ""


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    model: ModelSpec
    prep: StatePreparation
    N_list: tuple
    times: tuple
    seed: int = 0
    probe_count: int = PROBE_COUNT
    probe_radius: float = PROBE_RADIUS
    explicit_probes: np.ndarray | None = None
    flow: FlowConfig = FlowConfig()
    margin: int = 16
    buffer: int = 4
    tail_tol: float = 1e-10
    a_grid: tuple = DEFAULT_A_GRID
    quadrature_nodes: int = 65
    audit_cases: int = 50
    audit_times: tuple = (0.0, 0.3)
    liouville: LiouvilleSettings = LiouvilleSettings()
    output: OutputSettings = OutputSettings()
    threads: int = 1

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def probes(self) -> np.ndarray:
        """Probe vectors xi; seeded from the config seed unless listed explicitly."""
        if self.explicit_probes is not None:
            return self.explicit_probes
        return default_probes(self.d, self.probe_count, self.probe_radius, self.seed)

    def policy(self, N: int) -> TruncationPolicy:
        return weyl_policy(N, self.margin, self.buffer, self.tail_tol, xi=self.probes)

    def preparation(self, N: int) -> StatePreparation:
        return self.prep.with_N(N)

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None, threads: int | None = None,
            fmt: str | None = None) -> "ExperimentConfig":
        """Apply command-line overrides."""
        output = self.output
        if out_dir is not None:
            output = replace(output, directory=str(out_dir))
        if fmt is not None:
            if fmt not in get_hooks("table_writers"):
                raise ConfigValidationError([("output.format", f"unknown format {fmt!r}")])
            output = replace(output, format=fmt)
        changes = {"output": output}
        if seed is not None:
            changes["seed"] = int(seed)
        if threads is not None:
            if threads < 1:
                raise ConfigValidationError([("threads", f"must be at least 1, got {threads}")])
            changes["threads"] = int(threads)
        return replace(self, **changes)

    def summary(self) -> dict:
        """Plain description printed by --dry-run."""
        return {
            "model": self.model.label,
            "d": self.d,
            "prep": self.prep.kind,
            "N_list": list(self.N_list),
            "times": list(self.times),
            "seed": self.seed,
            "probes": int(self.probes.shape[0]),
            "integrator": self.flow.integrator,
            "step": self.flow.step,
            "margin": self.margin,
            "liouville_family": self.liouville.family,
            "output": {"dir": self.output.directory, "format": self.output.format, "prefix": self.output.prefix},
        }


class _Errors:
    """Collects (field path, message) pairs while a config is validated."""

    def __init__(self):
        self.items = []

    def add(self, path: str, message: str):
        self.items.append((path, message))

    def __bool__(self):
        return bool(self.items)

    def unknown_keys(self, section: dict, allowed, prefix: str):
        for key in section:
            if key not in allowed:
                self.add(f"{prefix}{key}", "unknown key")


def _path(section: str, key: str) -> str:
    return f"{section}.{key}" if section else key


def _number(table: dict, section: str, key: str, errors: _Errors, default=None, kind=float, check=None, rule=""):
    if key not in table:
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or (kind is int and not isinstance(value, int)):
        errors.add(_path(section, key), f"expected {'an integer' if kind is int else 'a number'}, got {value!r}")
        return default
    value = kind(value)
    if kind is float and not math.isfinite(value):
        errors.add(_path(section, key), "must be finite")
        return default
    if check is not None and not check(value):
        errors.add(_path(section, key), f"{rule}, got {value}")
        return default
    return value


def _choice(table: dict, section: str, key: str, errors: _Errors, choices, default):
    value = table.get(key, default)
    if value not in choices:
        errors.add(_path(section, key), f"must be one of {sorted(choices)}, got {value!r}")
        return default
    return value


def _complex_array(table: dict, section: str, key: str, errors: _Errors, ndim: int):
    """Real part from ``key``, imaginary part from ``key_imag``; None when absent or invalid."""
    if key not in table:
        if f"{key}_imag" in table:
            errors.add(_path(section, f"{key}_imag"), f"given without {key}")
        return None
    arrays = []
    for name in (key, f"{key}_imag"):
        if name not in table:
            continue
        try:
            array = np.array(table[name], dtype=float)
        except (TypeError, ValueError):
            errors.add(_path(section, name), "must be a rectangular array of numbers")
            return None
        if array.ndim != ndim:
            errors.add(_path(section, name), f"must be {'a vector' if ndim == 1 else 'a matrix'}, got {array.ndim} dimensions")
            return None
        arrays.append(array)
    if len(arrays) == 2 and arrays[0].shape != arrays[1].shape:
        errors.add(_path(section, f"{key}_imag"), f"shape {arrays[1].shape} does not match {key} {arrays[0].shape}")
        return None
    out = arrays[0].astype(complex)
    if len(arrays) == 2:
        out = out + 1j * arrays[1]
    return out


def _is_hermitian(matrix: np.ndarray) -> bool:
    scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
    return float(np.abs(matrix - matrix.conj().T).max(initial=0.0)) <= HERMITIAN_TOL * scale


def _square_hermitian(matrix, dim: int, path: str, errors: _Errors) -> bool:
    if matrix.shape != (dim, dim):
        errors.add(path, f"must be {dim}x{dim}, got {matrix.shape[0]}x{matrix.shape[1]}")
        return False
    if not _is_hermitian(matrix):
        errors.add(path, "is not Hermitian")
        return False
    return True


# ---------------------------------------------------------------------------
# sections
# ---------------------------------------------------------------------------


def _parse_model(table: dict, errors: _Errors) -> ModelSpec | None:
    preset = table.get("preset", "inline")
    if preset == "inline":
        return _parse_inline_model(table, errors)
    before = len(errors.items)
    presets = get_hooks("model_presets")
    if preset not in presets:
        errors.add("model.preset", f"unknown preset {preset!r}; choose one of {['inline'] + sorted(presets)}")
        return None
    factory = get_attr(presets[preset])
    accepted = inspect.signature(factory).parameters
    params = {}
    for key, value in table.items():
        if key == "preset":
            continue
        if key not in accepted:
            errors.add(f"model.{key}", f"unknown key for preset {preset!r}")
            continue
        params[key] = value
    if len(errors.items) > before:
        return None
    try:
        return factory(**params)
    except (HartreeLabError, TypeError) as exc:
        errors.add("model", str(exc))
        return None


def _parse_inline_model(table: dict, errors: _Errors) -> ModelSpec | None:
    before = len(errors.items)
    errors.unknown_keys(table, ("preset",) + MODEL_INLINE_KEYS, "model.")
    d = _number(table, "model", "d", errors, kind=int, check=lambda v: v >= 1, rule="must be positive")
    if d is None:
        if "d" not in table:
            errors.add("model.d", "required for an inline model")
        return None
    A = _complex_array(table, "model", "A", errors, 2)
    if A is None:
        if "A" not in table:
            errors.add("model.A", "required for an inline model")
        return None
    ok = _square_hermitian(A, d, "model.A", errors)
    if ok and np.linalg.eigvalsh(A)[0] < -1e-12 * max(1.0, float(np.abs(A).max())):
        errors.add("model.A", "must be non-negative")
        ok = False

    has_sector = "q_kernel" in table
    has_pair = "pair_kernel" in table
    if has_sector == has_pair:
        errors.add("model.q_kernel", "give exactly one of q_kernel (two-particle sector) and pair_kernel (C^d (x) C^d)")
        return None
    key = "q_kernel" if has_sector else "pair_kernel"
    kernel = _complex_array(table, "model", key, errors, 2)
    if kernel is None:
        return None
    dim = sector_dimension(d, 2) if has_sector else d * d
    ok = _square_hermitian(kernel, dim, f"model.{key}", errors) and ok
    if not ok or len(errors.items) > before:
        return None
    label = str(table.get("label", "inline"))
    try:
        if has_sector:
            return ModelSpec(d, A, kernel, label)
        return ModelSpec.from_pair_matrix(A, kernel, label)
    except HartreeLabError as exc:
        errors.add(f"model.{key}", str(exc))
        return None


def _parse_prep(table: dict, d: int | None, N: int, errors: _Errors) -> StatePreparation | None:
    errors.unknown_keys(table, PREP_KEYS, "prep.")
    kind = _choice(table, "prep", "kind", errors, ("hermite", "superposition"), "hermite")
    if kind == "hermite":
        z0 = _complex_array(table, "prep", "z0", errors, 1)
        if z0 is None:
            if "z0" not in table:
                errors.add("prep.z0", "required for a hermite preparation")
            return None
        if d is not None and z0.shape[0] != d:
            errors.add("prep.z0", f"has {z0.shape[0]} entries, the model has d={d}")
            return None
        norm = float(np.linalg.norm(z0))
        if norm == 0 or norm > 1 + 1e-12:
            errors.add("prep.z0", f"must be a non-zero vector of the closed unit ball, got norm {norm:.6f}")
            return None
        return StatePreparation("hermite", N, z0)

    components = _complex_array(table, "prep", "components", errors, 2)
    weights = _complex_array(table, "prep", "weights", errors, 1)
    if components is None or weights is None:
        for key in ("components", "weights"):
            if key not in table:
                errors.add(f"prep.{key}", "required for a superposition")
        return None
    if weights.shape[0] != components.shape[0]:
        errors.add("prep.weights", f"{weights.shape[0]} weights for {components.shape[0]} components")
        return None
    if d is not None and components.shape[1] != d:
        errors.add("prep.components", f"components have {components.shape[1]} entries, the model has d={d}")
        return None
    try:
        return StatePreparation("superposition", N, components=tuple(zip(weights, components)))
    except HartreeLabError as exc:
        errors.add("prep.components", str(exc))
        return None


def _parse_sweep(table: dict, errors: _Errors) -> dict:
    errors.unknown_keys(table, SWEEP_KEYS, "sweep.")
    out = {}
    N_list = table.get("N_list")
    if N_list is None:
        errors.add("sweep.N_list", "required")
    elif not isinstance(N_list, list) or not N_list or not all(isinstance(N, int) and not isinstance(N, bool) for N in N_list):
        errors.add("sweep.N_list", "must be a non-empty list of integers")
    elif any(N < 1 for N in N_list):
        errors.add("sweep.N_list", "particle numbers must be positive")
    elif any(b <= a for a, b in zip(N_list, N_list[1:])):
        errors.add("sweep.N_list", f"must be strictly increasing, got {N_list}")
    else:
        out["N_list"] = tuple(N_list)

    if "times" in table and ("t_max" in table or "t_points" in table):
        errors.add("sweep.times", "give either times or t_max/t_points")
    elif "times" in table:
        times = table["times"]
        if not isinstance(times, list) or not times or not all(
            isinstance(t, (int, float)) and not isinstance(t, bool) and math.isfinite(t) for t in times
        ):
            errors.add("sweep.times", "must be a non-empty list of numbers")
        elif any(t < 0 for t in times):
            errors.add("sweep.times", "times must be non-negative")
        else:
            out["times"] = tuple(float(t) for t in times)
    else:
        t_max = _number(table, "sweep", "t_max", errors, 1.0, check=lambda v: v >= 0, rule="must be non-negative")
        t_points = _number(table, "sweep", "t_points", errors, 5, int, lambda v: v >= 1, "must be positive")
        if t_max is not None and t_points is not None:
            out["times"] = tuple(float(t) for t in np.linspace(0.0, t_max, t_points))

    out["probe_count"] = _number(table, "sweep", "probe_count", errors, PROBE_COUNT, int, lambda v: v >= 1, "must be positive")
    out["probe_radius"] = _number(
        table, "sweep", "probe_radius", errors, PROBE_RADIUS, check=lambda v: 0 < v <= MAX_PROBE_RADIUS,
        rule=f"must lie in (0, {MAX_PROBE_RADIUS}]",
    )
    out["explicit_probes"] = _complex_array(table, "sweep", "probes", errors, 2)
    return out


def _parse_numerics(table: dict, errors: _Errors) -> dict:
    errors.unknown_keys(table, NUMERICS_KEYS, "numerics.")
    defaults = FlowConfig()
    integrator = _choice(table, "numerics", "integrator", errors, INTEGRATORS, defaults.integrator)
    step = _number(table, "numerics", "step", errors, defaults.step, check=lambda v: v > 0, rule="must be positive")
    tol = _number(
        table, "numerics", "conservation_tol", errors, defaults.conservation_tol, check=lambda v: v > 0, rule="must be positive"
    )
    halvings = _number(
        table, "numerics", "max_halvings", errors, defaults.max_halvings, int, lambda v: v >= 0, "must be non-negative"
    )
    out = {"flow": FlowConfig(integrator, step or defaults.step, tol or defaults.conservation_tol, halvings or 0)}
    out["margin"] = _number(table, "numerics", "margin", errors, 16, int, lambda v: v >= 1, "must be positive")
    out["buffer"] = _number(table, "numerics", "buffer", errors, 4, int, lambda v: v >= 1, "must be positive")
    out["tail_tol"] = _number(table, "numerics", "tail_tol", errors, 1e-10, check=lambda v: v > 0, rule="must be positive")
    if out["margin"] is not None and out["buffer"] is not None and out["buffer"] > out["margin"]:
        errors.add("numerics.buffer", f"buffer {out['buffer']} exceeds the cutoff margin {out['margin']}")

    if "a" in table and "a_grid" in table:
        errors.add("numerics.a", "give either a or a_grid")
    elif "a" in table:
        a = _number(table, "numerics", "a", errors, check=lambda v: 0 < v < 1, rule="must lie in (0,1)")
        if a is not None:
            out["a_grid"] = (a,)
    elif "a_grid" in table:
        grid = table["a_grid"]
        if not isinstance(grid, list) or not grid:
            errors.add("numerics.a_grid", "must be a non-empty list of numbers")
        else:
            good = True
            for i, a in enumerate(grid):
                if isinstance(a, bool) or not isinstance(a, (int, float)) or not 0 < a < 1:
                    errors.add(f"numerics.a_grid[{i}]", f"must lie in (0,1), got {a!r}")
                    good = False
            if good:
                out["a_grid"] = tuple(float(a) for a in grid)

    out["quadrature_nodes"] = _number(
        table, "numerics", "quadrature_nodes", errors, 65, int, lambda v: v >= 3 and v % 2 == 1, "must be odd and at least 3"
    )
    out["audit_cases"] = _number(table, "numerics", "audit_cases", errors, 50, int, lambda v: v >= 1, "must be positive")
    if "audit_times" in table:
        times = table["audit_times"]
        if not isinstance(times, list) or not times or not all(
            isinstance(t, (int, float)) and not isinstance(t, bool) for t in times
        ):
            errors.add("numerics.audit_times", "must be a non-empty list of numbers")
        else:
            out["audit_times"] = tuple(float(t) for t in times)
    return {key: value for key, value in out.items() if value is not None}


def _parse_liouville(table: dict, d: int | None, z0, errors: _Errors) -> LiouvilleSettings:
    errors.unknown_keys(table, LIOUVILLE_KEYS, "liouville.")
    defaults = LiouvilleSettings()
    family = _choice(table, "liouville", "family", errors, tuple(get_hooks("measure_families")), defaults.family)
    center = _complex_array(table, "liouville", "center", errors, 1)
    if center is None:
        center = z0
    elif d is not None and center.shape[0] != d:
        errors.add("liouville.center", f"has {center.shape[0]} entries, the model has d={d}")
    params = {}
    if family in ("dirac", "circle"):
        params["z0"] = center
    elif family == "gaussian-on-sphere":
        params["center"] = center
        params["spread"] = _number(table, "liouville", "spread", errors, 0.1, check=lambda v: v >= 0, rule="must be non-negative")
    elif family == "atomic":
        errors.add("liouville.family", "atomic measures are built in code, not from a config")
    if family in ("circle", "gaussian-on-sphere"):
        params["M"] = _number(table, "liouville", "M", errors, 1000, int, lambda v: v >= 1, "must be positive")
    elif "M" in table:
        errors.add("liouville.M", f"not used by the {family!r} family")
    if center is None and family != "atomic":
        errors.add("liouville.center", "required when the preparation gives no z0")

    rank = _number(table, "liouville", "rank", errors, defaults.rank, int, lambda v: v >= 1, "must be positive")
    if rank is not None and d is not None and rank > 2 * d:
        errors.add("liouville.rank", f"at most 2d = {2 * d} real directions exist, got {rank}")
    radius = _number(table, "liouville", "radius", errors, defaults.radius, check=lambda v: v > 0, rule="must be positive")
    window = table.get("window", list(defaults.window))
    if (
        not isinstance(window, list)
        or len(window) != 2
        or not all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in window)
    ):
        errors.add("liouville.window", "must be a pair [start, end]")
        window = defaults.window
    elif not 0 <= window[0] < window[1]:
        errors.add("liouville.window", f"must satisfy 0 <= start < end, got {window}")
        window = defaults.window
    points = _number(table, "liouville", "points", errors, defaults.points, int, lambda v: v >= 3, "must be at least 3")
    doublings = _number(
        table, "liouville", "max_doublings", errors, defaults.max_doublings, int, lambda v: v >= 0, "must be non-negative"
    )
    picture = _choice(table, "liouville", "picture", errors, PICTURES, defaults.picture)
    form = _choice(table, "liouville", "form", errors, ("gradient", "bracket"), defaults.form)
    return LiouvilleSettings(
        family,
        {key: value for key, value in params.items() if value is not None},
        rank or defaults.rank,
        radius or defaults.radius,
        (float(window[0]), float(window[1])),
        points or defaults.points,
        defaults.max_doublings if doublings is None else doublings,
        picture,
        form,
    )


def _parse_output(table: dict, errors: _Errors) -> OutputSettings:
    errors.unknown_keys(table, OUTPUT_KEYS, "output.")
    defaults = OutputSettings()
    fmt = _choice(table, "output", "format", errors, tuple(get_hooks("table_writers")), defaults.format)
    directory = table.get("dir", defaults.directory)
    prefix = table.get("prefix", defaults.prefix)
    if not isinstance(directory, str) or not directory:
        errors.add("output.dir", "must be a non-empty string")
        directory = defaults.directory
    if not isinstance(prefix, str):
        errors.add("output.prefix", "must be a string")
        prefix = defaults.prefix
    return OutputSettings(directory, fmt, prefix)


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse and validate an experiment file. Every problem found is reported
    at once through ConfigValidationError, each with its field path.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigValidationError([("<file>", f"not valid TOML: {exc}")]) from exc

    errors = _Errors()
    for key, value in raw.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                errors.add(key, "must be a table")
        elif key not in TOP_LEVEL_KEYS:
            errors.add(key, "unknown section")
    sections = {name: raw.get(name, {}) if isinstance(raw.get(name, {}), dict) else {} for name in SECTIONS}
    if "model" not in raw:
        errors.add("model", "required section")
    if "prep" not in raw:
        errors.add("prep", "required section")

    seed = _number(raw, "", "seed", errors, 0, int, lambda v: v >= 0, "must be non-negative")
    model = _parse_model(sections["model"], errors) if "model" in raw else None
    d = model.d if model is not None else None
    sweep = _parse_sweep(sections["sweep"], errors)
    N0 = sweep.get("N_list", (1,))[0]
    prep = _parse_prep(sections["prep"], d, N0, errors) if "prep" in raw else None
    probes = sweep.pop("explicit_probes", None)
    if probes is not None and d is not None:
        if probes.shape[1] != d:
            errors.add("sweep.probes", f"probes have {probes.shape[1]} entries, the model has d={d}")
        elif np.any(np.linalg.norm(probes, axis=1) > MAX_PROBE_RADIUS):
            errors.add("sweep.probes", f"probe norms must not exceed {MAX_PROBE_RADIUS}")
    numerics = _parse_numerics(sections["numerics"], errors)
    z0 = prep.z0 if prep is not None and prep.kind == "hermite" else None
    liouville = _parse_liouville(sections["liouville"], d, z0, errors)
    output = _parse_output(sections["output"], errors)

    if errors:
        logger.debug("config rejected with %d errors", len(errors.items))
        raise ConfigValidationError(errors.items)

    probe_count = sweep.pop("probe_count")
    if probes is not None:
        probe_count = probes.shape[0]
    return ExperimentConfig(
        model=model,
        prep=prep,
        seed=seed,
        explicit_probes=probes,
        probe_count=probe_count,
        liouville=liouville,
        output=output,
        **sweep,
        **numerics,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigValidationError([("<file>", f"cannot read {path}: {exc.strerror or exc}")]) from exc
    return parse_config(text)
