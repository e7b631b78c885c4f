"""Exception hierarchy shared by every module."""
from hartreelab.logger import get_logger

logger = get_logger(__name__)


class HartreeLabError(Exception):
    """Base class for all errors raised by hartreelab."""

    exit_code = 1

    def to_record(self) -> dict:
        """Machine-readable form written to stderr by the CLI."""
        return {"error": type(self).__name__, "message": str(self)}


class ValidationError(HartreeLabError, ValueError):
    """Invalid input or violated precondition."""

    exit_code = 2


class ConfigValidationError(ValidationError):
    """Every problem found while validating an experiment config."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{path}: {msg}" for path, msg in self.errors]
        super().__init__("invalid config:\n  " + "\n  ".join(lines))

    def to_record(self) -> dict:
        record = super().to_record()
        record["errors"] = [{"field": path, "message": msg} for path, msg in self.errors]
        return record


class NumericalError(HartreeLabError, ArithmeticError):
    """A computation could not be certified (drift, truncation, size)."""

    exit_code = 3


class DimensionCapExceeded(NumericalError):
    """A sector or tensor dimension is too large for a desk-scale run."""

    def __init__(self, what: str, dimension: int, cap: int):
        self.dimension = dimension
        self.cap = cap
        super().__init__(f"{what} has dimension {dimension}, above the cap {cap}")


class TruncationError(NumericalError):
    """Mass leaked into the boundary sectors of a truncated Fock space."""

    def __init__(self, message: str, tail_mass: float):
        self.tail_mass = tail_mass
        super().__init__(f"{message} (tail mass {tail_mass:.3e})")

    def to_record(self) -> dict:
        record = super().to_record()
        record["tail_mass"] = self.tail_mass
        return record


class DriftError(NumericalError):
    """Conserved quantities drifted beyond tolerance after step halving."""

    def __init__(self, message: str, report: dict):
        self.report = report
        super().__init__(message)

    def to_record(self) -> dict:
        record = super().to_record()
        record["report"] = self.report
        return record


class TransportError(NumericalError):
    """An atom of a particle measure could not be transported."""

    def __init__(self, atom_index: int, cause: Exception):
        self.atom_index = atom_index
        self.cause = cause
        super().__init__(f"transport of atom {atom_index} failed: {cause}")

    def to_record(self) -> dict:
        record = super().to_record()
        record["atom_index"] = self.atom_index
        return record


class ExperimentError(HartreeLabError):
    """A module failure raised inside an experiment grid, with its coordinates."""

    def __init__(self, module: str, op: str, grid_point: dict, cause: HartreeLabError):
        self.module = module
        self.op = op
        self.grid_point = dict(grid_point)
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"{module}.{op} failed at {self.grid_point}: {cause}")

    def to_record(self) -> dict:
        record = self.cause.to_record()
        record.update({"module": self.module, "op": self.op, "grid_point": self.grid_point})
        return record


def throw(message: str, exc: type[HartreeLabError] = ValidationError):
    """Raise ``exc`` with ``message``."""
    logger.debug("raising %s: %s", exc.__name__, message)
    raise exc(message)
