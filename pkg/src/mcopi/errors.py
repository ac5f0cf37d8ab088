"""Exception types shared across the package."""


class McopiError(Exception):
    """Base class for all errors raised by this package."""


class MdpFormatError(McopiError):
    """A model file failed to parse or does not match the schema."""


class InvariantViolation(McopiError):
    """A constructed object violates one of its type invariants."""


class StructureViolation(McopiError):
    """An operation requires structural assumptions the model does not meet."""


class NonContractive(McopiError):
    """Exact evaluation is impossible: undiscounted problem without a
    DAG-to-absorbing structure, so values are not guaranteed finite."""


class HorizonWithoutAbsorption(McopiError):
    """An undiscounted trajectory exceeded its step budget without being
    absorbed; the structure was presumably never validated."""


class MaxIterationsExceeded(McopiError):
    """An iterative solver hit its iteration cap before converging."""
