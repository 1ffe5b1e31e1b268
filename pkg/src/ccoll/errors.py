"""Exception types mapped to CLI exit codes."""


class InputError(ValueError):
    """Malformed user input: bad CSV, dimension mismatch, coincident points."""


class ParameterError(ValueError):
    """Numeric parameter outside its domain (sigma, epsilon, counts)."""


class SchemaError(InputError):
    """A machine-readable document does not match its expected schema."""


class ResourceError(RuntimeError):
    """Work or memory budget exceeded; the operation was refused, not attempted."""


class BuildError(RuntimeError):
    """Internal construction invariant failed; indicates a bug, not bad input."""
