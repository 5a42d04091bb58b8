"""Exception hierarchy shared across the package."""


class TrrbError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(TrrbError):
    """Operands have incompatible shapes or lengths."""


class ConfigError(TrrbError):
    """Invalid or inconsistent problem configuration."""


class AssemblyError(TrrbError):
    """Finite element assembly failed (degenerate geometry, bad fields)."""


class ModelError(TrrbError):
    """A model evaluation violated its contract (non-SPD operator, J <= 0, ...)."""


class DegenerateBasisError(TrrbError):
    """A reduced system became numerically singular, signalling basis conditioning failure."""


class EstimatorInapplicable(TrrbError):
    """A constant bound cannot be computed (e.g. non-positive coefficient)."""


class OrderingError(TrrbError):
    """An operation was requested before its prerequisites were computed."""
