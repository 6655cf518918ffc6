"""Exception hierarchy shared across the package."""


class STFNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(STFNetError):
    """Operands have incompatible or invalid shapes."""


class DomainError(STFNetError):
    """Value violates a mathematical precondition (e.g. non-real DC bin)."""


class ConfigError(STFNetError):
    """Invalid configuration (window sets, pooling fractions, run configs)."""


class AlignError(STFNetError):
    """Requested time/frequency components are not alignable across resolutions."""


class GraphError(STFNetError):
    """The recorded computation graph cannot be differentiated."""


class ParseError(STFNetError):
    """Malformed input file (CSV rows, tensor files, checkpoints)."""
