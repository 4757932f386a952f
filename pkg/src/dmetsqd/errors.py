"""Exception types raised across the package."""


class GeometryError(ValueError):
    """Invalid molecular geometry (coincident atoms, bad ring size, ...)."""


class UnsupportedElementError(ValueError):
    """The built-in integral engine only knows hydrogen."""


class BundleParseError(ValueError):
    """Malformed integral-bundle or sample file.

    Attributes:
        lineno: 1-based line number of the offending line, if known.
    """

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class BundleIntegrityError(ValueError):
    """Parsed data violates a structural invariant (duplicates, non-SPD overlap)."""


class LinearDependenceError(ValueError):
    """Overlap matrix is numerically singular."""


class CapacityError(MemoryError):
    """Requested determinant enumeration exceeds the allocation cap."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge.

    Attributes:
        residual: best residual norm reached.
        iterate: best iterate (eigenvalue, vector) if available.
    """

    def __init__(self, message, residual=None, iterate=None):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate


class ChemicalPotentialError(RuntimeError):
    """The particle-number root could not be bracketed or resolved.

    Attributes:
        trace: list of (mu, g(mu)) evaluations performed.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)
