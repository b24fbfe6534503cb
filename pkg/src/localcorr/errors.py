"""Exception types shared across the package."""


class LocalCorrError(Exception):
    """Base class for every error raised by this package."""


class CurveError(LocalCorrError, ValueError):
    """Malformed rate or dividend curve."""


class PricingError(LocalCorrError, ValueError):
    """Invalid pricing inputs, e.g. an implied vol target outside its bounds."""


class SurfaceError(LocalCorrError, ValueError):
    """Malformed implied volatility surface or out-of-domain surface query."""


class SnapshotError(LocalCorrError, ValueError):
    """Inconsistent market snapshot (schema, composition or reconciliation)."""


class CorrelationError(LocalCorrError, ValueError):
    """Invalid correlation matrix or correlation family input."""


class BoundViolationError(LocalCorrError, RuntimeError):
    """Dispersion bound violated under the strict bounds policy."""


class RecipeError(LocalCorrError, ValueError):
    """Synthetic market recipe that cannot produce a consistent snapshot."""


class EngineError(LocalCorrError, RuntimeError):
    """Simulation configuration or runtime failure."""
