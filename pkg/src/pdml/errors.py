"""Exception types shared across the package."""


class PdmlError(Exception):
    """Base class for all package errors."""


class SchemaError(PdmlError):
    """A required column or field is missing."""


class CsvParseError(PdmlError):
    """A cell could not be parsed; message cites the data row."""


class ConfigError(PdmlError):
    """Invalid configuration (fold counts, grids, flag combinations)."""


class ContractError(PdmlError):
    """A call violated a documented precondition (dimensions, setting kind)."""


class RankDeficiencyError(PdmlError):
    """OLS design matrix is numerically rank deficient."""


class LearnerError(PdmlError):
    """A nuisance learner failed; carries captured diagnostics."""


class DegenerateDenominatorError(PdmlError):
    """Treatment residual sum of squares is numerically zero."""


class DegenerateNoiseError(PdmlError):
    """Residuals carry no variation; noise model undefined."""


class NumericalError(PdmlError):
    """A matrix factorization failed beyond the jitter retries."""


class EmptyFilterError(PdmlError):
    """Radius filtering retained no perturbations; the union is undefined."""


class SweepError(PdmlError):
    """Too many perturbations failed inside one sweep."""


class SimulationError(PdmlError):
    """Too many replications failed inside one simulation."""
