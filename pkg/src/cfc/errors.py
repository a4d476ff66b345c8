"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the documented domain (non-finite, bad level, ...)."""


class SolverError(RuntimeError):
    """A fit did not converge within its iteration budget."""


class IngestError(ValueError):
    """A data file or record violates the ingestion schema."""


class SchemaError(ValueError):
    """An artifact or feature map does not match the data it is applied to."""
