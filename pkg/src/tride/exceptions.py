class DegenerateVector(ValueError):
    """Raised when a vector is too short to normalize."""


class InsufficientEvidence(ValueError):
    """Raised when an edge has too few correspondence normals for an estimator."""


class SolveFailure(RuntimeError):
    """Raised when a linear system in the GN/LM diagnostics cannot be solved."""


class GenerationFailure(RuntimeError):
    """Raised when a synthetic scene cannot be generated within the retry budget."""


class InputMismatch(ValueError):
    """Raised when estimated and reference edge sets do not line up."""
