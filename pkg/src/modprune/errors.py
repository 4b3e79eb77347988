"""Exception hierarchy.

Every error raised on purpose by the package derives from ``ModPruneError`` so the
CLI can map it to a stable exit code.  ``EquivalenceFailure`` is the only
verification-class error; everything else counts as a validation failure.
"""


class ModPruneError(Exception):
    """Base class for all package errors."""


class ParseError(ModPruneError):
    pass


class MissingWeight(ModPruneError):
    pass


class ShapeMismatch(ModPruneError):
    def __init__(self, message, node_id=None):
        super().__init__(message if node_id is None else f"{node_id}: {message}")
        self.node_id = node_id


class CycleDetected(ModPruneError):
    pass


class GraphError(ModPruneError):
    """Structural problem: bad arity, dangling input, unreachable output."""


class UnknownKind(ModPruneError):
    pass


class InconsistentWidth(ModPruneError):
    pass


class UnsupportedReshape(ModPruneError):
    pass


class NoFusionFound(ModPruneError):
    pass


class UnsupportedForSaliency(ModPruneError):
    pass


class NonFiniteScore(ModPruneError):
    pass


class EmptyModality(ModPruneError):
    pass


class DegenerateScore(ModPruneError):
    pass


class RemapConflict(ModPruneError):
    pass


class WidthUnderflow(ModPruneError):
    pass


class NonFiniteValue(ModPruneError):
    def __init__(self, node_id):
        super().__init__(f"non-finite value produced at node {node_id!r}")
        self.node_id = node_id


class EmptyTrace(ModPruneError):
    pass


class NonMonotonicTime(ModPruneError):
    pass


class ZeroDuration(ModPruneError):
    pass


class EquivalenceFailure(ModPruneError):
    def __init__(self, max_abs_diff, node_id):
        super().__init__(
            f"pruned graph diverges from masked original: max |diff| = {max_abs_diff:.3e} at {node_id!r}"
        )
        self.max_abs_diff = max_abs_diff
        self.node_id = node_id


class PatternMatchesNothing(UserWarning):
    """Warning-level: a protection pattern matched no weight key."""
