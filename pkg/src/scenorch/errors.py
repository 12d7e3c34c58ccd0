"""Exception taxonomy shared across the engine."""


class ScenorchError(Exception):
    """Base class for all engine errors."""


class MapError(ScenorchError):
    """Lane-graph construction or validation failure."""


class MapParseError(MapError):
    """Malformed map document; carries the offending element in the message."""


class RouteError(MapError):
    """No traversal of the lane graph realises the requested directions."""


class AmbiguousRouteError(RouteError):
    """Several traversals realise the directions; candidates listed in args."""


class ProjectionError(MapError):
    """A state could not be projected onto a path (too far off-path)."""


class NoConflictError(MapError):
    """The two paths neither cross nor merge."""


class ProfileError(ScenorchError):
    """Motion-profile construction or evaluation failure."""


class IncompleteAssignmentError(ProfileError):
    """instantiate() was given an assignment missing free variables."""


class InvalidProfileError(ProfileError):
    """A concrete profile violates its invariants (e.g. negative duration)."""


class DslParseError(ScenorchError):
    """Scenario pseudocode could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class LoweringError(ScenorchError):
    """A parsed constraint could not be lowered onto profiles and paths."""


class EncodingError(ScenorchError):
    """A constraint references a symbol that was never declared."""


class SolverTransportError(ScenorchError):
    """The solver process failed in a way distinct from unsat (crash, bad output)."""


class UnsoundModelError(ScenorchError):
    """The solver claimed sat but the model fails exact re-evaluation."""


class LadderExhaustedError(ScenorchError):
    """Every tolerance step of the ladder came back unsat or timed out."""

    def __init__(self, max_tolerance: float, outcomes):
        self.max_tolerance = max_tolerance
        self.outcomes = list(outcomes)
        statuses = ", ".join(o.status for o in self.outcomes)
        super().__init__(
            f"no solution up to tolerance {max_tolerance} (steps: {statuses})"
        )


class OrchestrationError(ScenorchError):
    """Scenario execution could not start or continue."""


class EvaluationError(ScenorchError):
    """Success criteria reference something the trace/map cannot supply."""


class TraceIOError(ScenorchError):
    """Trace document read/write failure."""
