"""Exception hierarchy.

Every error carries a short machine-readable ``category`` so the CLI can
report it without parsing messages.
"""


class MonoflowError(Exception):
    category = "error"


# graph construction
class GraphError(MonoflowError):
    category = "graph"


class DisconnectedGraph(GraphError):
    category = "disconnected_graph"


class EmptySlackSet(GraphError):
    category = "empty_slack_set"


class DuplicateEdge(GraphError):
    category = "duplicate_edge"


class NonPositiveParameter(GraphError):
    category = "non_positive_parameter"


class NonPositiveEpsilon(GraphError):
    category = "non_positive_epsilon"


class VertexMismatch(MonoflowError):
    category = "vertex_mismatch"


class ScenarioError(MonoflowError):
    category = "scenario"


# physics / solvers
class NonPositiveDensity(MonoflowError):
    category = "non_positive_density"


class DensityCavitation(MonoflowError):
    category = "density_cavitation"

    def __init__(self, message, time=None, state=None):
        super().__init__(message)
        self.time = time
        self.state = state


class NonConvergence(MonoflowError):
    category = "non_convergence"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularJacobian(MonoflowError):
    category = "singular_jacobian"


class UnliftedScenario(MonoflowError):
    category = "unlifted_scenario"


class MissingModel(MonoflowError):
    category = "missing_model"


class StepFailure(MonoflowError):
    category = "step_failure"

    def __init__(self, message, time=None, state=None):
        super().__init__(message)
        self.time = time
        self.state = state


# verification
class PathNotFound(MonoflowError):
    category = "path_not_found"


class GridMismatch(MonoflowError):
    category = "grid_mismatch"


class HypothesisViolated(MonoflowError):
    category = "hypothesis_violated"


class NoCrossing(MonoflowError):
    category = "no_crossing"


class EnvelopeInverted(MonoflowError):
    category = "envelope_inverted"


class SandwichViolated(MonoflowError):
    category = "sandwich_violated"

    def __init__(self, message, time=None, vertex=None, margin=None):
        super().__init__(message)
        self.time = time
        self.vertex = vertex
        self.margin = margin


class ParseError(MonoflowError):
    category = "parse_error"
