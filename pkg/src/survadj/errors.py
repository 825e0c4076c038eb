"""Exception hierarchy.

Every error raised on purpose by the package derives from ``SurvAdjError`` so
callers (the CLI, the study runner) can catch the whole family at once.
"""


class SurvAdjError(Exception):
    """Base class for all package errors."""


class DatasetError(SurvAdjError, ValueError):
    """Input data violates one or more dataset invariants.

    ``issues`` holds one :class:`~survadj.dataset.DatasetIssue` per problem
    found, so a single failed validation reports everything at once.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))

    @property
    def kinds(self):
        return {i.kind for i in self.issues}


class InvalidInterval(SurvAdjError, ValueError):
    pass


class EstimationError(SurvAdjError):
    """A model fit or estimator could not produce a result."""


class EmptyGroup(EstimationError):
    pass


class AllWeightsZero(EstimationError):
    pass


class SeparationError(EstimationError):
    pass


class RankDeficient(EstimationError):
    pass


class NoConvergence(EstimationError):
    pass


class NoEvents(EstimationError):
    pass


class MonotoneLikelihood(EstimationError):
    pass


class DimensionMismatch(EstimationError, ValueError):
    pass


class MissingCovariateSet(EstimationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class HullViolation(EstimationError):
    pass


class NoMatches(EstimationError):
    pass


class CensoringSupport(EstimationError):
    pass


class SimulationError(SurvAdjError):
    pass


class SampleTooLarge(SimulationError, ValueError):
    pass


class DegenerateTreatedFraction(SimulationError):
    pass


class NoEventsInGroup(SimulationError):
    pass


class ConfigError(SurvAdjError, ValueError):
    pass
