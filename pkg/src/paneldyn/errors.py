"""Exception types raised across the package.

Every error derives from :class:`PanelDynError` so the command line can
report ``<ClassName>: <message>`` on a single line.
"""


class PanelDynError(Exception):
    """Base class for all package errors."""


# ingestion
class ParseFailure(PanelDynError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingColumn(PanelDynError):
    pass


class UnbalancedPanel(PanelDynError):
    def __init__(self, message, offenders=()):
        self.offenders = list(offenders)
        super().__init__(message)


class DuplicateRecord(PanelDynError):
    pass


class NonPositivePrice(PanelDynError):
    pass


class ZeroDenominator(PanelDynError):
    pass


# feature construction
class InsufficientHistory(PanelDynError):
    pass


class DegenerateValuation(PanelDynError):
    pass


class NonPositiveTurnover(PanelDynError):
    pass


# preprocessing / design
class ZeroVariance(PanelDynError):
    def __init__(self, firm, feature):
        self.firm = firm
        self.feature = feature
        super().__init__(f"feature {feature!r} has zero variance for firm {firm!r}")


class UnknownModel(PanelDynError):
    pass


# estimation
class RankDeficient(PanelDynError):
    def __init__(self, message, column=None):
        self.column = column
        super().__init__(message)


class SingleCluster(PanelDynError):
    pass


class MismatchedSamples(PanelDynError):
    pass


# surface analysis
class NoSignificantTerms(PanelDynError):
    pass


class NoInteriorExtrema(PanelDynError):
    pass


class EmptyRange(PanelDynError):
    pass


# diagnostics
class TooFewObservations(PanelDynError):
    pass


class ConfigError(PanelDynError):
    pass
