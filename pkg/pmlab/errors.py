"""
Exceptions raised by pmlab.

Errors that report a failed numeric assertion carry an ``instance`` mapping
that can be dumped to JSON and replayed.
"""


class PmlabError(Exception):
    pass


class UndefinedRatio(PmlabError):
    pass


class NonFiniteSpace(PmlabError):
    pass


class SupportExplosion(PmlabError):
    pass


class GridTooLarge(PmlabError):
    pass


class AsymmetricG(PmlabError):
    pass


class NotReversible(PmlabError):

    def __init__(self, message, residual=None):
        PmlabError.__init__(self, message)
        self.residual = residual


class ZeroGap(PmlabError):
    pass


class TraceTooShort(PmlabError):
    pass


class DivergentIntegral(PmlabError):
    pass


class TruncationTooSmall(PmlabError):
    pass


class CheckFailure(PmlabError):
    """Base for failed inequalities; ``instance`` is JSON-serialisable."""

    def __init__(self, message, instance=None):
        PmlabError.__init__(self, message)
        self.instance = instance if instance is not None else {}


class InequalityViolated(CheckFailure):
    pass


class DriftFail(CheckFailure):

    def __init__(self, message, regime=None, instance=None):
        CheckFailure.__init__(self, message, instance)
        self.regime = regime


class MinorizationFail(CheckFailure):
    pass


class HypothesisFail(CheckFailure):
    pass


class ConfigError(PmlabError):

    def __init__(self, message, key=None, line=None):
        where = []
        if key:
            where.append("at '%s'" % key)
        if line is not None:
            where.append("line %d" % line)
        if where:
            message = "%s (%s)" % (message, ", ".join(where))
        PmlabError.__init__(self, message)
        self.key = key
        self.line = line
