"""Exception types raised across the engine.

Every error carries a stable ``code`` so the command line can emit a
machine-readable record without string matching.
"""


class LumenTrackError(Exception):
    code = "LumenTrackError"


class DegenerateVector(LumenTrackError, ValueError):
    code = "DegenerateVector"


class SingularInnovation(LumenTrackError, ArithmeticError):
    code = "SingularInnovation"


class MalformedTree(LumenTrackError, ValueError):
    code = "MalformedTree"


class AboveRoot(LumenTrackError, ValueError):
    code = "AboveRoot"


class UnknownLabel(LumenTrackError, KeyError):
    code = "UnknownLabel"

    def __str__(self):
        return Exception.__str__(self)


class MissingEmbedding(LumenTrackError, ValueError):
    code = "MissingEmbedding"


class ZeroVector(LumenTrackError, ArithmeticError):
    code = "ZeroVector"


class NotAtCarina(LumenTrackError):
    code = "NotAtCarina"


class InsufficientTracklets(LumenTrackError):
    code = "InsufficientTracklets"


class NoLabeledSeed(LumenTrackError):
    code = "NoLabeledSeed"


class NoVotes(LumenTrackError):
    code = "NoVotes"


class ProviderFailure(LumenTrackError, RuntimeError):
    code = "ProviderFailure"


class DisconnectedPath(LumenTrackError, ValueError):
    code = "DisconnectedPath"


class MisalignedFrames(LumenTrackError, ValueError):
    code = "MisalignedFrames"


class SchemaVersionError(LumenTrackError, ValueError):
    code = "SchemaVersionError"


class ConfigError(LumenTrackError, ValueError):
    code = "ConfigError"
