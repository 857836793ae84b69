"""Exception hierarchy shared by every augkit module."""

import inspect


class AugkitError(Exception):
    """Base class. ``sample_id`` names the offending sample when known."""

    def __init__(self, message="", sample_id=None):
        super().__init__(message)
        self.sample_id = sample_id

    def __str__(self):
        msg = super().__str__()
        if self.sample_id is not None:
            return f"[{self.sample_id}] {msg}"
        return msg


class InvalidParams(AugkitError, ValueError):
    pass


# chat parsing
class MalformedLine(AugkitError):
    pass


class EmptyDocument(AugkitError):
    pass


class UnknownSpeaker(AugkitError):
    pass


# corpus io
class UnsupportedEncoding(AugkitError):
    pass


class CorruptHeader(AugkitError):
    pass


class IoError(AugkitError, OSError):
    pass


class DuplicateId(AugkitError):
    pass


class SchemaError(AugkitError):
    pass


# augmentation
class DegenerateSignal(AugkitError):
    pass


class EmptySet(AugkitError):
    pass


class TooShort(AugkitError):
    pass


class LabelMismatch(AugkitError):
    pass


class EmptyThesaurus(AugkitError):
    pass


# metrics
class EmptyText(AugkitError):
    pass


class DimensionMismatch(AugkitError):
    pass


class ZeroVector(AugkitError):
    pass


class EmptyInput(AugkitError):
    pass


class MelMismatch(AugkitError):
    pass


class MissingPredictions(AugkitError):
    pass


# models
class EmptyCorpus(AugkitError):
    pass


class SingleClass(AugkitError):
    pass


class TooFewSamples(AugkitError):
    pass


class LeakageDetected(AugkitError):
    pass


class IdMismatch(AugkitError):
    pass


# external protocol
class ExtTimeout(AugkitError):
    def __init__(self, message="", ids=()):
        super().__init__(message)
        self.ids = list(ids)


class ProtocolError(AugkitError):
    pass


def reject_unknown_params(fn, params, method: str, extra=()):
    """Raise InvalidParams when ``params`` names an argument ``fn`` does not take."""
    accepted = set(inspect.signature(fn).parameters) | set(extra)
    unknown = sorted(set(params) - accepted - {"seed"})
    if unknown:
        raise InvalidParams(f"{method} does not take parameter(s) {', '.join(unknown)}; "
                            f"accepted: {', '.join(sorted(accepted - {'seed'}))}")
