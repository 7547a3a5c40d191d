"""Exception hierarchy shared across the package."""


class AssertctlError(Exception):
    """Base class for every error raised by assertctl."""


class InputError(AssertctlError):
    """Bad user-supplied data (labels, corpora, lexicons, reports)."""


class UnknownLabel(InputError, ValueError):
    pass


class UnknownDataset(InputError, ValueError):
    pass


class MalformedRecord(InputError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class SpanOutOfBounds(MalformedRecord):
    pass


class DuplicateId(MalformedRecord):
    pass


class StandoffParseError(InputError):
    pass


class CoordinateOutOfRange(InputError):
    pass


class TokenMismatch(InputError):
    pass


class MissingGold(InputError):
    def __init__(self, instance_id: str):
        super().__init__(f"instance {instance_id!r} has no gold label")
        self.instance_id = instance_id


class MalformedLexiconLine(InputError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"lexicon line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateTrigger(MalformedLexiconLine):
    pass


# -- evaluation ---------------------------------------------------------------


class UnknownInstanceId(InputError):
    pass


class DuplicatePrediction(InputError):
    pass


class EmptyEvaluation(InputError):
    pass


class UnknownSlice(InputError):
    pass


# -- LoRA ---------------------------------------------------------------------


class RankTooLarge(InputError, ValueError):
    pass


class ShapeMismatch(InputError, ValueError):
    pass


# -- backends -----------------------------------------------------------------


class BackendError(AssertctlError):
    """A completion request could not be served."""


class AuthFailure(BackendError):
    pass


class RateLimited(BackendError):
    pass


class TransportError(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


# -- reasoning ----------------------------------------------------------------


class Unparseable(AssertctlError):
    def __init__(self, excerpt: str):
        super().__init__(f"no assertion label found in completion: {excerpt!r}")
        self.excerpt = excerpt


class AllPathsUnparseable(AssertctlError):
    pass
