"""Exception hierarchy shared by every ACRIC module."""


class AcricError(Exception):
    """Base class for all library errors."""


class ParameterError(AcricError, ValueError):
    """An argument violates an operation's precondition."""


class InvalidStrategy(ParameterError):
    """Hash-chain consumption/computation combination is not supported."""


class ChainExhausted(AcricError):
    """No unconsumed values remain in a hash chain."""


class ReinitRequired(AcricError):
    """Key material is used up; the session must be initialized again."""


class InitFailure(AcricError):
    """Initialization could not produce usable key material."""


class AuthenticationFailed(InitFailure):
    """A received initialization message did not authenticate.

    ``reply`` carries the INIT_ERROR message the failing party emits, when
    it emits one.
    """

    def __init__(self, message="authentication failed", reply=None):
        super().__init__(message)
        self.reply = reply


class ProtocolViolation(AuthenticationFailed):
    """A message arrived out of order for the receiving party.

    Subclasses AuthenticationFailed: a message that is not the expected
    protocol step cannot be authenticated as that step.
    """


class MalformedMessage(AuthenticationFailed):
    """Wire bytes do not decode into an initialization message."""


class InvalidPublicValue(InitFailure):
    """A Diffie-Hellman public value is degenerate (<= 1 or >= p - 1)."""


class FrameError(AcricError, ValueError):
    """Raw bytes are not a well-formed frame."""


class AdversaryActionError(AcricError, ValueError):
    """An adversary action cannot be applied to the given traffic."""
