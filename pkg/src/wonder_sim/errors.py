"""Exception hierarchy shared by every simulator module."""

from __future__ import annotations


class WonderError(Exception):
    """Base class for all simulator errors."""


# -- configuration -----------------------------------------------------------


class ParseError(WonderError):
    """Config text is not valid JSON or misses the document envelope."""


class ValidationError(WonderError):
    """One or more invariants are violated.

    ``problems`` holds every violation as ``(field_path, message)``; the
    loader never stops at the first one.
    """

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = list(problems)
        lines = [f"{path}: {msg}" for path, msg in self.problems]
        super().__init__(f"{len(lines)} validation problem(s):\n  " + "\n  ".join(lines))


# -- registry ----------------------------------------------------------------


class DuplicateSid(WonderError):
    pass


class DuplicateElement(WonderError):
    pass


class UnknownEdc(WonderError):
    pass


class UnknownElement(WonderError):
    pass


class UnknownSid(WonderError):
    pass


class NoLiveInstance(WonderError):
    pass


# -- traffic classes ---------------------------------------------------------


class UnknownClass(WonderError):
    pass


class UnboundQfi(WonderError):
    pass


# -- data plane --------------------------------------------------------------


class WrongUpf(WonderError):
    pass


class NoBackup(WonderError):
    pass


class NestedEncapsulation(WonderError):
    """A packet tried to carry a second segment list (a tunnel)."""


# -- path computation --------------------------------------------------------


class Unreachable(WonderError):
    pass


class NoDisjointPair(WonderError):
    pass


class NoFeasiblePath(WonderError):
    def __init__(self, message: str, bearer_ids: tuple[int, ...] = ()):
        super().__init__(message)
        self.bearer_ids = tuple(bearer_ids)


class AppNotPresent(WonderError):
    pass


# -- control plane -----------------------------------------------------------


class AttachFailed(WonderError):
    pass


class HandoverFailed(WonderError):
    pass


class PreconditionViolated(WonderError):
    pass


class BufferOverflow(WonderError):
    pass


class IpReassignment(WonderError):
    """Something tried to change a UE address after attach."""


# -- workloads ---------------------------------------------------------------


class NotAnEc(WonderError):
    pass


class CapacityExceeded(WonderError):
    pass


class NoEcInTargetEdc(WonderError):
    pass


class MispredictionRetired(WonderError):
    pass
