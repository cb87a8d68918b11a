"""Exception hierarchy shared by all protocol layers."""


class MpcError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MpcError):
    """Deployment or protocol parameters violate a required bound."""


class DivisionByZero(MpcError, ZeroDivisionError):
    """Multiplicative inverse of zero requested."""


class ModeMismatch(MpcError):
    """Authenticated-mode operation invoked in semi-honest mode (or vice versa)."""


class ArityError(MpcError):
    """Vector operands of mismatched length."""


class ValidationError(MpcError):
    """Malformed input data (patient record, genotype, CSV row)."""


class DealError(MpcError):
    """Preprocessing generation or persistence failed."""


class OutOfPreprocessing(MpcError):
    """Preprocessing store exhausted; the running query must abort."""


class FrameError(MpcError):
    """Malformed, oversized, or unknown wire frame."""


class NeedMoreBytes(FrameError):
    """Buffer ends before the announced frame does."""


class ConnectError(MpcError):
    """Peer endpoint unreachable."""


class HandshakeError(MpcError):
    """HELLO exchange failed or announced incompatible parameters."""


class ConnectionLost(MpcError):
    """Channel closed or silent beyond the configured timeout."""


class DesyncAbort(MpcError):
    """Parties disagree on round number or protocol state."""


class MacAbort(MpcError):
    """Batched MAC verification failed; opened values are not trustworthy."""


class ProtocolError(MpcError):
    """Semantically invalid message for the current protocol state."""


class IntegrityError(MpcError):
    """Reconstructed result violates a public bound."""


class CorruptDatabase(MpcError):
    """Share-database file unreadable or inconsistent with configuration."""


class IngestError(MpcError):
    """Upload failed or the two parties acknowledged different record counts."""


class QueryTimeout(MpcError):
    """A party did not answer a query within the configured timeout."""


class RemoteAbort(MpcError):
    """Peer aborted the protocol; carries the peer-supplied reason."""

    def __init__(self, reason: str):
        super().__init__(f"peer aborted: {reason}")
        self.reason = reason


class BenchInvalid(MpcError):
    """A benchmark run produced a wrong query result; its timing is meaningless."""
