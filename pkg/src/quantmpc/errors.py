"""Exception hierarchy shared by every layer of the engine."""


class QuantMPCError(Exception):
    """Base class for all engine errors."""


class StructuralError(QuantMPCError, ValueError):
    """Shapes, widths or configurations do not fit together."""


class DomainError(QuantMPCError, ValueError):
    """A value lies outside the domain an operation accepts."""


class IntegrityError(QuantMPCError):
    """Replicated copies or session seeds disagree.

    In the semi-honest model this signals a bug or misconfiguration, not an attack.
    """


class StateError(QuantMPCError, RuntimeError):
    """An object was used in the wrong lifecycle state (e.g. a consumed table)."""


class TransportError(QuantMPCError, ConnectionError):
    """A peer went away or a frame could not be delivered."""


class ProtocolDesyncError(TransportError):
    """A received frame does not carry the tag or sequence number the program expects."""


class ConfigError(QuantMPCError, ValueError):
    """Invalid model or run configuration."""


class ModelFormatError(QuantMPCError, ValueError):
    """A model or table file could not be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
