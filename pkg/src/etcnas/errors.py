"""Exception hierarchy shared across the package."""


class EtcNasError(Exception):
    """Base class for all package errors."""


class GraphError(EtcNasError):
    pass


class ShapeMismatch(GraphError):
    pass


class UnreachableNode(GraphError):
    pass


class ParseError(GraphError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class SchemaVersionMismatch(GraphError):
    pass


class SpaceError(EtcNasError):
    pass


class ArityViolation(SpaceError):
    pass


class DomainViolation(SpaceError):
    pass


class UnknownReference(SpaceError):
    pass


class EngineError(EtcNasError):
    pass


class LabelOutOfRange(EngineError):
    pass


class EmptyDataset(EngineError):
    pass


class SearchError(EtcNasError):
    pass


class OutOfOrderObservation(SearchError):
    pass


class NOutOfRange(SearchError):
    pass


class InsufficientData(SearchError):
    pass


class IngestError(EtcNasError):
    pass


class BadMagic(IngestError):
    pass


class UnsupportedLinkType(IngestError):
    pass


class TruncatedPacket(IngestError):
    pass


class BadPattern(IngestError):
    pass


class NoHandshakeFound(IngestError):
    pass


class NotQuic(IngestError):
    pass


class MagicMismatch(IngestError):
    pass


class LengthMismatch(IngestError):
    pass


class MetricsError(EtcNasError):
    pass


class EmptyMatrix(MetricsError):
    pass


class EmptyClass(UserWarning):
    """A class is empty or too small for the requested stratified split."""
