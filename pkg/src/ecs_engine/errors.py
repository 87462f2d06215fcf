"""Exception hierarchy shared across the engine."""


class EcsError(Exception):
    """Base class for every error raised by ecs_engine."""


class EmptyInput(EcsError):
    pass


class UnknownToken(EcsError):
    pass


class ContextOverflow(EcsError):
    pass


class NumericalError(EcsError):
    def __init__(self, message: str, layer: int | None = None, position: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.position = position


class WeightError(EcsError):
    pass


class MissingFiller(EcsError):
    pass


class VocabularyError(EcsError):
    pass


class CaptureMissing(EcsError):
    pass


class TemplateError(EcsError):
    pass


class DatasetError(EcsError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class RecordError(DatasetError):
    """A line could not be parsed as a record."""


class SchemaError(DatasetError):
    """A parsed record violates the sample invariants."""


class ConfigError(EcsError):
    pass


class MissingBaseline(EcsError):
    pass


class EmptyRegion(EcsError):
    pass


class NoData(EcsError):
    pass


class IoError(EcsError, OSError):
    pass
