"""Exception hierarchy. Each error names the offending key, path or index."""


class SddrError(Exception):
    pass


class ConfigurationError(SddrError, ValueError):
    pass


class TrainingError(SddrError, RuntimeError):
    pass


class FormatError(SddrError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class GenerationError(SddrError, RuntimeError):
    def __init__(self, message: str, class_id: int | None = None, index: int | None = None):
        super().__init__(message)
        self.class_id = class_id
        self.index = index


class SamplingError(SddrError, RuntimeError):
    pass


class EvaluationError(SddrError, RuntimeError):
    pass
