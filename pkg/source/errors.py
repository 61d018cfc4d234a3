from typing import Dict, Optional


class TaseError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(TaseError, ValueError):
    pass


class ShapeMismatchError(InvalidInputError):
    def __init__(self, layer_name: str, message: str) -> None:
        super().__init__(f"[{layer_name}] {message}")
        self.layer_name: str = layer_name


class NoVoicedFramesError(InvalidInputError):
    def __init__(self, message: str = "no voiced frames") -> None:
        super().__init__(message)


class InsufficientDataError(InvalidInputError):
    def __init__(self, message: str, counts: Optional[Dict[str, int]] = None) -> None:
        counts = counts or {}
        details = ', '.join(f"{k}={v}" for k, v in counts.items())
        super().__init__(f"{message} ({details})" if details else message)
        self.counts: Dict[str, int] = counts


class StaleTraceError(TaseError, RuntimeError):
    pass


class StageOrderError(TaseError, RuntimeError):
    pass


class CheckpointFormatError(TaseError, ValueError):
    pass
