# ptyinr/errors.py
from typing import Optional


class PtyInrError(Exception):
    """Base error. `exit_code` is what the CLI returns when this escapes a command."""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ShapeMismatchError(PtyInrError):
    exit_code = 2


class NonFiniteError(PtyInrError):
    pass


class DegenerateProbeError(PtyInrError):
    pass


class UnboundedProbeError(PtyInrError):
    pass


class TapeError(PtyInrError):
    pass


class GradientCheckError(PtyInrError):
    pass


class ConfigError(PtyInrError):
    exit_code = 2


class ContainerError(PtyInrError):
    exit_code = 2


class OutputLockedError(PtyInrError):
    exit_code = 3


class DivergenceError(PtyInrError):
    def __init__(self, step: int, last_checkpoint: Optional[str]):
        super().__init__(
            f"non-finite loss at step {step} (last checkpoint: {last_checkpoint or 'none'})"
        )
        self.step = step
        self.last_checkpoint = last_checkpoint


class CoordinateRangeError(PtyInrError):
    pass


class InvalidInputError(PtyInrError):
    exit_code = 2
