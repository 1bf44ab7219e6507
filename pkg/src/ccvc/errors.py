"""Exception types shared across the codec."""


class CcvcError(Exception):
    """Base class for all codec errors."""


class ShapeError(CcvcError):
    """Operand shapes are incompatible for the requested operation."""


class BitstreamError(CcvcError):
    """Bitstream is malformed, truncated, or inconsistent with the model."""


class CheckpointError(CcvcError):
    """Checkpoint file is malformed or does not match the configuration."""
