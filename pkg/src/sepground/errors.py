"""Error taxonomy shared across the package.

Each class carries the process exit code the CLI uses for that error
category (0 is success, 1 is reserved for unexpected crashes).
"""


class SepGroundError(Exception):
    exit_code = 1


class ParameterError(SepGroundError):
    """Invalid operation parameters (bad ranges, degenerate specs)."""

    exit_code = 2


class ShapeError(ParameterError):
    """Dimension mismatch or incompatible grid sizes."""

    exit_code = 2


class ConfigError(SepGroundError):
    """Invalid configuration (files, keys, batch/step settings)."""

    exit_code = 3


class ContractError(SepGroundError):
    """A caller violated an operation precondition (e.g. empty input)."""

    exit_code = 4


class DataError(SepGroundError):
    """Manifest, image, or detector-record problems (missing ids, files)."""

    exit_code = 5


class CheckpointError(SepGroundError):
    """Unreadable checkpoint or checkpoint/config mismatch."""

    exit_code = 6


class NumericsError(SepGroundError):
    """Non-finite values during training; carries diagnostic context."""

    exit_code = 7
