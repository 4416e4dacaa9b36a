"""Exact input-space hypersurfaces of bias-free piecewise-linear networks.

Networks are built or loaded with :func:`build`, :func:`build_tiny` or
:func:`load_model`; inputs are ``(height, width, channels)`` arrays in the
normalized input space. :meth:`Network.surfaces` streams reconstructed
hypersurfaces and :func:`run_cli` runs any command-line subcommand in-process.
"""

from ._core import (
    AbmError,
    AbmIndexError,
    DataError,
    FormatError,
    Network,
    NumericError,
    ShapeError,
    UnsupportedError,
    build,
    build_tiny,
    decode_png,
    encode_png,
    load_model,
    render_surface,
    run_cli,
)

__all__ = [
    "AbmError",
    "AbmIndexError",
    "DataError",
    "FormatError",
    "Network",
    "NumericError",
    "ShapeError",
    "UnsupportedError",
    "build",
    "build_tiny",
    "decode_png",
    "encode_png",
    "load_model",
    "render_surface",
    "run_cli",
]

__version__ = "0.1.0"
