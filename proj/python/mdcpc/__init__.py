from ._mdcpc import (
    ConfigError,
    GeometryError,
    InvalidArgument,
    NumericError,
    grid_shape,
    info_nce_loss,
    leakcheck,
    run_cli,
    synthetic_counts,
)

__all__ = [
    "ConfigError",
    "GeometryError",
    "InvalidArgument",
    "NumericError",
    "grid_shape",
    "info_nce_loss",
    "leakcheck",
    "run_cli",
    "synthetic_counts",
]
