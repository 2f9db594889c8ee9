# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the DRNet C++ core."""

from ._drnet import (
    ConfigError,
    Error,
    FormatError,
    GenerationError,
    IoError,
    Model,
    NumericError,
    decode_rpmx,
    encode_rpmx,
    experiment_config,
    generate,
    load_split,
    param_counts,
    preset_names,
    write_dataset,
)


def panels_to_float(problem):
    """The (16, S, S) uint8 panels of one problem scaled to [0, 1]."""
    return problem["pixels"].astype("float32") / 255.0


__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "GenerationError",
    "IoError",
    "Model",
    "NumericError",
    "decode_rpmx",
    "encode_rpmx",
    "experiment_config",
    "generate",
    "load_split",
    "panels_to_float",
    "param_counts",
    "preset_names",
    "write_dataset",
]
