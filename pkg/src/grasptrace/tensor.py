"""Channel-major (C, H, W) tensor helpers and the debug dump format.

All numeric carriers in this package are plain numpy arrays in channel-major
order; these helpers validate and serialize them.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError


def as_tensor3(data, channels: int | None = None) -> np.ndarray:
    """Coerce to a float64 (C, H, W) array, checking finiteness."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 3:
        raise ConfigurationError(f"expected a (C, H, W) array, got shape {x.shape}")
    if channels is not None and x.shape[0] != channels:
        raise ConfigurationError(
            f"expected {channels} channels, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("tensor contains NaN or Inf")
    return x


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ConfigurationError(f"{what} contains NaN or Inf")
    return x


def save_tensor_text(path, x: np.ndarray) -> None:
    """Write a tensor as a text header ``c h w`` plus whitespace-separated reals."""
    x = as_tensor3(x)
    c, h, w = x.shape
    with open(path, "w") as f:
        f.write(f"{c} {h} {w}\n")
        for plane in x:
            np.savetxt(f, plane, fmt="%.17g")


def load_tensor_text(path) -> np.ndarray:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 3:
            raise ConfigurationError(f"bad tensor header in {path}: {header}")
        c, h, w = (int(v) for v in header)
        values = np.loadtxt(f, dtype=np.float64).reshape(c, h, w)
    return as_tensor3(values)
