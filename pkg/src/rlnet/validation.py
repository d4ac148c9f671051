"""Input checks in the spirit of ``sklearn.utils.check_array``."""
from __future__ import annotations

import numpy as np

from .errors import InputError


def check_images(X, name: str = "X", multiple_of: int = 1) -> np.ndarray:
    """Coerce ``X`` to a float32 ``(N, H, W, 3)`` array in [0, 1].

    A single ``H x W x 3`` image is promoted to a batch of one; uint8 input
    is rescaled by 1/255.
    """
    a = np.asarray(X)
    if a.dtype == object:
        raise InputError(f"{name}: images must share one shape to form a batch")
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[-1] != 3:
        raise InputError(f"{name}: expected (N, H, W, 3) images, got shape {a.shape}")
    if a.shape[0] == 0:
        raise InputError(f"{name}: no images")
    if a.dtype == np.uint8:
        a = a.astype(np.float32) / 255.0
    elif not np.issubdtype(a.dtype, np.floating):
        raise InputError(f"{name}: unsupported dtype {a.dtype}")
    a = a.astype(np.float32, copy=False)
    if not np.isfinite(a).all():
        raise InputError(f"{name}: contains NaN or Inf")
    if a.min() < 0 or a.max() > 1:
        raise InputError(f"{name}: values must lie in [0, 1], got [{a.min():.3g}, {a.max():.3g}]")
    if multiple_of > 1 and (a.shape[1] % multiple_of or a.shape[2] % multiple_of):
        raise InputError(f"{name}: size {a.shape[1]}x{a.shape[2]} must be divisible by {multiple_of}")
    return a


def check_image_pairs(X, y, multiple_of: int = 1):
    X = check_images(X, "X", multiple_of)
    y = check_images(y, "y", multiple_of)
    if X.shape != y.shape:
        raise InputError(f"X {X.shape} and y {y.shape} must have the same shape")
    return X, y
