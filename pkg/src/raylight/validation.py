"""Input validation helpers shared by the estimator and the service layer."""

from __future__ import annotations

import numpy as np


def check_ray_array(X, name="X"):
    """Validate an (n, 6) array of rays: origin xyz + direction xyz.

    Returns a float64 copy. Directions must be finite and nonzero.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 6:
        raise ValueError(f"{name} must have shape (n, 6), got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    if np.any(np.linalg.norm(X[:, 3:], axis=1) == 0.0):
        raise ValueError(f"{name} contains zero-length ray directions")
    return X


def check_color_array(y, n=None, name="y"):
    """Validate an (n, 3) array of colors in [0, 1]. Returns a float64 copy."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"{name} has {y.shape[0]} rows, expected {n}")
    if not np.isfinite(y).all():
        raise ValueError(f"{name} contains non-finite values")
    if y.size and (y.min() < 0.0 or y.max() > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return y


def check_image(img, name="image"):
    """Validate an (H, W, 3) float image in [0, 1]. Returns a float64 copy."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must have shape (h, w, 3), got {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError(f"{name} contains non-finite values")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return img
