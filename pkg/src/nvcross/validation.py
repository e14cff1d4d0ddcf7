"""Input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_vec3(v, name: str = "vector") -> np.ndarray:
    arr = as_float_array(v, name)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    return arr


def check_unit_vector(v, tol: float = 1e-9, name: str = "axis") -> np.ndarray:
    arr = check_vec3(v, name)
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"{name} must be a unit vector (|{name}| = {norm:.12g})")
    return arr


def check_rotation_matrix(R, tol: float = 1e-10, name: str = "matrix") -> np.ndarray:
    arr = as_float_array(R, name)
    if arr.shape != (3, 3):
        raise ValueError(f"{name} must have shape (3, 3), got {arr.shape}")
    err = np.abs(arr.T @ arr - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"{name} is not orthogonal (max |R^T R - I| = {err:.3g})")
    det = float(np.linalg.det(arr))
    if abs(det - 1.0) > tol:
        raise ValueError(f"{name} is not proper (det = {det:.12g})")
    return arr


def check_positive(x: float, name: str = "value") -> float:
    x = float(x)
    if not np.isfinite(x) or x <= 0.0:
        raise ValueError(f"{name} must be positive, got {x}")
    return x


def check_nonnegative(x: float, name: str = "value") -> float:
    x = float(x)
    if not np.isfinite(x) or x < 0.0:
        raise ValueError(f"{name} must be non-negative, got {x}")
    return x
