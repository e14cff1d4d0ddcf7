"""Shared builders for the test suite."""

import numpy as np

from nvcross.forward_model import (
    ExternalFieldParams,
    LineshapeConfig,
    MeasurementGrid,
    ModelParams,
    PLMap,
    pl_map,
)
from nvcross.geometry import Orientation

# MAP estimates published for the reference experiment: two
# inversion-related orientation solutions and the field reconstruction.
SOLUTION_1 = (4.7587, 0.2342, 0.4775)
SOLUTION_2 = (0.6832, 0.2705, 1.6452)
FIELD_TRUTH = (1.165e-3, 0.8091e-3, 0.7196)

SIGMA_NOISE = 0.0018
SIGMA_BIAS = 1e-6
SIGMA_PHI = np.radians(1.0)


def random_rotation(rng) -> np.ndarray:
    """Uniform random rotation via a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def phi_axis(n: int) -> np.ndarray:
    return np.arange(n) * (2.0 * np.pi / n)


def make_grid(n_bias=77, n_phi=24, bias_span=4e-3) -> MeasurementGrid:
    return MeasurementGrid(np.linspace(-bias_span, bias_span, n_bias), phi_axis(n_phi))


def make_params(
    angles=SOLUTION_1,
    b_z=0.0,
    b_perp=1e-3,
    phi0=0.0,
    gamma=1e-4,
    contrast=0.02,
) -> ModelParams:
    return ModelParams(
        Orientation(*angles),
        ExternalFieldParams(b_z=b_z, b_perp=b_perp, phi0=phi0),
        LineshapeConfig(gamma=gamma, contrast=contrast),
    )


def synthetic_map(params, grid, sigma=0.0, seed=0) -> PLMap:
    clean = pl_map(grid, params)
    if sigma == 0.0:
        return clean
    noise = np.random.default_rng(seed).normal(0.0, sigma, clean.values.shape)
    return PLMap(grid=grid, values=clean.values + noise)
