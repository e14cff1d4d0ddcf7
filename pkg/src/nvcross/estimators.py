"""Scikit-learn style estimators wrapping the Bayesian inversion.

Both estimators accept either a :class:`PLMap` or a long-format array of
shape (n_points, 3) with columns (phi_rad, b_bias_T, pl) covering a
complete Cartesian grid, so they compose with sklearn tooling
(``get_params``/``set_params``, cloning, pipelines operating on arrays).
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .forward_model import (
    ExternalFieldParams,
    LineshapeConfig,
    MeasurementGrid,
    ModelParams,
    PLMap,
    pl_value,
)
from .geometry import Orientation
from .inference import (
    InferenceOptions,
    NoiseModel,
    ParamSpace,
    infer_field,
    infer_orientation,
    log_likelihood,
)


def as_pl_map(X) -> PLMap:
    """Coerce estimator input to a PLMap; validates grid completeness."""
    if isinstance(X, PLMap):
        return X
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(
            "X must be a PLMap or an (n_points, 3) array with columns "
            "(phi_rad, b_bias_T, pl)"
        )
    phi = np.unique(arr[:, 0])
    bias = np.unique(arr[:, 1])
    if phi.size * bias.size != arr.shape[0]:
        raise ValueError(
            f"X does not cover a complete grid: {arr.shape[0]} rows != "
            f"{bias.size} bias x {phi.size} phi points"
        )
    values = np.full((bias.size, phi.size), np.nan)
    i = np.searchsorted(bias, arr[:, 1])
    j = np.searchsorted(phi, arr[:, 0])
    values[i, j] = arr[:, 2]
    if np.isnan(values).any():
        raise ValueError("X contains duplicate grid points")
    return PLMap(grid=MeasurementGrid(bias, phi), values=values)


class _InversionEstimator(BaseEstimator):
    """Shared fit plumbing; subclasses build the space and fixed parameters."""

    def _noise(self) -> NoiseModel:
        return NoiseModel(
            sigma_noise=self.sigma_noise,
            sigma_bias=self.sigma_bias,
            sigma_phi=self.sigma_phi,
        )

    def _lineshape(self) -> LineshapeConfig:
        return LineshapeConfig(
            gamma=self.gamma, contrast=self.contrast, kind=self.lineshape_kind
        )

    def _options(self) -> InferenceOptions:
        return InferenceOptions(threads=self.threads)

    def _map_params(self) -> ModelParams:
        raise NotImplementedError

    def predict(self, X=None) -> np.ndarray:
        """Model PL at the MAP parameters.

        ``X``: (n, 2) array of (phi_rad, b_bias_T) points, a PLMap (its
        grid is used), or None for the training grid. Returns PL values.
        """
        if not hasattr(self, "posterior_"):
            raise RuntimeError("estimator is not fitted")
        params = self._map_params()
        if X is None:
            X = self.train_map_
        if isinstance(X, PLMap):
            from .forward_model import pl_map as _pl_map

            return _pl_map(X.grid, params).values
        pts = np.asarray(X, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("X must be (n, 2) columns (phi_rad, b_bias_T)")
        return np.array([pl_value(b, phi, params) for phi, b in pts])

    def score(self, X, y=None) -> float:
        """Log-likelihood of data under the MAP parameters."""
        if not hasattr(self, "posterior_"):
            raise RuntimeError("estimator is not fitted")
        return log_likelihood(self._map_params(), as_pl_map(X), self._noise())


class OrientationEstimator(_InversionEstimator):
    """Recover the crystal orientation from a PL map taken in a known field.

    After ``fit``: ``posterior_``, ``map_`` (dict with alpha/beta/zeta),
    ``orientation_``, ``sigma_`` (per-angle 1-sigma marginal widths of the
    MAP mode), ``modes_``.
    """

    def __init__(
        self,
        b_z: float = 0.0,
        b_perp: float = 1e-3,
        phi0: float = 0.0,
        gamma: float = 1e-4,
        contrast: float = 0.02,
        lineshape_kind: str = "lorentzian",
        sigma_noise: float = 0.0018,
        sigma_bias: float = 0.0,
        sigma_phi: float = 0.0,
        n_alpha: int = 72,
        n_beta: int = 24,
        n_zeta: int = 24,
        threads: int | None = None,
    ):
        self.b_z = b_z
        self.b_perp = b_perp
        self.phi0 = phi0
        self.gamma = gamma
        self.contrast = contrast
        self.lineshape_kind = lineshape_kind
        self.sigma_noise = sigma_noise
        self.sigma_bias = sigma_bias
        self.sigma_phi = sigma_phi
        self.n_alpha = n_alpha
        self.n_beta = n_beta
        self.n_zeta = n_zeta
        self.threads = threads

    def fit(self, X, y=None):
        data = as_pl_map(X)
        space = ParamSpace.orientation(self.n_alpha, self.n_beta, self.n_zeta)
        field = ExternalFieldParams(b_z=self.b_z, b_perp=self.b_perp, phi0=self.phi0)
        self.posterior_ = infer_orientation(
            data, field, self._lineshape(), self._noise(),
            space=space, options=self._options(),
        )
        self.train_map_ = data
        self.map_ = dict(self.posterior_.map_point)
        self.orientation_ = Orientation(
            self.map_["alpha"], self.map_["beta"], self.map_["zeta"]
        )
        best = self.posterior_.modes[0]
        self.sigma_ = {
            name: math.sqrt(max(best.covariance[i, i], 0.0))
            for i, name in enumerate(("alpha", "beta", "zeta"))
        }
        self.modes_ = self.posterior_.modes
        return self

    def _map_params(self) -> ModelParams:
        field = ExternalFieldParams(b_z=self.b_z, b_perp=self.b_perp, phi0=self.phi0)
        return ModelParams(self.orientation_, field, self._lineshape())


class FieldEstimator(_InversionEstimator):
    """Recover the external field vector from a PL map of a calibrated crystal.

    After ``fit``: ``posterior_``, ``map_`` (dict with b_z/b_perp/phi0),
    ``field_``, ``sigma_``, ``modes_``.
    """

    def __init__(
        self,
        alpha: float = 0.0,
        beta: float = 0.0,
        zeta: float = 0.0,
        gamma: float = 1e-4,
        contrast: float = 0.02,
        lineshape_kind: str = "lorentzian",
        sigma_noise: float = 0.0018,
        sigma_bias: float = 0.0,
        sigma_phi: float = 0.0,
        b_z_range: tuple = (-2e-3, 2e-3),
        b_perp_range: tuple = (0.0, 2e-3),
        n_b_z: int = 81,
        n_b_perp: int = 61,
        n_phi0: int = 72,
        threads: int | None = None,
    ):
        self.alpha = alpha
        self.beta = beta
        self.zeta = zeta
        self.gamma = gamma
        self.contrast = contrast
        self.lineshape_kind = lineshape_kind
        self.sigma_noise = sigma_noise
        self.sigma_bias = sigma_bias
        self.sigma_phi = sigma_phi
        self.b_z_range = b_z_range
        self.b_perp_range = b_perp_range
        self.n_b_z = n_b_z
        self.n_b_perp = n_b_perp
        self.n_phi0 = n_phi0
        self.threads = threads

    def fit(self, X, y=None):
        data = as_pl_map(X)
        space = ParamSpace.field(
            b_z_range=tuple(self.b_z_range),
            b_perp_range=tuple(self.b_perp_range),
            n_b_z=self.n_b_z,
            n_b_perp=self.n_b_perp,
            n_phi0=self.n_phi0,
        )
        orientation = Orientation(self.alpha, self.beta, self.zeta)
        self.posterior_ = infer_field(
            data, orientation, self._lineshape(), self._noise(),
            space=space, options=self._options(),
        )
        self.train_map_ = data
        self.map_ = dict(self.posterior_.map_point)
        self.field_ = ExternalFieldParams(
            b_z=self.map_["b_z"], b_perp=self.map_["b_perp"], phi0=self.map_["phi0"]
        )
        best = self.posterior_.modes[0]
        self.sigma_ = {
            name: math.sqrt(max(best.covariance[i, i], 0.0))
            for i, name in enumerate(("b_z", "b_perp", "phi0"))
        }
        self.modes_ = self.posterior_.modes
        return self

    def _map_params(self) -> ModelParams:
        return ModelParams(
            Orientation(self.alpha, self.beta, self.zeta), self.field_, self._lineshape()
        )
