"""Analytical PL model: total field, frame transformation, resonance deltas, lineshape.

The photoluminescence at a grid point (b_bias, phi) is

    PL = 1 - C * sum_i w_i * L(delta_i; Gamma)

where the nine deltas measure the distance of the sample-frame field from
the six pairwise resonance planes (weight 1) and the three double-resonance
planes (weight 2). All quantities are SI (tesla, radians).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Orientation, rotation_z
from .validation import as_float_array, check_rotation_matrix, check_vec3

#: Relative weights of the nine resonance conditions: one per pairwise
#: plane, two where two pairs cross simultaneously.
DEFAULT_WEIGHTS = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0)

LINESHAPE_KINDS = ("lorentzian", "gaussian")

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class ExternalFieldParams:
    """Static external field: axial b_z, transverse b_perp at azimuth phi0."""

    b_z: float
    b_perp: float
    phi0: float

    def __post_init__(self):
        if not np.isfinite(self.b_z):
            raise ValueError("b_z must be finite")
        if not np.isfinite(self.b_perp) or self.b_perp < 0.0:
            raise ValueError(f"b_perp must be >= 0, got {self.b_perp}")
        object.__setattr__(self, "phi0", float(self.phi0) % (2.0 * math.pi))


@dataclass(frozen=True)
class LineshapeConfig:
    """Dip shape: half-width gamma, single-dip contrast, per-delta weights."""

    gamma: float
    contrast: float
    weights: tuple = DEFAULT_WEIGHTS
    kind: str = "lorentzian"

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        w = tuple(float(x) for x in self.weights)
        if len(w) != 9 or any(x < 0.0 for x in w):
            raise ValueError("weights must be 9 non-negative reals")
        object.__setattr__(self, "weights", w)
        if not np.isfinite(self.contrast) or self.contrast < 0.0:
            raise ValueError(f"contrast must be >= 0, got {self.contrast}")
        if self.contrast * sum(w) > 1.0:
            raise ValueError(
                "contrast * sum(weights) exceeds 1: PL could go negative at full overlap"
            )
        if self.kind not in LINESHAPE_KINDS:
            raise ValueError(f"kind must be one of {LINESHAPE_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class ModelParams:
    """Everything the PL model needs: orientation, external field, lineshape."""

    orientation: Orientation
    field: ExternalFieldParams
    lineshape: LineshapeConfig


@dataclass(frozen=True)
class MeasurementGrid:
    """Strictly increasing bias-field and rotation-angle axes."""

    bias_values: np.ndarray
    phi_values: np.ndarray

    def __post_init__(self):
        b = as_float_array(self.bias_values, "bias_values")
        p = as_float_array(self.phi_values, "phi_values")
        if b.ndim != 1 or b.size == 0 or p.ndim != 1 or p.size == 0:
            raise ValueError("grid axes must be non-empty 1D arrays")
        if b.size > 1 and not np.all(np.diff(b) > 0):
            raise ValueError("bias_values must be strictly increasing")
        if p.size > 1 and not np.all(np.diff(p) > 0):
            raise ValueError("phi_values must be strictly increasing")
        object.__setattr__(self, "bias_values", b)
        object.__setattr__(self, "phi_values", p)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bias_values.size, self.phi_values.size


@dataclass(frozen=True)
class PLMap:
    """PL values on a measurement grid, shape (n_bias, n_phi)."""

    grid: MeasurementGrid
    values: np.ndarray
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = as_float_array(self.values, "values")
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "values", v)


def total_lab_field(field: ExternalFieldParams, b_bias: float) -> np.ndarray:
    """Lab-frame total field for a given axial bias value."""
    return np.array(
        [
            field.b_perp * math.cos(field.phi0),
            field.b_perp * math.sin(field.phi0),
            field.b_z + b_bias,
        ]
    )


def field_in_sample_frame(O, phi: float, B_lab) -> np.ndarray:
    """Transform a lab-frame field into the sample frame at rotation angle phi."""
    O = check_rotation_matrix(O, tol=1e-8, name="O")
    B_lab = check_vec3(B_lab, name="B_lab")
    return O @ rotation_z(-phi) @ B_lab


def resonance_deltas(B_s) -> tuple[np.ndarray, np.ndarray]:
    """Nine resonance deltas and weights for a sample-frame field.

    Order: Bx-By, Bx+By, Bx-Bz, Bx+Bz, By-Bz, By+Bz (weight 1), then
    Bx, By, Bz (weight 2).
    """
    bx, by, bz = check_vec3(B_s, name="B_s")
    deltas = np.array(
        [bx - by, bx + by, bx - bz, bx + bz, by - bz, by + bz, bx, by, bz]
    )
    return deltas, np.array(DEFAULT_WEIGHTS)


def lineshape(delta, gamma: float, kind: str = "lorentzian"):
    """Symmetric unit-peak lineshape with half-width gamma at half maximum."""
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    delta = np.asarray(delta, dtype=float)
    if kind == "lorentzian":
        g2 = gamma * gamma
        out = g2 / (delta * delta + g2)
    elif kind == "gaussian":
        out = np.exp(-_LN2 * (delta / gamma) ** 2)
    else:
        raise ValueError(f"kind must be one of {LINESHAPE_KINDS}, got {kind!r}")
    return out if out.ndim else float(out)


def pl_value(b_bias: float, phi: float, params: ModelParams) -> float:
    """PL at a single (b_bias, phi) point."""
    B_lab = total_lab_field(params.field, b_bias)
    B_s = params.orientation.matrix @ rotation_z(-phi) @ B_lab
    deltas, _ = resonance_deltas(B_s)
    L = lineshape(deltas, params.lineshape.gamma, params.lineshape.kind)
    return 1.0 - params.lineshape.contrast * float(np.dot(params.lineshape.weights, L))


def pl_map(grid: MeasurementGrid, params: ModelParams) -> PLMap:
    """PL over the full Cartesian grid, shape (n_bias, n_phi)."""
    b = grid.bias_values
    phi = grid.phi_values
    ls = params.lineshape
    fld = params.field

    # B_s(b, phi) = a(phi) + (b_z + b) * o3 with o3 the third column of O:
    # the z component of the lab field passes unchanged through R_z(-phi).
    O = params.orientation.matrix
    c = np.cos(phi)
    s = np.sin(phi)
    ex = fld.b_perp * math.cos(fld.phi0)
    ey = fld.b_perp * math.sin(fld.phi0)
    vx = c * ex + s * ey
    vy = -s * ex + c * ey
    a = np.outer(vx, O[:, 0]) + np.outer(vy, O[:, 1])  # (n_phi, 3)
    o3 = O[:, 2]
    bz_tot = fld.b_z + b  # (n_bias,)

    B_s = a[None, :, :] + bz_tot[:, None, None] * o3[None, None, :]
    bx, by, bz = B_s[..., 0], B_s[..., 1], B_s[..., 2]
    deltas = np.stack(
        [bx - by, bx + by, bx - bz, bx + bz, by - bz, by + bz, bx, by, bz], axis=-1
    )
    L = lineshape(deltas, ls.gamma, ls.kind)
    values = 1.0 - ls.contrast * (L @ np.asarray(ls.weights))
    return PLMap(grid=grid, values=values)
