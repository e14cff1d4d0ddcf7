"""Rotations, NV crystal axes, and the 24-element proper cubic symmetry group.

The crystal orientation is parameterized by three successive rotations
applied to lab-frame vectors:

    O = R_[111](-zeta) @ R_[1-10](-beta) @ R_z(-alpha)

with fixed rotation axes (1,1,1)/sqrt(3), (1,-1,0)/sqrt(2) and the lab z
axis. Orientations that differ by one of the 24 proper rotations mapping
the NV tetrahedron onto itself (or onto its inverse) produce identical
cross-relaxation patterns; ``canonicalize`` reduces any rotation to its
representatives inside the fundamental domain

    alpha in [0, 2*pi),  beta in [0, THETA_C],  zeta in [0, 2*pi/3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .validation import check_rotation_matrix, check_unit_vector, check_vec3

#: Angle between the [111] direction and the z axis, arccos(1/sqrt(3)).
THETA_C = math.acos(1.0 / math.sqrt(3.0))

AXIS_111 = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
AXIS_1M10 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
AXIS_Z = np.array([0.0, 0.0, 1.0])

_TWO_PI = 2.0 * math.pi
_ZETA_PERIOD = _TWO_PI / 3.0


def nv_axes() -> np.ndarray:
    """The four NV crystallographic unit axes, shape (4, 3), fixed order."""
    axes = np.array(
        [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ]
    )
    return axes / math.sqrt(3.0)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Right-handed rotation by ``angle`` about a unit ``axis`` (Rodrigues)."""
    k = check_unit_vector(axis, tol=1e-9, name="axis")
    c = math.cos(angle)
    s = math.sin(angle)
    K = np.array(
        [
            [0.0, -k[2], k[1]],
            [k[2], 0.0, -k[0]],
            [-k[1], k[0], 0.0],
        ]
    )
    return c * np.eye(3) + s * K + (1.0 - c) * np.outer(k, k)


def rotation_z(angle: float) -> np.ndarray:
    c = math.cos(angle)
    s = math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def orientation_matrix(alpha: float, beta: float, zeta: float) -> np.ndarray:
    """Lab-to-sample rotation for the angle triple (alpha, beta, zeta)."""
    return (
        rotation_about_axis(AXIS_111, -zeta)
        @ rotation_about_axis(AXIS_1M10, -beta)
        @ rotation_z(-alpha)
    )


def rotation_angle(R) -> float:
    """Rotation angle in [0, pi] of a proper rotation matrix."""
    tr = float(np.trace(np.asarray(R)))
    return math.acos(min(1.0, max(-1.0, 0.5 * (tr - 1.0))))


# t x m for t = AXIS_111, m = AXIS_1M10; completes the basis used when
# extracting the zeta rotation.
_T_CROSS_M = np.array([1.0, 1.0, -2.0]) / math.sqrt(6.0)

_POLE_EPS = 1e-9


def decompose_orientation(R) -> tuple[float, float, float]:
    """Invert ``orientation_matrix``: recover (alpha, beta, zeta) from R.

    Valid for any proper rotation; alpha and zeta are reduced modulo 2*pi
    and beta falls in [THETA_C - pi, THETA_C]. At the degenerate
    configuration where only a combination of alpha and zeta is defined
    (R maps the lab z axis onto the [111] axis, beta = THETA_C), the
    convention zeta = 0 is applied and the remaining rotation is folded
    into alpha.
    """
    R = np.asarray(R, dtype=float)
    q = R.T @ AXIS_111
    qz = min(1.0, max(-1.0, float(q[2])))
    psi = math.acos(qz)
    beta = THETA_C - psi

    if math.sin(psi) > _POLE_EPS:
        alpha = (math.atan2(q[1], q[0]) - 0.25 * math.pi) % _TWO_PI
        A = R @ rotation_z(alpha) @ rotation_about_axis(AXIS_1M10, beta)
        Am = A @ AXIS_1M10
        zeta = math.atan2(-float(Am @ _T_CROSS_M), float(Am @ AXIS_1M10)) % _TWO_PI
    else:
        zeta = 0.0
        M = rotation_about_axis(AXIS_1M10, beta) @ R
        alpha = math.atan2(M[0, 1], M[0, 0]) % _TWO_PI
    return alpha, beta, zeta


@lru_cache(maxsize=1)
def _symmetry_group_cached() -> np.ndarray:
    gen_z = np.rint(rotation_about_axis(AXIS_Z, 0.5 * math.pi)).astype(np.int64)
    gen_111 = np.rint(rotation_about_axis(AXIS_111, _TWO_PI / 3.0)).astype(np.int64)

    elements = {tuple(np.eye(3, dtype=np.int64).ravel())}
    frontier = [np.eye(3, dtype=np.int64)]
    while frontier:
        nxt = []
        for m in frontier:
            for g in (gen_z, gen_111):
                prod = g @ m
                key = tuple(prod.ravel())
                if key not in elements:
                    elements.add(key)
                    nxt.append(prod)
        frontier = nxt

    # Lexicographically descending over flattened entries puts the
    # identity first and fixes a deterministic order.
    ordered = sorted(elements, reverse=True)
    group = np.array(ordered, dtype=float).reshape(len(ordered), 3, 3)
    group.setflags(write=False)
    return group


def symmetry_group() -> np.ndarray:
    """All 24 proper rotations preserving the NV resonance pattern, (24, 3, 3)."""
    return _symmetry_group_cached()


def orientations_equivalent(O1, O2, tol: float) -> bool:
    """True if O1 equals g @ O2 within ``tol`` radians for some group element g.

    The distance is the rotation angle of O1 @ (g O2)^T, computed from both
    the trace and the skew part so that tiny angles are resolved linearly.
    """
    O1 = check_rotation_matrix(O1, tol=1e-8, name="O1")
    O2 = check_rotation_matrix(O2, tol=1e-8, name="O2")
    M = np.einsum("ij,kmj->kim", O1 @ O2.T, symmetry_group())  # P @ g^T
    cos_term = 0.5 * (np.trace(M, axis1=1, axis2=2) - 1.0)
    sin_term = 0.5 * np.sqrt(
        (M[:, 2, 1] - M[:, 1, 2]) ** 2
        + (M[:, 0, 2] - M[:, 2, 0]) ** 2
        + (M[:, 1, 0] - M[:, 0, 1]) ** 2
    )
    angles = np.arctan2(sin_term, cos_term)
    return bool(angles.min() < tol)


def _wrap_distance(a: float, b: float, period: float) -> float:
    d = abs(a - b) % period
    return min(d, period - d)


@dataclass(frozen=True)
class Orientation:
    """An angle triple together with its lab-to-sample rotation matrix."""

    alpha: float
    beta: float
    zeta: float
    matrix: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.matrix is None:
            object.__setattr__(
                self, "matrix", orientation_matrix(self.alpha, self.beta, self.zeta)
            )

    @classmethod
    def from_angles(cls, alpha: float, beta: float, zeta: float) -> "Orientation":
        return cls(float(alpha), float(beta), float(zeta))

    @classmethod
    def from_matrix(cls, R) -> "Orientation":
        """First canonical representative of an arbitrary rotation."""
        return canonicalize(R)[0]

    def angles(self) -> tuple[float, float, float]:
        return self.alpha, self.beta, self.zeta


def canonicalize(O, dedup_tol: float = 1e-9) -> list[Orientation]:
    """All fundamental-domain representatives g @ O of a rotation.

    Typically two representatives exist (the inversion-related pair); at
    least one always does.
    """
    O = check_rotation_matrix(O, tol=1e-8, name="O")
    boundary = 1e-12
    reps: list[Orientation] = []
    for g in symmetry_group():
        gO = g @ O
        alpha, beta, zeta = decompose_orientation(gO)
        if beta < -boundary or beta > THETA_C + boundary:
            continue
        beta = min(max(beta, 0.0), THETA_C)
        if zeta >= _ZETA_PERIOD - boundary:
            if zeta < _ZETA_PERIOD + boundary:
                zeta = 0.0
            else:
                continue
        if alpha >= _TWO_PI - boundary:
            alpha = 0.0
        duplicate = any(
            _wrap_distance(alpha, r.alpha, _TWO_PI) < dedup_tol
            and abs(beta - r.beta) < dedup_tol
            and _wrap_distance(zeta, r.zeta, _ZETA_PERIOD) < dedup_tol
            for r in reps
        )
        if not duplicate:
            reps.append(Orientation(alpha, beta, zeta, gO))
    if not reps:  # cannot happen: the caps of radius THETA_C cover the sphere
        raise RuntimeError("no canonical representative found")
    return reps


def orientation_from_z_axis(direction) -> np.ndarray:
    """Rotation carrying the lab z axis onto a crystal ``direction``.

    Returns the minimal such rotation; the free spin about z only offsets
    the rotation-angle axis of a PL map.
    """
    d = check_vec3(direction, name="direction")
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        raise ValueError("direction must be a nonzero vector")
    d = d / norm
    c = float(d @ AXIS_Z)
    if c > 1.0 - 1e-15:
        return np.eye(3)
    if c < -1.0 + 1e-15:
        return rotation_about_axis(np.array([1.0, 0.0, 0.0]), math.pi)
    axis = np.cross(AXIS_Z, d)
    axis /= np.linalg.norm(axis)
    return rotation_about_axis(axis, math.acos(c))
