"""Independent physics oracle: exact spin-1 transition energies.

Diagonalizes the ground-state spin Hamiltonian for each NV orientation and
checks that pairs of orientations whose axial field projections match in
magnitude have degenerate 0 -> +/-1 transition energies. Used by tests and
the ``verify-oracle`` CLI command; the inference path never diagonalizes.

Energies are linear frequencies in Hz (angular 2*pi factors cancel in every
degeneracy comparison).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import nv_axes
from .validation import check_vec3

_SQRT3 = math.sqrt(3.0)


class OutOfRegimeError(ValueError):
    """Field too strong for the low-field state labeling to hold."""


@dataclass(frozen=True)
class SpinConstants:
    """Zero-field splitting D (Hz) and gyromagnetic ratio gamma_e (Hz/T)."""

    D: float = 2.87e9
    gamma_e: float = 28.0e9

    def __post_init__(self):
        if self.D <= 0 or self.gamma_e <= 0:
            raise ValueError("D and gamma_e must be positive")


@dataclass(frozen=True)
class TransitionPair:
    """Transition energies from the lowest state, sorted ascending."""

    e_minus: float
    e_plus: float

    def __post_init__(self):
        if self.e_minus > self.e_plus:
            raise ValueError("e_minus must not exceed e_plus")


#: For each resonance delta (same order as forward_model.resonance_deltas),
#: the orientation pairs whose transition energies become degenerate on
#: that plane. The last three planes carry two simultaneous pairs.
PLANE_RESONANT_PAIRS: tuple[tuple[tuple[int, int], ...], ...] = (
    ((1, 2),),  # Bx = By
    ((0, 3),),  # Bx = -By
    ((1, 3),),  # Bx = Bz
    ((0, 2),),  # Bx = -Bz
    ((2, 3),),  # By = Bz
    ((0, 1),),  # By = -Bz
    ((0, 1), (2, 3)),  # Bx = 0
    ((0, 2), (1, 3)),  # By = 0
    ((0, 3), (1, 2)),  # Bz = 0
)

ALL_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def hamiltonian_in_nv_frame(
    b_parallel: float, b_perp: float, consts: SpinConstants = SpinConstants()
) -> np.ndarray:
    """Spin-1 Hamiltonian in the NV frame, basis {|+1>, |0>, |-1>}, in Hz.

    The transverse field is placed along S_x; the spectrum does not depend
    on its azimuth.
    """
    D = consts.D
    gb_par = consts.gamma_e * b_parallel
    gb_perp = consts.gamma_e * b_perp / math.sqrt(2.0)
    H = np.array(
        [
            [D + gb_par, gb_perp, 0.0],
            [gb_perp, 0.0, gb_perp],
            [0.0, gb_perp, D - gb_par],
        ],
        dtype=complex,
    )
    return H


def _jacobi_eigvals3(mats: np.ndarray, sweeps: int = 10) -> np.ndarray:
    """Ascending eigenvalues of a batch of real symmetric 3x3 matrices.

    Fixed-order cyclic Jacobi with a fixed sweep count: quadratic
    convergence drives the off-diagonal norm to rounding level well before
    the last sweep, and the fixed schedule keeps the result deterministic.
    """
    A = np.array(mats, dtype=float)
    if A.ndim == 2:
        A = A[None]
    for _ in range(sweeps):
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = A[:, p, q]
            nonzero = apq != 0.0
            if not nonzero.any():
                continue
            tau = np.zeros_like(apq)
            with np.errstate(over="ignore"):
                np.divide(
                    A[:, q, q] - A[:, p, p], 2.0 * apq, out=tau, where=nonzero
                )
                t = np.sign(tau) / (np.abs(tau) + np.hypot(1.0, tau))
            t[tau == 0.0] = 1.0
            t = np.where(nonzero, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # Rotate rows then columns of the symmetric matrix.
            Ap = A[:, p, :].copy()
            Aq = A[:, q, :].copy()
            A[:, p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[:, q, :] = s[:, None] * Ap + c[:, None] * Aq
            Ap = A[:, :, p].copy()
            Aq = A[:, :, q].copy()
            A[:, :, p] = c[:, None] * Ap - s[:, None] * Aq
            A[:, :, q] = s[:, None] * Ap + c[:, None] * Aq
    eig = np.stack([A[:, 0, 0], A[:, 1, 1], A[:, 2, 2]], axis=1)
    eig.sort(axis=1)
    return eig


def _project_field(B: np.ndarray, axes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(|b_parallel|, b_perp) of fields (N, 3) for each axis (M, 3) -> (N, M)."""
    b_par = B @ axes.T
    b_sq = np.sum(B * B, axis=1)[:, None]
    b_perp = np.sqrt(np.maximum(b_sq - b_par * b_par, 0.0))
    return np.abs(b_par), b_perp


def transition_energies_batch(
    B: np.ndarray, axes: np.ndarray, consts: SpinConstants = SpinConstants()
) -> np.ndarray:
    """Transition-energy pairs for fields (N, 3) x axes (M, 3) -> (N, M, 2)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    axes = np.atleast_2d(np.asarray(axes, dtype=float))
    b_par, b_perp = _project_field(B, axes)
    # The spectrum is even in b_parallel (field inversion swaps the
    # |+1> and |-1> states); using the magnitude keeps resonant pairs
    # bit-identical where their projections are.
    D = consts.D
    gb_par = consts.gamma_e * b_par
    gb_perp = consts.gamma_e * b_perp / math.sqrt(2.0)
    n, m = b_par.shape
    H = np.zeros((n * m, 3, 3))
    H[:, 0, 0] = (D + gb_par).ravel()
    H[:, 2, 2] = (D - gb_par).ravel()
    H[:, 0, 1] = H[:, 1, 0] = gb_perp.ravel()
    H[:, 1, 2] = H[:, 2, 1] = gb_perp.ravel()
    eig = _jacobi_eigvals3(H)
    pairs = np.stack([eig[:, 1] - eig[:, 0], eig[:, 2] - eig[:, 0]], axis=1)
    return pairs.reshape(n, m, 2)


def _check_regime(B: np.ndarray, consts: SpinConstants) -> None:
    bmax = float(np.max(np.linalg.norm(np.atleast_2d(B), axis=1)))
    if consts.gamma_e * bmax >= 0.3 * consts.D:
        raise OutOfRegimeError(
            f"|B| = {bmax:.3e} T exceeds the low-field regime "
            f"(gamma_e*|B| < 0.3*D)"
        )


def transition_energies(
    B, nv_axis, consts: SpinConstants = SpinConstants()
) -> TransitionPair:
    """Transition energies (Hz) from the lowest eigenstate for one orientation."""
    B = check_vec3(B, name="B")
    nv_axis = check_vec3(nv_axis, name="nv_axis")
    _check_regime(B, consts)
    pair = transition_energies_batch(B[None, :], nv_axis[None, :], consts)[0, 0]
    return TransitionPair(float(pair[0]), float(pair[1]))


def verify_resonance(
    B, i: int, j: int, tol: float, consts: SpinConstants = SpinConstants()
) -> bool:
    """True if orientations i and j have matching transition-energy pairs."""
    if i == j:
        raise ValueError("orientation indices must differ")
    B = check_vec3(B, name="B")
    _check_regime(B, consts)
    axes = nv_axes()
    pairs = transition_energies_batch(B[None, :], axes[[i, j]], consts)[0]
    return bool(np.all(np.abs(pairs[0] - pairs[1]) <= tol))


def plane_distances(B) -> np.ndarray:
    """Euclidean distance of a sample-frame field from each of the 9 planes."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    bx, by, bz = B[:, 0], B[:, 1], B[:, 2]
    s = math.sqrt(2.0)
    d = np.stack(
        [
            np.abs(bx - by) / s,
            np.abs(bx + by) / s,
            np.abs(bx - bz) / s,
            np.abs(bx + bz) / s,
            np.abs(by - bz) / s,
            np.abs(by + bz) / s,
            np.abs(bx),
            np.abs(by),
            np.abs(bz),
        ],
        axis=1,
    )
    return d


def sample_fields_on_plane(
    plane: int, trials: int, rng: np.random.Generator, b_max: float = 5e-3
) -> np.ndarray:
    """Random fields lying exactly on one resonance plane, |B| <= b_max."""
    u = rng.uniform(-1.0, 1.0, size=trials)
    v = rng.uniform(-1.0, 1.0, size=trials)
    scale = b_max / math.sqrt(2.0)
    u *= scale
    v *= b_max
    zeros = np.zeros_like(u)
    columns = {
        0: (u, u, v),
        1: (u, -u, v),
        2: (u, v, u),
        3: (u, v, -u),
        4: (v, u, u),
        5: (v, u, -u),
        6: (zeros, u, v),
        7: (u, zeros, v),
        8: (u, v, zeros),
    }
    if plane not in columns:
        raise ValueError(f"plane index must be 0..8, got {plane}")
    return np.stack(columns[plane], axis=1)


def run_plane_sweep(
    trials: int,
    seed: int,
    tol: float = 1.0,
    b_max: float = 5e-3,
    consts: SpinConstants = SpinConstants(),
) -> dict:
    """Degeneracy check on each plane: all predicted pairs within ``tol`` Hz.

    Returns a report dict with per-plane pass counts.
    """
    rng = np.random.default_rng(seed)
    axes = nv_axes()
    report = {"trials": trials, "tol_hz": tol, "planes": []}
    for plane in range(9):
        B = sample_fields_on_plane(plane, trials, rng, b_max=b_max)
        pairs = transition_energies_batch(B, axes, consts)  # (N, 4, 2)
        ok = np.ones(trials, dtype=bool)
        for i, j in PLANE_RESONANT_PAIRS[plane]:
            diff = np.abs(pairs[:, i, :] - pairs[:, j, :])
            ok &= np.all(diff <= tol, axis=1)
        report["planes"].append(
            {"plane": plane, "passes": int(ok.sum()), "failures": int((~ok).sum())}
        )
    report["total_passes"] = sum(p["passes"] for p in report["planes"])
    report["total_failures"] = sum(p["failures"] for p in report["planes"])
    return report


def run_generic_rejection_sweep(
    trials: int,
    seed: int,
    tol: float | None = None,
    b_max: float = 5e-3,
    min_plane_distance: float = 10e-6,
    consts: SpinConstants = SpinConstants(),
) -> dict:
    """Off-plane fields must show no degenerate pair at tolerance ``tol``.

    Default tolerance is gamma_e * 1 uT.
    """
    if tol is None:
        tol = consts.gamma_e * 1e-6
    rng = np.random.default_rng(seed)
    axes = nv_axes()
    fields = np.empty((trials, 3))
    count = 0
    while count < trials:
        cand = rng.uniform(-b_max, b_max, size=(4 * trials, 3))
        norm_ok = np.linalg.norm(cand, axis=1) <= b_max
        dist_ok = plane_distances(cand).min(axis=1) >= min_plane_distance
        good = cand[norm_ok & dist_ok]
        take = min(len(good), trials - count)
        fields[count : count + take] = good[:take]
        count += take
    pairs = transition_energies_batch(fields, axes, consts)  # (N, 4, 2)
    ok = np.ones(trials, dtype=bool)
    for i, j in ALL_PAIRS:
        diff = np.abs(pairs[:, i, :] - pairs[:, j, :])
        degenerate = np.all(diff <= tol, axis=1)
        ok &= ~degenerate
    return {
        "trials": trials,
        "tol_hz": tol,
        "passes": int(ok.sum()),
        "failures": int((~ok).sum()),
    }
