"""Bayesian inversion of PL maps over orientation or field parameter grids.

The posterior is evaluated on a deterministic coarse grid with a uniform
prior, candidate modes are picked up as wrap-aware local maxima, refined by
nested grid shrinking, and surrounded by fine local patches from which the
normalized per-parameter marginals are assembled. Everything is a pure
function of (data, configuration, seed): rerunning with any worker-thread
count reproduces results bit for bit.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .forward_model import (
    ExternalFieldParams,
    LineshapeConfig,
    MeasurementGrid,
    ModelParams,
    PLMap,
    pl_value,
)
from .geometry import THETA_C, AXIS_111, AXIS_1M10

_TWO_PI = 2.0 * math.pi
_LOG_2PI = math.log(_TWO_PI)

#: Refinement stops once the per-axis grid resolution falls below these.
REFINE_TOL_ANGLE = 1e-4
REFINE_TOL_FIELD = 1e-7


@dataclass(frozen=True)
class NoiseModel:
    """Measurement noise plus uncertainties of the two independent variables."""

    sigma_noise: float
    sigma_bias: float = 0.0
    sigma_phi: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma_noise) and self.sigma_noise > 0):
            raise ValueError(f"sigma_noise must be positive, got {self.sigma_noise}")
        if self.sigma_bias < 0 or self.sigma_phi < 0:
            raise ValueError("sigma_bias and sigma_phi must be >= 0")


@dataclass(frozen=True)
class ParamAxis:
    name: str
    lower: float
    upper: float
    n_coarse: int
    periodic: bool = False
    refine_tol: float = REFINE_TOL_ANGLE

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError(f"axis {self.name}: upper must exceed lower")
        if self.n_coarse < 3:
            raise ValueError(f"axis {self.name}: need at least 3 coarse points")

    @property
    def period(self) -> float:
        return self.upper - self.lower

    def coarse_values(self) -> np.ndarray:
        if self.periodic:
            return self.lower + np.arange(self.n_coarse) * (
                self.period / self.n_coarse
            )
        return np.linspace(self.lower, self.upper, self.n_coarse)

    def coarse_spacing(self) -> float:
        n = self.n_coarse if self.periodic else self.n_coarse - 1
        return (self.upper - self.lower) / n


@dataclass(frozen=True)
class ParamSpace:
    """Inference domain: ``orientation`` (alpha, beta, zeta) or ``field``."""

    mode: str
    axes: tuple[ParamAxis, ...]

    def __post_init__(self):
        if self.mode not in ("orientation", "field"):
            raise ValueError(f"mode must be 'orientation' or 'field', got {self.mode!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(ax.name for ax in self.axes)

    @classmethod
    def orientation(cls, n_alpha: int = 72, n_beta: int = 24, n_zeta: int = 24):
        """Symmetry-reduced orientation domain at the default coarse resolution."""
        return cls(
            mode="orientation",
            axes=(
                ParamAxis("alpha", 0.0, _TWO_PI, n_alpha, periodic=True),
                ParamAxis("beta", 0.0, THETA_C, n_beta),
                ParamAxis("zeta", 0.0, _TWO_PI / 3.0, n_zeta, periodic=True),
            ),
        )

    @classmethod
    def field(
        cls,
        b_z_range: tuple[float, float],
        b_perp_range: tuple[float, float],
        n_b_z: int = 81,
        n_b_perp: int = 61,
        n_phi0: int = 72,
        phi0_range: tuple[float, float] | None = None,
    ):
        """External-field domain over a configured box; phi0 is periodic
        unless an explicit sub-range is given."""
        if b_perp_range[0] < 0:
            raise ValueError("b_perp lower bound must be >= 0")
        if phi0_range is None:
            phi0_axis = ParamAxis("phi0", 0.0, _TWO_PI, n_phi0, periodic=True)
        else:
            phi0_axis = ParamAxis("phi0", phi0_range[0], phi0_range[1], n_phi0)
        return cls(
            mode="field",
            axes=(
                ParamAxis(
                    "b_z", b_z_range[0], b_z_range[1], n_b_z,
                    refine_tol=REFINE_TOL_FIELD,
                ),
                ParamAxis(
                    "b_perp", b_perp_range[0], b_perp_range[1], n_b_perp,
                    refine_tol=REFINE_TOL_FIELD,
                ),
                phi0_axis,
            ),
        )


@dataclass(frozen=True)
class InferenceOptions:
    """Tuning knobs of the scan/refine/marginalize pipeline."""

    mode_threshold: float = math.log(1000.0)
    nms_radius: int = 3
    max_candidates: int = 16
    refine_points: int = 9
    shrink: float = 4.0
    patch_points: int = 25
    patch_calib_points: int = 17
    patch_sigma: float = 6.0
    patch_decay: float = 18.0
    threads: int | None = None


@dataclass(frozen=True)
class Mode:
    """A refined posterior mode with a local Gaussian curvature estimate."""

    point: dict[str, float]
    log_density: float
    covariance: np.ndarray
    mass_fraction: float = float("nan")


@dataclass(frozen=True)
class Marginal:
    """Normalized 1D marginal density sampled on a sorted grid."""

    x: np.ndarray
    density: np.ndarray

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.x))

    def mean(self) -> float:
        return float(np.trapezoid(self.x * self.density, self.x))

    def std(self) -> float:
        m = self.mean()
        var = float(np.trapezoid((self.x - m) ** 2 * self.density, self.x))
        return math.sqrt(max(var, 0.0))

    def map_value(self) -> float:
        return float(self.x[int(np.argmax(self.density))])

    def credible_interval(self, level: float = 0.95) -> tuple[float, float]:
        """Central credible interval from the cumulative density."""
        dx = np.diff(self.x)
        seg = 0.5 * (self.density[1:] + self.density[:-1]) * dx
        cdf = np.concatenate([[0.0], np.cumsum(seg)])
        cdf /= cdf[-1]
        tail = 0.5 * (1.0 - level)
        lo = float(np.interp(tail, cdf, self.x))
        hi = float(np.interp(1.0 - tail, cdf, self.x))
        return lo, hi


@dataclass(frozen=True)
class Posterior:
    space: ParamSpace
    coarse_axes: tuple[np.ndarray, ...]
    log_density: np.ndarray
    modes: tuple[Mode, ...]
    marginals: dict[str, Marginal]
    evidence_proxy: float

    @property
    def map_point(self) -> dict[str, float]:
        return self.modes[0].point


# ---------------------------------------------------------------------------
# likelihood plumbing


def fd_steps(axis_values: np.ndarray, fallback: float) -> np.ndarray:
    """Half the local grid spacing at each axis point; ``fallback`` serves
    single-point axes."""
    x = np.asarray(axis_values, dtype=float)
    if x.size < 2:
        return np.full(x.shape, fallback)
    mid = 0.5 * (x[1:] + x[:-1])
    local = np.empty_like(x)
    local[0] = x[1] - x[0]
    local[-1] = x[-1] - x[-2]
    local[1:-1] = mid[1:] - mid[:-1]
    return 0.5 * local


_FD_FALLBACK_BIAS = 0.5e-6  # T
_FD_FALLBACK_PHI = 0.5 * math.radians(1.0)


def effective_variance(
    params: ModelParams,
    grid_point: tuple[float, float],
    noise: NoiseModel,
    steps: tuple[float, float],
) -> float:
    """Per-point variance: noise plus propagated bias/angle uncertainty.

    Model derivatives are taken by central finite differences with the
    given steps.
    """
    h_b, h_phi = steps
    if h_b <= 0 or h_phi <= 0:
        raise ValueError("finite-difference steps must be positive")
    b, phi = grid_point
    var = noise.sigma_noise**2
    if noise.sigma_bias > 0:
        g = (pl_value(b + h_b, phi, params) - pl_value(b - h_b, phi, params)) / (
            2.0 * h_b
        )
        var += g * g * noise.sigma_bias**2
    if noise.sigma_phi > 0:
        g = (pl_value(b, phi + h_phi, params) - pl_value(b, phi - h_phi, params)) / (
            2.0 * h_phi
        )
        var += g * g * noise.sigma_phi**2
    return var


def _kernel_args(data: PLMap, lineshape: LineshapeConfig, noise: NoiseModel):
    grid = data.grid
    hb = fd_steps(grid.bias_values, _FD_FALLBACK_BIAS)
    hphi = fd_steps(grid.phi_values, _FD_FALLBACK_PHI)
    kind = _kernels.LORENTZIAN if lineshape.kind == "lorentzian" else _kernels.GAUSSIAN
    return dict(
        data=np.ascontiguousarray(data.values),
        bias=np.ascontiguousarray(grid.bias_values),
        phi=np.ascontiguousarray(grid.phi_values),
        gamma=lineshape.gamma,
        contrast=lineshape.contrast,
        w=np.asarray(lineshape.weights, dtype=float),
        kind=kind,
        sigma_noise=noise.sigma_noise,
        sigma_b=noise.sigma_bias,
        sigma_phi=noise.sigma_phi,
        hb=hb,
        hphi=hphi,
    )


def log_likelihood(params: ModelParams, data: PLMap, noise: NoiseModel) -> float:
    """Gaussian log-likelihood with per-point effective variances.

    Reference implementation in plain numpy; the grid scans use the
    compiled kernels, which agree with this to rounding level.
    """
    from .forward_model import pl_map

    grid = data.grid
    model = pl_map(grid, params).values
    r = data.values - model
    var = np.full(grid.shape, noise.sigma_noise**2)
    if noise.sigma_bias > 0:
        hb = fd_steps(grid.bias_values, _FD_FALLBACK_BIAS)
        up = pl_map(MeasurementGrid(grid.bias_values + hb, grid.phi_values), params)
        dn = pl_map(MeasurementGrid(grid.bias_values - hb, grid.phi_values), params)
        g = (up.values - dn.values) / (2.0 * hb[:, None])
        var += g * g * noise.sigma_bias**2
    if noise.sigma_phi > 0:
        hphi = fd_steps(grid.phi_values, _FD_FALLBACK_PHI)
        up = pl_map(MeasurementGrid(grid.bias_values, grid.phi_values + hphi), params)
        dn = pl_map(MeasurementGrid(grid.bias_values, grid.phi_values - hphi), params)
        g = (up.values - dn.values) / (2.0 * hphi[None, :])
        var += g * g * noise.sigma_phi**2
    return float(-0.5 * np.sum(r * r / var + np.log(var) + _LOG_2PI))


def _orientation_matrices(points: np.ndarray) -> np.ndarray:
    """Compose orientation matrices for angle triples, shape (K, 3) -> (K, 3, 3)."""
    alpha, beta, zeta = points[:, 0], points[:, 1], points[:, 2]

    def _about(axis, angle):
        k = np.asarray(axis)
        K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
        c = np.cos(angle)[:, None, None]
        s = np.sin(angle)[:, None, None]
        return c * np.eye(3) + s * K + (1.0 - c) * np.outer(k, k)

    c, s = np.cos(-alpha), np.sin(-alpha)
    Rz = np.zeros((alpha.size, 3, 3))
    Rz[:, 0, 0] = c
    Rz[:, 0, 1] = -s
    Rz[:, 1, 0] = s
    Rz[:, 1, 1] = c
    Rz[:, 2, 2] = 1.0
    return np.einsum(
        "kij,kjl,klm->kim", _about(AXIS_111, -zeta), _about(AXIS_1M10, -beta), Rz
    )


class _Objective:
    """Batched log-likelihood over parameter points for one inference mode."""

    def __init__(
        self,
        space: ParamSpace,
        data: PLMap,
        noise: NoiseModel,
        lineshape: LineshapeConfig,
        orientation=None,
        field_params: ExternalFieldParams | None = None,
    ):
        self.space = space
        self.args = _kernel_args(data, lineshape, noise)
        if space.mode == "orientation":
            if field_params is None:
                raise ValueError("orientation inference requires the known field")
            self.ex = field_params.b_perp * math.cos(field_params.phi0)
            self.ey = field_params.b_perp * math.sin(field_params.phi0)
            self.bz_ext = field_params.b_z
        else:
            if orientation is None:
                raise ValueError("field inference requires the known orientation")
            O = orientation.matrix if hasattr(orientation, "matrix") else orientation
            self.O = np.ascontiguousarray(O, dtype=float)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(points.shape[0])
        a = self.args
        if self.space.mode == "orientation":
            mats = np.ascontiguousarray(_orientation_matrices(points))
            _kernels.loglik_orientation_batch(
                mats, a["data"], a["bias"], a["phi"],
                self.ex, self.ey, self.bz_ext,
                a["gamma"], a["contrast"], a["w"], a["kind"],
                a["sigma_noise"], a["sigma_b"], a["sigma_phi"],
                a["hb"], a["hphi"], out,
            )
        else:
            _kernels.loglik_field_batch(
                np.ascontiguousarray(points), self.O,
                a["data"], a["bias"], a["phi"],
                a["gamma"], a["contrast"], a["w"], a["kind"],
                a["sigma_noise"], a["sigma_b"], a["sigma_phi"],
                a["hb"], a["hphi"], out,
            )
        return out


# ---------------------------------------------------------------------------
# mode detection and refinement


def _local_maxima(L: np.ndarray, periodic: tuple[bool, ...]) -> np.ndarray:
    """Boolean mask of cells not exceeded by any neighbor (wrap-aware)."""
    d = L.ndim
    mask = np.ones(L.shape, dtype=bool)
    for offset in itertools.product((-1, 0, 1), repeat=d):
        if all(s == 0 for s in offset):
            continue
        shifted = L
        for ax, s in enumerate(offset):
            if s != 0:
                shifted = np.roll(shifted, s, axis=ax)
        if any(s != 0 and not periodic[ax] for ax, s in enumerate(offset)):
            shifted = shifted.copy()
            for ax, s in enumerate(offset):
                if s == 0 or periodic[ax]:
                    continue
                idx = [slice(None)] * d
                idx[ax] = 0 if s == 1 else -1
                shifted[tuple(idx)] = -np.inf
        mask &= L >= shifted
    return mask


def _wrap_index_dist(i: int, j: int, n: int, periodic: bool) -> int:
    d = abs(i - j)
    return min(d, n - d) if periodic else d


def _select_candidates(
    L: np.ndarray, space: ParamSpace, options: InferenceOptions
) -> list[tuple[int, ...]]:
    periodic = tuple(ax.periodic for ax in space.axes)
    mask = _local_maxima(L, periodic)
    idxs = np.argwhere(mask)
    order = np.lexsort(tuple(idxs.T[::-1]) + (-L[mask],))[:4096]
    picked: list[tuple[int, ...]] = []
    for k in order:
        if len(picked) >= options.max_candidates:
            break
        cand = tuple(int(v) for v in idxs[k])
        close = any(
            all(
                _wrap_index_dist(c, p, L.shape[ax], periodic[ax]) <= options.nms_radius
                for ax, (c, p) in enumerate(zip(cand, prev))
            )
            for prev in picked
        )
        if not close:
            picked.append(cand)
    return picked


def _clamped_axis(center: float, half: float, ax: ParamAxis, n: int) -> np.ndarray:
    if ax.periodic:
        half = min(half, 0.5 * ax.period)
        return np.linspace(center - half, center + half, n)
    lo = max(ax.lower, center - half)
    hi = min(ax.upper, center + half)
    if hi <= lo:
        lo, hi = ax.lower, ax.upper
    return np.linspace(lo, hi, n)


def _grid_points(axes_vals: list[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes_vals, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class _RefineState:
    __slots__ = ("center", "half", "logp", "prev_logp", "done")

    def __init__(self, center: np.ndarray, half: np.ndarray):
        self.center = center
        self.half = half
        self.logp = -np.inf
        self.prev_logp = -np.inf
        self.done = False


def _refine_stage(
    state: _RefineState, space: ParamSpace, options: InferenceOptions, logp: np.ndarray,
    axes_vals: list[np.ndarray],
) -> None:
    shape = tuple(len(v) for v in axes_vals)
    k = int(np.argmax(logp))
    sub = np.unravel_index(k, shape)
    state.prev_logp = state.logp
    state.logp = float(logp[k])
    state.center = np.array(
        [axes_vals[j][sub[j]] for j in range(len(axes_vals))]
    )
    spacing = np.array([v[1] - v[0] for v in axes_vals])
    tols = np.array([ax.refine_tol for ax in space.axes])
    if np.all(spacing <= tols):
        state.done = True
        return
    # Stage maximum on a soft box edge: walk the box instead of shrinking,
    # so narrow tilted ridges can be followed.
    walk = False
    for j, ax in enumerate(space.axes):
        if 0 < sub[j] < shape[j] - 1:
            continue
        edge_val = axes_vals[j][sub[j]]
        hard_edge = not ax.periodic and (
            (sub[j] == 0 and edge_val <= ax.lower + 1e-300)
            or (sub[j] == shape[j] - 1 and edge_val >= ax.upper - 1e-300)
        )
        if not hard_edge:
            walk = True
    if not walk:
        state.half = state.half / options.shrink


def _refine_modes(
    objective: _Objective,
    space: ParamSpace,
    starts: list[np.ndarray],
    widths: np.ndarray,
    options: InferenceOptions,
) -> list[tuple[np.ndarray, float]]:
    """Shrink nested grids around all candidates jointly.

    Candidates advance in lockstep; after each stage the ones that cannot
    reach the mode threshold anymore (given the observed per-stage climb)
    are dropped, so junk candidates never get refined to full resolution.
    """
    n = options.refine_points
    states = [_RefineState(np.array(s, dtype=float), widths.copy()) for s in starts]
    alive = list(range(len(states)))
    for stage in range(60):
        grids = []
        sizes = []
        for i in alive:
            st = states[i]
            axes_vals = [
                _clamped_axis(st.center[j], st.half[j], ax, n)
                for j, ax in enumerate(space.axes)
            ]
            grids.append(axes_vals)
            sizes.append(int(np.prod([len(v) for v in axes_vals])))
        pts = np.concatenate([_grid_points(g) for g in grids], axis=0)
        vals = objective(pts)
        pos = 0
        for i, g, sz in zip(alive, grids, sizes):
            _refine_stage(states[i], space, options, vals[pos : pos + sz], g)
            pos += sz
        best = max(states[i].logp for i in alive)
        if stage >= 1:
            climb = max(states[i].logp - states[i].prev_logp for i in alive)
            margin = options.mode_threshold + 2.0 * max(climb, 0.0) + 10.0
            alive = [i for i in alive if states[i].logp >= best - margin]
        if all(states[i].done for i in alive):
            break
    out = []
    for i in alive:
        center = states[i].center.copy()
        for j, ax in enumerate(space.axes):
            if ax.periodic:
                center[j] = ax.lower + (center[j] - ax.lower) % ax.period
        out.append((center, states[i].logp))
    return out


def _hessian_covariance(
    objective: _Objective, space: ParamSpace, point: np.ndarray
) -> np.ndarray:
    d = len(space.axes)
    h = np.array([max(2.0 * ax.refine_tol, 1e-12) for ax in space.axes])
    pts = [point.copy()]
    for j in range(d):
        for s in (-1.0, 1.0):
            p = point.copy()
            p[j] += s * h[j]
            pts.append(p)
    for j in range(d):
        for k in range(j + 1, d):
            for sj, sk in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                p = point.copy()
                p[j] += sj * h[j]
                p[k] += sk * h[k]
                pts.append(p)
    vals = objective(np.array(pts))
    f0 = vals[0]
    H = np.zeros((d, d))
    pos = 1
    for j in range(d):
        fm, fp = vals[pos], vals[pos + 1]
        H[j, j] = (fp - 2.0 * f0 + fm) / h[j] ** 2
        pos += 2
    for j in range(d):
        for k in range(j + 1, d):
            fpp, fpm, fmp, fmm = vals[pos : pos + 4]
            H[j, k] = H[k, j] = (fpp - fpm - fmp + fmm) / (4.0 * h[j] * h[k])
            pos += 4
    try:
        cov = np.linalg.inv(-H)
        if np.all(np.linalg.eigvalsh(cov) > 0):
            return cov
    except np.linalg.LinAlgError:
        pass
    # Boundary mode or ill-conditioned curvature: diagonal fallback.
    with np.errstate(divide="ignore"):
        diag = np.where(np.diag(H) < 0, -1.0 / np.diag(H), np.inf)
    fallback = np.array([ax.coarse_spacing() for ax in space.axes]) ** 2
    return np.diag(np.where(np.isfinite(diag), diag, fallback))


# ---------------------------------------------------------------------------
# local patches and marginals


@dataclass
class _Patch:
    axes_vals: list[np.ndarray]
    logp: np.ndarray
    mode_ids: list[int]


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    if x.size == 1:
        return np.ones(1)
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


def _patch_marginal(
    patch_logp: np.ndarray, axes_vals: list[np.ndarray], axis: int, shift: float
) -> np.ndarray:
    dens = np.exp(patch_logp - shift)
    for j in reversed(range(len(axes_vals))):
        if j == axis:
            continue
        dens = np.tensordot(dens, _trapezoid_weights(axes_vals[j]), axes=([j], [0]))
    return dens


def _axis_stats(dens: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    total = np.trapezoid(dens, x)
    if total <= 0:
        return float(x[len(x) // 2]), 0.0
    mean = np.trapezoid(x * dens, x) / total
    var = np.trapezoid((x - mean) ** 2 * dens, x) / total
    return float(mean), math.sqrt(max(float(var), 0.0))


def _initial_half_widths(
    cov: np.ndarray, space: ParamSpace, options: InferenceOptions
) -> np.ndarray:
    sig = np.sqrt(np.maximum(np.diag(cov), 0.0))
    out = np.empty(len(space.axes))
    for j, ax in enumerate(space.axes):
        w = max(options.patch_sigma * sig[j], 16.0 * ax.refine_tol)
        if ax.periodic:
            w = min(w, 0.5 * ax.period)
        else:
            w = min(w, ax.upper - ax.lower)
        out[j] = w
    return out


def _wrap_delta(a: float, b: float, period: float) -> float:
    """Signed wrapped difference a - b in (-period/2, period/2]."""
    d = (a - b) % period
    if d > 0.5 * period:
        d -= period
    return d


def _merge_mode_boxes(
    centers: np.ndarray, halves: np.ndarray, space: ParamSpace
) -> list[tuple[list[int], np.ndarray, np.ndarray]]:
    """Group modes whose patch boxes overlap in every axis, so a box is never
    double counted in the marginals."""
    groups: list[tuple[list[int], np.ndarray, np.ndarray]] = []
    for m, (c, w) in enumerate(zip(centers, halves)):
        merged = False
        for gi, (ids, gc, gw) in enumerate(groups):
            delta = np.zeros(len(space.axes))
            overlap = True
            for j, ax in enumerate(space.axes):
                delta[j] = (
                    _wrap_delta(c[j], gc[j], ax.period) if ax.periodic else c[j] - gc[j]
                )
                if abs(delta[j]) > gw[j] + w[j]:
                    overlap = False
                    break
            if overlap:
                lo = np.minimum(gc - gw, gc + delta - w)
                hi = np.maximum(gc + gw, gc + delta + w)
                groups[gi] = (ids + [m], 0.5 * (lo + hi), 0.5 * (hi - lo))
                merged = True
                break
        if not merged:
            groups.append(([m], c.copy(), w.copy()))
    return groups


def _adjust_patch_box(
    space: ParamSpace,
    center: np.ndarray,
    half: np.ndarray,
    axes_vals: list[np.ndarray],
    logp: np.ndarray,
    options: InferenceOptions,
) -> bool:
    """Grow axes whose boundary density has not decayed; tighten axes far
    wider than the mass they hold. Returns True if the box changed."""
    peak = float(logp.max())
    changed = False
    for j, ax in enumerate(space.axes):
        x = axes_vals[j]
        full_axis = (
            ax.periodic and half[j] >= 0.5 * ax.period * (1.0 - 1e-12)
        ) or (
            not ax.periodic
            and x[0] <= ax.lower + 1e-300
            and x[-1] >= ax.upper - 1e-300
        )
        if full_axis:
            continue
        face_lo = float(np.take(logp, 0, axis=j).max())
        face_hi = float(np.take(logp, -1, axis=j).max())
        decayed = True
        if ax.periodic:
            decayed = max(face_lo, face_hi) <= peak - options.patch_decay
        else:
            if x[0] > ax.lower + 1e-300:
                decayed &= face_lo <= peak - options.patch_decay
            if x[-1] < ax.upper - 1e-300:
                decayed &= face_hi <= peak - options.patch_decay
        if not decayed:
            half[j] *= 2.0
            if ax.periodic:
                half[j] = min(half[j], 0.5 * ax.period)
            changed = True
            continue
        dens_j = _patch_marginal(logp, axes_vals, j, peak)
        mean_j, sig_j = _axis_stats(dens_j, x)
        target = max(options.patch_sigma * sig_j, 16.0 * ax.refine_tol)
        if half[j] > 3.0 * target:
            center[j] = mean_j
            half[j] = target
            changed = True
    return changed


def _evaluate_patch(
    objective: _Objective,
    space: ParamSpace,
    center: np.ndarray,
    half: np.ndarray,
    options: InferenceOptions,
    n_points: int,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Evaluate a local box around a mode group.

    The box is auto-sized in cheap low-resolution calibration rounds, then
    evaluated once at full resolution.
    """
    half = half.copy()
    center = center.copy()
    n_cal = min(options.patch_calib_points, n_points)
    for _round in range(4):
        axes_vals = [
            _clamped_axis(center[j], half[j], ax, n_cal)
            for j, ax in enumerate(space.axes)
        ]
        logp = objective(_grid_points(axes_vals)).reshape(
            tuple(len(v) for v in axes_vals)
        )
        if not _adjust_patch_box(space, center, half, axes_vals, logp, options):
            break
    axes_vals = [
        _clamped_axis(center[j], half[j], ax, n_points)
        for j, ax in enumerate(space.axes)
    ]
    logp = objective(_grid_points(axes_vals)).reshape(
        tuple(len(v) for v in axes_vals)
    )
    return axes_vals, logp


def _combine_segments(segments: list[tuple[np.ndarray, np.ndarray]]) -> Marginal:
    xs = np.unique(np.concatenate([x for x, _ in segments]))
    total = np.zeros_like(xs)
    for x, y in segments:
        total += np.interp(xs, x, y, left=0.0, right=0.0)
    norm = np.trapezoid(total, xs)
    if norm <= 0:
        raise RuntimeError("marginal normalization failed")
    return Marginal(x=xs, density=total / norm)


# ---------------------------------------------------------------------------
# the main entry points


def evaluate_posterior(
    data: PLMap,
    space: ParamSpace,
    noise: NoiseModel,
    lineshape: LineshapeConfig,
    orientation=None,
    field_params: ExternalFieldParams | None = None,
    options: InferenceOptions = InferenceOptions(),
) -> Posterior:
    """Grid-scan posterior with mode refinement and patch-based marginals.

    ``orientation`` fixes the crystal orientation when inferring the field;
    ``field_params`` fixes the external field when inferring the
    orientation. The prior is uniform over the space.
    """
    if data.grid.bias_values.size * data.grid.phi_values.size == 0:
        raise ValueError("data grid is empty")
    _kernels.apply_threads(options.threads)
    objective = _Objective(
        space, data, noise, lineshape, orientation=orientation, field_params=field_params
    )

    coarse_axes = tuple(ax.coarse_values() for ax in space.axes)
    shape = tuple(v.size for v in coarse_axes)
    log_density = objective(_grid_points(list(coarse_axes))).reshape(shape)

    candidates = _select_candidates(log_density, space, options)
    spacings = np.array([ax.coarse_spacing() for ax in space.axes])

    # Pre-cull plateau-level candidates: the mode window is measured on
    # refined heights, but a candidate deep below the coarse maximum
    # relative to the observed dynamic range can never climb into it.
    cand_logp = np.array([float(log_density[c]) for c in candidates])
    cmax = float(cand_logp.max())
    cmed = float(np.median(log_density))
    slack = max(10.0 * options.mode_threshold, 0.5 * (cmax - cmed))
    starts = [
        np.array([coarse_axes[j][c[j]] for j in range(len(space.axes))])
        for c, lp in zip(candidates, cand_logp)
        if lp >= cmax - slack
    ]
    refined = _refine_modes(objective, space, starts, spacings, options)

    # Candidates that converged into the same basin are duplicates; the
    # mode threshold is applied to the refined heights.
    refined.sort(key=lambda t: -t[1])
    kept: list[tuple[np.ndarray, float]] = []
    for point, logp in refined:
        dup = False
        for prev, _ in kept:
            same = True
            for j, ax in enumerate(space.axes):
                d = (
                    abs(_wrap_delta(point[j], prev[j], ax.period))
                    if ax.periodic
                    else abs(point[j] - prev[j])
                )
                if d > 0.25 * spacings[j]:
                    same = False
                    break
            if same:
                dup = True
                break
        if not dup:
            kept.append((point, logp))
    top = kept[0][1]
    kept = [t for t in kept if t[1] >= top - options.mode_threshold]

    covs = [_hessian_covariance(objective, space, p) for p, _ in kept]
    centers = np.array([p for p, _ in kept])
    halves = np.array([_initial_half_widths(c, space, options) for c in covs])

    patches: list[_Patch] = []
    for ids, center, half in _merge_mode_boxes(centers, halves, space):
        n = options.patch_points if len(ids) == 1 else max(options.patch_points, 49)
        axes_vals, logp = _evaluate_patch(objective, space, center, half, options, n)
        patches.append(_Patch(axes_vals=axes_vals, logp=logp, mode_ids=ids))

    shift = max(float(p.logp.max()) for p in patches)
    marginals: dict[str, Marginal] = {}
    for j, ax in enumerate(space.axes):
        segments = [
            (p.axes_vals[j], _patch_marginal(p.logp, p.axes_vals, j, shift))
            for p in patches
        ]
        marginals[ax.name] = _combine_segments(segments)

    # Posterior mass per mode: patch integrals; merged patches are split
    # between their modes by nearest (spacing-normalized) distance.
    masses = np.zeros(len(kept))
    for p in patches:
        weights = [_trapezoid_weights(v) for v in p.axes_vals]
        cell = weights[0]
        for wv in weights[1:]:
            cell = np.multiply.outer(cell, wv)
        contrib = np.exp(p.logp - shift) * cell
        if len(p.mode_ids) == 1:
            masses[p.mode_ids[0]] += float(contrib.sum())
            continue
        mesh = np.meshgrid(*p.axes_vals, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=1)
        dist = np.empty((flat.shape[0], len(p.mode_ids)))
        for col, mid in enumerate(p.mode_ids):
            acc = np.zeros(flat.shape[0])
            for j, ax in enumerate(space.axes):
                if ax.periodic:
                    d = (flat[:, j] - centers[mid][j]) % ax.period
                    d = np.where(d > 0.5 * ax.period, d - ax.period, d)
                else:
                    d = flat[:, j] - centers[mid][j]
                acc += (d / max(spacings[j], 1e-300)) ** 2
            dist[:, col] = acc
        nearest = np.argmin(dist, axis=1)
        cvals = contrib.ravel()
        for col, mid in enumerate(p.mode_ids):
            masses[mid] += float(cvals[nearest == col].sum())
    total_mass = float(masses.sum())

    names = space.names
    modes = tuple(
        Mode(
            point={names[j]: float(pt[j]) for j in range(len(names))},
            log_density=logp,
            covariance=covs[m],
            mass_fraction=float(masses[m] / total_mass),
        )
        for m, (pt, logp) in enumerate(kept)
    )

    peak = float(log_density.max())
    evidence_proxy = peak + float(
        np.log(np.sum(np.exp(log_density.ravel() - peak)))
    )

    return Posterior(
        space=space,
        coarse_axes=coarse_axes,
        log_density=log_density,
        modes=modes,
        marginals=marginals,
        evidence_proxy=evidence_proxy,
    )


def infer_orientation(
    data: PLMap,
    known_field: ExternalFieldParams,
    lineshape: LineshapeConfig,
    noise: NoiseModel,
    space: ParamSpace | None = None,
    options: InferenceOptions = InferenceOptions(),
) -> Posterior:
    """Posterior over (alpha, beta, zeta) in the symmetry-reduced domain."""
    if space is None:
        space = ParamSpace.orientation()
    if space.mode != "orientation":
        raise ValueError("space must be an orientation space")
    return evaluate_posterior(
        data, space, noise, lineshape, field_params=known_field, options=options
    )


_HIGH_SYMMETRY_DIRECTIONS: np.ndarray | None = None


def _high_symmetry_directions() -> np.ndarray:
    global _HIGH_SYMMETRY_DIRECTIONS
    if _HIGH_SYMMETRY_DIRECTIONS is None:
        dirs = []
        for v in itertools.product((-1, 0, 1), repeat=3):
            arr = np.array(v, dtype=float)
            n = np.linalg.norm(arr)
            if n > 0:
                dirs.append(arr / n)
        _HIGH_SYMMETRY_DIRECTIONS = np.array(dirs)
    return _HIGH_SYMMETRY_DIRECTIONS


def infer_field(
    data: PLMap,
    known_orientation,
    lineshape: LineshapeConfig,
    noise: NoiseModel,
    space: ParamSpace | None = None,
    options: InferenceOptions = InferenceOptions(),
) -> Posterior:
    """Posterior over (b_z, b_perp, phi0) for a calibrated orientation.

    Warns (non-fatally) when the rotation axis is close to a high-symmetry
    crystal direction, where the reconstruction is not unique.
    """
    O = (
        known_orientation.matrix
        if hasattr(known_orientation, "matrix")
        else np.asarray(known_orientation, dtype=float)
    )
    z_sample = O @ np.array([0.0, 0.0, 1.0])
    cosang = float(np.abs(_high_symmetry_directions() @ z_sample).max())
    if math.acos(min(1.0, cosang)) < 1e-3:
        warnings.warn(
            "rotation axis is within 1e-3 rad of a high-symmetry crystal "
            "direction: the field reconstruction may have multiple "
            "equivalent solutions",
            stacklevel=2,
        )
    if space is None:
        b = data.grid.bias_values
        span = float(b[-1] - b[0]) if b.size > 1 else 2e-3
        space = ParamSpace.field(
            b_z_range=(-0.5 * span, 0.5 * span), b_perp_range=(0.0, 0.5 * span)
        )
    if space.mode != "field":
        raise ValueError("space must be a field space")
    return evaluate_posterior(
        data, space, noise, lineshape, orientation=known_orientation, options=options
    )


def scaling_study(
    data: PLMap,
    known_orientation,
    lineshape: LineshapeConfig,
    noise: NoiseModel,
    Ns: list[int],
    repetitions: int,
    seed: int,
    space: ParamSpace | None = None,
    options: InferenceOptions = InferenceOptions(),
    width_param: str = "b_perp",
) -> list[dict]:
    """Posterior width of ``width_param`` vs number of angle traces.

    For each N, ``repetitions`` random angle subsets are drawn without
    replacement and the marginal posterior std recorded; rows report the
    mean and std of that width across repetitions. Seeded and
    reproducible.
    """
    n_phi = data.grid.phi_values.size
    if repetitions < 2:
        raise ValueError("repetitions must be >= 2")
    for N in Ns:
        if not 1 <= N <= n_phi:
            raise ValueError(f"N = {N} outside [1, {n_phi}] available traces")
    rng = np.random.default_rng(seed)
    rows = []
    for N in Ns:
        widths = []
        for _rep in range(repetitions):
            cols = np.sort(rng.choice(n_phi, size=N, replace=False))
            sub = PLMap(
                grid=MeasurementGrid(data.grid.bias_values, data.grid.phi_values[cols]),
                values=data.values[:, cols],
            )
            post = infer_field(
                sub, known_orientation, lineshape, noise, space=space, options=options
            )
            widths.append(post.marginals[width_param].std())
        arr = np.asarray(widths)
        rows.append(
            {
                "N": int(N),
                "mean_width": float(arr.mean()),
                "std_width": float(arr.std(ddof=1)),
            }
        )
    return rows
