"""PL-map and results serialization, run configuration, synthetic data.

File formats are self-describing UTF-8 text with a version line; all
quantities are SI (tesla, radians) with units stated in the headers and
key names. Unit conversion happens only at the CLI boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .forward_model import (
    ExternalFieldParams,
    LineshapeConfig,
    MeasurementGrid,
    ModelParams,
    PLMap,
    pl_map,
)
from .geometry import Orientation, orientation_from_z_axis

PLMAP_VERSION_LINE = "# nv-plmap v1"
PLMAP_HEADER = "phi_rad,b_bias_T,pl"


class PLMapFormatError(ValueError):
    """Malformed PL-map file; the message names the offending line."""


class ConfigError(ValueError):
    """Invalid or unknown run-configuration key."""


def write_pl_map(path, plmap: PLMap) -> None:
    path = Path(path)
    lines = [PLMAP_VERSION_LINE]
    for key in sorted(plmap.metadata):
        lines.append(f"# {key}: {plmap.metadata[key]}")
    lines.append(PLMAP_HEADER)
    b = plmap.grid.bias_values
    phi = plmap.grid.phi_values
    for j in range(phi.size):
        for i in range(b.size):
            lines.append(
                f"{phi[j]:.16e},{b[i]:.16e},{plmap.values[i, j]:.16e}"
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pl_map(path, renormalize_percentile: float | None = None) -> PLMap:
    """Parse an ``nv-plmap v1`` file, validating the full Cartesian grid.

    ``renormalize_percentile`` optionally divides all values by that
    percentile of the data (for raw maps not normalized to 1); disabled by
    default.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise PLMapFormatError(f"{path}: file not found") from None
    lines = raw.splitlines()
    if not lines or lines[0].strip() != PLMAP_VERSION_LINE:
        raise PLMapFormatError(
            f"{path}:1: expected version line {PLMAP_VERSION_LINE!r}"
        )
    metadata: dict[str, str] = {}
    lineno = 1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.startswith("#"):
            break
        body = line[1:].strip()
        if ":" in body:
            key, _, value = body.partition(":")
            metadata[key.strip()] = value.strip()
    else:
        raise PLMapFormatError(f"{path}: no data header found")
    if lines[lineno - 1].strip() != PLMAP_HEADER:
        raise PLMapFormatError(
            f"{path}:{lineno}: expected header {PLMAP_HEADER!r}, "
            f"got {lines[lineno - 1].strip()!r}"
        )

    # Rows are phi-major: strictly increasing phi groups, each holding the
    # same strictly increasing bias axis.
    phi_axis: list[float] = []
    ref_bias: list[float] | None = None
    cur_bias: list[float] = []
    cur_rows: list[float] = []
    columns: list[list[float]] = []

    def _close_group(at_line: int):
        nonlocal ref_bias
        if ref_bias is None:
            ref_bias = list(cur_bias)
        elif cur_bias != ref_bias:
            n = min(len(cur_bias), len(ref_bias))
            for k in range(n):
                if cur_bias[k] != ref_bias[k]:
                    raise PLMapFormatError(
                        f"{path}: incomplete grid: phi = {phi_axis[-1]!r} is "
                        f"missing bias point {ref_bias[k]!r}"
                    )
            missing = ref_bias[n] if len(cur_bias) < len(ref_bias) else cur_bias[n]
            raise PLMapFormatError(
                f"{path}:{at_line}: incomplete grid: phi = {phi_axis[-1]!r} "
                f"bias axis mismatch near b = {missing!r}"
            )
        columns.append(list(cur_rows))

    started = False
    for ln in range(lineno, len(lines) + 1):
        line = lines[ln - 1] if ln <= len(lines) else ""
        if ln == lineno:
            continue  # header already consumed
        text = line.strip()
        if not text:
            continue
        parts = text.split(",")
        if len(parts) != 3:
            raise PLMapFormatError(f"{path}:{ln}: expected 3 comma-separated values")
        try:
            phi_v, b_v, pl_v = (float(p) for p in parts)
        except ValueError:
            raise PLMapFormatError(f"{path}:{ln}: non-numeric value") from None
        if not started or phi_v != phi_axis[-1]:
            if started:
                _close_group(ln)
            if phi_axis and phi_v <= phi_axis[-1]:
                if phi_v in phi_axis:
                    raise PLMapFormatError(
                        f"{path}:{ln}: duplicate phi group {phi_v!r}"
                    )
                raise PLMapFormatError(
                    f"{path}:{ln}: non-monotone phi axis at phi = {phi_v!r}"
                )
            phi_axis.append(phi_v)
            cur_bias = []
            cur_rows = []
            started = True
        else:
            if cur_bias and b_v <= cur_bias[-1]:
                if b_v == cur_bias[-1]:
                    raise PLMapFormatError(
                        f"{path}:{ln}: duplicate grid point "
                        f"(phi = {phi_v!r}, b = {b_v!r})"
                    )
                raise PLMapFormatError(
                    f"{path}:{ln}: non-monotone bias axis at b = {b_v!r}"
                )
        cur_bias.append(b_v)
        cur_rows.append(pl_v)
    if not started:
        raise PLMapFormatError(f"{path}: no data rows")
    _close_group(len(lines))

    values = np.array(columns).T  # (n_bias, n_phi)
    grid = MeasurementGrid(np.array(ref_bias), np.array(phi_axis))
    if renormalize_percentile is not None:
        scale = float(np.percentile(values, renormalize_percentile))
        if scale <= 0:
            raise PLMapFormatError(
                f"{path}: cannot renormalize by non-positive percentile value"
            )
        values = values / scale
    return PLMap(grid=grid, values=values, metadata=metadata)


def synthesize_pl_map(
    params: ModelParams, grid: MeasurementGrid, sigma_noise: float, seed: int
) -> PLMap:
    """Model map plus i.i.d. Gaussian noise from a seeded generator."""
    if sigma_noise < 0:
        raise ValueError(f"sigma_noise must be >= 0, got {sigma_noise}")
    clean = pl_map(grid, params)
    values = clean.values
    if sigma_noise > 0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, sigma_noise, size=values.shape)
    meta = {"seed": str(int(seed)), "sigma_noise": repr(float(sigma_noise))}
    return PLMap(grid=grid, values=values, metadata=meta)


# ---------------------------------------------------------------------------
# run configuration


_CONFIG_SECTIONS = {
    "seed",
    "lineshape",
    "noise",
    "field",
    "orientation",
    "grid",
    "synthesis",
    "inference",
    "scaling",
}

_SECTION_KEYS = {
    "lineshape": {"gamma_T", "contrast", "kind", "weights"},
    "noise": {"sigma_noise", "sigma_bias_T", "sigma_phi_rad"},
    "field": {"b_z_T", "b_perp_T", "phi0_rad"},
    "orientation": {"alpha_rad", "beta_rad", "zeta_rad", "z_axis_crystal"},
    "grid": {"bias_min_T", "bias_max_T", "n_bias", "n_phi"},
    "synthesis": {"sigma_noise"},
    "inference": {
        "b_z_min_T", "b_z_max_T", "n_b_z",
        "b_perp_min_T", "b_perp_max_T", "n_b_perp",
        "n_phi0", "phi0_min_rad", "phi0_max_rad",
        "n_alpha", "n_beta", "n_zeta",
        "mode_threshold", "max_candidates", "patch_points", "threads",
    },
    "scaling": {"Ns", "repetitions"},
}

_DEFAULTS = {
    "seed": 0,
    "lineshape": {"gamma_T": 1e-4, "contrast": 0.02, "kind": "lorentzian"},
    "noise": {"sigma_noise": 0.0018, "sigma_bias_T": 0.0, "sigma_phi_rad": 0.0},
    "field": {"b_z_T": 0.0, "b_perp_T": 1e-3, "phi0_rad": 0.0},
    "grid": {"bias_min_T": -4e-3, "bias_max_T": 4e-3, "n_bias": 154, "n_phi": 72},
    "synthesis": {"sigma_noise": 0.0},
    "scaling": {"Ns": [1, 2, 4, 8, 16, 32, 64], "repetitions": 50},
}


@dataclass
class RunConfig:
    """Validated run configuration with defaults applied and echoed."""

    seed: int
    lineshape: LineshapeConfig
    lineshape_explicit: bool
    noise_sigma: float
    noise_sigma_bias: float
    noise_sigma_phi: float
    field: ExternalFieldParams
    orientation: Orientation | None
    grid: MeasurementGrid
    synthesis_sigma: float
    inference: dict
    scaling: dict
    echo: dict = dc_field(default_factory=dict)

    def model_params(self) -> ModelParams:
        if self.orientation is None:
            raise ConfigError("orientation: section is required for this command")
        return ModelParams(self.orientation, self.field, self.lineshape)

    def require_explicit_lineshape(self) -> None:
        if not self.lineshape_explicit:
            raise ConfigError(
                "lineshape: gamma_T and contrast must be set explicitly for "
                "inference runs (defaults are for simulation demos only)"
            )


def _check_keys(section: str, entries: dict) -> None:
    allowed = _SECTION_KEYS[section]
    for key in entries:
        if key not in allowed:
            raise ConfigError(f"{section}.{key}: unknown key")


def _merged(section: str, raw: dict) -> dict:
    out = dict(_DEFAULTS.get(section, {}))
    out.update(raw.get(section, {}) or {})
    return out


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in _CONFIG_SECTIONS:
            raise ConfigError(f"{key}: unknown top-level key")
    for section in _SECTION_KEYS:
        if section in raw:
            if not isinstance(raw[section], dict):
                raise ConfigError(f"{section}: must be an object")
            _check_keys(section, raw[section])

    seed = raw.get("seed", _DEFAULTS["seed"])
    if not isinstance(seed, int):
        raise ConfigError("seed: must be an integer")

    ls = _merged("lineshape", raw)
    try:
        lineshape = LineshapeConfig(
            gamma=float(ls["gamma_T"]),
            contrast=float(ls["contrast"]),
            weights=tuple(ls["weights"]) if "weights" in ls else
            LineshapeConfig.__dataclass_fields__["weights"].default,
            kind=ls.get("kind", "lorentzian"),
        )
    except ValueError as exc:
        raise ConfigError(f"lineshape: {exc}") from None
    lineshape_explicit = "lineshape" in raw and {
        "gamma_T", "contrast"
    } <= set(raw["lineshape"])

    nz = _merged("noise", raw)
    if nz["sigma_noise"] <= 0:
        raise ConfigError("noise.sigma_noise: must be positive")
    if nz["sigma_bias_T"] < 0 or nz["sigma_phi_rad"] < 0:
        raise ConfigError("noise: sigma_bias_T and sigma_phi_rad must be >= 0")

    fl = _merged("field", raw)
    try:
        field_params = ExternalFieldParams(
            b_z=float(fl["b_z_T"]),
            b_perp=float(fl["b_perp_T"]),
            phi0=float(fl["phi0_rad"]),
        )
    except ValueError as exc:
        raise ConfigError(f"field: {exc}") from None

    orientation = None
    if "orientation" in raw:
        osec = raw["orientation"]
        if "z_axis_crystal" in osec:
            if {"alpha_rad", "beta_rad", "zeta_rad"} & set(osec):
                raise ConfigError(
                    "orientation: give either angles or z_axis_crystal, not both"
                )
            try:
                R = orientation_from_z_axis([float(v) for v in osec["z_axis_crystal"]])
            except ValueError as exc:
                raise ConfigError(f"orientation.z_axis_crystal: {exc}") from None
            orientation = Orientation.from_matrix(R)
        else:
            missing = {"alpha_rad", "beta_rad", "zeta_rad"} - set(osec)
            if missing:
                raise ConfigError(
                    f"orientation: missing {sorted(missing)} (or use z_axis_crystal)"
                )
            orientation = Orientation(
                float(osec["alpha_rad"]), float(osec["beta_rad"]), float(osec["zeta_rad"])
            )

    gr = _merged("grid", raw)
    if gr["bias_max_T"] <= gr["bias_min_T"]:
        raise ConfigError("grid: bias_max_T must exceed bias_min_T")
    if int(gr["n_bias"]) < 1 or int(gr["n_phi"]) < 1:
        raise ConfigError("grid: n_bias and n_phi must be >= 1")
    if int(gr["n_phi"]) == 1:
        phi_values = np.array([0.0])
    else:
        phi_values = np.arange(int(gr["n_phi"])) * (2.0 * math.pi / int(gr["n_phi"]))
    grid = MeasurementGrid(
        np.linspace(float(gr["bias_min_T"]), float(gr["bias_max_T"]), int(gr["n_bias"])),
        phi_values,
    )

    sy = _merged("synthesis", raw)
    if sy["sigma_noise"] < 0:
        raise ConfigError("synthesis.sigma_noise: must be >= 0")

    inference = dict(raw.get("inference", {}) or {})
    scaling = _merged("scaling", raw)
    if not isinstance(scaling["Ns"], list) or not all(
        isinstance(n, int) and n >= 1 for n in scaling["Ns"]
    ):
        raise ConfigError("scaling.Ns: must be a list of positive integers")
    if not isinstance(scaling["repetitions"], int) or scaling["repetitions"] < 2:
        raise ConfigError("scaling.repetitions: must be an integer >= 2")

    echo = {
        "seed": seed,
        "lineshape": ls,
        "noise": nz,
        "field": fl,
        "orientation": raw.get("orientation"),
        "grid": gr,
        "synthesis": sy,
        "inference": inference,
        "scaling": scaling,
    }
    return RunConfig(
        seed=seed,
        lineshape=lineshape,
        lineshape_explicit=lineshape_explicit,
        noise_sigma=float(nz["sigma_noise"]),
        noise_sigma_bias=float(nz["sigma_bias_T"]),
        noise_sigma_phi=float(nz["sigma_phi_rad"]),
        field=field_params,
        orientation=orientation,
        grid=grid,
        synthesis_sigma=float(sy["sigma_noise"]),
        inference=inference,
        scaling=scaling,
        echo=echo,
    )


def read_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return parse_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# results document


@dataclass
class ResultsDocument:
    """Inference results: modes, marginals, config echo; serializes to JSON."""

    mode: str
    seed: int
    config_echo: dict
    modes: list
    marginals: dict
    evidence_proxy: float
    software_version: str = __version__
    likelihood_note: str = (
        "Gaussian log-density with 1/2 factor and parameter-dependent "
        "ln(2 pi sigma^2) normalization; sigma^2 propagates bias/angle "
        "uncertainties via central finite differences"
    )
    timing_s: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def results_from_posterior(posterior, mode: str, seed: int, config_echo: dict,
                           timing_s: float | None = None) -> ResultsDocument:
    modes = []
    for m in posterior.modes:
        names = list(m.point)
        sigma = {
            name: float(math.sqrt(max(m.covariance[i, i], 0.0)))
            for i, name in enumerate(names)
        }
        modes.append(
            {
                "point": {k: float(v) for k, v in m.point.items()},
                "sigma": sigma,
                "covariance": [[float(v) for v in row] for row in m.covariance],
                "log_density": float(m.log_density),
                "mass_fraction": float(m.mass_fraction),
            }
        )
    marginals = {}
    for name, marg in posterior.marginals.items():
        lo, hi = marg.credible_interval(0.95)
        marginals[name] = {
            "x": [float(v) for v in marg.x],
            "density": [float(v) for v in marg.density],
            "map": marg.map_value(),
            "mean": marg.mean(),
            "std": marg.std(),
            "ci95": [lo, hi],
        }
    return ResultsDocument(
        mode=mode,
        seed=seed,
        config_echo=config_echo,
        modes=modes,
        marginals=marginals,
        evidence_proxy=float(posterior.evidence_proxy),
        timing_s=timing_s,
    )


def write_results(path, doc: ResultsDocument) -> None:
    Path(path).write_text(doc.to_json() + "\n", encoding="utf-8")


def read_results(path) -> ResultsDocument:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return ResultsDocument(**raw)
