"""Command-line front end: simulation, inversion, scaling studies, plot export.

All file contents are SI (tesla, radians); the unit-suffixed flags accept
millitesla and degrees and convert at this boundary. Primary outputs are
byte-identical for identical (config, seed); wall-clock timestamps go into
a ``<output>.meta.json`` sidecar.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, data_io, spin_oracle
from ._kernels import resolve_threads
from .data_io import ConfigError, PLMapFormatError, RunConfig
from .forward_model import PLMap
from .inference import (
    InferenceOptions,
    NoiseModel,
    ParamSpace,
    infer_field,
    infer_orientation,
    scaling_study,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _add_common(sp: argparse.ArgumentParser, with_grid: bool = True) -> None:
    sp.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    sp.add_argument("--seed", type=int, default=None, help="override config seed")
    sp.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: NVCROSS_THREADS or all)")
    sp.add_argument("--b-z-mT", type=float, default=None, help="external axial field")
    sp.add_argument("--b-perp-mT", type=float, default=None,
                    help="external transverse field")
    sp.add_argument("--phi0-deg", type=float, default=None,
                    help="transverse-field azimuth")
    sp.add_argument("--gamma-mT", type=float, default=None, help="dip half-width")
    sp.add_argument("--contrast", type=float, default=None, help="single-dip contrast")
    sp.add_argument("--sigma-noise", type=float, default=None,
                    help="PL noise std used in the likelihood")
    if with_grid:
        sp.add_argument("--bias-min-mT", type=float, default=None)
        sp.add_argument("--bias-max-mT", type=float, default=None)
        sp.add_argument("--n-bias", type=int, default=None)
        sp.add_argument("--n-phi", type=int, default=None)


def _load_config(args) -> RunConfig:
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"{args.config}: file not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: config root must be a JSON object")
    else:
        raw = {}

    def section(name):
        raw.setdefault(name, {})
        return raw[name]

    if args.seed is not None:
        raw["seed"] = args.seed
    if args.b_z_mT is not None:
        section("field")["b_z_T"] = args.b_z_mT * 1e-3
    if args.b_perp_mT is not None:
        section("field")["b_perp_T"] = args.b_perp_mT * 1e-3
    if args.phi0_deg is not None:
        section("field")["phi0_rad"] = math.radians(args.phi0_deg)
    if args.gamma_mT is not None:
        section("lineshape")["gamma_T"] = args.gamma_mT * 1e-3
    if args.contrast is not None:
        section("lineshape")["contrast"] = args.contrast
    if args.sigma_noise is not None:
        section("noise")["sigma_noise"] = args.sigma_noise
    if getattr(args, "bias_min_mT", None) is not None:
        section("grid")["bias_min_T"] = args.bias_min_mT * 1e-3
    if getattr(args, "bias_max_mT", None) is not None:
        section("grid")["bias_max_T"] = args.bias_max_mT * 1e-3
    if getattr(args, "n_bias", None) is not None:
        section("grid")["n_bias"] = args.n_bias
    if getattr(args, "n_phi", None) is not None:
        section("grid")["n_phi"] = args.n_phi
    try:
        cfg = data_io.parse_config(raw)
    except ConfigError as exc:
        name = args.config if args.config is not None else "<flags>"
        raise ConfigError(f"{name}: {exc}") from None
    return cfg


def _noise_model(cfg: RunConfig) -> NoiseModel:
    return NoiseModel(
        sigma_noise=cfg.noise_sigma,
        sigma_bias=cfg.noise_sigma_bias,
        sigma_phi=cfg.noise_sigma_phi,
    )


def _inference_options(cfg: RunConfig, args) -> InferenceOptions:
    kwargs = {}
    inf_cfg = cfg.inference
    if "mode_threshold" in inf_cfg:
        kwargs["mode_threshold"] = float(inf_cfg["mode_threshold"])
    if "max_candidates" in inf_cfg:
        kwargs["max_candidates"] = int(inf_cfg["max_candidates"])
    if "patch_points" in inf_cfg:
        kwargs["patch_points"] = int(inf_cfg["patch_points"])
    threads = args.threads if args.threads is not None else inf_cfg.get("threads")
    kwargs["threads"] = resolve_threads(threads)
    return InferenceOptions(**kwargs)


def _orientation_space(cfg: RunConfig) -> ParamSpace:
    inf_cfg = cfg.inference
    return ParamSpace.orientation(
        n_alpha=int(inf_cfg.get("n_alpha", 72)),
        n_beta=int(inf_cfg.get("n_beta", 24)),
        n_zeta=int(inf_cfg.get("n_zeta", 24)),
    )


def _field_space(cfg: RunConfig, data: PLMap) -> ParamSpace:
    inf_cfg = cfg.inference
    b = data.grid.bias_values
    span = float(b[-1] - b[0]) if b.size > 1 else 2e-3
    b_z_range = (
        float(inf_cfg.get("b_z_min_T", -0.5 * span)),
        float(inf_cfg.get("b_z_max_T", 0.5 * span)),
    )
    b_perp_range = (
        float(inf_cfg.get("b_perp_min_T", 0.0)),
        float(inf_cfg.get("b_perp_max_T", 0.5 * span)),
    )
    phi0_range = None
    if "phi0_min_rad" in inf_cfg or "phi0_max_rad" in inf_cfg:
        phi0_range = (
            float(inf_cfg.get("phi0_min_rad", 0.0)),
            float(inf_cfg.get("phi0_max_rad", 2.0 * math.pi)),
        )
    return ParamSpace.field(
        b_z_range=b_z_range,
        b_perp_range=b_perp_range,
        n_b_z=int(inf_cfg.get("n_b_z", 81)),
        n_b_perp=int(inf_cfg.get("n_b_perp", 61)),
        n_phi0=int(inf_cfg.get("n_phi0", 72)),
        phi0_range=phi0_range,
    )


def _write_sidecar(primary: Path, started: float, extra: dict | None = None) -> None:
    meta = {
        "created_unix": time.time(),
        "duration_s": time.time() - started,
        "nvcross_version": __version__,
    }
    if extra:
        meta.update(extra)
    Path(str(primary) + ".meta.json").write_text(
        json.dumps(meta, indent=1) + "\n", encoding="utf-8"
    )


def _cmd_simulate(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    params = cfg.model_params()
    plmap = data_io.synthesize_pl_map(params, cfg.grid, cfg.synthesis_sigma, cfg.seed)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    data_io.write_pl_map(out, plmap)
    _write_sidecar(out, started)
    nb, nphi = plmap.grid.shape
    print(f"simulated PL map: {nb} bias x {nphi} phi grid points")
    print(f"wrote {out}")
    return EXIT_OK


def _write_inference_outputs(
    outdir: Path, post, mode: str, cfg: RunConfig, started: float
) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    doc = data_io.results_from_posterior(post, mode, cfg.seed, cfg.echo)
    results_path = outdir / "results.json"
    data_io.write_results(results_path, doc)
    for name, marg in post.marginals.items():
        lines = [f"{name},density"]
        lines += [f"{x:.16e},{y:.16e}" for x, y in zip(marg.x, marg.density)]
        (outdir / f"marginal_{name}.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )
    _write_sidecar(results_path, started)
    for i, m in enumerate(post.modes):
        sig = {
            k: math.sqrt(max(m.covariance[j, j], 0.0))
            for j, k in enumerate(m.point)
        }
        desc = ", ".join(f"{k}={v:.6g} +- {sig[k]:.2g}" for k, v in m.point.items())
        print(f"mode {i}: {desc} (mass {m.mass_fraction:.3f})")
    print(f"wrote {results_path}")


def _cmd_infer_orientation(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    cfg.require_explicit_lineshape()
    data = data_io.read_pl_map(args.data, args.renormalize_percentile)
    post = infer_orientation(
        data, cfg.field, cfg.lineshape, _noise_model(cfg),
        space=_orientation_space(cfg), options=_inference_options(cfg, args),
    )
    _write_inference_outputs(Path(args.output_dir), post, "orientation", cfg, started)
    return EXIT_OK


def _cmd_infer_field(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    cfg.require_explicit_lineshape()
    if cfg.orientation is None:
        raise ConfigError("orientation: section is required for infer-field")
    data = data_io.read_pl_map(args.data, args.renormalize_percentile)
    post = infer_field(
        data, cfg.orientation, cfg.lineshape, _noise_model(cfg),
        space=_field_space(cfg, data), options=_inference_options(cfg, args),
    )
    _write_inference_outputs(Path(args.output_dir), post, "field", cfg, started)
    return EXIT_OK


def _cmd_scaling(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    cfg.require_explicit_lineshape()
    if cfg.orientation is None:
        raise ConfigError("orientation: section is required for scaling")
    data = data_io.read_pl_map(args.data, args.renormalize_percentile)
    Ns = (
        [int(v) for v in args.Ns.split(",")]
        if args.Ns is not None
        else [int(v) for v in cfg.scaling["Ns"]]
    )
    reps = args.reps if args.reps is not None else int(cfg.scaling["repetitions"])
    rows = scaling_study(
        data, cfg.orientation, cfg.lineshape, _noise_model(cfg),
        Ns=Ns, repetitions=reps, seed=cfg.seed,
        space=_field_space(cfg, data), options=_inference_options(cfg, args),
    )
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    out = outdir / "scaling.csv"
    lines = ["N,mean_width,std_width"]
    lines += [
        f"{r['N']},{r['mean_width']:.16e},{r['std_width']:.16e}" for r in rows
    ]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_sidecar(out, started)
    for r in rows:
        print(f"N={r['N']}: width {r['mean_width']:.4g} +- {r['std_width']:.2g}")
    print(f"wrote {out}")
    return EXIT_OK


def _export_map(plmap: PLMap, outdir: Path) -> Path:
    """Gnuplot nonuniform-matrix export: row 0 holds the phi axis, column 0
    the bias axis."""
    b = plmap.grid.bias_values
    phi = plmap.grid.phi_values
    lines = [
        " ".join([str(phi.size)] + [f"{v:.16e}" for v in phi])
    ]
    for i in range(b.size):
        lines.append(
            " ".join([f"{b[i]:.16e}"] + [f"{v:.16e}" for v in plmap.values[i]])
        )
    out = outdir / "map_matrix.dat"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def _export_results(doc: data_io.ResultsDocument, outdir: Path) -> list[Path]:
    written = []
    for name, marg in sorted(doc.marginals.items()):
        lines = [f"{name},density"]
        lines += [
            f"{x:.16e},{y:.16e}" for x, y in zip(marg["x"], marg["density"])
        ]
        p = outdir / f"marginal_{name}.csv"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(p)
    lines = ["# posterior modes"]
    for i, m in enumerate(doc.modes):
        names = list(m["point"])
        lines.append(f"# mode {i}: mass_fraction={m['mass_fraction']:.6g}")
        lines.append("parameter,value,sigma")
        for name in names:
            lines.append(f"{name},{m['point'][name]:.16e},{m['sigma'][name]:.16e}")
    p = outdir / "modes.txt"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(p)
    return written


def _cmd_export_plot(args) -> int:
    path = Path(args.input)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        first = path.read_text(encoding="utf-8").lstrip().splitlines()[0]
    except (OSError, IndexError):
        raise PLMapFormatError(f"{path}: cannot read input") from None
    if first.strip() == data_io.PLMAP_VERSION_LINE:
        out = _export_map(data_io.read_pl_map(path), outdir)
        print(f"wrote {out}")
        return EXIT_OK
    try:
        doc = data_io.read_results(path)
    except (json.JSONDecodeError, TypeError):
        raise PLMapFormatError(
            f"{path}: neither an nv-plmap v1 file nor a results document"
        ) from None
    for p in _export_results(doc, outdir):
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_verify_oracle(args) -> int:
    report = spin_oracle.run_plane_sweep(args.trials, seed=args.seed)
    generic = spin_oracle.run_generic_rejection_sweep(args.trials, seed=args.seed + 1)
    for entry in report["planes"]:
        print(
            f"plane {entry['plane']}: {entry['passes']}/{args.trials} degeneracy "
            f"passes ({entry['failures']} failures)"
        )
    print(
        f"generic off-plane rejection: {generic['passes']}/{args.trials} passes "
        f"({generic['failures']} failures)"
    )
    failures = report["total_failures"] + generic["failures"]
    print(f"total: {report['total_passes'] + generic['passes']} passes, "
          f"{failures} failures")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nvcross",
        description="Microwave-free NV magnetometry: simulate cross-relaxation "
        "PL maps and invert them for crystal orientation or field vector.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="synthesize a PL map from a config")
    _add_common(sp)
    sp.add_argument("--output", type=Path, required=True, help="output .plmap path")
    sp.set_defaults(func=_cmd_simulate)

    for name, fn, help_text in (
        ("infer-orientation", _cmd_infer_orientation,
         "recover crystal orientation from a PL map"),
        ("infer-field", _cmd_infer_field,
         "recover the external field vector from a PL map"),
    ):
        sp = sub.add_parser(name, help=help_text)
        _add_common(sp, with_grid=False)
        sp.add_argument("--data", type=Path, required=True, help="input .plmap file")
        sp.add_argument("--output-dir", type=Path, required=True)
        sp.add_argument("--renormalize-percentile", type=float, default=None,
                        help="divide PL by this percentile on load")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("scaling", help="posterior width vs number of traces")
    _add_common(sp, with_grid=False)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--output-dir", type=Path, required=True)
    sp.add_argument("--Ns", type=str, default=None, help="comma-separated trace counts")
    sp.add_argument("--reps", type=int, default=None)
    sp.add_argument("--renormalize-percentile", type=float, default=None)
    sp.set_defaults(func=_cmd_scaling)

    sp = sub.add_parser("export-plot", help="emit plot-ready tables from a map "
                        "or results file")
    sp.add_argument("--input", type=Path, required=True)
    sp.add_argument("--output-dir", type=Path, required=True)
    sp.set_defaults(func=_cmd_export_plot)

    sp = sub.add_parser("verify-oracle", help="check resonance planes against "
                        "exact spin-1 transition energies")
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=1)
    sp.set_defaults(func=_cmd_verify_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PLMapFormatError) as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
