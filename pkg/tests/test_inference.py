import math
import warnings

import numpy as np
import pytest

from helpers import (
    FIELD_TRUTH,
    SIGMA_BIAS,
    SIGMA_NOISE,
    SIGMA_PHI,
    SOLUTION_1,
    make_grid,
    make_params,
    phi_axis,
    synthetic_map,
)
from nvcross import forward_model as fm
from nvcross import geometry as geo
from nvcross import inference as inf


def small_field_space(n_b_z=15, n_b_perp=13, n_phi0=18):
    return inf.ParamSpace.field(
        b_z_range=(0.9e-3, 1.45e-3),
        b_perp_range=(0.55e-3, 1.1e-3),
        n_b_z=n_b_z,
        n_b_perp=n_b_perp,
        n_phi0=n_phi0,
        phi0_range=(0.2, 1.3),
    )


def field_setup(sigma=0.0, seed=0, n_bias=77, n_phi=24):
    params = make_params(b_z=FIELD_TRUTH[0], b_perp=FIELD_TRUTH[1], phi0=FIELD_TRUTH[2])
    grid = make_grid(n_bias, n_phi)
    data = synthetic_map(params, grid, sigma=sigma, seed=seed)
    return params, data


# ---------------------------------------------------------------------------
# effective variance and likelihood


def test_fd_steps_uniform_axis():
    x = np.linspace(0.0, 1.0, 11)
    h = inf.fd_steps(x, 1.0)
    assert np.allclose(h, 0.05, atol=1e-15)


def test_fd_steps_single_point_fallback():
    assert inf.fd_steps(np.array([0.3]), 0.02)[0] == 0.02


def test_effective_variance_flat_region():
    # axial field far out on the tails: PL is exactly flat in phi and its
    # bias slope is down by (Gamma/delta)^3, so the propagated terms vanish
    params = make_params(angles=(0.0, 0.0, 0.0), b_z=0.0, b_perp=0.0)
    noise = inf.NoiseModel(SIGMA_NOISE, SIGMA_BIAS, SIGMA_PHI)
    var = inf.effective_variance(params, (20e-3, 0.7), noise, (5e-5, 5e-3))
    assert abs(var - SIGMA_NOISE**2) < 1e-12


def test_effective_variance_collapses_without_axis_noise():
    params = make_params()
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    var = inf.effective_variance(params, (0.5e-3, 1.0), noise, (1e-6, 1e-4))
    assert var == SIGMA_NOISE**2


def test_effective_variance_requires_positive_steps():
    params = make_params()
    noise = inf.NoiseModel(SIGMA_NOISE, SIGMA_BIAS, SIGMA_PHI)
    with pytest.raises(ValueError):
        inf.effective_variance(params, (0.0, 0.0), noise, (0.0, 1e-4))


def analytic_bias_derivative(b, phi, params):
    """Chain rule through the Lorentzian sum: the bias enters every delta
    through the third column of the orientation matrix."""
    O = params.orientation.matrix
    B_lab = fm.total_lab_field(params.field, b)
    B_s = O @ geo.rotation_z(-phi) @ B_lab
    dB = O @ np.array([0.0, 0.0, 1.0])
    deltas, w = fm.resonance_deltas(B_s)
    ddelta = np.array(
        [
            dB[0] - dB[1], dB[0] + dB[1], dB[0] - dB[2], dB[0] + dB[2],
            dB[1] - dB[2], dB[1] + dB[2], dB[0], dB[1], dB[2],
        ]
    )
    g2 = params.lineshape.gamma ** 2
    dL = -2.0 * g2 * deltas / (deltas**2 + g2) ** 2
    return -params.lineshape.contrast * float(np.sum(w * dL * ddelta))


def test_variance_derivative_matches_analytic_on_flank():
    # on a dip flank the finite difference at h = Gamma/100 agrees with the
    # analytic Lorentzian derivative to better than 1%
    params = make_params(angles=(0.0, 0.0, 0.0), b_z=0.0, b_perp=0.0)
    gamma = params.lineshape.gamma
    b, phi = gamma, 0.0  # flank of the axial resonance
    h = gamma / 100.0
    fd = (
        fm.pl_value(b + h, phi, params) - fm.pl_value(b - h, phi, params)
    ) / (2.0 * h)
    exact = analytic_bias_derivative(b, phi, params)
    assert abs(fd - exact) <= 0.01 * abs(exact)
    noise = inf.NoiseModel(SIGMA_NOISE, SIGMA_BIAS, 0.0)
    var = inf.effective_variance(params, (b, phi), noise, (h, 1e-4))
    expected = SIGMA_NOISE**2 + (exact * SIGMA_BIAS) ** 2
    assert abs(var - expected) <= 0.02 * (expected - SIGMA_NOISE**2)
    assert var > SIGMA_NOISE**2


def test_log_likelihood_zero_residual():
    params, data = field_setup(sigma=0.0)
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    n = data.values.size
    expected = -0.5 * n * math.log(2.0 * math.pi * SIGMA_NOISE**2)
    assert abs(inf.log_likelihood(params, data, noise) - expected) < 1e-9 * abs(expected)


def test_log_likelihood_matches_kernel_path():
    params, data = field_setup(sigma=SIGMA_NOISE, seed=3)
    noise = inf.NoiseModel(SIGMA_NOISE, SIGMA_BIAS, SIGMA_PHI)
    ref = inf.log_likelihood(params, data, noise)
    space = small_field_space()
    obj = inf._Objective(space, data, noise, params.lineshape,
                         orientation=params.orientation)
    got = float(obj(np.array([[FIELD_TRUTH[0], FIELD_TRUTH[1], FIELD_TRUTH[2]]])))
    assert abs(got - ref) < 1e-8 * abs(ref)

    ospace = inf.ParamSpace.orientation()
    obj2 = inf._Objective(ospace, data, noise, params.lineshape,
                          field_params=params.field)
    got2 = float(obj2(np.array([SOLUTION_1])))
    assert abs(got2 - ref) < 1e-8 * abs(ref)


def test_reduced_chi_square_concentration():
    # i.i.d. noise at the likelihood's sigma_noise: chi^2/N near 1
    params, data = field_setup(sigma=SIGMA_NOISE, seed=11, n_bias=77, n_phi=36)
    noise = inf.NoiseModel(SIGMA_NOISE, SIGMA_BIAS, SIGMA_PHI)
    grid = data.grid
    model = fm.pl_map(grid, params).values
    hb = inf.fd_steps(grid.bias_values, 1.0)
    hphi = inf.fd_steps(grid.phi_values, 1.0)
    var = np.empty(grid.shape)
    for i, b in enumerate(grid.bias_values):
        for j, phi in enumerate(grid.phi_values):
            var[i, j] = inf.effective_variance(
                params, (b, phi), noise, (hb[i], hphi[j])
            )
    r = data.values - model
    n = r.size
    assert n >= 1000
    chi2 = float(np.sum(r * r / var)) / n
    assert 0.8 <= chi2 <= 1.2


def test_log_likelihood_drops_far_from_truth():
    params, data = field_setup(sigma=SIGMA_NOISE, seed=5)
    noise = inf.NoiseModel(SIGMA_NOISE, SIGMA_BIAS, SIGMA_PHI)
    at_truth = inf.log_likelihood(params, data, noise)
    shifted = fm.ModelParams(
        params.orientation,
        fm.ExternalFieldParams(
            b_z=params.field.b_z + 10 * params.lineshape.gamma,
            b_perp=params.field.b_perp,
            phi0=params.field.phi0,
        ),
        params.lineshape,
    )
    assert at_truth - inf.log_likelihood(shifted, data, noise) > 100.0


def test_likelihood_invariant_under_symmetry_group():
    params, data = field_setup(sigma=SIGMA_NOISE, seed=8)
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    ref = inf.log_likelihood(params, data, noise)
    for g in geo.symmetry_group()[::5]:
        angles = geo.decompose_orientation(g @ params.orientation.matrix)
        p2 = fm.ModelParams(geo.Orientation(*angles), params.field, params.lineshape)
        assert abs(inf.log_likelihood(p2, data, noise) - ref) <= 1e-9 * abs(ref)


# ---------------------------------------------------------------------------
# posterior evaluation


def test_param_space_validation():
    with pytest.raises(ValueError):
        inf.ParamSpace.field(b_z_range=(0, 1e-3), b_perp_range=(-1e-3, 1e-3))
    with pytest.raises(ValueError):
        inf.ParamAxis("x", 1.0, 0.0, 10)
    with pytest.raises(ValueError):
        inf.ParamAxis("x", 0.0, 1.0, 2)
    space = inf.ParamSpace.orientation()
    assert space.axes[0].upper == 2 * math.pi
    assert space.axes[1].upper == geo.THETA_C
    assert abs(space.axes[2].upper - 2 * math.pi / 3) < 1e-15
    assert [ax.n_coarse for ax in space.axes] == [72, 24, 24]


def test_field_inference_noiseless_roundtrip():
    params, data = field_setup(sigma=0.0)
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    post = inf.infer_field(data, params.orientation, params.lineshape, noise,
                           space=small_field_space())
    assert len(post.modes) == 1
    p = post.map_point
    assert abs(p["b_z"] - FIELD_TRUTH[0]) < 5e-7
    assert abs(p["b_perp"] - FIELD_TRUTH[1]) < 5e-7
    assert abs(p["phi0"] - FIELD_TRUTH[2]) < 5e-4
    for marg in post.marginals.values():
        assert abs(marg.integral() - 1.0) < 1e-6


def test_orientation_inference_noiseless_roundtrip():
    params = make_params()
    grid = make_grid(77, 24)
    data = synthetic_map(params, grid, sigma=0.0)
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    post = inf.infer_orientation(data, params.field, params.lineshape, noise)
    reps = geo.canonicalize(params.orientation.matrix)
    assert len(post.modes) == len(reps)
    for mode in post.modes:
        best = min(
            max(
                abs(mode.point["alpha"] - r.alpha),
                abs(mode.point["beta"] - r.beta),
                abs(mode.point["zeta"] - r.zeta),
            )
            for r in reps
        )
        assert best < 1e-3
    for marg in post.marginals.values():
        assert abs(marg.integral() - 1.0) < 1e-6


def test_posterior_bias_translation_covariance():
    # synthesizing with b_z = v + delta shifts the b_z MAP by delta and
    # leaves the other parameters unchanged within refinement resolution
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    grid = make_grid(77, 18)
    delta = 0.12e-3
    maps = []
    for bz in (FIELD_TRUTH[0], FIELD_TRUTH[0] + delta):
        params = make_params(b_z=bz, b_perp=FIELD_TRUTH[1], phi0=FIELD_TRUTH[2])
        data = synthetic_map(params, grid, sigma=0.0)
        post = inf.infer_field(
            data, params.orientation, params.lineshape, noise,
            space=inf.ParamSpace.field(
                b_z_range=(0.9e-3, 1.6e-3), b_perp_range=(0.55e-3, 1.1e-3),
                n_b_z=17, n_b_perp=13, n_phi0=18, phi0_range=(0.2, 1.3),
            ),
        )
        maps.append(post.map_point)
    assert abs((maps[1]["b_z"] - maps[0]["b_z"]) - delta) < 1e-6
    assert abs(maps[1]["b_perp"] - maps[0]["b_perp"]) < 1e-6
    assert abs(maps[1]["phi0"] - maps[0]["phi0"]) < 1e-3


def test_posterior_azimuth_covariance():
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    grid = make_grid(77, 18)
    delta = 0.31
    maps = []
    for phi0 in (FIELD_TRUTH[2], FIELD_TRUTH[2] + delta):
        params = make_params(b_z=FIELD_TRUTH[0], b_perp=FIELD_TRUTH[1], phi0=phi0)
        data = synthetic_map(params, grid, sigma=0.0)
        post = inf.infer_field(
            data, params.orientation, params.lineshape, noise,
            space=small_field_space(),
        )
        maps.append(post.map_point)
    assert abs((maps[1]["phi0"] - maps[0]["phi0"]) - delta) < 1e-3
    assert abs(maps[1]["b_z"] - maps[0]["b_z"]) < 1e-6
    assert abs(maps[1]["b_perp"] - maps[0]["b_perp"]) < 1e-6


def test_posterior_deterministic_across_thread_counts():
    params, data = field_setup(sigma=SIGMA_NOISE, seed=21)
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    posts = [
        inf.infer_field(
            data, params.orientation, params.lineshape, noise,
            space=small_field_space(),
            options=inf.InferenceOptions(threads=t),
        )
        for t in (1, 2)
    ]
    a, b = posts
    assert np.array_equal(a.log_density, b.log_density)
    assert len(a.modes) == len(b.modes)
    for ma, mb in zip(a.modes, b.modes):
        assert ma.point == mb.point
        assert ma.log_density == mb.log_density
    for name in a.marginals:
        assert np.array_equal(a.marginals[name].x, b.marginals[name].x)
        assert np.array_equal(a.marginals[name].density, b.marginals[name].density)


def test_infer_field_warns_near_symmetry_axis():
    params, data = field_setup(sigma=0.0, n_bias=31, n_phi=8)
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    space = small_field_space(n_b_z=7, n_b_perp=7, n_phi0=9)
    O111 = geo.orientation_from_z_axis([1, 1, 1])
    with pytest.warns(UserWarning, match="high-symmetry"):
        inf.infer_field(data, O111, params.lineshape, noise, space=space)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        inf.infer_field(data, params.orientation, params.lineshape, noise, space=space)


def test_single_trace_inference_has_finite_widths():
    # N = 1: a single angle trace still yields a finite-width posterior
    params = make_params(b_z=FIELD_TRUTH[0], b_perp=FIELD_TRUTH[1], phi0=FIELD_TRUTH[2])
    grid = fm.MeasurementGrid(np.linspace(-4e-3, 4e-3, 77), np.array([phi_axis(24)[5]]))
    data = synthetic_map(params, grid, sigma=SIGMA_NOISE, seed=13)
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    post = inf.infer_field(data, params.orientation, params.lineshape, noise,
                           space=small_field_space())
    for marg in post.marginals.values():
        assert np.isfinite(marg.std()) and marg.std() > 0
        assert abs(marg.integral() - 1.0) < 1e-6


def test_scaling_study_determinism_and_validation():
    params, data = field_setup(sigma=SIGMA_NOISE, seed=30, n_bias=41, n_phi=12)
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    space = small_field_space(n_b_z=9, n_b_perp=9, n_phi0=12)
    kwargs = dict(Ns=[2, 4], repetitions=2, seed=77, space=space)
    rows1 = inf.scaling_study(data, params.orientation, params.lineshape, noise, **kwargs)
    rows2 = inf.scaling_study(data, params.orientation, params.lineshape, noise, **kwargs)
    assert rows1 == rows2
    assert rows1[0]["N"] == 2 and rows1[1]["N"] == 4
    with pytest.raises(ValueError):
        inf.scaling_study(data, params.orientation, params.lineshape, noise,
                          Ns=[13], repetitions=2, seed=1, space=space)
    with pytest.raises(ValueError):
        inf.scaling_study(data, params.orientation, params.lineshape, noise,
                          Ns=[2], repetitions=1, seed=1, space=space)


def test_evaluate_posterior_requires_fixed_component():
    params, data = field_setup(sigma=0.0, n_bias=31, n_phi=8)
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    with pytest.raises(ValueError):
        inf.evaluate_posterior(data, small_field_space(), noise, params.lineshape)
    with pytest.raises(ValueError):
        inf.evaluate_posterior(
            data, inf.ParamSpace.orientation(), noise, params.lineshape
        )


def test_mode_mass_fractions_sum_to_one():
    params = make_params()
    grid = make_grid(77, 24)
    data = synthetic_map(params, grid, sigma=SIGMA_NOISE, seed=2)
    noise = inf.NoiseModel(SIGMA_NOISE, 0.0, 0.0)
    post = inf.infer_orientation(data, params.field, params.lineshape, noise)
    total = sum(m.mass_fraction for m in post.modes)
    assert abs(total - 1.0) < 1e-9
    assert len(post.modes) == 2
    ratio = post.modes[0].mass_fraction / post.modes[1].mass_fraction
    assert 0.5 <= ratio <= 2.0
