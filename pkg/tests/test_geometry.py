import math

import numpy as np
import pytest

from helpers import SOLUTION_1, SOLUTION_2, random_rotation
from nvcross import geometry as geo

TWO_PI = 2.0 * math.pi


def test_nv_axes_geometry():
    axes = geo.nv_axes()
    assert axes.shape == (4, 3)
    for i in range(4):
        assert abs(np.linalg.norm(axes[i]) - 1.0) < 1e-15
        for j in range(i + 1, 4):
            assert abs(axes[i] @ axes[j] + 1.0 / 3.0) < 1e-15
    assert np.abs(axes.sum(axis=0)).max() < 1e-15


def test_nv_axes_fixed_order():
    axes = geo.nv_axes() * math.sqrt(3.0)
    expected = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
    )
    assert np.allclose(axes, expected, atol=1e-15)


def test_rotation_quarter_turn_about_z():
    R = geo.rotation_about_axis(geo.AXIS_Z, math.pi / 2)
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_rotation_zero_angle_is_identity():
    R = geo.rotation_about_axis(geo.AXIS_Z, 0.0)
    assert np.allclose(R, np.eye(3), atol=1e-15)


def test_rotation_about_111_cycles_cartesian_axes():
    # Rodrigues by hand: a 2*pi/3 turn about (1,1,1)/sqrt(3) permutes
    # x -> y -> z -> x.
    R = geo.rotation_about_axis(geo.AXIS_111, 2.0 * math.pi / 3.0)
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    assert np.allclose(R @ [0, 1, 0], [0, 0, 1], atol=1e-15)
    assert np.allclose(R @ [0, 0, 1], [1, 0, 0], atol=1e-15)


def test_rotation_rejects_non_unit_axis():
    with pytest.raises(ValueError):
        geo.rotation_about_axis([1.0, 1.0, 0.0], 0.3)


def test_rotation_fixes_axis(rng):
    for _ in range(20):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        R = geo.rotation_about_axis(v, rng.uniform(-math.pi, math.pi))
        assert np.allclose(R @ v, v, atol=1e-14)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-14


def test_orientation_matrix_identity():
    assert np.allclose(geo.orientation_matrix(0, 0, 0), np.eye(3), atol=1e-15)


def test_orientation_matrix_alpha_fixes_z():
    for alpha in (0.3, 1.7, 4.0):
        O = geo.orientation_matrix(alpha, 0.0, 0.0)
        assert np.allclose(O @ [0, 0, 1], [0, 0, 1], atol=1e-15)


def test_orientation_matrix_beta_tilts_z_by_theta_c():
    O = geo.orientation_matrix(0.0, geo.THETA_C, 0.0)
    cos_angle = float((O @ [0, 0, 1]) @ [0, 0, 1])
    assert abs(math.acos(cos_angle) - geo.THETA_C) < 1e-12


def test_theta_c_value():
    assert geo.THETA_C == math.acos(1.0 / math.sqrt(3.0))


def test_symmetry_group_order_and_identity():
    G = geo.symmetry_group()
    assert G.shape == (24, 3, 3)
    assert np.array_equal(G[0], np.eye(3))


def test_symmetry_group_signed_permutations():
    for g in geo.symmetry_group():
        assert np.all(np.isin(g, (-1.0, 0.0, 1.0)))
        assert np.all(np.abs(g).sum(axis=0) == 1)
        assert np.all(np.abs(g).sum(axis=1) == 1)
        assert abs(np.linalg.det(g) - 1.0) < 1e-12


def test_symmetry_group_axioms():
    G = geo.symmetry_group()
    keys = {tuple(g.astype(int).ravel()) for g in G}
    assert len(keys) == 24
    for g in G:
        assert tuple((g.T).astype(int).ravel()) in keys  # inverse of a rotation
        for h in G:
            assert tuple((g @ h).astype(int).ravel()) in keys  # closure


def test_symmetry_group_permutes_nv_axes():
    axes = geo.nv_axes()
    signed = np.concatenate([axes, -axes])
    for g in geo.symmetry_group():
        for n in axes:
            image = g @ n
            assert np.min(np.linalg.norm(signed - image, axis=1)) < 1e-14


def test_symmetry_group_rotation_inventory():
    # Eight +-2pi/3 turns, nine Cartesian pi/2-family turns (six quarter
    # turns plus three half turns), six diagonal pi turns, identity.
    angles = [geo.rotation_angle(g) for g in geo.symmetry_group()]
    counts = {
        "identity": sum(1 for a in angles if abs(a) < 1e-12),
        "quarter": sum(1 for a in angles if abs(a - math.pi / 2) < 1e-12),
        "third": sum(1 for a in angles if abs(a - 2 * math.pi / 3) < 1e-12),
        "half": sum(1 for a in angles if abs(a - math.pi) < 1e-12),
    }
    assert counts == {"identity": 1, "quarter": 6, "third": 8, "half": 9}


def test_orientations_equivalent_reflexive(rng):
    O = random_rotation(rng)
    assert geo.orientations_equivalent(O, O, 1e-12)


def test_published_solution_pair_is_equivalent():
    O1 = geo.orientation_matrix(*SOLUTION_1)
    O2 = geo.orientation_matrix(*SOLUTION_2)
    assert geo.orientations_equivalent(O1, O2, 5e-3)


def test_generic_z_rotation_not_absorbed_by_group():
    # No group element turns a 0.3 rad z-rotation into the identity.
    assert not geo.orientations_equivalent(
        np.eye(3), geo.rotation_about_axis(geo.AXIS_Z, 0.3), 1e-6
    )


def test_canonicalize_identity_contains_origin():
    reps = geo.canonicalize(np.eye(3))
    best = min(
        abs(r.alpha % TWO_PI) + abs(r.beta) + abs(r.zeta % TWO_PI) for r in reps
    )
    assert best < 1e-12


def test_canonicalize_recovers_published_pair():
    reps = geo.canonicalize(geo.orientation_matrix(*SOLUTION_1))
    assert len(reps) == 2
    found = {tuple(np.round(r.angles(), 3)) for r in reps}
    for target in (SOLUTION_1, SOLUTION_2):
        assert any(
            max(abs(np.array(t) - np.array(target))) < 5e-3 for t in found
        ), f"missing representative near {target}"


def test_canonicalize_roundtrip_random(rng):
    for _ in range(300):
        O = random_rotation(rng)
        reps = geo.canonicalize(O)
        assert reps
        G = geo.symmetry_group()
        for r in reps:
            recomposed = geo.orientation_matrix(r.alpha, r.beta, r.zeta)
            diff = np.abs(G @ O - recomposed[None]).max(axis=(1, 2))
            assert diff.min() < 1e-9
            assert 0.0 <= r.alpha < TWO_PI
            assert -1e-12 <= r.beta <= geo.THETA_C + 1e-12
            assert 0.0 <= r.zeta < TWO_PI / 3.0


def test_canonicalize_idempotent(rng):
    for _ in range(25):
        O = random_rotation(rng)
        reps = geo.canonicalize(O)
        triples = sorted(tuple(r.angles()) for r in reps)
        for r in reps:
            again = sorted(tuple(x.angles()) for x in geo.canonicalize(r.matrix))
            assert len(again) == len(triples)
            for a, b in zip(again, triples):
                assert max(abs(np.array(a) - np.array(b))) < 1e-8


def test_decompose_roundtrip_interior(rng):
    for _ in range(300):
        alpha = rng.uniform(0.05, TWO_PI - 0.05)
        beta = rng.uniform(0.02, geo.THETA_C - 0.02)
        zeta = rng.uniform(0.02, TWO_PI / 3.0 - 0.02)
        a, b, z = geo.decompose_orientation(geo.orientation_matrix(alpha, beta, zeta))
        assert abs(a - alpha) < 1e-9
        assert abs(b - beta) < 1e-9
        assert abs((z - zeta + math.pi) % TWO_PI - math.pi) < 1e-9


def test_decompose_handles_degenerate_pole():
    # beta = THETA_C maps the lab z axis onto [111]; the convention folds
    # the remaining freedom into alpha with zeta = 0.
    O = geo.orientation_matrix(1.234, geo.THETA_C, 0.777)
    a, b, z = geo.decompose_orientation(O)
    assert z == 0.0
    recomposed = geo.orientation_matrix(a, b, z)
    assert np.abs(recomposed - O).max() < 1e-9


def test_projection_multiset_invariance(rng):
    axes = geo.nv_axes()
    for g in geo.symmetry_group():
        B = rng.normal(size=3) * 3e-3
        before = np.sort(np.abs(axes @ B))
        after = np.sort(np.abs(axes @ (g @ B)))
        assert np.abs(before - after).max() < 1e-12


def test_orientation_from_z_axis():
    for d in ([1, 0, 0], [1, 1, 0], [1, 1, 1], [1, 2, 3], [0, 0, -1]):
        R = geo.orientation_from_z_axis(d)
        want = np.asarray(d, dtype=float)
        want /= np.linalg.norm(want)
        assert np.allclose(R @ [0, 0, 1], want, atol=1e-12)
    with pytest.raises(ValueError):
        geo.orientation_from_z_axis([0, 0, 0])


def test_orientation_dataclass_matrix_consistency():
    o = geo.Orientation(*SOLUTION_1)
    assert np.abs(o.matrix - geo.orientation_matrix(*SOLUTION_1)).max() < 1e-15
    o2 = geo.Orientation.from_matrix(o.matrix)
    assert geo.orientations_equivalent(o.matrix, o2.matrix, 1e-9)
