import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import regular_polygon, rotation
from shapebag.contour import (
    IDENTITY_KERNEL,
    SmoothingKernel,
    contour_pyramid,
    correction_constant,
    curvature_at,
    curvatures,
    detect_keypoints,
    normal_at,
    smooth_corrected,
    smooth_once,
)
from shapebag.errors import GeometryError
from shapebag.imaging import BinaryMask, Contour, circumference, trace_boundaries

HAT = SmoothingKernel.from_weights([0.25, 0.5, 0.25])


def _circumradius(a, b, c):
    """R = abc / (4 * area), the textbook oracle."""
    la, lb, lc = np.linalg.norm(b - c), np.linalg.norm(a - c), np.linalg.norm(a - b)
    area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    return la * lb * lc / (4 * area)


def _wobbly(seed, n=96):
    rng = np.random.default_rng(seed)
    t = 2 * np.pi * np.arange(n) / n
    r = 30 * (1 + 0.2 * np.cos(3 * t + rng.uniform(0, 6)) + 0.1 * np.sin(5 * t + rng.uniform(0, 6)))
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1) + rng.uniform(-0.3, 0.3, (n, 2))


# ---------------------------------------------------------------- kernel


def test_gaussian_kernel_shape():
    k = SmoothingKernel.gaussian(2.0)
    assert k.half_width == 6
    assert abs(k.weights.sum() - 1) <= 1e-12
    np.testing.assert_array_equal(k.weights, k.weights[::-1])
    assert np.all(np.diff(k.weights[: k.half_width + 1]) > 0)


def test_kernel_validation():
    with pytest.raises(ValueError):
        SmoothingKernel.from_weights([0.2, 0.5, 0.2])
    with pytest.raises(ValueError):
        SmoothingKernel.from_weights([0.1, 0.5, 0.4])
    with pytest.raises(ValueError):
        SmoothingKernel.from_weights([-0.5, 2.0, -0.5])


# ---------------------------------------------------------------- smoothing


def test_smooth_once_square():
    sq = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], float)
    np.testing.assert_allclose(smooth_once(sq, HAT), sq / 2)


def test_identity_kernel_is_identity():
    v = _wobbly(0)
    np.testing.assert_array_equal(smooth_once(v, IDENTITY_KERNEL), v)
    np.testing.assert_array_equal(smooth_corrected(v, IDENTITY_KERNEL), v)


def test_smoothing_keeps_contour_type():
    c = Contour(_wobbly(1), "external")
    out = smooth_corrected(c, SmoothingKernel.gaussian(1.0))
    assert isinstance(out, Contour) and out.kind == "external" and len(out) == len(c)


def test_smooth_rejects_short_contour():
    with pytest.raises(GeometryError):
        smooth_once(regular_polygon(12), SmoothingKernel.gaussian(2.0))


def test_naive_smoothing_shrinks_monotonically():
    v = regular_polygon(360, 50)
    k = SmoothingKernel.gaussian(2.0)
    lengths = [circumference(v)]
    for _ in range(100):
        v = smooth_once(v, k)
        lengths.append(circumference(v))
    assert np.all(np.diff(lengths) < 0)


def test_correction_constant_examples():
    assert correction_constant(IDENTITY_KERNEL, 7).K == 1.0
    assert correction_constant(HAT, 4).K == pytest.approx(2.0, abs=1e-12)
    assert abs(correction_constant(HAT, 10**6).K - 1) < 1e-6
    sc = correction_constant(HAT, 8)
    assert sc.n_v == 8 and sc.phi == pytest.approx(np.pi / 4)


def test_correction_constant_rejects_wide_kernel():
    split = SmoothingKernel.from_weights([0.5, 0.0, 0.5])  # sum of cosines = cos(2 pi / 3) < 0
    with pytest.raises(GeometryError):
        correction_constant(split, 3)
    with pytest.raises(GeometryError):
        correction_constant(HAT, 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.3, 3.0), st.integers(32, 400))
def test_correction_constant_at_least_one(sigma, n_v):
    k = SmoothingKernel.gaussian(sigma)
    if n_v > 2 * k.half_width:
        assert correction_constant(k, n_v).K >= 1.0


@pytest.mark.parametrize("n", [32, 64, 128, 360])
@pytest.mark.parametrize("sigma", [1.0, 2.0])
def test_corrected_smoothing_preserves_circumference(n, sigma):
    v = regular_polygon(n, 40)
    k = SmoothingKernel.gaussian(sigma)
    c0 = circumference(v)
    for _ in range(100):
        v = smooth_corrected(v, k)
    assert abs(circumference(v) / c0 - 1) < 0.01


def test_noisy_circle_becomes_rounder():
    rng = np.random.default_rng(5)
    t = 2 * np.pi * np.arange(256) / 256
    r = 50 + rng.uniform(-1, 1, 256)
    v = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)

    def deviation(p):
        rad = np.hypot(*(p - p.mean(axis=0)).T)
        return np.max(np.abs(rad - rad.mean()))

    before = deviation(v)
    k = SmoothingKernel.gaussian(1.0)
    for _ in range(10):
        v = smooth_corrected(v, k)
    assert deviation(v) < before


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.5, 2.5))
def test_corrected_smoothing_preserves_centroid(seed, sigma):
    v = _wobbly(seed)
    out = smooth_corrected(v, SmoothingKernel.gaussian(sigma))
    np.testing.assert_allclose(out.mean(axis=0), v.mean(axis=0), atol=1e-9)


# ---------------------------------------------------------------- curvature


def test_curvature_examples():
    assert abs(curvature_at(np.array([[1, 0], [0, 1], [-1, 0]], float), 1)) == pytest.approx(1.0)
    assert curvature_at(np.array([[0, 0], [1, 0], [2, 0]], float), 1) == 0.0
    assert abs(curvature_at(np.array([[0, 0], [1, 0], [1, 1]], float), 1)) == pytest.approx(np.sqrt(2), rel=1e-12)


def test_curvature_rejects_duplicates():
    with pytest.raises(GeometryError):
        curvature_at(np.array([[0, 0], [0, 0], [1, 1]], float), 1)


def test_curvature_sign_convex_positive():
    ccw = regular_polygon(64, 10)
    assert np.all(curvatures(ccw) > 0)
    # a dent in an otherwise convex outline is concave
    v = regular_polygon(64, 10)
    v[10] *= 0.8
    assert curvatures(v)[10] < 0


@pytest.mark.parametrize("n", [64, 128, 256, 1024])
def test_curvature_matches_circle(n):
    r = 37.0
    v = regular_polygon(n, r, centre=(5.0, -3.0))
    kappa = curvatures(v)
    np.testing.assert_allclose(kappa, 1 / r, rtol=0.005)
    assert curvature_at(v, 3) == pytest.approx(1 / r, rel=0.005)


def test_curvature_matches_circumradius_oracle():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 1000:
        a, b, c = rng.uniform(-10, 10, (3, 2))
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) < 1e-3:
            continue
        k = curvature_at(np.array([a, b, c]), 1)
        assert abs(abs(k) * _circumradius(a, b, c) - 1) <= 1e-9
        assert np.sign(k) == np.sign(cross)
        checked += 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10.0))
def test_curvature_scales_inversely(seed, s):
    v = _wobbly(seed)
    np.testing.assert_allclose(curvatures(v * s), curvatures(v) / s, rtol=1e-9, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 2 * np.pi), st.floats(-100, 100), st.floats(-100, 100))
def test_curvature_and_normals_follow_rigid_motion(seed, theta, tx, ty):
    v = _wobbly(seed)
    rot = rotation(theta)
    w = v @ rot.T + [tx, ty]
    np.testing.assert_allclose(curvatures(w), curvatures(v), atol=1e-9)
    for i in (0, 17, 50):
        np.testing.assert_allclose(normal_at(w, w[i]), rot @ normal_at(v, v[i]), atol=1e-9)


# ---------------------------------------------------------------- normals


def test_normal_on_circle_is_radial():
    v = regular_polygon(256, 20)
    np.testing.assert_allclose(normal_at(v, (20.3, 0.1)), [1, 0], atol=1e-2)


def test_normal_on_square_edge():
    # counter-clockwise in (x, y); the edge at minimal y faces -y
    side = np.arange(10, dtype=float)
    sq = np.concatenate([
        np.stack([side, np.zeros(10)], 1),
        np.stack([np.full(10, 10.0), side], 1),
        np.stack([10 - side, np.full(10, 10.0)], 1),
        np.stack([np.zeros(10), 10 - side], 1),
    ])
    assert Contour(sq).area > 0
    np.testing.assert_allclose(normal_at(sq, (5, 0)), [0, -1], atol=1e-12)
    np.testing.assert_allclose(normal_at(sq, (10, 5)), [1, 0], atol=1e-12)


def test_normal_mirror_symmetry():
    v = _wobbly(3)
    mirrored = v * [-1, 1]
    mirrored = np.concatenate([mirrored[:1], mirrored[:0:-1]])  # restore winding
    for i in (5, 20, 40):
        n = normal_at(v, v[i])
        np.testing.assert_allclose(normal_at(mirrored, v[i] * [-1, 1]), n * [-1, 1], atol=1e-12)


def test_normal_internal_contour_points_into_hole():
    m = np.ones((40, 40), bool)
    m[10:30, 10:30] = False
    hole = [c for c in trace_boundaries(BinaryMask(m)) if c.kind == "internal"][0]
    # foreground pixel just above the hole's top edge
    p = hole.vertices[np.argmin(np.hypot(*(hole.vertices - [20, 9]).T))]
    np.testing.assert_allclose(normal_at(hole, p), [0, 1], atol=1e-12)


# ---------------------------------------------------------------- keypoints


def test_square_has_four_corner_keypoints():
    m = np.zeros((50, 50), bool)
    m[5:45, 5:45] = True
    (c,) = trace_boundaries(BinaryMask(m))
    kps = detect_keypoints(c, n_octaves=1)
    # brute-force scan: strict ring maxima of |kappa| above threshold
    mag = np.abs([curvature_at(c, i) for i in range(len(c))])
    oracle = [i for i in range(len(c)) if mag[i] > mag[i - 1] and mag[i] > mag[(i + 1) % len(c)] and mag[i] >= 0.05]
    assert [k.vertex_index for k in kps] == oracle
    assert sorted(k.position for k in kps) == [(5.0, 5.0), (5.0, 44.0), (44.0, 5.0), (44.0, 44.0)]


def test_circle_above_threshold_has_no_keypoints():
    v = regular_polygon(256, 30)
    assert detect_keypoints(v, min_abs_curvature=2 / 30) == []


def test_pyramid_levels():
    v = regular_polygon(200, 30)
    levels = contour_pyramid(v, n_octaves=6)
    assert [len(x) for x in levels] == [200, 100, 50, 25]
    assert contour_pyramid(regular_polygon(15), 4) == []


def test_keypoint_indices_map_to_scale_zero():
    v = _wobbly(7, n=256)
    levels = contour_pyramid(v, 4, 2.0)
    kps = detect_keypoints(v, 4, 2.0, 0.0)
    assert {k.scale for k in kps} == {0, 1, 2, 3}
    for k in kps:
        assert k.vertex_index % (1 << k.scale) == 0
        np.testing.assert_array_equal(k.position, levels[k.scale][k.level_index])
        mag = np.abs(curvatures(levels[k.scale]))
        j = k.level_index
        assert mag[j] > mag[j - 1] and mag[j] > mag[(j + 1) % len(mag)]


def test_keypoints_deterministic():
    v = _wobbly(9, 128)
    assert detect_keypoints(v) == detect_keypoints(v.copy())
