import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from conftest import rotation
from shapebag.contour import BoundaryKeypoint, contour_pyramid, detect_keypoints
from shapebag.descriptors import (
    SIGMA0,
    TextureKeypoint,
    _normalise,
    detect_texture_keypoints,
    extract_bon,
    extract_gradient_descriptor,
    extract_gradient_descriptors,
)
from shapebag.errors import GeometryError
from shapebag.imaging import GrayImage


def _kp(index, scale=0, position=(0.0, 0.0)):
    return BoundaryKeypoint(0, index << scale, scale, 0.0, position)


def _blob(size, centre, sigma=4.0, amp=0.8):
    yy, xx = np.mgrid[0:size, 0:size]
    return GrayImage(amp * np.exp(-((xx - centre[0]) ** 2 + (yy - centre[1]) ** 2) / (2 * sigma**2)))


def _star(seed, n=240):
    rng = np.random.default_rng(seed)
    t = 2 * np.pi * np.arange(n) / n
    spikes = rng.integers(3, 8)
    r = 40 * (1 + rng.uniform(0.1, 0.3) * np.cos(spikes * t + rng.uniform(0, 6)))
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)


# ---------------------------------------------------------------- boundary profile


def test_bon_length_and_unit_pairs():
    v = _star(0)
    for kp in detect_keypoints(v, 3):
        level = contour_pyramid(v, 3)[kp.scale]
        if len(level) < 49:
            continue
        d = extract_bon(level, kp)
        assert d.values.shape == (26,)
        np.testing.assert_allclose(np.hypot(d.values[0::2], d.values[1::2]), 1.0, atol=1e-9)


def test_bon_straight_segment_repeats_one_vector():
    # counter-clockwise rectangle; keypoint forced mid-way along the bottom edge
    xs = np.arange(0, 100, 1.0)
    ys = np.arange(0, 60, 1.0)
    v = np.concatenate([
        np.stack([xs, np.zeros_like(xs)], 1),
        np.stack([np.full_like(ys, 100.0), ys], 1),
        np.stack([100 - xs, np.full_like(xs, 60.0)], 1),
        np.stack([np.zeros_like(ys), 60 - ys], 1),
    ])
    d = extract_bon(v, _kp(50), n_s=13, span=24)
    # outward normal points to the right of travel, -y in the chord frame
    np.testing.assert_allclose(d.values.reshape(13, 2), np.tile([0.0, -1.0], (13, 1)), atol=1e-12)


def test_bon_rotation_invariance_30_degrees():
    v = _star(1)
    w = v @ rotation(np.pi / 6).T + [13.0, -7.0]
    for idx in (0, 31, 77):
        np.testing.assert_allclose(extract_bon(w, _kp(idx)).values, extract_bon(v, _kp(idx)).values, atol=1e-9)


def test_bon_tangent_fallback_and_rejection():
    p = (0.0, 0.0)
    loop = [p, (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1), p, (-1, -1), (-2, -2), (-1, -2)]
    d = extract_bon(np.array(loop, float), _kp(4), n_s=5, span=4)  # first and last sample coincide at p
    np.testing.assert_allclose(np.hypot(d.values[0::2], d.values[1::2]), 1.0, atol=1e-12)
    spur = np.array([(x, 0.0) for x in range(11)] + [(x, 0.0) for x in range(9, 0, -1)])
    with pytest.raises(GeometryError):
        extract_bon(spur, _kp(10), n_s=5, span=9)
    with pytest.raises(GeometryError):
        extract_bon(_star(2, n=40), _kp(0), span=24)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 2 * np.pi), st.floats(-50, 50), st.floats(-50, 50))
def test_bon_rigid_motion_property(seed, theta, tx, ty):
    v = _star(seed)
    w = v @ rotation(theta).T + [tx, ty]
    a = {k.vertex_index: k for k in detect_keypoints(v, 3)}
    b = {k.vertex_index: k for k in detect_keypoints(w, 3)}
    la, lb = contour_pyramid(v, 3), contour_pyramid(w, 3)
    assume(a)  # gentle low-lobe stars can stay below the curvature threshold everywhere
    matched = sorted(set(a) & set(b))
    assert matched
    for i in matched:
        if a[i].scale != b[i].scale or len(la[a[i].scale]) < 49:
            continue
        da = extract_bon(la[a[i].scale], a[i]).values
        db = extract_bon(lb[b[i].scale], b[i]).values
        assert np.max(np.abs(da - db)) < 1e-6


# ---------------------------------------------------------------- DoG keypoints


def test_constant_and_small_images_have_no_keypoints():
    assert detect_texture_keypoints(GrayImage(np.full((64, 64), 0.5))) == []
    assert detect_texture_keypoints(GrayImage(np.random.default_rng(0).random((31, 40)))) == []


@pytest.mark.parametrize("size", [65, 129])
def test_single_blob_single_keypoint(size):
    c = (size - 1) / 2
    img = _blob(size, (c, c))
    kps = detect_texture_keypoints(img)
    assert len(kps) == 1
    (kp,) = kps
    # brute-force oracle: scan |DoG| over every pixel and a fine scale grid
    best, arg = -1.0, None
    for s in np.linspace(2.0, 12.0, 41):
        dog = ndimage.gaussian_filter(img.pixels, s * 2 ** (1 / 3)) - ndimage.gaussian_filter(img.pixels, s)
        r, col = np.unravel_index(np.argmax(np.abs(dog)), dog.shape)
        if abs(dog[r, col]) > best:
            best, arg = abs(dog[r, col]), (col, r)
    assert np.hypot(kp.position[0] - arg[0], kp.position[1] - arg[1]) <= 1.0
    assert np.hypot(kp.position[0] - c, kp.position[1] - c) <= 1.0
    assert kp.response < 0  # bright blob: DoG minimum


def test_keypoint_invariants():
    rng = np.random.default_rng(1)
    img = GrayImage(ndimage.gaussian_filter(rng.random((96, 96)), 1.5).clip(0, 1))
    thr = 0.01
    kps = detect_texture_keypoints(img, threshold=thr)
    assert kps
    for kp in kps:
        assert abs(kp.response) >= thr
        m = 8.5 * kp.scale / SIGMA0
        assert m <= kp.position[0] <= 95 - m and m <= kp.position[1] <= 95 - m
        assert isinstance(kp.position[0], float)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_mirrored_image_mirrors_keypoints(seed):
    rng = np.random.default_rng(seed)
    size = 97
    img = ndimage.gaussian_filter(rng.random((size, size)), 2.0)
    img = (img - img.min()) / (img.max() - img.min())
    a = detect_texture_keypoints(GrayImage(img), threshold=0.02)
    b = detect_texture_keypoints(GrayImage(img[:, ::-1].copy()), threshold=0.02)
    assert len(a) == len(b) > 0
    pa = sorted((round(size - 1 - k.position[0], 6), round(k.position[1], 6), k.scale) for k in a)
    pb = sorted((round(k.position[0], 6), round(k.position[1], 6), k.scale) for k in b)
    np.testing.assert_allclose(np.array(pa), np.array(pb), atol=1e-6)


# ---------------------------------------------------------------- gradient descriptor


def _kp_at(x, y, scale=SIGMA0):
    return TextureKeypoint((float(x), float(y)), scale, 1.0)


def test_constant_patch_is_invalid_zero():
    d = extract_gradient_descriptor(GrayImage(np.full((40, 40), 0.3)), _kp_at(20, 20))
    assert not d.valid
    assert not np.any(d.values)


def test_vertical_edge_fills_horizontal_gradient_bins():
    img = np.full((41, 41), 0.2)
    img[:, 20:] = 0.8
    d = extract_gradient_descriptor(GrayImage(img), _kp_at(20, 20))
    h = d.values.reshape(4, 4, 8)  # cell row, cell column, bin
    assert d.valid
    assert np.sum(h[:, 1:3, 0] ** 2) > 0.99  # +x gradients, centre columns
    assert not np.any(h[..., 1:])


def test_bins_run_counter_clockwise_on_screen():
    img = np.full((41, 41), 0.2)
    img[:20, :] = 0.8  # brighter above: gradient points up the screen
    h = extract_gradient_descriptor(GrayImage(img), _kp_at(20, 20)).values.reshape(16, 8)
    assert np.argmax(h.sum(axis=0)) == 2


def test_out_of_bounds_patch():
    img = GrayImage(np.random.default_rng(0).random((40, 40)))
    with pytest.raises(GeometryError):
        extract_gradient_descriptor(img, _kp_at(3, 20))
    assert extract_gradient_descriptors(img, [_kp_at(3, 20), _kp_at(20, 20)])[0].source.position == (20.0, 20.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(14, 26), st.floats(14, 26), st.floats(1.6, 2.6))
def test_gradient_descriptor_bounds(seed, x, y, scale):
    img = GrayImage(np.random.default_rng(seed).random((40, 40)))
    d = extract_gradient_descriptor(img, _kp_at(x, y, scale))
    assert d.values.shape == (128,)
    assert d.valid
    assert abs(np.linalg.norm(d.values) - 1) <= 1e-9
    assert d.values.min() >= 0


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 128, elements=st.floats(0, 10)))
def test_normalise_clamps_before_renormalising(h):
    v, valid = _normalise(h)
    if np.linalg.norm(h) <= 1e-12:
        assert not valid and not np.any(v)
        return
    clamped = np.minimum(h / np.linalg.norm(h), 0.2)
    # the vector before renormalisation is bounded by the clamp
    assert np.all(v * np.linalg.norm(clamped) <= 0.2 + 1e-12)
    np.testing.assert_allclose(v, clamped / np.linalg.norm(clamped), rtol=1e-12)
    assert abs(np.linalg.norm(v) - 1) <= 1e-9


def test_descriptor_determinism():
    img = GrayImage(np.random.default_rng(4).random((64, 64)))
    kps = detect_texture_keypoints(img, threshold=0.01)
    a = extract_gradient_descriptors(img, kps)
    b = extract_gradient_descriptors(GrayImage(img.pixels.copy()), kps)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    assert all(np.array_equal(x.values, extract_gradient_descriptor(img, x.source).values) for x in a)
