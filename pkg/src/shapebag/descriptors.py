"""Boundary-normal profiles (shape) and DoG gradient histograms (texture)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .contour import BoundaryKeypoint, _as_array, vertex_normals
from .errors import GeometryError
from .imaging import GrayImage

SIGMA0 = 1.6
ASSUMED_BLUR = 0.5
PATCH = 16
CELL = 4
N_BINS = 8
DESCRIPTOR_CLAMP = 0.2
# half-extent of the sampled patch in sample units, incl. one extra sample for central differences
_PATCH_REACH = PATCH / 2 + 0.5


@dataclass(frozen=True, eq=False)
class NormalProfileDescriptor:
    values: np.ndarray
    source: BoundaryKeypoint

    @property
    def n_samples(self) -> int:
        return len(self.values) // 2


def extract_bon(c, kp: BoundaryKeypoint, n_s: int = 13, span: int = 24) -> NormalProfileDescriptor:
    """Profile of outward normals at ``n_s`` arc-length-equidistant samples.

    ``c`` is the contour at the keypoint's own octave (see
    :func:`shapebag.contour.contour_pyramid`). Samples cover ``span``
    vertices either side of the keypoint; each normal comes from the arc
    through the sample's nearest window vertex and its neighbours, and is
    expressed in a frame whose x-axis runs from the first to the last sample.
    """
    v = _as_array(c)
    n = len(v)
    if n_s < 2:
        raise ValueError("n_s must be at least 2")
    if n < 2 * span + 1:
        raise GeometryError(f"contour with {n} vertices too short for span {span}")
    centre = kp.level_index
    window = (centre + np.arange(-span, span + 1)) % n
    pts = v[window]
    seg = np.hypot(*np.diff(pts, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    if total <= 0:
        raise GeometryError("zero-length neighbourhood")
    targets = np.linspace(0.0, total, n_s)
    samples = np.stack([np.interp(targets, arc, pts[:, 0]), np.interp(targets, arc, pts[:, 1])], axis=1)

    d2 = ((samples[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    nearest = window[np.argmin(d2, axis=1)]
    normals, valid = vertex_normals(v, nearest)
    if not valid.all():
        raise GeometryError("degenerate vertex triple inside descriptor window")

    ex = samples[-1] - samples[0]
    length = math.hypot(*ex)
    if length <= 1e-9 * total:
        ex = v[(centre + 1) % n] - v[(centre - 1) % n]
        length = math.hypot(*ex)
        if length == 0:
            raise GeometryError("no usable local frame at keypoint")
    ex = ex / length
    ey = np.array([-ex[1], ex[0]])
    local = np.stack([normals @ ex, normals @ ey], axis=1)
    values = local.reshape(-1)
    values.setflags(write=False)
    return NormalProfileDescriptor(values, kp)


# ---------------------------------------------------------------- texture


@dataclass(frozen=True)
class TextureKeypoint:
    position: tuple[float, float]  # (x, y) in base-image pixels
    scale: float  # sigma of the DoG level
    response: float
    octave: int = 0
    level: int = 0


@dataclass(frozen=True, eq=False)
class GradientDescriptor:
    values: np.ndarray
    source: TextureKeypoint
    valid: bool = True


def _blur(a: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return a
    return ndimage.gaussian_filter(a, sigma, mode="reflect")


def _patch_margin(scale: float) -> float:
    return _PATCH_REACH * scale / SIGMA0


def detect_texture_keypoints(
    img: GrayImage,
    n_octaves: int = 4,
    levels_per_octave: int = 3,
    threshold: float = 0.03,
) -> list[TextureKeypoint]:
    """3D extrema of a difference-of-Gaussians pyramid.

    Each octave holds ``levels_per_octave + 3`` Gaussian images; extrema are
    taken over the 26-neighbourhood of the inner DoG levels, refined per
    axis by a parabola fit, then deduplicated and margin-filtered so the
    descriptor patch fits inside the image.
    """
    if img.width < 32 or img.height < 32:
        return []
    s = levels_per_octave
    base = _blur(img.pixels, math.sqrt(SIGMA0**2 - ASSUMED_BLUR**2))
    candidates = []
    for octave in range(n_octaves):
        if min(base.shape) < 8:
            break
        gauss = [base]
        for lvl in range(1, s + 3):
            prev_sigma = SIGMA0 * 2 ** ((lvl - 1) / s)
            sigma = SIGMA0 * 2 ** (lvl / s)
            gauss.append(_blur(gauss[-1], math.sqrt(sigma**2 - prev_sigma**2)))
        dog = np.stack([gauss[i + 1] - gauss[i] for i in range(s + 2)])

        footprint = np.ones((3, 3, 3), dtype=bool)
        footprint[1, 1, 1] = False
        nb_max = ndimage.maximum_filter(dog, footprint=footprint, mode="nearest")
        nb_min = ndimage.minimum_filter(dog, footprint=footprint, mode="nearest")
        inner = np.zeros(dog.shape, dtype=bool)
        inner[1 : s + 1, 1:-1, 1:-1] = True
        peaks = inner & (
            ((dog > nb_max) & (dog >= threshold)) | ((dog < nb_min) & (dog <= -threshold))
        )
        factor = 2**octave
        for lvl, r, c in zip(*np.nonzero(peaks)):
            d = dog[lvl]
            val = d[r, c]
            dx = _parabola_offset(d[r, c - 1], val, d[r, c + 1])
            dy = _parabola_offset(d[r - 1, c], val, d[r + 1, c])
            candidates.append(
                TextureKeypoint(
                    position=(float((c + dx) * factor), float((r + dy) * factor)),
                    scale=SIGMA0 * 2 ** (octave + lvl / s),
                    response=float(val),
                    octave=octave,
                    level=int(lvl),
                )
            )
        base = gauss[s][::2, ::2]

    h, w = img.height, img.width
    kept = []
    candidates.sort(key=lambda k: (-abs(k.response), k.position[1], k.position[0], k.scale))
    for kp in candidates:
        m = _patch_margin(kp.scale)
        x, y = kp.position
        if x < m or y < m or x > w - 1 - m or y > h - 1 - m:
            continue
        if any(_duplicate(kp, other, s) for other in kept):
            continue
        kept.append(kp)
    kept.sort(key=lambda k: (k.scale, k.position[1], k.position[0]))
    return kept


def _parabola_offset(left, centre, right) -> float:
    denom = left - 2 * centre + right
    if denom == 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def _duplicate(a: TextureKeypoint, b: TextureKeypoint, levels_per_octave: int) -> bool:
    if (a.response > 0) != (b.response > 0):
        return False
    if abs(math.log2(a.scale / b.scale)) > 1.0 / levels_per_octave + 1e-9:
        return False
    dist = math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])
    return dist <= min(a.scale, b.scale)


def _bilinear(a: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(a, [ys.ravel(), xs.ravel()], order=1, mode="nearest").reshape(xs.shape)


def _gradient_histogram(patch: np.ndarray) -> np.ndarray:
    """128-vector from an (18, 18) sample grid; rows grow downwards."""
    gx = 0.5 * (patch[1:-1, 2:] - patch[1:-1, :-2])
    gy = 0.5 * (patch[2:, 1:-1] - patch[:-2, 1:-1])
    mag = np.hypot(gx, gy)
    theta = np.arctan2(-gy, gx)  # counter-clockwise on screen
    off = np.arange(PATCH) - (PATCH - 1) / 2
    window = np.exp(-(off[:, None] ** 2 + off[None, :] ** 2) / (2 * (PATCH / 2) ** 2))
    weight = mag * window
    f = np.mod(theta, 2 * np.pi) / (2 * np.pi / N_BINS)
    b0 = np.floor(f).astype(int) % N_BINS
    frac = f - np.floor(f)
    b1 = (b0 + 1) % N_BINS
    rows, cols = np.indices((PATCH, PATCH))
    cell = (rows // CELL) * (PATCH // CELL) + cols // CELL
    hist = np.zeros(PATCH * N_BINS)
    np.add.at(hist, cell * N_BINS + b0, weight * (1 - frac))
    np.add.at(hist, cell * N_BINS + b1, weight * frac)
    return hist


def _normalise(hist: np.ndarray) -> tuple[np.ndarray, bool]:
    norm = np.linalg.norm(hist)
    if norm <= 1e-12:  # blur round-off on flat patches
        return np.zeros_like(hist), False
    v = np.minimum(hist / norm, DESCRIPTOR_CLAMP)
    norm = np.linalg.norm(v)
    return v / norm, True


def _smoothed_for(img: GrayImage, scale: float) -> np.ndarray:
    return _blur(img.pixels, math.sqrt(max(scale**2 - ASSUMED_BLUR**2, 0.0)))


def _descriptor_from(smoothed: np.ndarray, kp: TextureKeypoint) -> GradientDescriptor:
    h, w = smoothed.shape
    step = kp.scale / SIGMA0
    x, y = kp.position
    reach = _PATCH_REACH * step
    if x - reach < 0 or y - reach < 0 or x + reach > w - 1 or y + reach > h - 1:
        raise GeometryError("descriptor patch leaves the image")
    off = (np.arange(PATCH + 2) - (PATCH + 1) / 2) * step
    xs, ys = np.meshgrid(x + off, y + off)
    values, valid = _normalise(_gradient_histogram(_bilinear(smoothed, xs, ys)))
    values.setflags(write=False)
    return GradientDescriptor(values, kp, valid)


def extract_gradient_descriptor(img: GrayImage, kp: TextureKeypoint) -> GradientDescriptor:
    """16x16 patch at the keypoint's scale, 4x4 cells of 8-bin histograms.

    A patch without gradients gives the zero vector with ``valid=False``.
    """
    return _descriptor_from(_smoothed_for(img, kp.scale), kp)


def extract_gradient_descriptors(img: GrayImage, kps) -> list[GradientDescriptor]:
    """Batch form; blurs once per distinct scale. Out-of-bounds keypoints are skipped."""
    cache: dict[float, np.ndarray] = {}
    out = []
    for kp in kps:
        if kp.scale not in cache:
            cache[kp.scale] = _smoothed_for(img, kp.scale)
        try:
            out.append(_descriptor_from(cache[kp.scale], kp))
        except GeometryError:
            continue
    return out
