"""Contour smoothing with shrink correction, curvature, normals, keypoints.

All vertex arrays are (n, 2) float arrays of (x, y) with cyclic indexing.
Public functions accept either a :class:`Contour` or a raw array; the array
paths exist because pyramid levels of noisy traces may contain repeated
vertices that a validated ``Contour`` would reject.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .imaging import Contour

MIN_OCTAVE_VERTICES = 16

# relative cross-product magnitude below which a vertex triple is treated as collinear
_COLLINEAR_EPS = 1e-12


def _as_array(c) -> np.ndarray:
    if isinstance(c, Contour):
        return c.vertices
    return np.asarray(c, dtype=np.float64)


def _like(c, vertices: np.ndarray):
    if isinstance(c, Contour):
        return Contour(vertices, c.kind)
    return vertices


@dataclass(frozen=True, eq=False)
class SmoothingKernel:
    half_width: int
    weights: np.ndarray
    sigma: float | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or len(w) != 2 * self.half_width + 1:
            raise ValueError("kernel needs 2*half_width + 1 weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"kernel weights must sum to 1, got {w.sum()!r}")
        if not np.array_equal(w, w[::-1]):
            raise ValueError("kernel must be symmetric")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_weights(cls, weights) -> "SmoothingKernel":
        weights = np.asarray(weights, dtype=np.float64)
        return cls((len(weights) - 1) // 2, weights)

    @classmethod
    def gaussian(cls, sigma: float) -> "SmoothingKernel":
        """Sampled exp(-j^2 / 2 sigma^2), truncated at ceil(3 sigma), renormalized."""
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if sigma == 0:
            return cls(0, np.ones(1), 0.0)
        w = math.ceil(3 * sigma)
        j = np.arange(-w, w + 1, dtype=np.float64)
        g = np.exp(-(j**2) / (2 * sigma**2))
        g = g / g.sum()
        return cls(w, g, float(sigma))


IDENTITY_KERNEL = SmoothingKernel(0, np.ones(1), 0.0)


@dataclass(frozen=True)
class ShrinkCorrection:
    K: float
    phi: float
    n_v: int


@dataclass(frozen=True)
class BoundaryKeypoint:
    contour_id: int
    vertex_index: int  # index into the scale-0 contour
    scale: int  # octave
    curvature: float  # signed, 1/pixels, at the detection octave
    position: tuple[float, float]

    @property
    def level_index(self) -> int:
        """Vertex index on the contour of the keypoint's own octave."""
        return self.vertex_index >> self.scale


# ---------------------------------------------------------------- smoothing


def _smooth_array(v: np.ndarray, k: SmoothingKernel) -> np.ndarray:
    if len(v) <= 2 * k.half_width:
        raise GeometryError(f"contour with {len(v)} vertices too short for kernel half-width {k.half_width}")
    out = np.zeros_like(v)
    for j, g in zip(range(-k.half_width, k.half_width + 1), k.weights):
        out += g * np.roll(v, -j, axis=0)
    return out


def smooth_once(c, k: SmoothingKernel):
    """One Gaussian-weighted averaging pass; vertex count unchanged."""
    return _like(c, _smooth_array(_as_array(c), k))


def correction_constant(k: SmoothingKernel, n_v: int) -> ShrinkCorrection:
    """K making a circle sampled at ``n_v`` equidistant vertices a fixed point."""
    if n_v < 3:
        raise GeometryError("correction constant needs n_v >= 3")
    phi = 2 * math.pi / n_v
    j = np.arange(-k.half_width, k.half_width + 1)
    denom = float(np.dot(k.weights, np.cos(j * phi)))
    if denom <= 0:
        raise GeometryError(f"kernel half-width {k.half_width} too wide for {n_v} vertices")
    return ShrinkCorrection(1.0 / denom, phi, n_v)


def _smooth_corrected_array(v: np.ndarray, k: SmoothingKernel) -> np.ndarray:
    K = correction_constant(k, len(v)).K
    c1 = _smooth_array(v, k)
    c2 = _smooth_array(c1, k)
    return c1 - K * (c2 - c1)


def smooth_corrected(c, k: SmoothingKernel):
    """Smooth, then push back along the second smoothing's displacement."""
    return _like(c, _smooth_corrected_array(_as_array(c), k))


# ---------------------------------------------------------------- curvature and normals


def _signed_curvature(a, b, c):
    """Vectorised 1/R of the circle through a, b, c; positive for left turns.

    Returns (curvature, degenerate) where degenerate flags triples with a
    repeated point (curvature reported as 0 there).
    """
    ab = b - a
    bc = c - b
    ac = c - a
    la = np.hypot(ab[..., 0], ab[..., 1])
    lb = np.hypot(bc[..., 0], bc[..., 1])
    lc = np.hypot(ac[..., 0], ac[..., 1])
    cross = ab[..., 0] * bc[..., 1] - ab[..., 1] * bc[..., 0]
    denom = la * lb * lc
    degenerate = denom == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(degenerate, 0.0, 2.0 * cross / np.where(degenerate, 1.0, denom))
    return kappa, degenerate


def curvature_at(c, i: int) -> float:
    v = _as_array(c)
    n = len(v)
    if n < 3:
        raise GeometryError("curvature needs at least 3 vertices")
    kappa, degenerate = _signed_curvature(v[(i - 1) % n], v[i % n], v[(i + 1) % n])
    if degenerate:
        raise GeometryError(f"duplicate vertices around index {i}")
    return float(kappa)


def curvatures(c) -> np.ndarray:
    """Signed curvature at every vertex; triples with repeated points give 0."""
    v = _as_array(c)
    kappa, _ = _signed_curvature(np.roll(v, 1, axis=0), v, np.roll(v, -1, axis=0))
    return kappa


def vertex_normals(c, idx) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normals of the circumcircle arcs at vertices ``idx``.

    Returns (normals, valid). Outward means to the right of the direction
    of travel, i.e. away from the foreground under the winding convention.
    Collinear triples use the chord perpendicular.
    """
    v = _as_array(c)
    n = len(v)
    idx = np.asarray(idx) % n
    a, b, cc = v[(idx - 1) % n], v[idx], v[(idx + 1) % n]
    chord = cc - a
    right = np.stack([chord[..., 1], -chord[..., 0]], axis=-1)
    u = a - b
    w = cc - b
    uu = np.einsum("...i,...i->...", u, u)
    ww = np.einsum("...i,...i->...", w, w)
    cross = u[..., 0] * w[..., 1] - u[..., 1] * w[..., 0]
    scale = np.sqrt(uu * ww)
    curved = np.abs(cross) > _COLLINEAR_EPS * scale
    safe = np.where(curved, 2.0 * cross, 1.0)
    centre = np.stack([(uu * w[..., 1] - ww * u[..., 1]) / safe, (ww * u[..., 0] - uu * w[..., 0]) / safe], axis=-1)
    radial = -centre  # from circumcentre towards b
    normal = np.where(curved[..., None], radial, right)
    length = np.hypot(normal[..., 0], normal[..., 1])
    valid = (length > 0) & (uu > 0) & (ww > 0) & np.any(chord != 0, axis=-1)
    normal = normal / np.where(valid, length, 1.0)[..., None]
    flip = np.einsum("...i,...i->...", normal, right) < 0
    normal = np.where(flip[..., None], -normal, normal)
    return normal, valid


def nearest_vertex(c, p) -> int:
    v = _as_array(c)
    d2 = np.sum((v - np.asarray(p, dtype=np.float64)) ** 2, axis=1)
    return int(np.argmin(d2))


def normal_at(c, p) -> np.ndarray:
    """Outward unit normal of the arc fitted at the vertex nearest ``p``."""
    v = _as_array(c)
    if len(v) < 3:
        raise GeometryError("normal needs at least 3 vertices")
    i = nearest_vertex(v, p)
    normal, valid = vertex_normals(v, np.array([i]))
    if not valid[0]:
        raise GeometryError(f"degenerate vertex triple around index {i}")
    return normal[0]


# ---------------------------------------------------------------- keypoints


def contour_pyramid(c, n_octaves: int = 4, kernel_sigma: float = 2.0) -> list[np.ndarray]:
    """Vertex arrays per octave: smooth_corrected then keep even vertices.

    Stops before any level with fewer than 16 vertices.
    """
    v = _as_array(c)
    if len(v) < MIN_OCTAVE_VERTICES or n_octaves < 1:
        return []
    kernel = SmoothingKernel.gaussian(kernel_sigma)
    levels = [v]
    while len(levels) < n_octaves:
        nxt = _smooth_corrected_array(levels[-1], kernel)[::2]
        if len(nxt) < MIN_OCTAVE_VERTICES:
            break
        levels.append(nxt)
    return levels


def keypoints_in_pyramid(levels, min_abs_curvature: float = 0.05, contour_id: int = 0) -> list[BoundaryKeypoint]:
    out = []
    for octave, v in enumerate(levels):
        kappa = curvatures(v)
        mag = np.abs(kappa)
        peak = (mag > np.roll(mag, 1)) & (mag > np.roll(mag, -1)) & (mag >= min_abs_curvature)
        for j in np.flatnonzero(peak):
            out.append(
                BoundaryKeypoint(
                    contour_id=contour_id,
                    vertex_index=int(j) << octave,
                    scale=octave,
                    curvature=float(kappa[j]),
                    position=(float(v[j, 0]), float(v[j, 1])),
                )
            )
    return out


def detect_keypoints(
    c,
    n_octaves: int = 4,
    kernel_sigma: float = 2.0,
    min_abs_curvature: float = 0.05,
    contour_id: int = 0,
) -> list[BoundaryKeypoint]:
    """Strict ring-neighbourhood maxima of |curvature| on each octave."""
    levels = contour_pyramid(c, n_octaves, kernel_sigma)
    return keypoints_in_pyramid(levels, min_abs_curvature, contour_id)
