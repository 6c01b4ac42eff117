"""Score-level fusion of texture and shape distances, and weight learning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .codebook import distance_matrix
from .imaging import BinaryMask, GrayImage

OBJECTIVES = ("rank1", "margin")
MAX_WARP_MAGNITUDE = 0.3
_WARP_RETRIES = 100


@dataclass(frozen=True)
class FusionModel:
    W: float
    grid: tuple[float, ...]
    objective_values: tuple[float, ...]
    grid_step: float
    objective: str = "rank1"
    n_warps_per_image: int = 0
    warp_magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.W <= 1.0:
            raise ValueError("W must lie in [0, 1]")
        if self.grid and self.W not in self.grid:
            raise ValueError("W must be one of the grid candidates")
        if len(self.grid) != len(self.objective_values):
            raise ValueError("one objective value per grid candidate")
        if not all(np.isfinite(self.objective_values)):
            raise ValueError("objective values must be finite")


@dataclass(frozen=True, eq=False)
class AffineWarp:
    """x' = matrix @ (x - centre) + centre + translation, in (x, y) pixels."""

    matrix: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64).reshape(2, 2)
        t = np.array(self.translation, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(t))):
            raise ValueError("warp entries must be finite")
        det = np.linalg.det(m)
        if not 0.5 <= det <= 2.0:
            raise ValueError(f"warp determinant {det:.3f} outside [0.5, 2]")
        m.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "translation", t)

    def __eq__(self, other):
        if not isinstance(other, AffineWarp):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix) and np.array_equal(self.translation, other.translation)

    __hash__ = None

    @property
    def is_identity(self) -> bool:
        return np.array_equal(self.matrix, np.eye(2)) and not np.any(self.translation)


def fused_distance(dt, ds, W: float):
    """(1 - W) * texture distance + W * shape distance."""
    if not 0.0 <= W <= 1.0:
        raise ValueError(f"W={W} outside [0, 1]")
    if np.any(np.asarray(dt) < 0) or np.any(np.asarray(ds) < 0):
        raise ValueError("distances must be nonnegative")
    return (1.0 - W) * dt + W * ds


def random_warp(magnitude: float, rng: np.random.Generator) -> AffineWarp:
    """Identity plus uniform [-m, m] entries; translation within +-20 m pixels."""
    if not 0.0 <= magnitude <= MAX_WARP_MAGNITUDE:
        raise ValueError(f"warp magnitude must lie in [0, {MAX_WARP_MAGNITUDE}]")
    for _ in range(_WARP_RETRIES):
        e = rng.uniform(-magnitude, magnitude, size=(2, 2))
        t = rng.uniform(-20 * magnitude, 20 * magnitude, size=2)
        m = np.eye(2) + e
        if 0.5 <= np.linalg.det(m) <= 2.0:
            return AffineWarp(m, t)
    raise RuntimeError("could not draw a warp within the determinant bound")


def apply_warp(img: GrayImage, mask: BinaryMask, warp: AffineWarp) -> tuple[GrayImage, BinaryMask]:
    """Bilinear resampling about the image centre; the mask is re-thresholded at 0.5."""
    if warp.is_identity:
        return img, mask
    h, w = img.pixels.shape
    centre = np.array([(h - 1) / 2, (w - 1) / 2])
    swap = np.array([[0, 1], [1, 0]])
    a_rc = swap @ warp.matrix @ swap
    t_rc = warp.translation[::-1]
    inv = np.linalg.inv(a_rc)
    offset = centre - inv @ (centre + t_rc)
    pixels = ndimage.affine_transform(img.pixels, inv, offset=offset, order=1, mode="constant", cval=0.0)
    bits = ndimage.affine_transform(mask.bits.astype(np.float64), inv, offset=offset, order=1, mode="constant", cval=0.0)
    return GrayImage(np.clip(pixels, 0.0, 1.0)), BinaryMask(bits >= 0.5)


def weight_grid(grid_step: float) -> tuple[float, ...]:
    n = round(1.0 / grid_step)
    if n < 1 or abs(n * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid_step {grid_step} must divide 1 evenly")
    return tuple(i / n for i in range(n + 1))


def rank1_accuracy(d: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of rows whose true column is strictly closer than every other."""
    rows = np.arange(len(d))
    correct = d[rows, truth]
    others = d.copy()
    others[rows, truth] = np.inf
    return float(np.mean(correct < others.min(axis=1)))


def select_weight(
    dt: np.ndarray,
    ds: np.ndarray,
    truth,
    grid_step: float = 0.05,
    objective: str = "rank1",
    gallery_dt: np.ndarray | None = None,
    gallery_ds: np.ndarray | None = None,
):
    """Grid search over W on query-by-gallery distance matrices.

    ``rank1`` scores each W by rank-1 accuracy of the queries. ``margin``
    scores mean distance between distinct gallery objects minus mean
    distance from each query to its own gallery object; it needs the
    gallery-by-gallery matrices. Ties go to the W closest to 0.5, then the
    smaller W. Returns (W, grid, objective values).
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    dt = np.asarray(dt, dtype=np.float64)
    ds = np.asarray(ds, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    grid = weight_grid(grid_step)
    n = len(grid) - 1
    values = []
    for W in grid:
        if objective == "rank1":
            values.append(rank1_accuracy(fused_distance(dt, ds, W), truth))
        else:
            if gallery_dt is None or gallery_ds is None:
                raise ValueError("margin objective needs gallery-by-gallery distances")
            g = fused_distance(np.asarray(gallery_dt), np.asarray(gallery_ds), W)
            off = ~np.eye(len(g), dtype=bool)
            inter = g[off].mean()
            intra = fused_distance(dt, ds, W)[np.arange(len(dt)), truth].mean()
            values.append(float(inter - intra))
    best = max(values)
    ties = [i for i, v in enumerate(values) if v == best]
    pick = min(ties, key=lambda i: (abs(2 * i - n), i))
    return grid[pick], grid, tuple(values)


def learn_weight(
    gallery,
    warped_queries,
    grid_step: float = 0.05,
    objective: str = "rank1",
    n_warps_per_image: int | None = None,
    warp_magnitude: float = 0.0,
    seed: int = 0,
) -> FusionModel:
    """Pick W from synthetic warps of the gallery images.

    ``gallery`` is a list of (texture, shape) normalised histograms, one per
    object; ``warped_queries[i]`` lists the (texture, shape) histograms of
    warped copies of object i.
    """
    if len(gallery) < 2:
        raise ValueError("weight learning needs at least two gallery objects")
    if len(warped_queries) != len(gallery):
        raise ValueError("one list of warped queries per gallery object")
    if any(len(q) == 0 for q in warped_queries):
        raise ValueError("every gallery object needs at least one warped query")
    queries = [q for qs in warped_queries for q in qs]
    truth = np.repeat(np.arange(len(gallery)), [len(qs) for qs in warped_queries])
    g_tex = [g[0] for g in gallery]
    g_shp = [g[1] for g in gallery]
    dt = distance_matrix([q[0] for q in queries], g_tex)
    ds = distance_matrix([q[1] for q in queries], g_shp)
    gdt = gds = None
    if objective == "margin":
        gdt = distance_matrix(g_tex, g_tex)
        gds = distance_matrix(g_shp, g_shp)
    W, grid, values = select_weight(dt, ds, truth, grid_step, objective, gdt, gds)
    return FusionModel(
        W=W,
        grid=grid,
        objective_values=values,
        grid_step=grid_step,
        objective=objective,
        n_warps_per_image=n_warps_per_image if n_warps_per_image is not None else len(warped_queries[0]),
        warp_magnitude=warp_magnitude,
        seed=seed,
    )
