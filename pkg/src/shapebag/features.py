"""Per-image feature extraction shared by index building, querying and dumps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .contour import BoundaryKeypoint, contour_pyramid, keypoints_in_pyramid
from .descriptors import (
    NormalProfileDescriptor,
    TextureKeypoint,
    detect_texture_keypoints,
    extract_bon,
    extract_gradient_descriptors,
)
from .errors import GeometryError
from .imaging import BinaryMask, Contour, GrayImage, trace_boundaries

TEXTURE_DIM = 16 * 8


@dataclass(frozen=True, eq=False)
class ImageFeatures:
    texture: np.ndarray  # (n, 128)
    shape: np.ndarray  # (m, 2 * n_s)
    texture_keypoints: list[TextureKeypoint] = field(default_factory=list)
    shape_keypoints: list[BoundaryKeypoint] = field(default_factory=list)
    contours: list[Contour] = field(default_factory=list)


def shape_descriptors(mask: BinaryMask, cfg: RunConfig):
    contours = trace_boundaries(mask, cfg.min_contour_length)
    descs: list[NormalProfileDescriptor] = []
    for cid, c in enumerate(contours):
        levels = contour_pyramid(c, cfg.n_octaves, cfg.kernel_sigma)
        for kp in keypoints_in_pyramid(levels, cfg.min_abs_curvature, cid):
            try:
                descs.append(extract_bon(levels[kp.scale], kp, cfg.n_s, cfg.span))
            except GeometryError:
                continue
    return contours, descs


def texture_descriptors(img: GrayImage, mask: BinaryMask, cfg: RunConfig):
    kps = detect_texture_keypoints(img, cfg.texture_octaves, cfg.texture_levels, cfg.texture_threshold)
    h, w = mask.bits.shape
    on_object = []
    for kp in kps:
        r = min(max(int(round(kp.position[1])), 0), h - 1)
        c = min(max(int(round(kp.position[0])), 0), w - 1)
        if mask.bits[r, c]:
            on_object.append(kp)
    return [d for d in extract_gradient_descriptors(img, on_object) if d.valid]


def extract_features(img: GrayImage, mask: BinaryMask, cfg: RunConfig) -> ImageFeatures:
    if img.pixels.shape != mask.bits.shape:
        raise ValueError(f"image {img.pixels.shape} and mask {mask.bits.shape} differ in size")
    contours, bon = shape_descriptors(mask, cfg)
    tex = texture_descriptors(img, mask, cfg)
    return ImageFeatures(
        texture=np.array([d.values for d in tex], dtype=np.float64).reshape(-1, TEXTURE_DIM),
        shape=np.array([d.values for d in bon], dtype=np.float64).reshape(-1, 2 * cfg.n_s),
        texture_keypoints=[d.source for d in tex],
        shape_keypoints=[d.source for d in bon],
        contours=contours,
    )
