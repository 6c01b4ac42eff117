"""Image and mask loading, thresholding and boundary tracing."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GeometryError, ImageFormatError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# Moore neighbourhood, clockwise on screen (rows grow downwards), as (drow, dcol).
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_MOORE_INDEX = {d: i for i, d in enumerate(_MOORE)}

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance image, row-major, values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.array(self.pixels, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ImageFormatError(f"image must be a non-empty 2D array, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise ImageFormatError("pixel values must be finite and within [0, 1]")
        object.__setattr__(self, "pixels", _frozen(p))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise ImageFormatError(f"mask must be a non-empty 2D array, got shape {b.shape}")
        object.__setattr__(self, "bits", _frozen(b))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def foreground_count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True, eq=False)
class Contour:
    """Closed polyline; vertex i connects to vertex (i + 1) mod n.

    Vertices are (x, y) = (column, row). External contours have positive
    shoelace area, internal ones negative, so the foreground always lies to
    the left of the direction of travel.
    """

    vertices: np.ndarray
    kind: str = "external"

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise GeometryError(f"contour vertices must have shape (n, 2), got {v.shape}")
        if len(v) < 3:
            raise GeometryError(f"contour needs at least 3 vertices, got {len(v)}")
        if not np.all(np.isfinite(v)):
            raise GeometryError("contour vertices must be finite")
        if np.any(np.all(v == np.roll(v, -1, axis=0), axis=1)):
            raise GeometryError("contour has consecutive identical vertices")
        if self.kind not in ("external", "internal"):
            raise GeometryError(f"unknown contour kind {self.kind!r}")
        object.__setattr__(self, "vertices", _frozen(v))

    def __len__(self) -> int:
        return len(self.vertices)

    def __eq__(self, other):
        if not isinstance(other, Contour):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.vertices, other.vertices)

    __hash__ = None

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    @property
    def circumference(self) -> float:
        return circumference(self.vertices)


def signed_area(vertices) -> float:
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def circumference(vertices) -> float:
    v = np.asarray(vertices, dtype=np.float64)
    return float(np.sum(np.hypot(*(np.roll(v, -1, axis=0) - v).T)))


# ---------------------------------------------------------------- raster I/O


def _read_pnm(data: bytes):
    """Parse binary P5/P6. Returns (raw uint array, maxval)."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        return None
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PNM header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise ImageFormatError("malformed PNM header") from None
    pos += 1  # single whitespace byte ends the header
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"zero-dimension image ({width}x{height})")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"invalid PNM maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos) if len(data) - pos >= count * dtype.itemsize else None
    if raw is None:
        raise ImageFormatError("truncated PNM pixel data")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return raw.reshape(shape).astype(np.float64), maxval


def _read_raw(path) -> tuple[np.ndarray, float]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc.strerror}") from None
    parsed = _read_pnm(data)
    if parsed is not None:
        return parsed
    try:
        from PIL import Image, UnidentifiedImageError
    except ImportError:  # pragma: no cover
        raise ImageFormatError(f"unsupported image format: {path}") from None
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64)
                maxval = 65535.0
            else:
                arr = np.asarray(im.convert("RGB" if im.mode not in ("L", "1") else "L"), dtype=np.float64)
                maxval = 255.0
    except (UnidentifiedImageError, OSError, ValueError):
        raise ImageFormatError(f"unsupported or corrupt image: {path}") from None
    if arr.size == 0:
        raise ImageFormatError(f"zero-dimension image: {path}")
    return arr, maxval


def load_image(path: str | os.PathLike) -> GrayImage:
    raw, maxval = _read_raw(path)
    if raw.ndim == 3:
        raw = raw[..., :3] @ LUMA_WEIGHTS
    return GrayImage(np.clip(raw / maxval, 0.0, 1.0))


def load_mask(path: str | os.PathLike) -> BinaryMask:
    """Load a mask file; any nonzero sample is foreground."""
    raw, _ = _read_raw(path)
    if raw.ndim == 3:
        raw = raw.max(axis=2)
    return BinaryMask(raw > 0)


def save_pgm(path: str | os.PathLike, array) -> None:
    """Write an 8-bit binary PGM. Floats are taken as [0,1] luminance."""
    a = np.asarray(array)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    elif a.dtype.kind == "f":
        a = np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    else:
        a = a.astype(np.uint8)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(a).tobytes())


def threshold_mask(img: GrayImage, t: float) -> BinaryMask:
    return BinaryMask(img.pixels > t)


# ---------------------------------------------------------------- tracing


def _moore_trace(fg: np.ndarray, start: tuple[int, int], backtrack: tuple[int, int]) -> list[tuple[int, int]]:
    """Moore-neighbour trace with Jacob's stopping criterion.

    The trace stops when the first (pixel, backtrack) state after leaving
    ``start`` recurs, so start pixels that are re-entered from another side
    (thin parts) do not end the trace early. ``fg`` must be zero-padded.
    Returns (row, col) pixel positions in visit order.
    """

    def step(p, b):
        idx = _MOORE_INDEX[(b[0] - p[0], b[1] - p[1])]
        prev = b
        for k in range(1, 9):
            dr, dc = _MOORE[(idx + k) % 8]
            q = (p[0] + dr, p[1] + dc)
            if fg[q]:
                return q, prev
            prev = q
        return None

    first = step(start, backtrack)
    if first is None:
        return [start]
    path = [start, first[0]]
    state = first
    for _ in range(4 * fg.size + 16):
        state = step(*state)
        if state == first:
            path.pop()  # the predecessor of the first state is the start pixel again
            return path
        path.append(state[0])
    raise GeometryError("boundary trace did not terminate")  # pragma: no cover


def _orient(points: np.ndarray, kind: str) -> np.ndarray:
    area = signed_area(points)
    if (kind == "external" and area < 0) or (kind == "internal" and area > 0):
        points = np.concatenate([points[:1], points[:0:-1]])
    return points


def trace_boundaries(mask: BinaryMask, min_length: int = 16) -> list[Contour]:
    """External contour per 8-connected component, internal per 4-connected hole.

    Contours run through foreground pixel centres. Those with fewer than
    ``max(min_length, 3)`` vertices are dropped. Externals come first, ordered
    by their first pixel in raster order, then internals ordered the same way
    by their hole's first pixel.
    """
    fg = np.pad(mask.bits, 1)
    min_len = max(int(min_length), 3)
    out: list[Contour] = []

    labels, n = ndimage.label(fg, structure=EIGHT_CONNECTED)
    if n == 0:
        return out
    # first pixel in raster order for each label
    flat = labels.ravel()
    order = np.flatnonzero(flat)
    _, first = np.unique(flat[order], return_index=True)
    starts = order[first]
    for s in starts:
        r, c = divmod(int(s), fg.shape[1])
        path = _moore_trace(fg, (r, c), (r, c - 1))
        if len(path) >= min_len:
            pts = np.array([(pc - 1, pr - 1) for pr, pc in path], dtype=np.float64)
            out.append(Contour(_orient(pts, "external"), "external"))

    bg_labels, nb = ndimage.label(~fg, structure=FOUR_CONNECTED)
    outside = bg_labels[0, 0]
    flat = bg_labels.ravel()
    order = np.flatnonzero(flat)
    _, first = np.unique(flat[order], return_index=True)
    for lab, s in zip(np.unique(flat[order]), order[first]):
        if lab == outside:
            continue
        r, c = divmod(int(s), fg.shape[1])
        path = _moore_trace(fg, (r - 1, c), (r, c))
        if len(path) >= min_len:
            pts = np.array([(pc - 1, pr - 1) for pr, pc in path], dtype=np.float64)
            out.append(Contour(_orient(pts, "internal"), "internal"))
    return out
