"""Synthetic object corpus spanning textured, semi-textured and smooth objects.

Objects are rendered on a black background with a 3x3 supersampled
coverage mask. Class ``i % 3`` of object ``i`` is textured rectangle,
semi-textured blob, smooth star/gear, so any multiple of three objects has
the classes in ratio 1:1:1. Pseudo-views are random affine warps.
"""

from __future__ import annotations

import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .config import RunConfig
from .fusion import apply_warp, random_warp
from .imaging import BinaryMask, GrayImage, save_pgm
from .retrieval import SYNTH_VIEW_STREAM

CLASSES = ("textured", "semi", "smooth")
_SUPERSAMPLE = 3


def _blobs(xs, ys, rng, n, centre_box, sigma_range, amp_range):
    """Sum of ``n`` random isotropic Gaussian bumps with random sign."""
    (x0, x1), (y0, y1) = centre_box
    out = np.zeros_like(xs)
    for _ in range(n):
        cx, cy = rng.uniform(x0, x1), rng.uniform(y0, y1)
        s = rng.uniform(*sigma_range)
        a = rng.uniform(*amp_range) * rng.choice([-1.0, 1.0])
        out += a * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * s * s))
    return out


def _coverage(inside, size):
    """Fraction of each pixel covered, from a point-membership function."""
    k = _SUPERSAMPLE
    sub = (np.arange(size * k) + 0.5) / k - 0.5
    xs, ys = np.meshgrid(sub, sub)
    return inside(xs, ys).reshape(size, k, size, k).mean(axis=(1, 3))


def _radial(centre, radius_fn):
    cx, cy = centre

    def inside(xs, ys):
        dx, dy = xs - cx, ys - cy
        return np.hypot(dx, dy) <= radius_fn(np.arctan2(dy, dx))

    return inside


def render_object(kind: str, rng: np.random.Generator, size: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Returns (luminance image, boolean mask) for one synthetic object."""
    u = size / 128.0
    c = (size - 1) / 2.0
    centre = (c, c)
    xs, ys = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64))

    if kind == "textured":
        hw = size * rng.uniform(0.20, 0.27)
        hh = size * rng.uniform(0.16, 0.22)

        def inside(x, y):
            return (np.abs(x - c) <= hw) & (np.abs(y - c) <= hh)

        shade = rng.uniform(0.35, 0.55) + _blobs(
            xs, ys, rng, 80, ((c - hw, c + hw), (c - hh, c + hh)), (1.2 * u, 3.0 * u), (0.25, 0.6)
        )
    elif kind == "semi":
        radius = size * rng.uniform(0.22, 0.28)
        amps = rng.uniform(-0.12, 0.12, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)

        def r_fn(t):
            return radius * (1 + sum(a * np.cos((k + 2) * t + p) for k, (a, p) in enumerate(zip(amps, phases))))

        inside = _radial(centre, r_fn)
        box = ((c - 0.6 * radius, c + 0.6 * radius),) * 2
        shade = 0.35 + _blobs(xs, ys, rng, 6, box, (1.5 * u, 3.0 * u), (0.3, 0.5))
    elif kind == "smooth":
        radius = size * rng.uniform(0.22, 0.28)
        spikes = int(rng.integers(3, 10))
        depth = rng.uniform(0.12, 0.30)
        phase = rng.uniform(0, 2 * np.pi)
        gear = bool(rng.integers(2))

        def r_fn(t):
            wave = np.cos(spikes * t + phase)
            if gear:
                wave = np.tanh(4 * wave) / np.tanh(4.0)
            return radius * (1 + depth * wave)

        inside = _radial(centre, r_fn)
        shade = np.full_like(xs, 0.18)
    else:
        raise ValueError(f"unknown object class {kind!r}")

    cover = _coverage(inside, size)
    shade = np.clip(shade, 0.15, 1.0)
    return np.clip(cover * shade, 0.0, 1.0), cover >= 0.5


def generate(out_dir, n_objects: int, seed: int, cfg: RunConfig | None = None) -> Path:
    """Write images, masks, ``gallery.tsv``, ``probes.tsv`` and ``objects.csv``.

    The tree is assembled in a temporary sibling directory and moved into
    place at the end, so a failure leaves no partial output.
    """
    cfg = cfg or RunConfig()
    if n_objects < 1:
        raise ValueError("n_objects must be positive")
    out_dir = Path(out_dir)
    parent = out_dir.parent if str(out_dir.parent) else Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=parent))
    try:
        _write_corpus(tmp, n_objects, seed, cfg)
        if out_dir.exists():
            for src in sorted(tmp.rglob("*")):
                dst = out_dir / src.relative_to(tmp)
                if src.is_dir():
                    dst.mkdir(parents=True, exist_ok=True)
                else:
                    dst.parent.mkdir(parents=True, exist_ok=True)
                    os.replace(src, dst)
            shutil.rmtree(tmp)
        else:
            os.rename(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out_dir


def _write_corpus(root: Path, n_objects: int, seed: int, cfg: RunConfig) -> None:
    (root / "images").mkdir()
    (root / "masks").mkdir()
    gallery = ["# object_id\tview_label\timage\tmask"]
    probes = ["# object_id\tview_label\timage\tmask"]
    classes = ["object_id,class"]
    for i in range(n_objects):
        oid = f"obj{i:03d}"
        kind = CLASSES[i % 3]
        img, mask = render_object(kind, np.random.default_rng([seed, 0, i]), cfg.synth_size)
        classes.append(f"{oid},{kind}")
        name = f"{oid}_v0.pgm"
        save_pgm(root / "images" / name, img)
        save_pgm(root / "masks" / name, mask)
        gallery.append(f"{oid}\t0\timages/{name}\tmasks/{name}")
        gimg, gmask = GrayImage(img), BinaryMask(mask)
        for mi, m in enumerate(cfg.synth_magnitudes):
            label = f"m{m:g}"
            for v in range(cfg.synth_views):
                rng = np.random.default_rng([seed, SYNTH_VIEW_STREAM, i, mi, v])
                wimg, wmask = apply_warp(gimg, gmask, random_warp(m, rng))
                name = f"{oid}_{label}_{v + 1}.pgm"
                save_pgm(root / "images" / name, wimg.pixels)
                save_pgm(root / "masks" / name, wmask.bits)
                probes.append(f"{oid}\t{label}\timages/{name}\tmasks/{name}")
    (root / "gallery.tsv").write_text("\n".join(gallery) + "\n", encoding="utf-8")
    (root / "probes.tsv").write_text("\n".join(probes) + "\n", encoding="utf-8")
    (root / "objects.csv").write_text("\n".join(classes) + "\n", encoding="utf-8")
