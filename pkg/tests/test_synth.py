import numpy as np
import pytest
from scipy import ndimage

from shapebag import synth
from shapebag.config import RunConfig
from shapebag.imaging import load_mask
from shapebag.retrieval import read_manifest

CFG = RunConfig(synth_views=2, synth_magnitudes=(0.05, 0.1))


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_generation_is_byte_deterministic(tmp_path):
    a = synth.generate(tmp_path / "a", 6, 7, CFG)
    b = synth.generate(tmp_path / "b", 6, 7, CFG)
    assert _tree(a) == _tree(b)
    c = synth.generate(tmp_path / "c", 6, 8, CFG)
    assert _tree(c) != _tree(a)


def test_manifests_and_classes(tmp_path):
    root = synth.generate(tmp_path / "s", 9, 0, CFG)
    gallery = read_manifest(root / "gallery.tsv")
    probes = read_manifest(root / "probes.tsv")
    assert [r.object_id for r in gallery] == [f"obj{i:03d}" for i in range(9)]
    assert len(probes) == 9 * 2 * 2
    assert {r.view_label for r in probes} == {"m0.05", "m0.1"}
    rows = (root / "objects.csv").read_text().splitlines()[1:]
    kinds = [r.split(",")[1] for r in rows]
    assert all(kinds.count(k) == 3 for k in synth.CLASSES)
    for rec in gallery + probes:
        mask = load_mask(rec.mask_path)
        assert ndimage.label(mask.bits)[1] >= 1


@pytest.mark.parametrize("kind", synth.CLASSES)
def test_render_object(kind):
    img, mask = synth.render_object(kind, np.random.default_rng(3))
    assert img.shape == mask.shape == (128, 128)
    assert 0 <= img.min() and img.max() <= 1
    assert not np.any(img[~mask] > 0.5)
    assert mask.sum() > 1000
    with pytest.raises(ValueError):
        synth.render_object("plaid", np.random.default_rng(0))


def test_existing_directory_is_merged(tmp_path):
    (tmp_path / "s").mkdir()
    (tmp_path / "s" / "keep.txt").write_text("x")
    root = synth.generate(tmp_path / "s", 3, 0, RunConfig(synth_views=1))
    assert (root / "keep.txt").exists() and (root / "gallery.tsv").exists()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".s.")]
