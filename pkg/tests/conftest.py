import numpy as np
import pytest

from shapebag import synth
from shapebag.config import RunConfig
from shapebag.retrieval import build_index, read_manifest

# Desk-scale vocabularies: the full 5000/3000 words need ALOI-sized galleries.
DESK = dict(vocab_texture=40, vocab_shape=40)


def regular_polygon(n, r=1.0, centre=(0.0, 0.0), phase=0.0):
    t = phase + 2 * np.pi * np.arange(n) / n
    return np.stack([centre[0] + r * np.cos(t), centre[1] + r * np.sin(t)], axis=1)


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Twelve synthetic objects with five warped probes each."""
    cfg = RunConfig(**DESK, seed=3)
    root = tmp_path_factory.mktemp("corpus") / "c12"
    synth.generate(root, 12, 3, cfg)
    return root, cfg


@pytest.fixture(scope="session")
def small_index(small_corpus):
    root, cfg = small_corpus
    return build_index(read_manifest(root / "gallery.tsv"), cfg)


# One verdict line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
