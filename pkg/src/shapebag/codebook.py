"""Visual vocabularies, word histograms and tf-idf matching."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexFormatError, IndexVersionError, VocabSizeError

MODALITIES = ("texture", "shape")
VOCAB_MAGIC = b"SBVC"
VOCAB_VERSION = 1

_CHUNK = 256


@dataclass(frozen=True, eq=False)
class Vocabulary:
    modality: str
    centroids: np.ndarray  # (k, dim) float32
    train_seed: int
    train_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        c = np.array(self.centroids, dtype=np.float32)
        if c.ndim != 2 or len(c) < 1:
            raise ValueError("vocabulary needs at least one centroid")
        if not np.all(np.isfinite(c)):
            raise ValueError("centroids must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (
            self.modality == other.modality
            and self.train_seed == other.train_seed
            and np.array_equal(self.centroids, other.centroids)
            and self.train_stats == other.train_stats
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class WordHistogram:
    modality: str
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.array(self.values)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return len(self.values)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    @property
    def total(self):
        return self.values.sum()

    def __eq__(self, other):
        if not isinstance(other, WordHistogram):
            return NotImplemented
        return (
            self.modality == other.modality
            and self.normalized == other.normalized
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class IdfModel:
    modality: str
    idf: np.ndarray
    n_docs: int

    def __post_init__(self):
        v = np.array(self.idf, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "idf", v)

    def __eq__(self, other):
        if not isinstance(other, IdfModel):
            return NotImplemented
        return self.modality == other.modality and self.n_docs == other.n_docs and np.array_equal(self.idf, other.idf)

    __hash__ = None


# ---------------------------------------------------------------- K-means


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances, (n, k), computed from differences."""
    out = np.empty((len(x), len(centroids)))
    for start in range(0, len(x), _CHUNK):
        block = x[start : start + _CHUNK]
        out[start : start + _CHUNK] = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return out


def _assign(x, centroids):
    d2 = _sq_distances(x, centroids)
    labels = np.argmin(d2, axis=1)
    return labels, float(d2[np.arange(len(x)), labels].sum())


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def train_vocabulary(
    descriptors,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    modality: str = "texture",
    tol: float = 1e-4,
) -> Vocabulary:
    """Lloyd's K-means from k-means++ seeds.

    Stops after ``max_iters`` updates or once the relative distortion
    improvement drops below ``tol``. Empty clusters are re-seeded from the
    points farthest from their current centroid. ``train_stats`` records
    the iteration count and the distortion after every assignment step.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("descriptors must be a 2D array")
    if k < 1:
        raise ValueError("k must be positive")
    if len(x) < k:
        raise VocabSizeError(
            f"{modality} vocabulary of {k} words needs at least {k} descriptors, got {len(x)}",
            suggested_k=max(1, len(x) // 5) if len(x) else None,
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("descriptors must be finite")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels, distortion = _assign(x, centroids)
    history = [distortion]
    iterations = 0
    for iterations in range(1, max_iters + 1):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            own = ((x - centroids[labels]) ** 2).sum(axis=1)
            order = np.argsort(-own, kind="stable")
            for ci, pi in zip(empty, order):
                centroids[ci] = x[pi]
        labels, new = _assign(x, centroids)
        history.append(new)
        done = distortion == 0 or (distortion - new) <= tol * distortion
        distortion = new
        if done:
            break
    stats = {"iterations": iterations, "distortion": distortion, "history": history}
    return Vocabulary(modality, centroids.astype(np.float32), int(seed), stats)


# ---------------------------------------------------------------- quantisation and histograms


def _check_vectors(v: Vocabulary, d: np.ndarray):
    if d.shape[-1] != v.dim:
        raise ValueError(f"descriptor dimension {d.shape[-1]} does not match vocabulary dimension {v.dim}")
    if not np.all(np.isfinite(d)):
        raise ValueError("descriptor must be finite")


def quantize(v: Vocabulary, d) -> int:
    """Index of the nearest centroid; ties go to the lowest index."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1:
        raise ValueError("quantize takes a single descriptor")
    _check_vectors(v, d)
    return int(np.argmin(((v.centroids.astype(np.float64) - d) ** 2).sum(axis=1)))


def quantize_many(v: Vocabulary, ds) -> np.ndarray:
    ds = np.asarray(ds, dtype=np.float64).reshape(-1, v.dim)
    _check_vectors(v, ds)
    if len(ds) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmin(_sq_distances(ds, v.centroids.astype(np.float64)), axis=1)


def build_histogram(v: Vocabulary, ds) -> WordHistogram:
    words = quantize_many(v, ds)
    return WordHistogram(v.modality, np.bincount(words, minlength=v.k).astype(np.int64), normalized=False)


def fit_idf(histograms) -> IdfModel:
    """idf_w = ln(n_docs / max(1, df_w)) over a corpus of raw histograms."""
    histograms = list(histograms)
    if not histograms:
        raise ValueError("idf needs a nonempty corpus")
    modality = histograms[0].modality
    k = histograms[0].k
    if any(h.k != k or h.modality != modality for h in histograms):
        raise ValueError("corpus histograms must share modality and length")
    df = np.sum([np.asarray(h.values) > 0 for h in histograms], axis=0)
    n = len(histograms)
    return IdfModel(modality, np.log(n / np.maximum(df, 1)), n)


def apply_tfidf(h: WordHistogram, m: IdfModel) -> WordHistogram:
    """(count / total) * idf, L2-normalised; zero histograms stay zero."""
    if h.modality != m.modality:
        raise ValueError(f"modality mismatch: histogram {h.modality}, idf {m.modality}")
    if h.k != len(m.idf):
        raise ValueError("histogram length does not match idf model")
    return _unit(h.modality, np.asarray(h.values, dtype=np.float64), m.idf)


def l2_normalize(h: WordHistogram) -> WordHistogram:
    """Plain L2 normalisation, for runs with tf-idf switched off."""
    return _unit(h.modality, np.asarray(h.values, dtype=np.float64), None)


def _unit(modality, counts, idf):
    total = counts.sum()
    if total == 0:
        return WordHistogram(modality, np.zeros_like(counts), normalized=True)
    w = counts / total
    if idf is not None:
        w = w * idf
    norm = np.linalg.norm(w)
    if norm == 0:
        return WordHistogram(modality, np.zeros_like(counts), normalized=True)
    return WordHistogram(modality, w / norm, normalized=True)


def histogram_distance(a: WordHistogram, b: WordHistogram) -> float:
    """Euclidean distance between normalised histograms.

    A zero histogram sits at distance 1 from any unit histogram.
    """
    if a.modality != b.modality or a.k != b.k:
        raise ValueError("histograms must share modality and length")
    if not (a.normalized and b.normalized):
        raise ValueError("histogram_distance expects normalised histograms")
    return float(np.linalg.norm(a.values - b.values))


def distance_matrix(queries, gallery) -> np.ndarray:
    """Pairwise histogram distances as an array of shape (len(queries), len(gallery))."""
    q = np.array([h.values for h in queries], dtype=np.float64).reshape(len(queries), -1)
    g = np.array([h.values for h in gallery], dtype=np.float64).reshape(len(gallery), -1)
    return np.sqrt(((q[:, None, :] - g[None, :, :]) ** 2).sum(axis=2))


# ---------------------------------------------------------------- vocabulary file


def vocabulary_to_bytes(v: Vocabulary) -> bytes:
    head = VOCAB_MAGIC + struct.pack("<IBII", VOCAB_VERSION, MODALITIES.index(v.modality), v.k, v.dim)
    return head + v.centroids.astype("<f4").tobytes() + struct.pack("<Q", v.train_seed)


def vocabulary_from_bytes(data: bytes, train_stats: dict | None = None) -> Vocabulary:
    if len(data) < 17 or data[:4] != VOCAB_MAGIC:
        raise IndexFormatError("not a vocabulary block (bad magic)")
    version, tag, k, dim = struct.unpack_from("<IBII", data, 4)
    if version != VOCAB_VERSION:
        raise IndexVersionError(f"vocabulary format version {version}, expected {VOCAB_VERSION}")
    if tag >= len(MODALITIES):
        raise IndexFormatError(f"unknown modality tag {tag}")
    need = 17 + 4 * k * dim + 8
    if len(data) != need:
        raise IndexFormatError(f"vocabulary block has {len(data)} bytes, expected {need}")
    centroids = np.frombuffer(data, dtype="<f4", count=k * dim, offset=17).reshape(k, dim)
    (seed,) = struct.unpack_from("<Q", data, 17 + 4 * k * dim)
    return Vocabulary(MODALITIES[tag], centroids, seed, dict(train_stats or {}))


def save_vocabulary(v: Vocabulary, path) -> None:
    from .util import atomic_write_bytes

    atomic_write_bytes(path, vocabulary_to_bytes(v))


def load_vocabulary(path) -> Vocabulary:
    with open(path, "rb") as fh:
        return vocabulary_from_bytes(fh.read())
