"""Object index: build, persist, query and rank-N evaluation."""

from __future__ import annotations

import hashlib
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import crc32c
import numpy as np

from . import __version__
from .codebook import (
    IdfModel,
    Vocabulary,
    WordHistogram,
    apply_tfidf,
    build_histogram,
    fit_idf,
    l2_normalize,
    train_vocabulary,
    vocabulary_from_bytes,
    vocabulary_to_bytes,
)
from .config import RunConfig, parse_key_values
from .errors import (
    ChecksumError,
    DatasetError,
    IndexFormatError,
    IndexVersionError,
    ProbeError,
    ShapebagError,
)
from .features import ImageFeatures, extract_features
from .fusion import FusionModel, apply_warp, fused_distance, learn_weight, random_warp
from .imaging import BinaryMask, GrayImage, load_image, load_mask, threshold_mask
from .util import atomic_write_bytes

log = logging.getLogger(__name__)

INDEX_MAGIC = b"SBIX"
INDEX_VERSION = 1

# stream tags keep the RNG streams of different consumers of one seed apart
WARP_STREAM = 1
SYNTH_VIEW_STREAM = 2


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class ManifestRecord:
    object_id: str
    view_label: str
    image_path: str
    mask_path: str | None  # None: derive by thresholding

    def load(self, cfg: RunConfig) -> tuple[GrayImage, BinaryMask]:
        img = load_image(self.image_path)
        mask = threshold_mask(img, cfg.mask_threshold) if self.mask_path is None else load_mask(self.mask_path)
        if mask.bits.shape != img.pixels.shape:
            raise DatasetError(f"{self.object_id}: mask and image sizes differ")
        return img, mask


def read_manifest(path) -> list[ManifestRecord]:
    """Tab-separated ``object_id, view_label, image_path, mask_path`` per line.

    ``#`` starts a comment; relative paths resolve against the manifest's
    directory; a mask of ``-`` means threshold the image.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise DatasetError(f"manifest {path} is not UTF-8") from None
    base = path.parent
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) not in (3, 4):
            raise DatasetError(f"{path}:{lineno}: expected 4 tab-separated fields")
        object_id, view, image = parts[0].strip(), parts[1].strip(), parts[2].strip()
        mask = parts[3].strip() if len(parts) == 4 else "-"
        if not object_id:
            raise DatasetError(f"{path}:{lineno}: empty object id")
        records.append(
            ManifestRecord(
                object_id,
                view,
                str(base / image),
                None if mask in ("", "-") else str(base / mask),
            )
        )
    return records


def dataset_digest(records) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(f"{rec.object_id}\t{rec.view_label}\n".encode())
        for p in (rec.image_path, rec.mask_path):
            if p is None:
                h.update(b"-")
                continue
            try:
                h.update(Path(p).read_bytes())
            except OSError as exc:
                raise DatasetError(f"cannot read {p}: {exc.strerror}") from None
    return h.hexdigest()


# ---------------------------------------------------------------- index types


@dataclass(frozen=True, eq=False)
class ObjectSignature:
    object_id: str
    view_label: str
    texture_hist: WordHistogram
    shape_hist: WordHistogram
    descriptor_counts: tuple[int, int]

    def __eq__(self, other):
        if not isinstance(other, ObjectSignature):
            return NotImplemented
        return (
            self.object_id == other.object_id
            and self.view_label == other.view_label
            and self.texture_hist == other.texture_hist
            and self.shape_hist == other.shape_hist
            and tuple(self.descriptor_counts) == tuple(other.descriptor_counts)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Index:
    texture_vocab: Vocabulary
    shape_vocab: Vocabulary
    texture_idf: IdfModel
    shape_idf: IdfModel
    signatures: tuple[ObjectSignature, ...]
    fusion: FusionModel
    config: RunConfig
    build_manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.object_id for s in self.signatures]
        if len(set(ids)) != len(ids):
            raise DatasetError("object ids must be unique within an index")
        for s in self.signatures:
            if s.texture_hist.k != self.texture_vocab.k or s.shape_hist.k != self.shape_vocab.k:
                raise IndexFormatError(f"signature {s.object_id} does not match vocabulary size")
        object.__setattr__(self, "signatures", tuple(self.signatures))

    def __eq__(self, other):
        if not isinstance(other, Index):
            return NotImplemented
        return (
            self.texture_vocab == other.texture_vocab
            and self.shape_vocab == other.shape_vocab
            and self.texture_idf == other.texture_idf
            and self.shape_idf == other.shape_idf
            and self.signatures == other.signatures
            and self.fusion == other.fusion
            and self.config == other.config
            and self.build_manifest == other.build_manifest
        )

    __hash__ = None

    @property
    def object_ids(self) -> list[str]:
        return [s.object_id for s in self.signatures]

    def gallery_matrix(self, modality: str) -> np.ndarray:
        attr = "texture_hist" if modality == "texture" else "shape_hist"
        return np.array([getattr(s, attr).values for s in self.signatures], dtype=np.float64)


@dataclass(frozen=True)
class QueryResult:
    object_id: str
    distance: float
    texture_distance: float
    shape_distance: float


@dataclass(frozen=True)
class RankReport:
    yaw_offset: str
    rank_thresholds: tuple[int, ...]
    recognition_rates: tuple[float, ...]
    per_query_ranks: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class Probe:
    query_id: str
    object_id: str  # ground truth
    view_label: str
    signature: ObjectSignature


# ---------------------------------------------------------------- building


def _normalise(h: WordHistogram, idf: IdfModel, cfg: RunConfig) -> WordHistogram:
    return apply_tfidf(h, idf) if cfg.tfidf else l2_normalize(h)


def make_signature(feats: ImageFeatures, index_parts, cfg: RunConfig, object_id: str, view_label: str) -> ObjectSignature:
    tv, sv, ti, si = index_parts
    return ObjectSignature(
        object_id,
        view_label,
        _normalise(build_histogram(tv, feats.texture), ti, cfg),
        _normalise(build_histogram(sv, feats.shape), si, cfg),
        (len(feats.texture), len(feats.shape)),
    )


def _object_work(args):
    """Features of one gallery image and of its synthetic warps."""
    rec, cfg, position = args
    img, mask = rec.load(cfg)
    if mask.foreground_count == 0:
        raise DatasetError(f"{rec.object_id}: mask has no foreground pixels")
    feats = extract_features(img, mask, cfg)
    rng = np.random.default_rng([cfg.seed, WARP_STREAM, position])
    warped = []
    for _ in range(cfg.n_warps):
        wimg, wmask = apply_warp(img, mask, random_warp(cfg.warp_magnitude, rng))
        warped.append(extract_features(wimg, wmask, cfg))
    return feats, warped


def _map(fn, items, threads: int):
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads or None) as pool:
        return list(pool.map(fn, items))


def build_index(records, cfg: RunConfig, threads: int = 1) -> Index:
    """Gallery images to an index: features, vocabularies, tf-idf, fusion weight."""
    records = sorted(records, key=lambda r: r.object_id)
    ids = [r.object_id for r in records]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise DatasetError(f"duplicate object id(s) in gallery: {', '.join(dupes)}")
    if len(records) < 2:
        raise DatasetError("a gallery needs at least two objects")
    digest = dataset_digest(records)

    work = _map(_object_work, [(r, cfg, i) for i, r in enumerate(records)], threads)
    gallery_feats = [w[0] for w in work]

    tex_all = np.concatenate([f.texture for f in gallery_feats])
    shp_all = np.concatenate([f.shape for f in gallery_feats])
    log.info("descriptors: texture %d, shape %d", len(tex_all), len(shp_all))
    tv = train_vocabulary(tex_all, cfg.vocab_texture, cfg.seed, cfg.kmeans_max_iters, "texture")
    sv = train_vocabulary(shp_all, cfg.vocab_shape, cfg.seed, cfg.kmeans_max_iters, "shape")
    ti = fit_idf([build_histogram(tv, f.texture) for f in gallery_feats])
    si = fit_idf([build_histogram(sv, f.shape) for f in gallery_feats])
    parts = (tv, sv, ti, si)

    signatures = [make_signature(f, parts, cfg, r.object_id, r.view_label) for f, r in zip(gallery_feats, records)]
    warped = [
        [make_signature(wf, parts, cfg, r.object_id, "warp") for wf in w[1]] for w, r in zip(work, records)
    ]
    fusion = learn_weight(
        [(s.texture_hist, s.shape_hist) for s in signatures],
        [[(q.texture_hist, q.shape_hist) for q in qs] for qs in warped],
        grid_step=cfg.grid_step,
        objective=cfg.fusion_objective,
        n_warps_per_image=cfg.n_warps,
        warp_magnitude=cfg.warp_magnitude,
        seed=cfg.seed,
    )
    manifest = {
        "tool": f"shapebag {__version__}",
        "dataset_digest": digest,
        "config_digest": cfg.digest,
        "n_objects": str(len(records)),
    }
    return Index(tv, sv, ti, si, tuple(signatures), fusion, cfg, manifest)


# ---------------------------------------------------------------- querying


def image_signature(index: Index, img: GrayImage, mask: BinaryMask, object_id="query", view_label="") -> ObjectSignature:
    feats = extract_features(img, mask, index.config)
    parts = (index.texture_vocab, index.shape_vocab, index.texture_idf, index.shape_idf)
    return make_signature(feats, parts, index.config, object_id, view_label)


def signature_distances(index: Index, sig: ObjectSignature) -> tuple[np.ndarray, np.ndarray]:
    """Texture and shape distances from ``sig`` to every gallery object, in index order."""
    dt = np.linalg.norm(index.gallery_matrix("texture") - sig.texture_hist.values, axis=1)
    ds = np.linalg.norm(index.gallery_matrix("shape") - sig.shape_hist.values, axis=1)
    return dt, ds


def rank_signature(index: Index, sig: ObjectSignature, top_k: int | None = None, W: float | None = None) -> list[QueryResult]:
    W = index.fusion.W if W is None else W
    dt, ds = signature_distances(index, sig)
    d = fused_distance(dt, ds, W)
    ids = index.object_ids
    order = sorted(range(len(ids)), key=lambda i: (d[i], ids[i]))
    if top_k is not None:
        order = order[: max(top_k, 0)]
    return [QueryResult(ids[i], float(d[i]), float(dt[i]), float(ds[i])) for i in order]


def query(index: Index, img: GrayImage, mask: BinaryMask, top_k: int = 10, W: float | None = None) -> list[QueryResult]:
    """Gallery objects by ascending fused distance; ties by object id."""
    return rank_signature(index, image_signature(index, img, mask), top_k, W)


# ---------------------------------------------------------------- evaluation


def rank_rates(ranks, Ns) -> tuple[float, ...]:
    ranks = np.asarray(list(ranks))
    if len(ranks) == 0:
        raise ProbeError("no probes to evaluate")
    return tuple(float(np.mean(ranks <= n)) for n in Ns)


def correct_rank(d: np.ndarray, true_idx: int) -> int:
    """1 + number of other gallery objects at distance <= the correct one (ties count against)."""
    others = np.delete(d, true_idx)
    return 1 + int(np.sum(others <= d[true_idx]))


def probe_signatures(index: Index, records, cfg: RunConfig | None = None, threads: int = 1) -> list[Probe]:
    known = set(index.object_ids)
    records = list(records)
    if not records:
        raise ProbeError("probe set is empty")
    for rec in records:
        if rec.object_id not in known:
            raise ProbeError(f"probe ground truth {rec.object_id!r} is not in the index")
    sigs = _map(_probe_work, [(index, rec) for rec in records], threads)
    return [
        Probe(f"{rec.object_id}@{rec.view_label}#{i}", rec.object_id, rec.view_label, sig)
        for i, (rec, sig) in enumerate(zip(records, sigs))
    ]


def _probe_work(args):
    index, rec = args
    img, mask = rec.load(index.config)
    return image_signature(index, img, mask, rec.object_id, rec.view_label)


def _offset_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def evaluate(index: Index, probes, Ns=(1, 5, 10, 20), W: float | None = None) -> list[RankReport]:
    """Rank-N recognition rates, one report per probe view label."""
    probes = list(probes)
    if not probes:
        raise ProbeError("probe set is empty")
    W = index.fusion.W if W is None else W
    ids = index.object_ids
    pos = {oid: i for i, oid in enumerate(ids)}
    groups: dict[str, list[tuple[str, int]]] = {}
    for p in probes:
        if p.object_id not in pos:
            raise ProbeError(f"probe ground truth {p.object_id!r} is not in the index")
        dt, ds = signature_distances(index, p.signature)
        rank = correct_rank(fused_distance(dt, ds, W), pos[p.object_id])
        groups.setdefault(p.view_label, []).append((p.query_id, rank))
    Ns = tuple(int(n) for n in Ns)
    reports = []
    for label in sorted(groups, key=_offset_key):
        ranks = groups[label]
        reports.append(RankReport(label, Ns, rank_rates([r for _, r in ranks], Ns), tuple(ranks)))
    return reports


# ---------------------------------------------------------------- persistence


def _kv_text(d: dict) -> bytes:
    return "".join(f"{k} = {v}\n" for k, v in d.items()).encode("utf-8")


def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x)


def _fusion_block(f: FusionModel) -> bytes:
    return _kv_text(
        {
            "W": repr(float(f.W)),
            "grid_step": repr(float(f.grid_step)),
            "objective": f.objective,
            "n_warps": str(f.n_warps_per_image),
            "magnitude": repr(float(f.warp_magnitude)),
            "seed": str(f.seed),
            "grid": _floats(f.grid),
            "objective_values": _floats(f.objective_values),
        }
    )


def _stats_block(tv: Vocabulary, sv: Vocabulary) -> bytes:
    d = {}
    for name, v in (("texture", tv), ("shape", sv)):
        st = v.train_stats
        if "iterations" in st:
            d[f"{name}.iterations"] = str(int(st["iterations"]))
        if "distortion" in st:
            d[f"{name}.distortion"] = repr(float(st["distortion"]))
        if "history" in st:
            d[f"{name}.history"] = _floats(st["history"])
    return _kv_text(d)


def _parse_stats(text: str) -> dict[str, dict]:
    out: dict[str, dict] = {"texture": {}, "shape": {}}
    for key, value in parse_key_values(text).items():
        name, _, field_name = key.partition(".")
        if name not in out:
            raise IndexFormatError(f"unknown stats key {key!r}")
        if field_name == "iterations":
            out[name][field_name] = int(value)
        elif field_name == "distortion":
            out[name][field_name] = float(value)
        elif field_name == "history":
            out[name][field_name] = list(_parse_floats(value))
    return out


def _idf_block(m: IdfModel) -> bytes:
    tag = 0 if m.modality == "texture" else 1
    return struct.pack("<BII", tag, m.n_docs, len(m.idf)) + m.idf.astype("<f8").tobytes()


def _parse_idf(data: bytes) -> IdfModel:
    tag, n_docs, k = struct.unpack_from("<BII", data, 0)
    if len(data) != 9 + 8 * k:
        raise IndexFormatError("idf block has the wrong length")
    return IdfModel("texture" if tag == 0 else "shape", np.frombuffer(data, "<f8", k, 9).copy(), n_docs)


def _str_bytes(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _hist_bytes(h: WordHistogram) -> bytes:
    values = np.asarray(h.values, dtype=np.float64)
    nz = np.flatnonzero(values)
    pairs = np.empty(len(nz), dtype=[("w", "<u4"), ("v", "<f8")])
    pairs["w"] = nz
    pairs["v"] = values[nz]
    return struct.pack("<II", h.k, len(nz)) + pairs.tobytes()


def _signatures_block(sigs) -> bytes:
    out = [struct.pack("<I", len(sigs))]
    for s in sigs:
        out.append(_str_bytes(s.object_id))
        out.append(_str_bytes(s.view_label))
        out.append(struct.pack("<II", *s.descriptor_counts))
        out.append(_hist_bytes(s.texture_hist))
        out.append(_hist_bytes(s.shape_hist))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexFormatError("index file is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def hist(self, modality: str) -> WordHistogram:
        k, nnz = self.unpack("<II")
        pairs = np.frombuffer(self.take(12 * nnz), dtype=[("w", "<u4"), ("v", "<f8")])
        values = np.zeros(k)
        if nnz and pairs["w"].max() >= k:
            raise IndexFormatError("histogram word index out of range")
        values[pairs["w"].astype(np.int64)] = pairs["v"]
        return WordHistogram(modality, values, normalized=True)


def _parse_signatures(data: bytes) -> list[ObjectSignature]:
    r = _Reader(data)
    (count,) = r.unpack("<I")
    sigs = []
    for _ in range(count):
        oid = r.string()
        label = r.string()
        counts = r.unpack("<II")
        sigs.append(ObjectSignature(oid, label, r.hist("texture"), r.hist("shape"), tuple(counts)))
    if r.pos != len(data):
        raise IndexFormatError("trailing bytes in signature block")
    return sigs


def _parse_fusion(text: str) -> FusionModel:
    kv = parse_key_values(text)
    try:
        return FusionModel(
            W=float(kv["W"]),
            grid=_parse_floats(kv["grid"]),
            objective_values=_parse_floats(kv["objective_values"]),
            grid_step=float(kv["grid_step"]),
            objective=kv["objective"],
            n_warps_per_image=int(kv["n_warps"]),
            warp_magnitude=float(kv["magnitude"]),
            seed=int(kv["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise IndexFormatError(f"bad fusion block: {exc}") from None


def index_to_bytes(index: Index) -> bytes:
    sections = [
        (b"CONF", index.config.to_text().encode("utf-8")),
        (b"MANI", _kv_text(index.build_manifest)),
        (b"VOCT", vocabulary_to_bytes(index.texture_vocab)),
        (b"VOCS", vocabulary_to_bytes(index.shape_vocab)),
        (b"VSTT", _stats_block(index.texture_vocab, index.shape_vocab)),
        (b"IDFT", _idf_block(index.texture_idf)),
        (b"IDFS", _idf_block(index.shape_idf)),
        (b"SIGS", _signatures_block(index.signatures)),
        (b"FUSE", _fusion_block(index.fusion)),
    ]
    body = [INDEX_MAGIC, struct.pack("<I", INDEX_VERSION)]
    for tag, payload in sections:
        body.append(tag + struct.pack("<I", len(payload)) + payload)
    data = b"".join(body)
    return data + struct.pack("<I", crc32c.crc32c(data))


def index_from_bytes(data: bytes) -> Index:
    if len(data) < 12 or data[:4] != INDEX_MAGIC:
        raise IndexFormatError("not an index file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != INDEX_VERSION:
        raise IndexVersionError(f"index format version {version} is not supported (expected {INDEX_VERSION})")
    (stored,) = struct.unpack_from("<I", data, len(data) - 4)
    if crc32c.crc32c(data[:-4]) != stored:
        raise ChecksumError("index checksum mismatch (file corrupted or truncated)")
    r = _Reader(data[:-4])
    r.pos = 8
    sections = {}
    while r.pos < len(r.data):
        tag = r.take(4)
        (n,) = r.unpack("<I")
        sections[tag] = r.take(n)
    required = (b"CONF", b"MANI", b"VOCT", b"VOCS", b"VSTT", b"IDFT", b"IDFS", b"SIGS", b"FUSE")
    missing = [t.decode() for t in required if t not in sections]
    if missing:
        raise IndexFormatError(f"index is missing section(s): {', '.join(missing)}")
    try:
        stats = _parse_stats(sections[b"VSTT"].decode("utf-8"))
        cfg = RunConfig.from_text(sections[b"CONF"].decode("utf-8"))
        return Index(
            texture_vocab=vocabulary_from_bytes(sections[b"VOCT"], stats["texture"]),
            shape_vocab=vocabulary_from_bytes(sections[b"VOCS"], stats["shape"]),
            texture_idf=_parse_idf(sections[b"IDFT"]),
            shape_idf=_parse_idf(sections[b"IDFS"]),
            signatures=tuple(_parse_signatures(sections[b"SIGS"])),
            fusion=_parse_fusion(sections[b"FUSE"].decode("utf-8")),
            config=cfg,
            build_manifest=parse_key_values(sections[b"MANI"].decode("utf-8")),
        )
    except IndexFormatError:
        raise
    except (ShapebagError, ValueError, UnicodeDecodeError, struct.error) as exc:
        raise IndexFormatError(f"malformed index: {exc}") from None


def save_index(index: Index, path) -> None:
    atomic_write_bytes(path, index_to_bytes(index))


def load_index(path) -> Index:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IndexFormatError(f"cannot read index {path}: {exc.strerror}") from None
    return index_from_bytes(data)
