"""Command-line front end.

Exit codes: 0 ok, 1 internal error, 2 E_DATASET, 3 E_VOCAB_SIZE,
4 E_INDEX, 5 E_PROBE, 6 E_CONFIG. Failures print one line
``error: <CODE>: <message>`` on standard error.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config, parse_key_values
from .contour import contour_pyramid, keypoints_in_pyramid
from .errors import ConfigError, DatasetError, ProbeError, ShapebagError, VocabSizeError
from .features import shape_descriptors, texture_descriptors
from .imaging import load_image, load_mask, threshold_mask, trace_boundaries
from .util import atomic_write_text

log = logging.getLogger("shapebag")

DEFAULT_NS = (1, 5, 10, 20)
SYSTEMS = (("fused", None), ("texture", 0.0), ("shape", 1.0))


def _csv(rows) -> str:
    return "".join(",".join(str(v) for v in row) + "\n" for row in rows)


def _emit(text: str, out) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        atomic_write_text(out, text)


def _load_pair(image, mask, cfg: RunConfig):
    img = load_image(image)
    if mask is None:
        return img, threshold_mask(img, cfg.mask_threshold)
    m = load_mask(mask)
    if m.bits.shape != img.pixels.shape:
        raise DatasetError(f"mask {mask} and image {image} differ in size")
    return img, m


def _parse_ns(text: str) -> tuple[int, ...]:
    try:
        ns = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad rank list {text!r}") from None
    if not ns or any(n < 1 for n in ns):
        raise ConfigError("ranks must be positive integers")
    return ns


# ---------------------------------------------------------------- commands


def cmd_build(args, cfg: RunConfig) -> int:
    from .retrieval import build_index, read_manifest, save_index

    records = read_manifest(args.manifest)
    index = build_index(records, cfg, threads=args.threads)
    save_index(index, args.out)
    n_tex = sum(s.descriptor_counts[0] for s in index.signatures)
    n_shp = sum(s.descriptor_counts[1] for s in index.signatures)
    f = index.fusion
    if not args.quiet:
        print(f"objects: {len(index.signatures)}")
        print(f"descriptors: texture {n_tex}, shape {n_shp}")
        print(f"vocabulary: texture {index.texture_vocab.k}, shape {index.shape_vocab.k}")
        print(f"W: {f.W:g} ({f.objective})")
        print("objective: " + " ".join(f"{w:g}:{v:.4f}" for w, v in zip(f.grid, f.objective_values)))
        print(f"index: {args.out}")
    return 0


def cmd_query(args, cfg: RunConfig) -> int:
    from .retrieval import load_index, query

    index = load_index(args.index)
    log.info("index config digest: %s", index.config.digest)
    img, mask = _load_pair(args.image, args.mask, index.config)
    results = query(index, img, mask, top_k=args.top_k)
    rows = [("rank", "object_id", "distance", "dt", "ds")]
    rows += [(i, r.object_id, repr(r.distance), repr(r.texture_distance), repr(r.shape_distance))
             for i, r in enumerate(results, 1)]
    _emit(_csv(rows), args.out)
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from .plotting import plot_fusion_objective, plot_rank_curves
    from .retrieval import evaluate, load_index, probe_signatures, read_manifest

    Ns = _parse_ns(args.ns)
    index = load_index(args.index)
    log.info("index config digest: %s", index.config.digest)
    records = read_manifest(args.probes)
    if not records:
        raise ProbeError(f"probe manifest {args.probes} lists no probes")
    probes = probe_signatures(index, records, threads=args.threads)
    gt = {p.query_id: p.object_id for p in probes}

    summary = [("yaw_offset", "system", "n_queries") + tuple(f"rank{n}" for n in Ns)]
    rates = [("system", "yaw_offset", "N", "rate")]
    per_query = [("system", "yaw_offset", "query_id", "object_id", "rank")]
    curves: dict[str, dict[str, dict[int, float]]] = {}
    for name, W in SYSTEMS:
        for rep in evaluate(index, probes, Ns, W=W):
            summary.append((rep.yaw_offset, name, len(rep.per_query_ranks)) + tuple(f"{r:.6f}" for r in rep.recognition_rates))
            for n, r in zip(Ns, rep.recognition_rates):
                rates.append((name, rep.yaw_offset, n, f"{r:.6f}"))
            for qid, rank in rep.per_query_ranks:
                per_query.append((name, rep.yaw_offset, qid, gt[qid], rank))
            curves.setdefault(name, {})[rep.yaw_offset] = dict(zip(Ns, rep.recognition_rates))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "summary.csv", _csv(summary))
    atomic_write_text(out / "rates.csv", _csv(rates))
    atomic_write_text(out / "per_query.csv", _csv(per_query))
    if not args.no_plots:
        plot_rank_curves(curves, out / "rank_curves.png")
        f = index.fusion
        plot_fusion_objective(f.grid, f.objective_values, f.W, f.objective, out / "fusion_objective.png")
    if not args.quiet:
        sys.stdout.write(_csv(summary))
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    from .synth import generate

    out = generate(args.out_dir, args.n_objects, cfg.seed, cfg)
    if not args.quiet:
        print(f"wrote {args.n_objects} objects to {out}")
    return 0


def cmd_dump_keypoints(args, cfg: RunConfig) -> int:
    img, mask = _load_pair(args.image, args.mask, cfg)
    rows = [("contour_id", "vertex_index", "scale", "curvature", "x", "y")]
    for cid, c in enumerate(trace_boundaries(mask, cfg.min_contour_length)):
        levels = contour_pyramid(c, cfg.n_octaves, cfg.kernel_sigma)
        for kp in keypoints_in_pyramid(levels, cfg.min_abs_curvature, cid):
            rows.append((kp.contour_id, kp.vertex_index, kp.scale, f"{kp.curvature:.6g}",
                         f"{kp.position[0]:.6g}", f"{kp.position[1]:.6g}"))
    _emit(_csv(rows), args.out)
    return 0


def cmd_dump_descriptors(args, cfg: RunConfig) -> int:
    img, mask = _load_pair(args.image, args.mask, cfg)
    oid = args.object_id or Path(args.image).stem
    buf = io.StringIO()
    if args.modality == "texture":
        buf.write("object_id,modality,x,y,scale,octave,level,response,values\n")
        for d in texture_descriptors(img, mask, cfg):
            k = d.source
            meta = [oid, "texture", f"{k.position[0]:.6g}", f"{k.position[1]:.6g}", f"{k.scale:.6g}",
                    k.octave, k.level, f"{k.response:.6g}"]
            buf.write(",".join(str(v) for v in meta + [f"{x:.6g}" for x in d.values]) + "\n")
    else:
        buf.write("object_id,modality,contour_id,vertex_index,scale,curvature,x,y,values\n")
        for d in shape_descriptors(mask, cfg)[1]:
            k = d.source
            meta = [oid, "shape", k.contour_id, k.vertex_index, k.scale, f"{k.curvature:.6g}",
                    f"{k.position[0]:.6g}", f"{k.position[1]:.6g}"]
            buf.write(",".join(str(v) for v in meta + [f"{x:.6g}" for x in d.values]) + "\n")
    _emit(buf.getvalue(), args.out)
    return 0


# ---------------------------------------------------------------- parser


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in u64")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapebag", description="Texture and shape bag-of-words object retrieval.")
    p.add_argument("--version", action="version", version=f"shapebag {__version__}")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="worker processes, 0 = one per CPU")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override, repeatable")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build an index from a gallery manifest")
    b.add_argument("manifest")
    b.add_argument("out", help="index file to write")
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("query", help="rank gallery objects for one image")
    q.add_argument("index")
    q.add_argument("image")
    q.add_argument("--mask", help="mask file; default thresholds the image")
    q.add_argument("--top-k", type=int, default=10)
    q.add_argument("--out", help="CSV path, default standard output")
    q.set_defaults(func=cmd_query)

    e = sub.add_parser("eval", help="rank-N recognition rates for a probe manifest")
    e.add_argument("index")
    e.add_argument("probes")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--ns", default=",".join(map(str, DEFAULT_NS)), help="comma-separated ranks")
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("out_dir")
    s.add_argument("--n-objects", type=int, default=30)
    s.set_defaults(func=cmd_synth)

    for name, fn in (("dump-keypoints", cmd_dump_keypoints), ("dump-descriptors", cmd_dump_descriptors)):
        d = sub.add_parser(name, help=f"{name.split('-')[1]} of one image as CSV")
        d.add_argument("image")
        d.add_argument("--mask")
        d.add_argument("--out", help="CSV path, default standard output")
        if fn is cmd_dump_descriptors:
            d.add_argument("--modality", choices=("texture", "shape"), default="shape")
            d.add_argument("--object-id")
        d.set_defaults(func=fn)
    return p


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides.update(parse_key_values(item))
    cfg = load_config(args.config)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.threads < 0:
        raise ConfigError("--threads must be >= 0")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = _resolve_config(args)
        print(f"config digest: {cfg.digest}", file=sys.stderr)
        return args.func(args, cfg)
    except VocabSizeError as exc:
        print(f"error: {exc.code}: {exc} (suggested k = {exc.suggested_k})", file=sys.stderr)
        return exc.exit_status
    except ShapebagError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_status


if __name__ == "__main__":
    sys.exit(main())
