"""Run configuration: every tunable default, a key = value file format, env overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, fields

from .errors import ConfigError

ENV_PREFIX = "SHAPEBAG_"


@dataclass(frozen=True)
class RunConfig:
    # imaging
    mask_threshold: float = 0.1
    min_contour_length: int = 16
    # contour keypoints
    kernel_sigma: float = 2.0
    n_octaves: int = 4
    min_abs_curvature: float = 0.05
    # boundary descriptor
    n_s: int = 13
    span: int = 24
    # texture detector
    texture_octaves: int = 4
    texture_levels: int = 3
    texture_threshold: float = 0.03
    # vocabularies
    vocab_texture: int = 5000
    vocab_shape: int = 3000
    kmeans_max_iters: int = 100
    tfidf: bool = True
    # fusion
    n_warps: int = 5
    warp_magnitude: float = 0.08
    grid_step: float = 0.05
    fusion_objective: str = "rank1"
    seed: int = 0
    # synthetic corpus
    synth_size: int = 128
    synth_views: int = 5
    synth_magnitudes: tuple[float, ...] = (0.08,)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (0.0 <= self.mask_threshold <= 1.0, "mask_threshold must lie in [0, 1]"),
            (self.min_contour_length >= 3, "min_contour_length must be >= 3"),
            (self.kernel_sigma > 0, "kernel_sigma must be positive"),
            (1 <= self.n_octaves <= 16, "n_octaves must lie in [1, 16]"),
            (self.min_abs_curvature >= 0, "min_abs_curvature must be nonnegative"),
            (2 <= self.n_s <= 256, "n_s must lie in [2, 256]"),
            (self.span >= 1, "span must be >= 1"),
            (1 <= self.texture_octaves <= 12, "texture_octaves must lie in [1, 12]"),
            (1 <= self.texture_levels <= 10, "texture_levels must lie in [1, 10]"),
            (self.texture_threshold >= 0, "texture_threshold must be nonnegative"),
            (self.vocab_texture >= 1 and self.vocab_shape >= 1, "vocabulary sizes must be positive"),
            (self.kmeans_max_iters >= 1, "kmeans_max_iters must be positive"),
            (self.n_warps >= 1, "n_warps must be positive"),
            (0.0 <= self.warp_magnitude <= 0.3, "warp_magnitude must lie in [0, 0.3]"),
            (0 < self.grid_step <= 1 and abs(round(1 / self.grid_step) * self.grid_step - 1) < 1e-9,
             "grid_step must divide 1 evenly"),
            (self.fusion_objective in ("rank1", "margin"), "fusion_objective must be rank1 or margin"),
            (0 <= self.seed < 2**64, "seed must fit in u64"),
            (self.synth_size >= 64, "synth_size must be >= 64"),
            (self.synth_views >= 0, "synth_views must be nonnegative"),
            (all(0.0 <= m <= 0.3 for m in self.synth_magnitudes), "synth_magnitudes must lie in [0, 0.3]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    # -------------------------------------------------------------- text form

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        values = parse_key_values(text)
        return (base or cls()).with_overrides(values)

    def with_overrides(self, values: dict[str, str]) -> "RunConfig":
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _parse(known[key].type, raw, key)
        return self.replace(**changes)


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(type_name, raw: str, key: str):
    t = type_name if isinstance(type_name, str) else getattr(type_name, "__name__", str(type_name))
    try:
        if t == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        if t.startswith("tuple"):
            return tuple(float(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def load_config(path=None, env=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then SHAPEBAG_* environment variables, then ``overrides``."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = RunConfig.from_text(fh.read(), cfg)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    env = os.environ if env is None else env
    env_values = {k[len(ENV_PREFIX):].lower(): v for k, v in env.items() if k.startswith(ENV_PREFIX)}
    if env_values:
        cfg = cfg.with_overrides(env_values)
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg
