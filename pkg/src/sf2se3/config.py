"""Run configuration as sectioned ``key = value`` text.

Sections mirror the parameter blocks: ``[preprocess]``, ``[noise]``,
``[proposal]``, ``[selection]``, ``[metrics]``, ``[io]``. Leaving
``sigma_geo_2d`` empty ties it to twice the stride.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .consensus import NoiseParams
from .metrics import DEFAULT_FUSE_ROT_DEG, DEFAULT_FUSE_TRANSL
from .preprocess import DEFAULT_DEPTH_JUMP, DEFAULT_OCCLUSION_LIMIT, DEFAULT_STRIDE
from .proposal import ProposalParams
from .selection import SelectionParams


@dataclass(frozen=True)
class PreprocessParams:
    stride: int = DEFAULT_STRIDE
    occl_limit_px: float = DEFAULT_OCCLUSION_LIMIT
    # empty disables the depth discontinuity test on the warped depth
    depth_jump_rel: float | None = DEFAULT_DEPTH_JUMP

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not self.occl_limit_px > 0:
            raise ValueError("occl_limit_px must be positive")
        if self.depth_jump_rel is not None and not self.depth_jump_rel > 0:
            raise ValueError("depth_jump_rel must be positive")


@dataclass(frozen=True)
class NoiseSettings:
    """Noise deviations; ``sigma_geo_2d = None`` means ``2 * stride``."""

    sigma_u: float = 1.0
    sigma_v: float = 1.0
    sigma_d: float = 1.0
    sigma_geo_2d: float | None = None
    sigma_geo_depth_rel: float = 0.03

    def resolve(self, stride: int) -> NoiseParams:
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        if kw["sigma_geo_2d"] is None:
            del kw["sigma_geo_2d"]
        return NoiseParams.for_stride(stride, **kw)


@dataclass(frozen=True)
class MetricParams:
    fuse_transl: float = DEFAULT_FUSE_TRANSL
    fuse_rot_deg: float = DEFAULT_FUSE_ROT_DEG

    def __post_init__(self):
        if not (self.fuse_transl > 0 and self.fuse_rot_deg > 0):
            raise ValueError("fusion thresholds must be positive")


@dataclass(frozen=True)
class IOParams:
    input: str = ""
    output: str = ""


@dataclass(frozen=True)
class RunConfig:
    preprocess: PreprocessParams = field(default_factory=PreprocessParams)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    proposal: ProposalParams = field(default_factory=ProposalParams)
    selection: SelectionParams = field(default_factory=SelectionParams)
    metrics: MetricParams = field(default_factory=MetricParams)
    io: IOParams = field(default_factory=IOParams)

    def __post_init__(self):
        # fail early on out-of-range noise values
        self.noise_params()

    @property
    def rng_seed(self) -> int:
        return self.proposal.rng_seed

    def noise_params(self) -> NoiseParams:
        return self.noise.resolve(self.preprocess.stride)

    def check_paths(self) -> None:
        """Referenced inputs must exist."""
        if not self.io.input:
            raise ValueError("no input given")
        if not Path(self.io.input).exists():
            raise FileNotFoundError(self.io.input)

    def replace(self, section: str, **values) -> "RunConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **values)})


SECTIONS = tuple(f.name for f in dataclasses.fields(RunConfig))


def section_fields(section: str):
    return dataclasses.fields(RunConfig.__dataclass_fields__[section].default_factory())


def _field_type(f) -> type:
    t = f.type if isinstance(f.type, str) else f.type.__name__
    for name, typ in (("bool", bool), ("int", int), ("float", float)):
        if t.startswith(name):
            return typ
    return str


def parse_value(f, text: str):
    text = text.strip()
    typ = _field_type(f)
    if "None" in str(f.type) and text in ("", "none", "None"):
        return None
    if typ is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{f.name}: not a boolean: {text!r}")
    return typ(text)


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Config from INI text; absent keys keep the values of ``base``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.read_string(text)
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ValueError(f"unknown config sections {unknown}")
    cfg = base or RunConfig()
    for section in SECTIONS:
        if not cp.has_section(section):
            continue
        fields = {f.name: f for f in section_fields(section)}
        values = {}
        for key, raw in cp[section].items():
            if key not in fields:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            values[key] = parse_value(fields[key], raw)
        cfg = cfg.replace(section, **values)
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in SECTIONS:
        block = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in dataclasses.fields(block):
            lines.append(f"{f.name} = {_format_value(getattr(block, f.name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
