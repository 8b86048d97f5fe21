"""Flat ``section.key = value`` configuration files mapped onto dataclasses."""

import dataclasses
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class CorpusPaths:
    weak: str = ""
    strong: str = ""
    unlabeled: str = ""
    eval: str = ""


@dataclass
class FeatureBlock:
    log_eps: float = 1e-10


@dataclass
class NmfBlock:
    max_iters: int = 500
    rel_tol: float = 1e-5
    components: int = 0  # 0 -> one component per weak tag
    seed: int = -1  # -1 -> global seed


@dataclass
class LabelingBlock:
    threshold: float = 0.5
    min_event_seconds: float = 0.1
    max_gap_seconds: float = 0.2


@dataclass
class TrainBlock:
    arch: str = "proposed5"
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    crop_frames: int = 480
    seed: int = -1
    recalibrate_bn: bool = True


@dataclass
class DetectionBlock:
    threshold: float = 0.5
    median_width: int = 5
    min_event_seconds: float = 0.1
    max_gap_seconds: float = 0.2


@dataclass
class TaggingBlock:
    checkpoint: str = ""
    threshold: float = 0.5


@dataclass
class SynthBlock:
    n_clips: int = 10
    clip_seconds: float = 10.0
    events_min: int = 1
    events_max: int = 2
    event_min_seconds: float = 0.5
    event_max_seconds: float = 3.0
    snr_db: float = 20.0
    sample_rate: int = 32000
    prefix: str = "clip"


@dataclass
class PipelineConfig:
    classes: tuple = ("Tone", "Chirp", "Warble")
    combo: str = "C1"
    out: str = "runs"
    seed: int = 0
    bootstrap: bool = False
    corpus: CorpusPaths = field(default_factory=CorpusPaths)
    features: FeatureBlock = field(default_factory=FeatureBlock)
    nmf: NmfBlock = field(default_factory=NmfBlock)
    labeling: LabelingBlock = field(default_factory=LabelingBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    detection: DetectionBlock = field(default_factory=DetectionBlock)
    tagging: TaggingBlock = field(default_factory=TaggingBlock)
    synth: SynthBlock = field(default_factory=SynthBlock)

    def train_seed(self):
        return self.seed if self.train.seed < 0 else self.train.seed

    def nmf_seed(self):
        return self.seed if self.nmf.seed < 0 else self.nmf.seed


def _coerce(current, text, key):
    text = text.strip()
    try:
        if isinstance(current, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return tuple(t.strip() for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(current).__name__}") from None
    return text


def set_value(cfg, dotted, text):
    """Assign ``text`` to the (possibly nested) field named by ``dotted``."""
    parts = dotted.strip().split(".")
    target = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(target) or not hasattr(target, p):
            raise ConfigError(f"unknown config section {dotted!r}")
        target = getattr(target, p)
    name = parts[-1]
    if not dataclasses.is_dataclass(target) or name not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"unknown config key {dotted!r}")
    current = getattr(target, name)
    if dataclasses.is_dataclass(current):
        raise ConfigError(f"{dotted!r} is a section, not a key")
    setattr(target, name, _coerce(current, text, dotted))


def parse_config(text, cfg=None):
    cfg = cfg if cfg is not None else PipelineConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        set_value(cfg, key, value)
    return cfg


def load_config(path=None, overrides=()):
    cfg = PipelineConfig()
    if path:
        with open(path, encoding="utf-8") as fh:
            parse_config(fh.read(), cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        set_value(cfg, key, value)
    return cfg


def _flatten(obj, prefix=""):
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            yield from _flatten(value, f"{prefix}{f.name}.")
        else:
            yield f"{prefix}{f.name}", value


def dump_config(cfg):
    lines = []
    for key, value in _flatten(cfg):
        if isinstance(value, tuple):
            value = ",".join(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
