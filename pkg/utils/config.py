"""Configuration objects and the bracket-section config file reader."""

import configparser
import logging
import os
import re
from dataclasses import dataclass, field, fields, replace

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV = "MDEPTH_THREADS"


@dataclass
class NetConfig:
    """DepthNet / PoseNet architecture settings.

    The defaults describe the full-size network; ``NetConfig.desk()`` gives
    the small configuration used for training on a single CPU core.
    """

    base_channels: int = 96
    encoder_depths: tuple = (2, 2, 2, 2)
    decoder_depths: tuple = (2, 2, 2, 2)
    patch_size: int = 4
    num_scales: int = 4
    state_dim: int = 16
    expand: int = 2
    min_depth: float = 0.1
    max_depth: float = 100.0
    dt_min: float = 1e-3
    dt_max: float = 1e-1
    scan_executor: str = "parallel"
    pose_channels: tuple = (16, 32, 64, 128, 256, 256)
    init: str = "xavier"

    def __post_init__(self):
        if len(self.encoder_depths) != 4 or len(self.decoder_depths) != 4:
            raise ConfigError("encoder_depths and decoder_depths need four stages")
        if self.base_channels < 1 or self.state_dim < 1 or self.expand < 1:
            raise ConfigError("base_channels, state_dim and expand must be positive")
        if not 0 < self.min_depth < self.max_depth:
            raise ConfigError("need 0 < min_depth < max_depth")
        if self.scan_executor not in ("sequential", "parallel"):
            raise ConfigError(f"unknown scan_executor '{self.scan_executor}'")
        if self.init != "xavier":
            raise ConfigError(f"unknown init '{self.init}' (only 'xavier' is supported)")

    @classmethod
    def desk(cls, **overrides):
        values = dict(base_channels=8, state_dim=4)
        values.update(overrides)
        return cls(**values)

    @property
    def encoder_dims(self):
        c = self.base_channels
        return [c, 2 * c, 4 * c, 8 * c]

    @property
    def decoder_dims(self):
        return list(reversed(self.encoder_dims))

    @property
    def input_divisor(self):
        # patch embedding followed by three 2x fusions
        return self.patch_size * 8


@dataclass
class LossConfig:
    alpha: float = 0.85
    smoothness_weight: float = 1e-3
    ssim_window: int = 3
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.smoothness_weight < 0:
            raise ConfigError("smoothness_weight must be non-negative")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ConfigError("ssim_window must be a positive odd number")


@dataclass
class TrainConfig:
    batch_size: int = 2
    lr_initial: float = 1e-4
    lr_after: float = 1e-5
    lr_drop_epoch: int = 15
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 20
    seed: int = 0
    dtype: str = "float32"
    flip_prob: float = 0.5
    jitter_prob: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.05

    def __post_init__(self):
        if not self.lr_after < self.lr_initial:
            raise ConfigError("lr_after must be smaller than lr_initial")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got '{self.dtype}'")


@dataclass
class DataConfig:
    dataset_path: str = None
    synthetic: bool = False
    synthetic_frames: int = 20
    synthetic_static: bool = False
    width: int = 64
    height: int = 64


@dataclass
class ExperimentConfig:
    model: NetConfig = field(default_factory=NetConfig.desk)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self):
        """Flatten into {section: {key: value}} (used by the run registry)."""
        result = {}
        for section in SECTIONS:
            obj = getattr(self, section)
            values = {}
            for f in fields(obj):
                value = getattr(obj, f.name)
                values[f.name] = list(value) if isinstance(value, tuple) else value
            result[section] = values
        return result


SECTIONS = ("model", "loss", "train", "data")

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _locate_lines(text):
    """Map (section, key) to the 1-based line where the key is set."""
    locations = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = _SECTION_RE.match(line)
        if header:
            section = header.group(1).strip()
            locations[(section, None)] = lineno
            continue
        key = _KEY_RE.match(line)
        if key and section is not None:
            locations[(section, key.group(1).strip())] = lineno
    return locations


def _convert(raw, default, key):
    text = raw.strip()
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"'{key}' expects a boolean, got '{raw}'")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(int(part) for part in text.split(",") if part.strip())
    if text.lower() in ("", "none"):
        return None
    return text


def parse_config_text(text, base=None):
    """
    Parse a bracket-section ``key = value`` config into an ExperimentConfig.

    Parameters:
    text (str): File contents
    base (ExperimentConfig): Values to start from (defaults if None)

    Returns:
    ExperimentConfig: The merged configuration
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside of a [section]", lineno=e.lineno) from e
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ConfigError("could not parse line", lineno=lineno) from e
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ConfigError(e.message.split(":")[-1].strip(), lineno=e.lineno) from e

    lines = _locate_lines(text)
    config = base or ExperimentConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", lineno=lines.get((section, None)))
        current = getattr(config, section)
        known = {f.name for f in fields(current)}
        updates = {}
        for key, raw in parser.items(section):
            lineno = lines.get((section, key))
            if key not in known:
                raise ConfigError(f"unknown key '{key}' in [{section}]", lineno=lineno)
            try:
                updates[key] = _convert(raw, getattr(current, key), key)
            except ValueError as e:
                raise ConfigError(f"bad value for '{key}': {raw}", lineno=lineno) from e
        try:
            config = replace(config, **{section: replace(current, **updates)})
        except ConfigError as e:
            # validation errors point at the section header
            raise ConfigError(str(e), lineno=lines.get((section, None))) from e
    return config


def load_config(path, base=None):
    """Read and parse a config file; a missing file is a ConfigError."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file '{path}': {e.strerror}") from e
    config = parse_config_text(text, base=base)
    logger.debug("Loaded config from %s", path)
    return config


def thread_count():
    """Worker threads requested through MDEPTH_THREADS (0 or unset = auto)."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        requested = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got '{raw}'") from e
    if requested <= 0:
        return os.cpu_count() or 1
    return requested


def strict_mode():
    return os.environ.get(THREADS_ENV, "0").strip() == "1"
