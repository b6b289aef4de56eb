"""Run configuration: INI file values overridden by command-line flags."""
import configparser
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigurationError

SECTION = "photodeg"
OUTPUT_ENV = "PHOTODEG_OUTPUT_DIR"
FORMAT_VERSION = "1"


@dataclass(frozen=True)
class RunConfig:
    command: str = ""
    model: str = "B"
    quad_order: int = 0
    bin_min: int = 60
    B: int = 50000
    level: float = 0.95
    seed: int = 0
    threshold: float = -0.40
    floor: float = -0.6
    exclude: str = ""
    n_starts: int = 5
    n_jobs: int = 1
    out: str = ""
    format_version: str = FORMAT_VERSION

    def __post_init__(self):
        if self.model not in ("A", "B", "C"):
            raise ConfigurationError(f"model must be A, B or C, not {self.model!r}")
        if self.quad_order and self.quad_order < 5:
            raise ConfigurationError("quad_order must be 0 (model default) or at least 5")
        if not 0.0 < self.level < 1.0:
            raise ConfigurationError("level must lie in (0, 1)")
        if self.B < 1000:
            raise ConfigurationError("B must be at least 1000")
        if self.bin_min <= 0 or (24 * 60) % self.bin_min or self.bin_min % 12:
            raise ConfigurationError("bin width must divide 24 h and be a multiple of the 12-minute record")
        if not -0.6 < self.threshold < 0.0:
            raise ConfigurationError("threshold must lie in (-0.6, 0)")
        if self.n_starts < 1 or self.n_jobs < 1:
            raise ConfigurationError("n_starts and n_jobs must be positive")

    def as_dict(self):
        return asdict(self)

    @property
    def output_dir(self):
        """Flag value, then the environment override, then ``photodeg_out``."""
        return Path(self.out or os.environ.get(OUTPUT_ENV) or "photodeg_out")


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def _cast(name, value):
    kind = _TYPES[name]
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        return _CASTS[kind](value)
    except ValueError:
        raise ConfigurationError(f"config value {name}={value!r} is not a valid {kind}") from None


def read_config_file(path):
    parser = configparser.ConfigParser()
    path = Path(path)
    if not parser.read(path):
        raise ConfigurationError(f"cannot read config file {path}")
    if not parser.has_section(SECTION):
        raise ConfigurationError(f"config file {path} has no [{SECTION}] section")
    out = {}
    for key, value in parser.items(SECTION):
        name = key.replace("-", "_")
        if name == "b":
            name = "B"
        if name not in _TYPES or name in ("command", "format_version"):
            raise ConfigurationError(f"unknown config key {key!r}")
        out[name] = _cast(name, value)
    return out


def build_config(command, flags, config_path=None):
    """Merge defaults, the config file and explicit flags (``None`` means unset)."""
    values = {}
    if config_path:
        values.update(read_config_file(config_path))
    values.update({k: v for k, v in flags.items() if v is not None and k in _TYPES})
    values["command"] = command
    return RunConfig(**values)
