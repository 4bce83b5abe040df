"""Experiment configuration: a flat key = value text format.

Every run is described by one RunConfig.  Its canonical text form
(fixed key order, one `key = value` per line) is hashed into
checkpoints so a saved model can be matched to the exact settings
that produced it.  Unknown keys are errors, not warnings.
"""

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SceneConfig
from .errors import ConfigError

__all__ = ["RunConfig", "parse_config", "load_config"]


@dataclass
class RunConfig:
    # model
    num_classes: int = 4
    height: int = 64
    width: int = 64
    widths: tuple = (16, 32, 64, 128)
    n_compress: int = 8
    use_bam: bool = True
    use_arf: bool = True
    gate: str = "sigmoid"
    decoder_wiring: str = "stem-skip;dense-native-scales;fuse-conv3-bn-relu;head-conv1"
    # loss & optimizer
    alpha: float = 0.2
    smooth: float = 1.0
    lr0: float = 0.002
    decay_factor: float = 0.8
    decay_every: int = 100
    batch_size: int = 8
    steps: int = 600
    seed: int = 0
    augment: bool = False
    # data
    data_root: str = "data/quick"
    train_count: int = 200
    test_count: int = 50
    data_seed: int = 77
    scale_min: float = 0.05
    scale_max: float = 0.5
    specular_prob: float = 0.7
    specular_intensity: float = 0.9
    shadow_prob: float = 0.5
    shadow_darkness: float = 0.5
    noise: float = 0.03
    color_overlap: float = 0.0
    confusable: float = 0.0
    tint: float = 0.0
    scale_contrast: float = 0.0
    fg_contrast: float = 1.0

    def __post_init__(self):
        if isinstance(self.widths, list):
            self.widths = tuple(self.widths)
        if self.gate not in ("sigmoid", "softmax"):
            raise ConfigError(f"gate must be sigmoid or softmax, got {self.gate!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0,1], got {self.alpha}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.decay_every < 1:
            raise ConfigError(f"decay_every must be >= 1, got {self.decay_every}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")

    def to_text(self):
        """Canonical form: declaration order, one key per line."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    def config_hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def scene_config(self):
        return SceneConfig(
            height=self.height, width=self.width,
            num_classes=self.num_classes,
            scale_range=(self.scale_min, self.scale_max),
            specular_prob=self.specular_prob,
            specular_intensity=self.specular_intensity,
            shadow_prob=self.shadow_prob,
            shadow_darkness=self.shadow_darkness,
            noise=self.noise, color_overlap=self.color_overlap,
            confusable=self.confusable, tint=self.tint,
            scale_contrast=self.scale_contrast,
            fg_contrast=self.fg_contrast, seed=self.data_seed)

    def model_kwargs(self):
        return dict(num_classes=self.num_classes, widths=self.widths,
                    n=self.n_compress, gate=self.gate, use_bam=self.use_bam,
                    use_arf=self.use_arf, seed=self.seed)

    def replace(self, **overrides):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(overrides)
        return RunConfig(**values)


def _convert(name, kind, raw, lineno):
    try:
        if kind is bool:
            if raw not in ("true", "false"):
                raise ValueError(raw)
            return raw == "true"
        if kind is tuple:
            return tuple(int(v) for v in raw.split(","))
        return kind(raw)
    except ValueError:
        raise ConfigError(
            f"line {lineno}: cannot read {name} = {raw!r} as {kind.__name__}")


def parse_config(text):
    """Parse the flat key = value format; unknown keys are errors."""
    defaults = RunConfig()
    kinds = {f.name: type(getattr(defaults, f.name)) for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, kinds[key], raw, lineno)
    return RunConfig(**values)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no config file at {path}")
    return parse_config(path.read_text())
