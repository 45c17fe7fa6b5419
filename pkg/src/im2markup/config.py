"""Model/training configuration, named presets and the YAML config loader."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError

N_POOLS = 5


@dataclass
class ModelConfig:
    canvas: tuple = (128, 1088)
    channels: tuple = (64, 128, 256, 512, 512)
    pool_stride: tuple = (4, 1)
    n_layers: int = 2
    n_units: int = 1500
    embed_dim: int = 512
    att_hidden: tuple = (256, 128)
    out_hidden: tuple = (358, 358)
    init_hidden: int = 100
    init_mode: str = "learned"
    vocab_size: int = 0
    dtype: str = "float32"
    forget_bias: float = 1.0

    def __post_init__(self):
        for name in ("canvas", "channels", "pool_stride", "att_hidden", "out_hidden"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))

    @property
    def downsample(self):
        return 2 ** len(self.channels)

    @property
    def grid_hat(self):
        """Spatial shape of the CNN output before feature pooling."""
        return self.canvas[0] // self.downsample, self.canvas[1] // self.downsample

    @property
    def grid(self):
        gh, gw = self.grid_hat
        return gh // self.pool_stride[0], gw // self.pool_stride[1]

    @property
    def n_locations(self):
        h, w = self.grid
        return h * w

    @property
    def feature_dim(self):
        return self.channels[-1] * self.pool_stride[0] * self.pool_stride[1]

    @property
    def n_outputs(self):
        """Softmax support size: every id except <pad>."""
        return self.vocab_size - 1

    @property
    def att_units(self):
        return tuple(max(h, self.n_locations) for h in self.att_hidden)

    @property
    def out_units(self):
        return tuple(max(h, self.n_outputs) for h in self.out_hidden)

    def validate(self):
        if len(self.channels) != N_POOLS:
            raise ConfigError(f"channels: expected {N_POOLS} conv layers, got {len(self.channels)}")
        ch, cw = self.canvas
        if ch <= 0 or cw <= 0 or ch % self.downsample or cw % self.downsample:
            raise ConfigError(
                f"canvas: {ch}x{cw} is not divisible by {self.downsample} "
                f"({len(self.channels)} 2x2 maxpools)"
            )
        gh, gw = self.grid_hat
        sh, sw = self.pool_stride
        if sh <= 0 or sw <= 0 or gh % sh or gw % sw:
            raise ConfigError(f"pool_stride: {list(self.pool_stride)} does not divide grid {gh}x{gw}")
        if self.init_mode not in ("learned", "zeros"):
            raise ConfigError(f"init_mode: must be 'learned' or 'zeros', got {self.init_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype: must be float32 or float64, got {self.dtype!r}")
        if self.n_layers < 1 or self.n_units < 1 or self.embed_dim < 1:
            raise ConfigError("n_layers, n_units and embed_dim must be positive")
        if self.vocab_size and self.vocab_size < 3:
            raise ConfigError("vocab_size must include <pad>, <bos> and <eos>")
        return self

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    lambda_r: float = 5e-5
    lambda_a: float = 0.0
    ase_target: float = 0.0
    batch_size: int = 56
    max_epochs: int = 100
    max_steps: int = 0
    eval_period: int = 500
    beam_width: int = 10
    max_len: int = 160
    valid_fraction: float = 0.05
    bucket_width: int = 8
    bleu_window: int = 100
    stop_at_perfect: bool = False
    seed: int = 0

    def validate(self):
        if self.lambda_r < 0 or self.lambda_a < 0:
            raise ConfigError("lambda_r and lambda_a must be non-negative")
        if not 0.0 <= self.ase_target <= 100.0:
            raise ConfigError(f"ase_target: must lie in [0, 100], got {self.ase_target}")
        if self.batch_size < 1 or self.beam_width < 1 or self.max_len < 1:
            raise ConfigError("batch_size, beam_width and max_len must be >= 1")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ConfigError("valid_fraction must lie in [0, 1)")
        if self.eval_period < 1 or self.bucket_width < 1:
            raise ConfigError("eval_period and bucket_width must be >= 1")
        return self


@dataclass
class SynthConfig:
    """Grammar for the synthetic glyph-formula generator."""

    glyphs: tuple = ()
    scale: int = 4
    min_items: int = 2
    max_items: int = 6
    max_cells: int = 8
    min_cells: int = 0
    p_sup: float = 0.15
    p_sub: float = 0.15
    p_frac: float = 0.1

    def __post_init__(self):
        self.glyphs = tuple(self.glyphs)


PRESETS = {
    "i2l-strips": dict(pool_stride=(4, 1)),
    "i2l-nopool": dict(pool_stride=(1, 1)),
    "tiny": dict(
        canvas=(32, 64), channels=(4, 4, 8, 8, 8), pool_stride=(1, 1), n_layers=2,
        n_units=16, embed_dim=8, att_hidden=(16, 16), out_hidden=(16, 16), init_hidden=8,
    ),
    "overfit": dict(
        canvas=(32, 256), channels=(8, 8, 16, 16, 16), pool_stride=(1, 1), n_layers=2,
        n_units=48, embed_dim=16, att_hidden=(32, 32), out_hidden=(48, 48), init_hidden=16,
        init_mode="zeros",
    ),
}


def model_preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    values = dict(PRESETS[name])
    values.update(overrides)
    return ModelConfig(**values)


def _key_lines(node, prefix=""):
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = f"{prefix}{key.value}"
            lines[path] = key.start_mark.line + 1
            lines.update(_key_lines(value, path + "."))
    return lines


def _build(cls, section, values, lines, extra=()):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"line {lines.get(section, '?')}: section '{section}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key in extra:
            continue
        if key not in names:
            raise ConfigError(f"line {lines.get(f'{section}.{key}', '?')}: unknown field '{section}.{key}'")
        kwargs[key] = value
    return kwargs


def load_config(path):
    """Parse a YAML run config into (ModelConfig, TrainConfig, SynthConfig).

    Top-level sections are ``model``, ``train`` and ``synth``; ``model.preset``
    selects a base preset that the remaining model fields override.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    lines = _key_lines(root) if root is not None else {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for key in data:
        if key not in ("model", "train", "synth"):
            raise ConfigError(f"line {lines.get(key, '?')}: unknown section '{key}'")

    model_vals = data.get("model") or {}
    mkw = _build(ModelConfig, "model", model_vals, lines, extra=("preset",))
    try:
        model = model_preset(model_vals.get("preset", "i2l-strips"), **mkw).validate()
        train = TrainConfig(**_build(TrainConfig, "train", data.get("train"), lines)).validate()
        synth = SynthConfig(**_build(SynthConfig, "synth", data.get("synth"), lines))
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return model, train, synth
