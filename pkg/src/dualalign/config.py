"""Plain ``key = value`` run configuration.

Lines hold one ``key = value`` pair; ``#`` starts a comment; blank lines
are ignored. Every key has a default, so the empty config is valid, and
unknown keys are hard errors with the offending line number. Parsing a
serialized config reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .scenes import DEFAULT_TARGET_SHIFT, DomainShift
from .trainer import TrainConfig


@dataclass
class Config:
    # training
    lam: float = 0.1
    lr: float = 0.01
    momentum: float = 0.99
    iterations: int = 2000
    batch: int = 3
    k_targets: int = 2
    mode: str = "end_to_end"
    align_point: str = "S3"
    stop_grad_target: bool = False
    pseudo_targets: int = 0
    seed_data: int = 0
    seed_init: int = 1
    seed_sampling: int = 2
    log_every: int = 10
    checkpoint_every: int = 500
    eps: float = 1e-5
    num_classes: int = 5
    # scene generation
    height: int = 64
    width: int = 64
    num_source: int = 200
    num_target_train: int = 100
    num_target_eval: int = 50
    benchmark_seed: int = 0
    # target-domain shift
    shift_gain_r: float = DEFAULT_TARGET_SHIFT.gain[0]
    shift_gain_g: float = DEFAULT_TARGET_SHIFT.gain[1]
    shift_gain_b: float = DEFAULT_TARGET_SHIFT.gain[2]
    shift_bias_r: float = DEFAULT_TARGET_SHIFT.bias[0]
    shift_bias_g: float = DEFAULT_TARGET_SHIFT.bias[1]
    shift_bias_b: float = DEFAULT_TARGET_SHIFT.bias[2]
    shift_gamma: float = DEFAULT_TARGET_SHIFT.gamma
    shift_noise: float = DEFAULT_TARGET_SHIFT.noise_sigma
    shift_vgrad: float = DEFAULT_TARGET_SHIFT.vgrad
    # ablation
    ablate_seeds: int = 3

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lam=self.lam, lr=self.lr, momentum=self.momentum,
            iterations=self.iterations, batch=self.batch,
            k_targets=self.k_targets, mode=self.mode,
            align_point=self.align_point, stop_grad_target=self.stop_grad_target,
            pseudo_targets=self.pseudo_targets, num_classes=self.num_classes,
            eps=self.eps, seed_data=self.seed_data, seed_init=self.seed_init,
            seed_sampling=self.seed_sampling, log_every=self.log_every,
            checkpoint_every=self.checkpoint_every)

    def target_shift(self) -> DomainShift:
        return DomainShift(
            gain=(self.shift_gain_r, self.shift_gain_g, self.shift_gain_b),
            bias=(self.shift_bias_r, self.shift_bias_g, self.shift_bias_b),
            gamma=self.shift_gamma, noise_sigma=self.shift_noise,
            vgrad=self.shift_vgrad, seed=self.benchmark_seed)

    def override_seeds(self, seed: int) -> None:
        """Apply a --seed override: one integer fans out to every stream."""
        self.benchmark_seed = seed
        self.seed_data = seed
        self.seed_init = seed + 1
        self.seed_sampling = seed + 2


# config-file key -> dataclass field; keys mirror the documented knobs
KEY_TO_FIELD = {
    "lambda": "lam",
    "lr": "lr",
    "momentum": "momentum",
    "iterations": "iterations",
    "batch": "batch",
    "k": "k_targets",
    "mode": "mode",
    "align_point": "align_point",
    "stop_grad_target": "stop_grad_target",
    "pseudo_targets": "pseudo_targets",
    "seed_data": "seed_data",
    "seed_init": "seed_init",
    "seed_sampling": "seed_sampling",
    "log_every": "log_every",
    "checkpoint_every": "checkpoint_every",
    "eps": "eps",
    "num_classes": "num_classes",
    "height": "height",
    "width": "width",
    "num_source": "num_source",
    "num_target_train": "num_target_train",
    "num_target_eval": "num_target_eval",
    "benchmark_seed": "benchmark_seed",
    "shift_gain_r": "shift_gain_r",
    "shift_gain_g": "shift_gain_g",
    "shift_gain_b": "shift_gain_b",
    "shift_bias_r": "shift_bias_r",
    "shift_bias_g": "shift_bias_g",
    "shift_bias_b": "shift_bias_b",
    "shift_gamma": "shift_gamma",
    "shift_noise": "shift_noise",
    "shift_vgrad": "shift_vgrad",
    "ablate_seeds": "ablate_seeds",
}

KEY_HELP = {
    "lambda": "weight of the generation loss in the joint objective",
    "lr": "SGD learning rate",
    "momentum": "SGD momentum coefficient",
    "iterations": "optimization steps (per stage for two_stage)",
    "batch": "source images per step",
    "k": "target images sampled per source image",
    "mode": "end_to_end | two_stage | source_only | enumerate_targets",
    "align_point": "where the segmentation net aligns: S1 S2 S3 D1 D2 off",
    "stop_grad_target": "detach the target branch of mid-network alignment",
    "pseudo_targets": "0 = full target set; N>0 = fixed seeded subset of N",
    "seed_data": "seed for batch shuffling",
    "seed_init": "seed for weight initialization",
    "seed_sampling": "seed for target sampling",
    "log_every": "metrics logging cadence in iterations",
    "checkpoint_every": "checkpoint cadence in iterations",
    "eps": "variance stabilizer inside every channel std",
    "num_classes": "segmentation classes",
    "height": "scene height in pixels (multiple of 8)",
    "width": "scene width in pixels (multiple of 8)",
    "num_source": "labeled source scenes",
    "num_target_train": "unlabeled target scenes for training",
    "num_target_eval": "held-out labeled target scenes",
    "benchmark_seed": "seed for scene generation",
    "shift_gain_r": "target-domain red gain",
    "shift_gain_g": "target-domain green gain",
    "shift_gain_b": "target-domain blue gain",
    "shift_bias_r": "target-domain red bias",
    "shift_bias_g": "target-domain green bias",
    "shift_bias_b": "target-domain blue bias",
    "shift_gamma": "target-domain gamma curve",
    "shift_noise": "target-domain noise sigma",
    "shift_vgrad": "target-domain vertical brightness amplitude",
    "ablate_seeds": "seeds per ablation setting",
}

_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _parse_value(key: str, raw: str, lineno: int, source: str):
    ftype = _FIELD_TYPES[KEY_TO_FIELD[key]]
    try:
        if ftype == "bool":
            if raw not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw == "true"
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc


def parse_config(text: str, source: str = "<config>") -> Config:
    cfg = Config()
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEY_TO_FIELD:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        setattr(cfg, KEY_TO_FIELD[key], _parse_value(key, value, lineno, source))
    validate_config(cfg, source)
    return cfg


def validate_config(cfg: Config, source: str = "<config>") -> None:
    try:
        cfg.train_config().validate()
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if cfg.height % 8 or cfg.width % 8:
        raise ConfigError(f"{source}: resolution {cfg.height}x{cfg.width} "
                          "must be a multiple of 8")


def serialize_config(cfg: Config) -> str:
    """All keys with their current values, one commented line each."""
    lines = []
    for key, attr in KEY_TO_FIELD.items():
        value = getattr(cfg, attr)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}  # {KEY_HELP[key]}")
    return "\n".join(lines) + "\n"


def load_config(path: Path | str | None) -> Config:
    """Parse a config file; None yields the defaults."""
    if path is None:
        return Config()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))
