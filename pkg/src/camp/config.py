"""Training configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from camp.prompts import DEFAULT_FIXED_PROMPTS, PromptConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # method
    K: int = 6
    D: int = 96
    L: int = 2
    learnable_vocab: bool = False
    template_mode: str = "adaptive"
    combine_mode: str = "concat"
    include_negation: bool = False
    alpha: float = 0.1
    beta: float = 0.1
    init_tau: float = 0.07
    fixed_prompt_texts: tuple[str, ...] = DEFAULT_FIXED_PROMPTS

    # optimisation (full-scale reference: lr 5e-4, warmup 10k, 500k steps, B=1024)
    batch_size: int = 32
    peak_lr: float = 3e-4
    warmup_steps: int = 200
    total_steps: int = 2000
    lr_schedule: str = "constant"
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0
    seed: int = 0

    # data
    n_train: int = 96
    n_eval: int = 48

    # toy architecture
    text_width: int = 128
    text_layers: int = 4
    text_heads: int = 4
    max_seq_len: int = 128
    image_size: int = 32
    patch_size: int = 8
    vision_width: int = 128
    vision_layers: int = 4
    vision_heads: int = 4
    pool_heads: int = 6
    t_max: int = 16
    mlp_ratio: int = 2
    temporal_mode: str = "scalar"

    def __post_init__(self):
        self.fixed_prompt_texts = tuple(self.fixed_prompt_texts)
        self.validate()

    def validate(self) -> None:
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.D % self.K:
            raise ConfigError(f"D={self.D} must be divisible by K={self.K}")
        if not 0 <= self.L <= self.text_layers:
            raise ConfigError(f"L={self.L} outside [0, {self.text_layers}]")
        if self.combine_mode not in ("concat", "average"):
            raise ConfigError(f"unknown combine_mode {self.combine_mode!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.D % self.pool_heads:
            raise ConfigError(f"pool_heads={self.pool_heads} must divide D={self.D}")
        if self.batch_size < 1 or self.total_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("batch_size must be positive and step counts non-negative")
        self.prompt_config()

    def prompt_config(self, reset_positions: bool = True) -> PromptConfig:
        try:
            return PromptConfig(
                K=self.K,
                template_mode=self.template_mode,
                include_negation=self.include_negation,
                fixed_prompt_texts=self.fixed_prompt_texts,
                reset_positions=reset_positions,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["fixed_prompt_texts"] = list(self.fixed_prompt_texts)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls(**json.loads(text))


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def coerce(key: str, raw: str):
    """Parse a string value into the type of TrainConfig field ``key``."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = getattr(TrainConfig, key, None) if key != "fixed_prompt_texts" else DEFAULT_FIXED_PROMPTS
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    if isinstance(default, tuple):
        return tuple(p.strip() for p in raw.split("|"))
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = coerce(key, raw)
    return values


def load_config(path: str | Path | None = None, **overrides) -> TrainConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for name in _FIELDS:
        val = getattr(cfg, name)
        if isinstance(val, tuple):
            val = " | ".join(val)
        elif isinstance(val, bool):
            val = str(val).lower()
        lines.append(f"{name} = {val}\n")
    return "".join(lines)
