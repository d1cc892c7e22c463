"""Model/training configuration with load-time validation.

The JSON config file mirrors ModelConfig field names exactly; the
`optimizer` key holds a nested object mirroring AdamWConfig.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from .params import AdamWConfig


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration, naming the field."""


@dataclass
class ModelConfig:
    # feature dimensions
    d_t: int = 12
    d_i: int = 8
    d_se: int = 64
    h: int = 2
    n_t: int = 6
    grid: tuple[int, int] = (4, 4)
    image_size: tuple[int, int] = (64, 64)
    # heterogeneous conv attention
    hren_channels: int = 8
    hren_groups: int = 2
    hren_kernel: int = 3
    # cascading conv transformer
    encoder_plan: tuple[int, ...] = (8, 16, 32, 64)
    decoder_plan: tuple[int, ...] = (64, 32, 16, 8)
    transformer_depth: int = 3
    transformer_heads: int = 4
    # fusion / head
    d_fused: int = 64
    dropout: float = 0.2
    # training
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    epochs: int = 100
    batch_size: int = 32
    seed: int = 42
    n_samples: int = 200
    difficulty: float = 0.0
    val_fraction: float = 0.2
    # ablation toggles
    use_mfim: bool = True
    use_hcamam: bool = True
    use_cctfrm: bool = True
    use_hcgam: bool = True
    use_feeca: bool = True
    use_fmsa: bool = True

    # derived helpers -------------------------------------------------

    @property
    def n_i(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def d_model(self) -> int:
        return self.encoder_plan[-1]

    def encoder_out_spatial(self) -> tuple[int, int]:
        f = 2 ** len(self.encoder_plan)
        return (self.image_size[0] // f, self.image_size[1] // f)

    def cascade_channels(self) -> int:
        return sum(self.decoder_plan)

    @property
    def d_r(self) -> int:
        hh, ww = self.encoder_out_spatial()
        return hh * ww * self.cascade_channels()

    @property
    def d_prime(self) -> int:
        # channel concat of the two attention outputs doubles C
        return self.n_i * 2 * self.hren_channels

    def validate(self) -> None:
        if self.h < 2 or self.h % 2:
            raise ConfigError(f"h must be even and >= 2, got h={self.h}")
        if self.d_se % 2:
            raise ConfigError(f"d_se must be divisible by 2 (BiLSTM halves), got d_se={self.d_se}")
        if self.d_se % (2 * self.h):
            raise ConfigError(f"d_se must be divisible by 2*h={2 * self.h}, got d_se={self.d_se}")
        if self.n_t < 1 or self.n_t > 512:
            raise ConfigError(f"n_t must be in [1, 512], got n_t={self.n_t}")
        for name, (img, cell) in (
            ("image_size[0]/grid[0]", (self.image_size[0], self.grid[0])),
            ("image_size[1]/grid[1]", (self.image_size[1], self.grid[1])),
        ):
            if img % cell:
                raise ConfigError(f"{name}: {img} not divisible by {cell}")
        if self.d_i % self.hren_groups or self.hren_channels % self.hren_groups:
            raise ConfigError(
                f"hren_groups={self.hren_groups} must divide d_i={self.d_i} "
                f"and hren_channels={self.hren_channels}"
            )
        if self.hren_kernel % 2 == 0:
            raise ConfigError(f"hren_kernel must be odd, got {self.hren_kernel}")
        if self.hren_channels % 4:
            raise ConfigError(f"hren_channels must be divisible by 4, got {self.hren_channels}")
        f = 2 ** len(self.encoder_plan)
        if self.image_size[0] % f or self.image_size[1] % f:
            raise ConfigError(
                f"image_size={self.image_size} not divisible by 2^len(encoder_plan)={f}"
            )
        if self.d_model % self.transformer_heads:
            raise ConfigError(
                f"transformer_heads={self.transformer_heads} must divide "
                f"encoder_plan[-1]={self.d_model}"
            )
        if len(self.decoder_plan) < 1:
            raise ConfigError("decoder_plan must have at least one stage")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_samples < 2:
            raise ConfigError(f"n_samples must be >= 2, got {self.n_samples}")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ConfigError(f"difficulty must be in [0,1], got {self.difficulty}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0,1), got {self.val_fraction}")
        try:
            self.optimizer.validate()
        except ValueError as exc:
            raise ConfigError(f"optimizer: {exc}") from exc

    # serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("grid", "image_size", "encoder_plan", "decoder_plan"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "optimizer" in kwargs:
            opt = kwargs["optimizer"]
            if not isinstance(opt, dict):
                raise ConfigError("optimizer must be an object")
            bad = set(opt) - set(AdamWConfig.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown optimizer keys: {sorted(bad)}")
            kwargs["optimizer"] = AdamWConfig(**opt)
        for key in ("grid", "image_size", "encoder_plan", "decoder_plan"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
