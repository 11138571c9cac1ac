"""Architecture hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

VARIANTS = ("rgb_only", "rgb_noise_concat", "full_ahfm")


class ConfigError(ValueError):
    """Invalid architecture or run configuration."""


@dataclass(frozen=True)
class ModelConfig:
    """Shape of one model instance.

    Defaults are a desk-scale model; :meth:`paper` gives the published
    512x512 / ViT-Base geometry and :meth:`toy` the smallest configuration
    used for gradient checks.
    """

    H: int = 64
    W: int = 64
    patch: int = 8
    dim: int = 32
    depth: int = 3
    heads: int = 2
    variant: str = "full_ahfm"
    seed: int = 0
    mlp_ratio: int = 4
    bayar_kernel: int = 5
    ln_eps: float = 1e-6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if min(self.H, self.W, self.patch, self.dim, self.depth, self.heads) <= 0:
            raise ConfigError(f"all extents must be positive: {self}")
        if self.H % self.patch or self.W % self.patch:
            raise ConfigError(f"image {self.H}x{self.W} not divisible into {self.patch}px patches")
        if self.depth % 3:
            raise ConfigError(f"depth {self.depth} must be a multiple of 3 (three feature taps)")
        if self.dim % self.heads:
            raise ConfigError(f"embed dim {self.dim} not divisible by {self.heads} heads")
        if self.dim % 8:
            raise ConfigError(f"embed dim {self.dim} must be divisible by 8 for the attention projections")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.bayar_kernel % 2 == 0 or self.bayar_kernel < 3:
            raise ConfigError(f"bayar kernel size {self.bayar_kernel} must be odd and >= 3")

    @property
    def grid(self) -> tuple[int, int]:
        return self.H // self.patch, self.W // self.patch

    @property
    def num_patches(self) -> int:
        h, w = self.grid
        return h * w

    @property
    def taps(self) -> tuple[int, int, int]:
        """1-based indices of the layers whose outputs are tapped."""
        t = self.depth // 3
        return t, 2 * t, 3 * t

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def paper(cls, **overrides) -> "ModelConfig":
        base = dict(H=512, W=512, patch=16, dim=768, depth=12, heads=12)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = dict(H=32, W=32, patch=16, dim=16, depth=3, heads=2)
        base.update(overrides)
        return cls(**base)
