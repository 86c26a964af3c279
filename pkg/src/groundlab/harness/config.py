"""Run configuration and flat config-file loading."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..datagen import GenConfig
from ..fusion import RadiusSchedule
from ..losses import LossWeights


@dataclass(frozen=True)
class RunConfig:
    # model
    d: int = 128
    blocks: int = 3
    radii: tuple[float, ...] = (math.inf, 2.5, 1.0)
    lang_layers: int = 2
    heads: int = 1
    ffn_mult: int = 2
    # optimisation
    lr: float = 1e-4
    epochs: int = 300
    batch_cap: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 0.0  # global gradient norm cap; 0 disables
    warmup_steps: int = 0
    lr_schedule: str = "constant"
    frozen: tuple[str, ...] = ()
    # losses
    w_sel: float = 1.0
    w_o: float = 1.0
    w_sp: float = 1.0
    offset_reduction: str = "mean"
    # augmentation
    mask_p: float = 0.2
    synonym_p: float = 0.3
    rotate_aug: bool = True
    # ablation switches
    use_offset: bool = True
    use_tba_bidirectional: bool = True
    use_span: bool = True
    masking: str = "topdown"
    aux: str = "span"
    # data and evaluation
    seed: int = 0
    n_train: int = 2000
    n_eval: int = 500
    mve_views: int = 9

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(_parse_radius(r) for r in self.radii))
        object.__setattr__(self, "frozen", tuple(self.frozen))
        for name in ("mask_p", "synonym_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.masking not in ("topdown", "bottomup"):
            raise ValueError(f"masking must be 'topdown' or 'bottomup', got {self.masking!r}")
        if self.aux not in ("span", "cls"):
            raise ValueError(f"aux must be 'span' or 'cls', got {self.aux!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if self.offset_reduction not in ("mean", "sum"):
            raise ValueError(f"offset_reduction must be 'mean' or 'sum', got {self.offset_reduction!r}")
        if len(self.radii) != self.blocks:
            raise ValueError(f"{len(self.radii)} radii for {self.blocks} blocks")
        if self.clip_norm < 0:
            raise ValueError(f"clip_norm must be >= 0, got {self.clip_norm}")
        if self.lr < 0 or self.d < 1 or self.batch_cap < 1 or self.epochs < 0:
            raise ValueError("lr, d, batch_cap and epochs must be positive")
        self.schedule()  # validates ordering

    def schedule(self) -> RadiusSchedule:
        if self.masking == "topdown":
            return RadiusSchedule(self.radii, topdown=True)
        base = RadiusSchedule(tuple(sorted(self.radii, reverse=True)), topdown=True)
        return base.reversed()

    def loss_weights(self) -> LossWeights:
        span = self.w_sp if self.use_span and self.aux == "span" else 0.0
        cls = self.w_sp if self.use_span and self.aux == "cls" else 0.0
        return LossWeights(
            selection=self.w_sel,
            offset=self.w_o if self.use_offset else 0.0,
            span=span,
            cls=cls,
        )

    @property
    def d_model(self) -> int:
        return self.d + 6

    def to_dict(self) -> dict:
        out = asdict(self)
        out["radii"] = [_radius_out(r) for r in self.radii]
        out["frozen"] = list(self.frozen)
        return out

    @classmethod
    def keys(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        unknown = sorted(set(data) - cls.keys())
        if unknown:
            raise KeyError(f"unknown RunConfig keys: {unknown}")
        return cls(**data)


def _parse_radius(r) -> float:
    if isinstance(r, str):
        if r.strip().lower() in ("inf", "infinity", "+inf"):
            return math.inf
        return float(r)
    return float(r)


def _radius_out(r: float):
    return "inf" if math.isinf(r) else r


def desk_profile(**overrides) -> RunConfig:
    """Laptop-scale defaults: d=32, 50 epochs, 2000 training referrals."""
    base = dict(d=32, epochs=50, lr=1e-3, warmup_steps=200, lr_schedule="cosine", clip_norm=1.0,
                n_train=2000, n_eval=500)
    base.update(overrides)
    return RunConfig(**base)


def large_profile(**overrides) -> RunConfig:
    """Full-size defaults: d=128, 300 epochs, lr 1e-4 without a schedule."""
    return RunConfig(**overrides)


PROFILES = {"desk": desk_profile, "large": large_profile}


def load_config(path: str | Path | None, **overrides) -> tuple[RunConfig, GenConfig]:
    """Read a flat TOML or JSON document of RunConfig and GenConfig keys.

    A ``profile`` key ("desk" or "large") picks the base defaults. Any key
    that is not a field of either config is an error.
    """
    data: dict = {}
    if path is not None:
        p = Path(path)
        text = p.read_text()
        if p.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    data.update({k: v for k, v in overrides.items() if v is not None})
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"config must be flat; nested tables: {nested}")
    profile = data.pop("profile", "desk")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    run_keys, gen_keys = RunConfig.keys(), GenConfig.keys()
    unknown = sorted(set(data) - run_keys - gen_keys)
    if unknown:
        raise KeyError(f"unknown config keys: {unknown}")
    run = PROFILES[profile](**{k: v for k, v in data.items() if k in run_keys})
    gen = GenConfig(**{k: v for k, v in data.items() if k in gen_keys})
    return run, gen


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    return replace(config, **changes)
