"""Run configuration: nested dataclasses with lossless YAML round-trip.

Every training hyperparameter lives here. The CLI loads a YAML file into
``RunConfig`` and applies flag overrides on top; ``from_dict`` is strict about
unknown keys so typos in config files fail loudly.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .slices import Modality


@dataclass
class ModalityAppearance:
    """Monotone intensity remap plus texture noise for one phantom modality.

    The per-pixel map is: optional inversion, gamma, then gain/bias, all
    monotone on [0, 1]. ``gamma_jitter``/``gain_jitter`` vary the map per
    slice; ``noise_amp`` scales a band-limited multiplicative field whose
    correlation length is ``noise_scale`` pixels.
    """

    gamma: float = 1.0
    gain: float = 1.0
    bias: float = 0.0
    invert: bool = False
    gamma_jitter: float = 0.0
    gain_jitter: float = 0.0
    noise_amp: float = 0.03
    noise_scale: float = 3.0


def _default_appearance() -> dict[str, ModalityAppearance]:
    # Source: bright-blood look. Style aux / target: inverted (dark-blood-like)
    # with different gamma and texture, so the source->target gap is a strong
    # monotone contrast flip while aux styles are diverse enough to span it.
    return {
        Modality.SOURCE_CONTENT.value: ModalityAppearance(
            gamma=1.0, gain=1.0, bias=0.0, invert=False,
            gamma_jitter=0.05, gain_jitter=0.05, noise_amp=0.04, noise_scale=3.0,
        ),
        Modality.STYLE_AUX.value: ModalityAppearance(
            gamma=1.3, gain=0.95, bias=0.0, invert=True,
            gamma_jitter=0.35, gain_jitter=0.15, noise_amp=0.06, noise_scale=2.0,
        ),
        Modality.TARGET.value: ModalityAppearance(
            gamma=0.9, gain=0.9, bias=0.05, invert=True,
            gamma_jitter=0.05, gain_jitter=0.05, noise_amp=0.05, noise_scale=5.0,
        ),
    }


@dataclass
class PhantomConfig:
    """Synthetic cardiac-like phantom: LV disk, concentric Myo ring, RV crescent.

    Radius/thickness/offset ranges are fractions of ``image_size``.
    """

    image_size: int = 64
    spacing_mm: tuple[float, float] = (1.5, 1.5)
    lv_radius_range: tuple[float, float] = (0.13, 0.19)
    myo_thickness_range: tuple[float, float] = (0.055, 0.085)
    rv_offset_range: tuple[float, float] = (0.0, 0.04)
    rv_radius_factor: tuple[float, float] = (0.9, 1.2)
    center_jitter: float = 0.03
    edge_sigma: float = 0.6
    appearance: dict[str, ModalityAppearance] = field(default_factory=_default_appearance)
    seed: int = 0

    def validate(self):
        for name in ("lv_radius_range", "myo_thickness_range", "rv_offset_range",
                     "rv_radius_factor"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ConfigError(f"{name} is an empty interval: ({lo}, {hi})")
        if self.image_size < 32:
            raise ConfigError(f"image_size must be >= 32, got {self.image_size}")
        for m in Modality:
            if m.value not in self.appearance:
                raise ConfigError(f"appearance missing modality {m.value!r}")


@dataclass
class AffineConfig:
    """Sampling ranges for affine augmentation; all magnitudes are symmetric."""

    rotate_deg: float = 10.0
    translate_frac: float = 0.05
    shear_deg: float = 5.0
    scale_range: tuple[float, float] = (0.95, 1.05)

    def is_identity(self) -> bool:
        return (
            self.rotate_deg == 0.0
            and self.translate_frac == 0.0
            and self.shear_deg == 0.0
            and self.scale_range == (1.0, 1.0)
        )

    def validate(self):
        if self.rotate_deg < 0 or self.translate_frac < 0 or self.shear_deg < 0:
            raise ConfigError("affine ranges must be non-negative")
        if self.scale_range[1] < self.scale_range[0] or self.scale_range[0] <= 0:
            raise ConfigError(f"invalid scale_range {self.scale_range}")


@dataclass
class DataConfig:
    """Dataset location, patient split, and preprocessing options."""

    root: str = "data/phantom"
    n_patients: int = 8
    slices_per_patient: int = 6
    train_patients: tuple[str, ...] = ("p00", "p01", "p02", "p03")
    target_patient: str = "p04"
    test_patients: tuple[str, ...] = ("p05", "p06", "p07")
    crop_size: int | None = None          # None: no crop (full-scale value: 224)
    augment: AffineConfig = field(default_factory=AffineConfig)
    augment_enabled: bool = True
    write_png: bool = True
    phantom: PhantomConfig = field(default_factory=PhantomConfig)


@dataclass
class RainConfig:
    """Style-transfer module: encoder/decoder widths, style VAE, loss weights."""

    widths: tuple[int, ...] = (32, 64, 128)
    latent_dim: int = 64
    vae_hidden: int = 128
    eps_std: float = 1e-5
    lambda_style: float = 5.0
    lambda_kl: float = 1.0
    lambda_rec: float = 5.0
    iters: int = 1200
    lr: float = 1e-4
    # Linear warmup then cosine decay to zero.  Momentum-SGD from a wide
    # initialization otherwise overshoots early (the KL term plunges, rebounds,
    # and the monitoring curves pick up a transient bump).
    lr_warmup: int = 150
    # The style-posterior head trains slower than the decoders.  At equal
    # speed the KL term undershoots its moving equilibrium (the posterior
    # narrows faster than the moment decoder learns to use it) and then
    # rebounds; a slow posterior tracks the equilibrium from above.
    posterior_lr_scale: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 8
    # The encoder stays frozen at its random initialization: with no external
    # pretrained features, training it jointly has a degenerate optimum where
    # it maps every image to near-constant features (content/style losses
    # vanish, stylization goes flat). A fixed random feature map keeps style
    # moments informative; only the decoder and style VAE train.
    train_encoder: bool = False
    log_every: int = 1


@dataclass
class SegConfig:
    """Dilated-residual U-Net and its supervised/consistency loss stack."""

    widths: tuple[int, int, int] = (16, 32, 64)
    dilations: tuple[int, ...] = (1, 2, 4)
    lambda_consistency: float = 2e-3
    jaccard_smooth: float = 1e-6
    pretrain_iters: int = 800
    adv_iters: int = 800
    lr: float = 1e-2
    poly_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 8


@dataclass
class AdversarialConfig:
    """Latent style-code ascent settings."""

    step_size: float = 1.0
    resample_period: int = 10


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    rain: RainConfig = field(default_factory=RainConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    adversarial: AdversarialConfig = field(default_factory=AdversarialConfig)
    seed: int = 0

    def validate(self):
        self.data.phantom.validate()
        self.data.augment.validate()
        for name, value in (
            ("rain.iters", self.rain.iters),
            ("rain.lr_warmup", self.rain.lr_warmup),
            ("seg.pretrain_iters", self.seg.pretrain_iters),
            ("seg.adv_iters", self.seg.adv_iters),
        ):
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        for name, value in (
            ("rain.lambda_style", self.rain.lambda_style),
            ("rain.lambda_kl", self.rain.lambda_kl),
            ("rain.lambda_rec", self.rain.lambda_rec),
            ("seg.lambda_consistency", self.seg.lambda_consistency),
        ):
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if self.adversarial.step_size <= 0:
            raise ConfigError("adversarial.step_size must be > 0")
        if self.adversarial.resample_period < 1:
            raise ConfigError("adversarial.resample_period must be >= 1")


def to_dict(cfg) -> dict:
    """Dataclass tree -> plain dict of YAML-safe scalars/lists."""

    def convert(v):
        if is_dataclass(v) and not isinstance(v, type):
            return {f.name: convert(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, dict):
            return {k: convert(x) for k, x in v.items()}
        if isinstance(v, (tuple, list)):
            return [convert(x) for x in v]
        return v

    return convert(cfg)


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected mapping for {cls.__name__}, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        ftype = f.type if isinstance(f.type, str) else str(f.type)
        if name == "appearance":
            value = {k: _build(ModalityAppearance, v) for k, v in value.items()}
        elif is_dataclass(_nested_type(f)):
            value = _build(_nested_type(f), value)
        elif isinstance(value, list):
            value = tuple(value)
        elif "int | None" in ftype and value is not None:
            value = int(value)
        kwargs[name] = value
    return cls(**kwargs)


def _nested_type(f):
    # Resolve the dataclass type of a nested field from its default factory.
    if f.default_factory is not dataclasses.MISSING:  # type: ignore[attr-defined]
        probe = f.default_factory()  # type: ignore[misc]
        if is_dataclass(probe):
            return type(probe)
    return None


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data)


def build_section(cls, data: dict):
    """Construct one config dataclass (e.g. RainConfig) from a plain dict."""
    return _build(cls, data)


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    cfg = from_dict(data)
    cfg.validate()
    return cfg


def save_config(cfg: RunConfig, path: str | Path):
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=True)
