"""Declarative run configuration: parse, validate, serialize, digest.

Config files are TOML with fixed sections (model, projector, loss,
augment, a [[descriptors]] array, data, train, eval). Every key has a
default; unknown keys are rejected. Serialization is canonical, so
parse(serialize(c)) == c and the sha256 digest of the canonical text
identifies a run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import sys
from dataclasses import dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .augment import AugmentParams
from .descriptors import DescriptorSpec
from .errors import ConfigError
from .losses import LossWeights
from .model import EncoderConfig, ProjectorConfig


@dataclass
class ModelSection:
    kind: str = "cnn"
    channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    kernel: int = 3
    stride: int = 2
    batch_norm: bool = True
    global_pool: bool = True
    mlp_widths: list[int] = field(default_factory=lambda: [256, 64])


@dataclass
class ProjectorSection:
    widths: list[int] = field(default_factory=lambda: [256, 256, 256])
    enabled: bool = True


@dataclass
class LossSection:
    mse_weight: float = 1.0
    var_weight: float = 1.0
    view_weight: float = 1.0
    margin: float = 1.0
    std_eps: float = 1e-4


@dataclass
class AugmentSection:
    crop_scale: list[float] = field(default_factory=lambda: [0.2, 1.0])
    crop_aspect: list[float] = field(default_factory=lambda: [0.75, 4.0 / 3.0])
    flip_p: float = 0.5
    jitter_brightness: float = 0.8
    jitter_contrast: float = 0.8
    jitter_saturation: float = 0.8
    jitter_hue: float = 0.2
    jitter_p: float = 0.8
    grayscale_p: float = 0.2
    blur_p: float = 0.5
    blur_sigma: list[float] = field(default_factory=lambda: [0.1, 2.0])
    blur_kernel_frac: float = 0.1


@dataclass
class DescriptorEntry:
    kind: str = "flatten_original"
    beta: float = 1.0
    scales: int = 2  # scattering
    orientations: int = 8  # scattering
    bins: int = 24  # hog
    pool: int = 8  # hog
    kernel: int = 3  # lsd


@dataclass
class DataSection:
    source: str = "synthetic"  # synthetic | stl10
    image_size: int = 32
    classes: int = 4
    train_per_class: int = 500
    test_per_class: int = 125
    frequency: float = 4.0
    phase_jitter: float = 0.5
    noise: float = 0.08
    stl10_images: str = ""
    stl10_labels: str = ""
    limit: int = 0


@dataclass
class TrainSection:
    mode: str = "ssl"  # ssl | distill
    epochs: int = 30
    batch_size: int = 64
    accumulation: int = 4
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    float_width: str = "fp32"  # fp32 | fp64
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only
    teacher_path: str = ""
    teacher_mix: bool = False  # distill: keep the hand-crafted bank too
    descriptor_cache: bool = True


@dataclass
class EvalSection:
    probe_epochs: int = 20
    probe_lr: float = 1e-4
    probe_batch: int = 256


_SECTION_TYPES = {
    "model": ModelSection,
    "projector": ProjectorSection,
    "loss": LossSection,
    "augment": AugmentSection,
    "data": DataSection,
    "train": TrainSection,
    "eval": EvalSection,
}


def _default_descriptors() -> list[DescriptorEntry]:
    return [
        DescriptorEntry(kind="flatten_original"),
        DescriptorEntry(kind="scattering"),
        DescriptorEntry(kind="flatten_augmented"),
        DescriptorEntry(kind="hog"),
        DescriptorEntry(kind="lsd"),
    ]


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    projector: ProjectorSection = field(default_factory=ProjectorSection)
    loss: LossSection = field(default_factory=LossSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    descriptors: list[DescriptorEntry] = field(default_factory=_default_descriptors)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # -- derived views -----------------------------------------------------

    def model_config(self) -> EncoderConfig:
        m = self.model
        return EncoderConfig(
            kind=m.kind,
            channels=tuple(m.channels),
            kernel=m.kernel,
            stride=m.stride,
            batch_norm=m.batch_norm,
            global_pool=m.global_pool,
            mlp_widths=tuple(m.mlp_widths),
            input_size=(3, self.data.image_size, self.data.image_size),
        )

    def projector_config(self) -> ProjectorConfig:
        return ProjectorConfig(widths=tuple(self.projector.widths), enabled=self.projector.enabled)

    def loss_weights(self) -> LossWeights:
        ls = self.loss
        return LossWeights(
            mse_weight=ls.mse_weight,
            var_weight=ls.var_weight,
            view_weight=ls.view_weight,
            margin=ls.margin,
            std_eps=ls.std_eps,
        )

    def augment_params(self) -> AugmentParams:
        a = self.augment
        return AugmentParams(
            out_size=self.data.image_size,
            crop_scale=tuple(a.crop_scale),
            crop_aspect=tuple(a.crop_aspect),
            flip_p=a.flip_p,
            jitter_brightness=a.jitter_brightness,
            jitter_contrast=a.jitter_contrast,
            jitter_saturation=a.jitter_saturation,
            jitter_hue=a.jitter_hue,
            jitter_p=a.jitter_p,
            grayscale_p=a.grayscale_p,
            blur_p=a.blur_p,
            blur_sigma=tuple(a.blur_sigma),
            blur_kernel_frac=a.blur_kernel_frac,
        )

    def descriptor_specs(self) -> list[DescriptorSpec]:
        return [
            DescriptorSpec(
                kind=d.kind,
                beta=d.beta,
                scattering_scales=d.scales,
                scattering_orientations=d.orientations,
                hog_bins=d.bins,
                hog_pool=d.pool,
                lsd_kernel=d.kernel,
            )
            for d in self.descriptors
        ]

    def validate(self) -> "ExperimentConfig":
        t = self.train
        if t.mode not in ("ssl", "distill"):
            raise ConfigError(f"train.mode must be ssl or distill, got {t.mode!r}")
        if t.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {t.epochs}")
        if t.batch_size < 2:
            raise ConfigError(f"train.batch_size must be >= 2, got {t.batch_size}")
        if t.accumulation < 1:
            raise ConfigError(f"train.accumulation must be >= 1, got {t.accumulation}")
        if t.float_width not in ("fp32", "fp64"):
            raise ConfigError(f"train.float_width must be fp32 or fp64, got {t.float_width!r}")
        if self.data.source not in ("synthetic", "stl10"):
            raise ConfigError(f"data.source must be synthetic or stl10, got {self.data.source!r}")
        for entry in self.descriptors:
            if entry.kind == "scattering":
                step = 2**entry.scales
                if self.data.image_size % step:
                    raise ConfigError(
                        f"data.image_size {self.data.image_size} not divisible by 2^{entry.scales} "
                        "required by the scattering descriptor"
                    )
        # surface invalid numeric values early
        self.model_config()
        self.projector_config()
        self.loss_weights()
        self.augment_params()
        self.descriptor_specs()
        return self


# -- dict <-> dataclass ------------------------------------------------------


def _section_from_dict(cls, mapping: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(mapping) - set(known)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in [{where}]")
    kwargs = {}
    for name, value in mapping.items():
        f = known[name]
        if f.type in ("float", float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid value in [{where}]: {exc}") from exc


def experiment_from_dict(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - set(_SECTION_TYPES) - {"descriptors"}
    if unknown:
        raise ConfigError(f"unknown section {sorted(unknown)[0]!r}")
    kwargs = {}
    for name, cls in _SECTION_TYPES.items():
        if name in raw:
            if not isinstance(raw[name], dict):
                raise ConfigError(f"section [{name}] must be a table")
            kwargs[name] = _section_from_dict(cls, raw[name], name)
    if "descriptors" in raw:
        entries = raw["descriptors"]
        if not isinstance(entries, list):
            raise ConfigError("descriptors must be an array of tables ([[descriptors]])")
        kwargs["descriptors"] = [
            _section_from_dict(DescriptorEntry, e, f"descriptors.{i}") for i, e in enumerate(entries)
        ]
    return ExperimentConfig(**kwargs).validate()


def experiment_from_toml(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return experiment_from_dict(raw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return experiment_from_toml(f.read())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc


# -- canonical serialization ---------------------------------------------------


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def serialize_config(cfg: ExperimentConfig) -> str:
    lines: list[str] = []
    for section, cls in _SECTION_TYPES.items():
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in fields(cls):
            lines.append(f"{f.name} = {_fmt_value(getattr(obj, f.name))}")
        lines.append("")
        if section == "augment":
            for entry in cfg.descriptors:
                lines.append("[[descriptors]]")
                for f in fields(DescriptorEntry):
                    lines.append(f"{f.name} = {_fmt_value(getattr(entry, f.name))}")
                lines.append("")
    return "\n".join(lines)


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


# -- overrides ------------------------------------------------------------------


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply `--set section.key=value` pairs and re-validate.

    Values are parsed as TOML literals; descriptor entries are addressed
    as descriptors.<index>.<key>.
    """
    raw = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, _, literal = item.partition("=")
        try:
            value = tomllib.loads(f"v = {literal.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = literal.strip()
        parts = path.strip().split(".")
        target = raw
        for i, part in enumerate(parts[:-1]):
            if isinstance(target, list):
                try:
                    target = target[int(part)]
                except (ValueError, IndexError) as exc:
                    raise ConfigError(f"bad override index {part!r} in {path!r}") from exc
            elif part in target:
                target = target[part]
            else:
                raise ConfigError(f"unknown override section {part!r} in {path!r}")
        leaf = parts[-1]
        if isinstance(target, list):
            raise ConfigError(f"override {path!r} must index a descriptor entry")
        target[leaf] = value
    return experiment_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTION_TYPES}
    out["descriptors"] = [dataclasses.asdict(d) for d in cfg.descriptors]
    return out


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
