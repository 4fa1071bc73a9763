"""Textual run configuration: one `key = value` per line, `#` comments.

Every key is documented in DEFAULTS below and in configs/default.cfg;
unknown keys are rejected so typos fail loudly instead of silently
reverting to a default. The same grammar also carries phantom specs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .network import InceptionConfig
from .optim import AdamHyper
from .phantom import PhantomSpec
from .pipeline import TrainConfig


class ConfigError(ValueError):
    """Malformed config text or an unknown/ill-typed key."""


def parse_kv(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


_MODULE_FIELDS = (
    "c_1x1",
    "c_3x3_reduce",
    "c_3x3",
    "c_5x5_reduce",
    "c_5x5",
    "c_pool_proj",
    "c_avg",
)


@dataclass
class RunConfig:
    """Everything the train/infer commands need, with paper-stated defaults."""

    patch_size: int = 45
    batch_size: int = 64
    epochs: int = 10
    validation_fraction: float = 0.2
    blur_sigma_mm: float = 1.0
    seed: int = 0
    patches_per_atlas: int = 26500
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    threshold: float = 0.5
    percentile: float = 90.0
    module1: InceptionConfig = None
    module2: InceptionConfig = None
    module3: InceptionConfig = None

    def __post_init__(self):
        from .network import DEFAULT_MODULE_CONFIGS

        defaults = DEFAULT_MODULE_CONFIGS
        if self.module1 is None:
            self.module1 = defaults[0]
        if self.module2 is None:
            self.module2 = defaults[1]
        if self.module3 is None:
            self.module3 = defaults[2]

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            patch_size=self.patch_size,
            batch_size=self.batch_size,
            epochs=self.epochs,
            validation_fraction=self.validation_fraction,
            blur_sigma_mm=self.blur_sigma_mm,
            seed=self.seed,
            adam=AdamHyper(self.lr, self.beta1, self.beta2, self.eps),
            patches_per_atlas=self.patches_per_atlas,
        )

    def module_configs(self) -> tuple[InceptionConfig, ...]:
        return (self.module1, self.module2, self.module3)


_INT_KEYS = {"patch_size", "batch_size", "epochs", "seed", "patches_per_atlas"}
_FLOAT_KEYS = {
    "validation_fraction",
    "blur_sigma_mm",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "threshold",
    "percentile",
}


def _convert(key: str, value: str, as_int: bool):
    try:
        return int(value) if as_int else float(value)
    except ValueError:
        kind = "integer" if as_int else "number"
        raise ConfigError(f"key {key!r}: expected {kind}, got {value!r}") from None


def parse_run_config(text: str) -> RunConfig:
    kv = parse_kv(text)
    kwargs = {}
    modules = {1: {}, 2: {}, 3: {}}
    for key, value in kv.items():
        if key in _INT_KEYS:
            kwargs[key] = _convert(key, value, as_int=True)
        elif key in _FLOAT_KEYS:
            kwargs[key] = _convert(key, value, as_int=False)
        elif key.startswith("module") and "_" in key:
            idx_str, field_name = key[len("module") :].split("_", 1)
            if idx_str in ("1", "2", "3") and field_name in _MODULE_FIELDS:
                modules[int(idx_str)][field_name] = _convert(key, value, as_int=True)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for idx, overrides in modules.items():
        if overrides:
            missing = [f for f in _MODULE_FIELDS if f not in overrides]
            if missing:
                raise ConfigError(
                    f"module{idx} is partially specified; missing {missing}"
                )
            kwargs[f"module{idx}"] = InceptionConfig(**overrides)
    return RunConfig(**kwargs)


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_run_config(f.read())


def run_config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, InceptionConfig):
            for mf in _MODULE_FIELDS:
                lines.append(f"{f.name}_{mf} = {getattr(value, mf)}")
        else:
            lines.append(f"{f.name} = {value!r}")
    return "\n".join(lines) + "\n"


_PHANTOM_INT = {"n_lesions", "seed", "dims_x", "dims_y", "dims_z"}
_PHANTOM_FLOAT = {
    "spacing_x",
    "spacing_y",
    "spacing_z",
    "radius_min",
    "radius_max",
    "tissue_mprage",
    "tissue_t2",
    "tissue_flair",
    "offset_mprage",
    "offset_t2",
    "offset_flair",
    "noise_sigma",
}


def parse_phantom_spec(text: str) -> PhantomSpec:
    kv = parse_kv(text)
    base = PhantomSpec()
    vals = {
        "dims": list(base.dims),
        "spacing": list(base.spacing),
        "radius": list(base.lesion_radius_range),
        "tissue": list(base.tissue_means),
        "offset": list(base.lesion_offsets),
        "n_lesions": base.n_lesions,
        "noise_sigma": base.noise_sigma,
        "seed": base.seed,
    }
    axis = {"x": 0, "y": 1, "z": 2}
    contrast = {"mprage": 0, "t2": 1, "flair": 2}
    for key, value in kv.items():
        if key in _PHANTOM_INT:
            num = _convert(key, value, as_int=True)
        elif key in _PHANTOM_FLOAT:
            num = _convert(key, value, as_int=False)
        else:
            raise ConfigError(f"unknown phantom key {key!r}")
        group, _, suffix = key.partition("_")
        if group == "dims":
            vals["dims"][axis[suffix]] = num
        elif group == "spacing":
            vals["spacing"][axis[suffix]] = num
        elif group == "radius":
            vals["radius"][0 if suffix == "min" else 1] = num
        elif group == "tissue":
            vals["tissue"][contrast[suffix]] = num
        elif group == "offset":
            vals["offset"][contrast[suffix]] = num
        else:
            vals[key] = num
    return PhantomSpec(
        dims=tuple(vals["dims"]),
        spacing=tuple(vals["spacing"]),
        n_lesions=vals["n_lesions"],
        lesion_radius_range=tuple(vals["radius"]),
        tissue_means=tuple(vals["tissue"]),
        lesion_offsets=tuple(vals["offset"]),
        noise_sigma=vals["noise_sigma"],
        seed=vals["seed"],
    )


def phantom_spec_to_text(spec: PhantomSpec) -> str:
    lines = []
    for name, suffixes, values in (
        ("dims", "xyz", spec.dims),
        ("spacing", "xyz", spec.spacing),
    ):
        lines += [f"{name}_{s} = {v!r}" for s, v in zip(suffixes, values)]
    lines.append(f"n_lesions = {spec.n_lesions}")
    lines.append(f"radius_min = {spec.lesion_radius_range[0]!r}")
    lines.append(f"radius_max = {spec.lesion_radius_range[1]!r}")
    for name, values in (("tissue", spec.tissue_means), ("offset", spec.lesion_offsets)):
        lines += [
            f"{name}_{c} = {v!r}"
            for c, v in zip(("mprage", "t2", "flair"), values)
        ]
    lines.append(f"noise_sigma = {spec.noise_sigma!r}")
    lines.append(f"seed = {spec.seed}")
    return "\n".join(lines) + "\n"
