"""Plain-text experiment configuration.

Format: ``key = value`` lines grouped under ``[blob]``, ``[noise]``,
``[train]`` and ``[experiment]`` section headers; ``#`` starts a comment.
Unknown sections or keys are rejected with the offending line number, as
are out-of-range values.  An empty file yields the documented defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .bilevel import TrainConfig, Variant
from .data import BlobSpec
from .noise import NoiseKind


@dataclass(frozen=True)
class ExperimentConfig:
    blob: BlobSpec = BlobSpec()
    noise_kinds: tuple[NoiseKind, ...] = (NoiseKind.UNIFORM,)
    noise_rates: tuple[float, ...] = (0.0, 0.4)
    variants: tuple[Variant, ...] = (Variant.CLEAN_CE, Variant.NOISY_CE, Variant.NOISY_MAE)
    train: TrainConfig = TrainConfig()
    num_seeds: int = 5
    seed: int = 1
    output_dir: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.num_seeds < 1:
            raise ValueError("num_seeds must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.noise_kinds or not self.noise_rates or not self.variants:
            raise ValueError("noise kinds, rates, and variants must be nonempty")
        for rate in self.noise_rates:
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"noise rate must lie in [0, 1), got {rate}")


class ConfigError(ValueError):
    pass


def _parse_list(s: str, item):
    return tuple(item(part.strip()) for part in s.split(",") if part.strip())


# section -> key -> (target field, parser)
_SCHEMA = {
    "blob": {
        "classes": ("num_classes", int),
        "dim": ("dim", int),
        "n_train": ("n_train", int),
        "n_meta": ("n_meta", int),
        "n_test": ("n_test", int),
        "separation": ("separation", float),
        "cluster_std": ("cluster_std", float),
    },
    "noise": {
        "kinds": ("noise_kinds", lambda s: _parse_list(s, lambda x: NoiseKind(x.lower()))),
        "rates": ("noise_rates", lambda s: _parse_list(s, float)),
    },
    "train": {
        "train_batch": ("train_batch", int),
        "meta_batch": ("meta_batch", int),
        "classifier_lr": ("classifier_lr", float),
        "meta_lr": ("meta_lr", float),
        "momentum": ("momentum", float),
        "weight_decay": ("weight_decay", float),
        "epochs": ("epochs", int),
        "lr_milestones": ("lr_milestones", lambda s: _parse_list(s, int)),
    },
    "experiment": {
        "variants": ("variants", lambda s: _parse_list(s, lambda x: Variant(x.lower()))),
        "num_seeds": ("num_seeds", int),
        "seed": ("seed", int),
        "output_dir": ("output_dir", str),
        "workers": ("workers", int),
    },
}


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    sections: dict[str, dict] = {name: {} for name in _SCHEMA}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in _SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown section [{current}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key outside any section")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA[current]:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}' in section [{current}]")
        field_name, parser = _SCHEMA[current][key]
        try:
            sections[current][field_name] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {exc}") from exc

    try:
        blob = replace(BlobSpec(), **sections["blob"])
        train = replace(TrainConfig(), **sections["train"])
        top = {**sections["noise"], **sections["experiment"]}
        return ExperimentConfig(blob=blob, train=train, **top)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def parse_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), source=str(p))


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = [
        "[blob]",
        f"classes = {cfg.blob.num_classes}",
        f"dim = {cfg.blob.dim}",
        f"n_train = {cfg.blob.n_train}",
        f"n_meta = {cfg.blob.n_meta}",
        f"n_test = {cfg.blob.n_test}",
        f"separation = {cfg.blob.separation!r}",
        f"cluster_std = {cfg.blob.cluster_std!r}",
        "",
        "[noise]",
        f"kinds = {', '.join(k.value for k in cfg.noise_kinds)}",
        f"rates = {', '.join(repr(r) for r in cfg.noise_rates)}",
        "",
        "[train]",
        f"train_batch = {cfg.train.train_batch}",
        f"meta_batch = {cfg.train.meta_batch}",
        f"classifier_lr = {cfg.train.classifier_lr!r}",
        f"meta_lr = {cfg.train.meta_lr!r}",
        f"momentum = {cfg.train.momentum!r}",
        f"weight_decay = {cfg.train.weight_decay!r}",
        f"epochs = {cfg.train.epochs}",
        f"lr_milestones = {', '.join(str(m) for m in cfg.train.lr_milestones)}",
        "",
        "[experiment]",
        f"variants = {', '.join(v.value for v in cfg.variants)}",
        f"num_seeds = {cfg.num_seeds}",
        f"seed = {cfg.seed}",
        f"output_dir = {cfg.output_dir}",
        f"workers = {cfg.workers}",
    ]
    return "\n".join(lines) + "\n"
