"""Experiment configuration: a flat ``key = value`` text format.

Lines are ``key = value`` with ``#`` comments; nested concerns use dotted
keys (``loss.gamma``, ``arch.dense_widths``).  The format is deliberately
diff-friendly and parsed with no dependencies.  ``snapshot_lines`` emits the
canonical serialization embedded in run artifacts, so a config file round-
trips bit-exactly through an experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

METHODS = ("ce", "ls", "ls+ce", "om", "ls+om")
DATASETS = ("mnist", "fashion-mnist", "cifar10", "blobs")


@dataclass
class ExperimentConfig:
    dataset: str = "blobs"
    data_dir: str = ""
    per_class_train: int = 0  # 0 keeps the full training set
    sets: list[str] = field(default_factory=lambda: ["set1"])
    methods: list[str] = field(default_factory=lambda: ["ce"])
    iterations: int = 3000
    switch_iteration: int = 1500
    batch_size: int = 64
    learning_rate: float = 0.001
    gamma: float = 1.5
    bd_form: str = "shell-squared"
    is_form: str = "min-pairwise"
    threshold_percentile: float = 99.0
    openmax_tail_size: int = 20
    openmax_alpha: int = 3
    runs: int = 12
    base_seed: int = 0
    output_dir: str = "out"
    arch_kind: str = "auto"  # auto | conv | mlp
    conv_channels: list[int] = field(default_factory=lambda: [8])
    dense_widths: list[int] = field(default_factory=lambda: [64])
    conv_kernel: int = 3
    dropout_keep: float = 0.2
    use_batchnorm: bool = True
    blobs_classes: int = 10
    blobs_per_class: int = 200
    blobs_test_per_class: int = 100
    blobs_dim: int = 16
    blobs_center_scale: float = 1.0
    blobs_noise_sigma: float = 0.25

    def validate(self) -> "ExperimentConfig":
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"method {m!r} not in {METHODS}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not self.sets:
            raise ConfigError("at least one known set is required")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.iterations < 1 or self.switch_iteration < 0:
            raise ConfigError("iterations must be >= 1 and switch_iteration >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.gamma > 1.0:
            raise ConfigError("loss.gamma must be > 1")
        if not 0.0 < self.threshold_percentile <= 100.0:
            raise ConfigError("threshold.percentile must lie in (0, 100]")
        if self.arch_kind not in ("auto", "conv", "mlp"):
            raise ConfigError("arch.kind must be auto, conv or mlp")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError("arch.dropout_keep must lie in (0, 1]")
        if self.dataset != "blobs" and not self.data_dir:
            raise ConfigError(f"dataset {self.dataset} needs dataset.dir")
        return self


# config-file key -> (dataclass field, value parser)
def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def _str_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


_KEYMAP: dict[str, tuple[str, object]] = {
    "dataset": ("dataset", str),
    "dataset.dir": ("data_dir", str),
    "dataset.per_class_train": ("per_class_train", int),
    "known_set": ("sets", lambda v: [v.strip()] if "," not in v else _str_list(v)),
    "sets": ("sets", _str_list),
    "method": ("methods", _str_list),
    "iterations": ("iterations", int),
    "switch_iteration": ("switch_iteration", int),
    "batch_size": ("batch_size", int),
    "learning_rate": ("learning_rate", float),
    "loss.gamma": ("gamma", float),
    "loss.bd_form": ("bd_form", str),
    "loss.is_form": ("is_form", str),
    "threshold.percentile": ("threshold_percentile", float),
    "openmax.tail_size": ("openmax_tail_size", int),
    "openmax.alpha": ("openmax_alpha", int),
    "runs": ("runs", int),
    "base_seed": ("base_seed", int),
    "output_dir": ("output_dir", str),
    "arch.kind": ("arch_kind", str),
    "arch.conv_channels": ("conv_channels", _int_list),
    "arch.dense_widths": ("dense_widths", _int_list),
    "arch.kernel": ("conv_kernel", int),
    "arch.dropout_keep": ("dropout_keep", float),
    "arch.batchnorm": ("use_batchnorm", _bool),
    "blobs.classes": ("blobs_classes", int),
    "blobs.per_class": ("blobs_per_class", int),
    "blobs.test_per_class": ("blobs_test_per_class", int),
    "blobs.dim": ("blobs_dim", int),
    "blobs.center_scale": ("blobs_center_scale", float),
    "blobs.noise_sigma": ("blobs_noise_sigma", float),
}

_FIELD_TO_KEY = {}
for _key, (_field, _) in _KEYMAP.items():
    # first key wins where two keys feed one field (known_set/sets)
    _FIELD_TO_KEY.setdefault(_field, _key)
_FIELD_TO_KEY["sets"] = "sets"


def parse_config_text(text: str) -> ExperimentConfig:
    config = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYMAP:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        field_name, parser = _KEYMAP[key]
        try:
            setattr(config, field_name, parser(value))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return config.validate()


def parse_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def _fmt_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def snapshot_lines(config: ExperimentConfig) -> list[str]:
    """Canonical ``key = value`` lines, in field order, one per field."""
    lines = []
    for f in fields(config):
        key = _FIELD_TO_KEY[f.name]
        lines.append(f"{key} = {_fmt_value(getattr(config, f.name))}")
    return lines
