"""Experiment configuration: flat key=value files with flag overrides.

A config file holds one ``key = value`` pair per line ('#' comments); keys
are the field names of :class:`ExperimentConfig`. CLI ``--set key=value``
overrides win over file values, which win over defaults. Dataset-specific
defaults (learning rate, contrastive weight) apply when ``dataset_name``
names a known dataset and the key was not set explicitly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .objective import ORIENTATIONS

FORMATS = ("edge-list", "jodie", "labeled-tsv", "synthetic")

# learning rate / contrastive weight per dataset
DATASET_DEFAULTS = {
    "uci": {"learning_rate": 1e-4, "contrastive_weight": 0.01},
    "digg": {"learning_rate": 1e-4, "contrastive_weight": 0.01},
    "wikipedia": {"learning_rate": 1e-3, "contrastive_weight": 10.0},
    "reddit": {"learning_rate": 1e-3, "contrastive_weight": 0.01},
}


@dataclass
class ExperimentConfig:
    # data
    dataset_path: str = ""
    dataset_format: str = "edge-list"
    dataset_name: str = ""
    # anomaly injection
    inject_enabled: bool = False
    inject_rate: float = 0.03
    inject_k: int = 30
    inject_seed: int = 1
    # chronological split
    train_frac: float = 0.5
    val_frac: float = 0.2
    test_frac: float = 0.3
    # label budget
    n_labeled_anomalies: int = 1
    label_seed: int = 2
    # model dimensions
    layers: int = 2
    heads: int = 4
    hidden: int = 128
    time_dim: int = 128
    degree_buckets: int = 256
    fanouts: tuple = (25, 10, 5)
    # optimization
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 200
    contrastive_weight: float = 0.01
    orientation: str = "center-anomalies"
    hsc_labeled_only: bool = False
    # ablation switches
    no_local_mha: bool = False
    no_global_mha: bool = False
    no_time_embed: bool = False
    no_contrastive: bool = False
    no_ego_context: bool = False
    # sampling variants
    shared_hop1_budget: bool = False
    conventional_local_queries: bool = False
    # seeds
    train_seed: int = 3
    model_seed: int = 4
    eval_seed: int = 5
    # synthetic benchmark generation
    synthetic_nodes: int = 500
    synthetic_events: int = 2000
    synthetic_seed: int = 11
    synthetic_widths: tuple = (3.0, 5.0)
    # output
    out_dir: str = "runs/run"

    def validate(self) -> None:
        if self.dataset_format not in FORMATS:
            raise ConfigError(f"unknown dataset_format {self.dataset_format!r}, "
                              f"expected one of {FORMATS}")
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fracs}")
        for name in ("layers", "heads", "hidden", "time_dim", "epochs",
                     "batch_size", "degree_buckets", "n_labeled_anomalies"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.time_dim % 2 != 0:
            raise ConfigError("time_dim must be even")
        if not self.fanouts or any(f < 1 for f in self.fanouts):
            raise ConfigError(f"fanouts must be positive, got {self.fanouts}")
        if self.inject_rate < 0:
            raise ConfigError("inject_rate must be >= 0")
        if self.contrastive_weight < 0:
            raise ConfigError("contrastive_weight must be >= 0")
        if self.orientation not in ORIENTATIONS:
            raise ConfigError(f"orientation must be one of {ORIENTATIONS}")
        if self.dataset_format != "synthetic" and not self.dataset_path:
            raise ConfigError("dataset_path is required unless dataset_format=synthetic")

    def ablations(self) -> dict:
        return {name: getattr(self, name) for name in
                ("no_local_mha", "no_global_mha", "no_time_embed",
                 "no_contrastive", "no_ego_context")}

    def seeds(self) -> dict:
        return {name: getattr(self, name) for name in
                ("inject_seed", "label_seed", "train_seed", "model_seed",
                 "eval_seed", "synthetic_seed")}

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


class ConfigError(Exception):
    pass


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    f = _FIELDS.get(name)
    if f is None:
        raise ConfigError(f"unknown config key {name!r}")
    raw = raw.strip()
    default = f.default if f.default is not dataclasses.MISSING else None
    kind = type(default)
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is tuple:
        elem = float if name == "synthetic_widths" else int
        return tuple(elem(p.strip()) for p in raw.split(",") if p.strip())
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = _parse_value(key.strip(), raw)
    return values


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a validated config from an optional file plus overrides."""
    values: dict = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    explicit = set(values)
    if overrides:
        for key, raw in overrides.items():
            values[key] = _parse_value(key, raw) if isinstance(raw, str) else raw
        explicit |= set(overrides)
    cfg = ExperimentConfig(**values)
    defaults = DATASET_DEFAULTS.get(cfg.dataset_name.lower())
    if defaults:
        for key, value in defaults.items():
            if key not in explicit:
                setattr(cfg, key, value)
    cfg.validate()
    return cfg
