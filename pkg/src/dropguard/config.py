"""Declarative experiment configuration.

Config files are plain text: one `dotted.key = value` per line, `#`
comments, every key optional. Unknown keys are rejected. Lists are
comma-separated. Defaults reproduce the standard desk-scale experiment
(2000-node synthetic graph, 40 mimic triggers, 20 drop rounds at
probability 0.5).
"""

from __future__ import annotations

from pathlib import Path

from .graph import DropSpec
from .nn import TrainConfig
from .seeds import stage_seed
from .synth import SyntheticConfig, TriggerSpec


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, object] = {
    "seed": 7,
    "output_dir": "runs/default",
    "threads": 1,

    "dataset.kind": "synthetic",          # synthetic | file
    "dataset.path": "",
    "dataset.num_nodes": 2000,
    "dataset.num_classes": 7,
    "dataset.feature_dim": 64,
    "dataset.class_mean_separation": 22.0,
    "dataset.base_mean_norm": 0.0,
    "dataset.feature_noise": 1.0,
    "dataset.feature_bound": 20.0,
    "dataset.topology": "sbm",            # sbm | regular
    "dataset.intra_p": 0.0075,
    "dataset.inter_p": 0.0,
    "dataset.regular_degree": 4,
    "dataset.labeled_fraction": 0.8,

    "attack.kind": "class_mimic",         # class_mimic | fixed_random
    "attack.budget": 40,
    "attack.trigger_size": 3,
    "attack.attach_edges": 1,
    "attack.internal_topology": "clique",
    "attack.mimic_noise_scale": 0.3,
    "attack.mimic_noise_spread": 1.5,
    "attack.target_class": 0,
    "attack.unseen_fraction": 0.5,

    "drop.prob": 0.5,
    "drop.iterations": 20,

    "train.learning_rate": 0.01,
    "train.weight_decay": 5e-4,
    "train.max_epochs": 1500,
    "train.patience": 1500,
    "train.hidden_dim": 64,
    "train.convergence_tol": 1e-9,

    "defense.mode": "unlearn",            # unlearn | prune | none
    "defense.detector": "randomized",     # randomized | per_edge
    "defense.prune_threshold": 0.2,
    "defense.truncate_fraction": 1.0,

    "theorems.num_nodes": 800,
    "theorems.num_classes": 4,
    "theorems.feature_dim": 32,
    "theorems.regular_degree": 8,
    "theorems.feature_noise": 1.0,
    "theorems.feature_bound": 2.0,
    "theorems.replications": 5000,
    "theorems.t2_replications": 2000,
    "theorems.t3_replications": 10000,

    "sweep.iterations": [2, 5, 25, 50, 100],
    "sweep.probs": [0.1, 0.3, 0.5, 0.7, 0.9],
}


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if default and isinstance(default[0], int):
                return [int(float(p)) for p in parts]
            if default and isinstance(default[0], float):
                return [float(p) for p in parts]
            return parts
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


class ExperimentConfig:
    """All settings for one experiment, resolved against DEFAULTS."""

    def __init__(self, values: dict[str, object] | None = None):
        merged = dict(DEFAULTS)
        for key, val in (values or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = val
        self.values = merged
        self._validate()

    def _validate(self):
        v = self.values
        if v["dataset.kind"] not in ("synthetic", "file"):
            raise ConfigError(f"dataset.kind must be synthetic or file, "
                              f"got {v['dataset.kind']!r}")
        if v["dataset.kind"] == "file" and not v["dataset.path"]:
            raise ConfigError("dataset.kind=file requires dataset.path")
        if v["defense.mode"] not in ("unlearn", "prune", "none"):
            raise ConfigError(f"unknown defense.mode {v['defense.mode']!r}")
        if v["defense.detector"] not in ("randomized", "per_edge"):
            raise ConfigError(f"unknown defense.detector {v['defense.detector']!r}")
        if not 0.0 <= float(v["drop.prob"]) <= 1.0:
            raise ConfigError("drop.prob must be in [0, 1]")
        if int(v["drop.iterations"]) < 1:
            raise ConfigError("drop.iterations must be >= 1")
        if not 0.0 < float(v["defense.truncate_fraction"]) <= 1.0:
            raise ConfigError("defense.truncate_fraction must be in (0, 1]")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        overrides: dict[str, object] = {}
        for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                  start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{ln}: expected 'key = value'")
            key, raw = (s.strip() for s in text.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
            overrides[key] = _coerce(key, raw, DEFAULTS[key])
        return cls(overrides)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def synthetic_config(self) -> SyntheticConfig:
        v = self.values
        return SyntheticConfig(
            num_nodes=int(v["dataset.num_nodes"]),
            num_classes=int(v["dataset.num_classes"]),
            feature_dim=int(v["dataset.feature_dim"]),
            class_mean_separation=float(v["dataset.class_mean_separation"]),
            base_mean_norm=float(v["dataset.base_mean_norm"]),
            feature_noise=float(v["dataset.feature_noise"]),
            feature_bound=float(v["dataset.feature_bound"]),
            topology=str(v["dataset.topology"]),
            intra_p=float(v["dataset.intra_p"]),
            inter_p=float(v["dataset.inter_p"]),
            regular_degree=int(v["dataset.regular_degree"]),
            labeled_fraction=float(v["dataset.labeled_fraction"]),
            seed=stage_seed(self.seed, "graph"))

    def trigger_spec(self, training: bool = True) -> TriggerSpec:
        """Trigger construction parameters. Training triggers carry the
        per-instance noise spread (sample-specific variation); inference
        triggers come from the shared core (spread 0), the way a trigger
        generator emits its best trigger at deployment."""
        v = self.values
        return TriggerSpec(kind=str(v["attack.kind"]),
                           trigger_size=int(v["attack.trigger_size"]),
                           attach_edges=int(v["attack.attach_edges"]),
                           internal_topology=str(v["attack.internal_topology"]),
                           mimic_noise_scale=float(v["attack.mimic_noise_scale"]),
                           mimic_noise_spread=(
                               float(v["attack.mimic_noise_spread"])
                               if training else 0.0))

    def drop_spec(self) -> DropSpec:
        v = self.values
        return DropSpec(drop_prob=float(v["drop.prob"]),
                        iterations=int(v["drop.iterations"]),
                        seed=stage_seed(self.seed, "drop"))

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(learning_rate=float(v["train.learning_rate"]),
                           weight_decay=float(v["train.weight_decay"]),
                           max_epochs=int(v["train.max_epochs"]),
                           patience=int(v["train.patience"]),
                           hidden_dim=int(v["train.hidden_dim"]),
                           seed=self.seed,
                           convergence_tol=float(v["train.convergence_tol"]))

    def theorem_graph_config(self) -> SyntheticConfig:
        v = self.values
        return SyntheticConfig(
            num_nodes=int(v["theorems.num_nodes"]),
            num_classes=int(v["theorems.num_classes"]),
            feature_dim=int(v["theorems.feature_dim"]),
            class_mean_separation=0.0,
            base_mean_norm=0.0,
            feature_noise=float(v["theorems.feature_noise"]),
            feature_bound=float(v["theorems.feature_bound"]),
            topology="regular",
            regular_degree=int(v["theorems.regular_degree"]),
            labeled_fraction=1.0,
            seed=stage_seed(self.seed, "theorems"))

    def as_dict(self) -> dict:
        return dict(self.values)
