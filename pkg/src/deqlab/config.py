"""Experiment configuration: YAML document + dotted-key overrides.

The config file is the interface for experiments; command-line
`--set section.key=value` overrides individual entries. Section
dataclasses validate ranges at load so commands can assume sane values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError

__all__ = [
    "DataConfig",
    "ModelConfig",
    "SolverSection",
    "TrainSection",
    "KernelSection",
    "ConcentrationSection",
    "OutputSection",
    "ExperimentConfig",
    "load_config",
    "apply_overrides",
]


def _build(section_cls, payload: dict, section: str):
    if payload is None:
        payload = {}
    if not isinstance(payload, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(section_cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    return section_cls(**payload)


@dataclass
class DataConfig:
    kind: str = "synthetic"  # synthetic | mnist | cifar10 | file
    n: int = 1000            # defaults match the reference synthetic setup
    d: int = 1000
    seed: int = 0
    y_cap: float = 10.0
    images: str | None = None      # mnist: IDX image file
    labels: str | None = None      # mnist: IDX label file
    path: str | None = None        # cifar10: binary batch
    matrix: str | None = None      # file: matrix CSV
    labels_csv: str | None = None  # file: labels CSV
    class_a: int = 0
    class_b: int = 1
    per_class: int = 500

    def validate(self):
        if self.kind not in ("synthetic", "mnist", "cifar10", "file"):
            raise ConfigError(f"data.kind {self.kind!r} is not one of "
                              f"synthetic|mnist|cifar10|file")
        if self.kind == "synthetic":
            if self.n < 1 or self.d < 2:
                raise ConfigError(f"synthetic data needs n >= 1, d >= 2; "
                                  f"got n={self.n}, d={self.d}")
        required = {"mnist": ("images", "labels"), "cifar10": ("path",),
                    "file": ("matrix", "labels_csv")}.get(self.kind, ())
        for key in required:
            value = getattr(self, key)
            if value is None:
                raise ConfigError(f"data.kind={self.kind} requires data.{key}")
            if not Path(value).exists():
                raise ConfigError(f"data.{key} path does not exist: {value}")
        if self.kind in ("mnist", "cifar10") and self.per_class < 1:
            raise ConfigError("data.per_class must be >= 1")


@dataclass
class ModelConfig:
    m: int | list = 500  # a list runs a width sweep sharing one step size
    sigma_w2: float = 0.08
    seed: int = 1

    def validate(self):
        widths = self.widths()
        if not widths or any(w < 1 for w in widths):
            raise ConfigError(f"model.m must be a positive int or list, got {self.m}")
        if sorted(widths) != widths:
            raise ConfigError("model.m list must be ascending")
        if not (0.0 < self.sigma_w2 < 0.125):
            raise ConfigError(f"model.sigma_w2 must lie in (0, 1/8), got "
                              f"{self.sigma_w2}")

    def widths(self) -> list:
        return [self.m] if isinstance(self.m, int) else list(self.m)


@dataclass
class SolverSection:
    tol: float = 1e-10
    max_iter: int = 10000

    def validate(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("solver.tol must be > 0 and solver.max_iter >= 1")


@dataclass
class TrainSection:
    eta: float | str = "auto"
    steps: int = 500
    monitor_every: int = 1
    assert_mode: str = "record"
    auto_eta_safety: float = 0.5
    warm_start: bool = True
    checkpoint_every: int = 0  # 0 disables checkpoints
    resume: str | None = None

    def validate(self):
        if isinstance(self.eta, str) and self.eta != "auto":
            raise ConfigError(f"train.eta must be a number or 'auto', got "
                              f"{self.eta!r}")
        if not isinstance(self.eta, str) and self.eta <= 0:
            raise ConfigError("train.eta must be positive")
        if self.steps < 1 or self.monitor_every < 1:
            raise ConfigError("train.steps and train.monitor_every must be >= 1")
        if self.assert_mode not in ("record", "fail-fast"):
            raise ConfigError(f"train.assert_mode {self.assert_mode!r} invalid")
        if self.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every must be >= 0")
        if self.resume is not None and not Path(self.resume).exists():
            raise ConfigError(f"train.resume path does not exist: {self.resume}")


@dataclass
class KernelSection:
    l_max: int = 60
    tol: float = 1e-14
    width_constant: float = 1.0
    depth_constant: float = 1.0
    failure_prob: float = 0.01

    def validate(self):
        if self.l_max < 1:
            raise ConfigError("kernel.l_max must be >= 1")
        if self.tol <= 0:
            raise ConfigError("kernel.tol must be > 0")
        if not (0 < self.failure_prob < 1):
            raise ConfigError("kernel.failure_prob must lie in (0, 1)")
        if self.width_constant <= 0 or self.depth_constant <= 0:
            raise ConfigError("kernel constants must be positive")


@dataclass
class ConcentrationSection:
    experiments: list = field(default_factory=lambda: [
        "tied_vs_population", "lambda0_vs_width"])
    m_list: list = field(default_factory=lambda: [100, 400, 1600])
    l: int = 6
    trials: int = 20
    base_seed: int = 123
    reconstruct_i: int = 0
    reconstruct_j: int = 1
    reconstruct_l: int = 3
    reconstruct_m: int = 200

    KNOWN = ("tied_vs_population", "lambda0_vs_width", "kernel_depth_decay",
             "equilibrium_depth_decay", "reconstruct")

    def validate(self):
        if not self.experiments:
            raise ConfigError("concentration.experiments is empty")
        for name in self.experiments:
            if name not in self.KNOWN:
                raise ConfigError(f"unknown concentration experiment {name!r}; "
                                  f"known: {list(self.KNOWN)}")
        if not self.m_list or any(m < 1 for m in self.m_list):
            raise ConfigError("concentration.m_list must be non-empty positive")
        if self.trials < 1 or self.l < 1:
            raise ConfigError("concentration.trials and .l must be >= 1")


@dataclass
class OutputSection:
    directory: str = "out"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    solver: SolverSection = field(default_factory=SolverSection)
    train: TrainSection = field(default_factory=TrainSection)
    kernel: KernelSection = field(default_factory=KernelSection)
    concentration: ConcentrationSection = field(default_factory=ConcentrationSection)
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a mapping")
        sections = {
            "data": DataConfig, "model": ModelConfig, "solver": SolverSection,
            "train": TrainSection, "kernel": KernelSection,
            "concentration": ConcentrationSection, "output": OutputSection,
        }
        unknown = set(doc) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        built = {name: _build(section_cls, doc.get(name), name)
                 for name, section_cls in sections.items()}
        return cls(**built)

    def validate(self) -> "ExperimentConfig":
        for name in ("data", "model", "solver", "train", "kernel",
                     "concentration"):
            getattr(self, name).validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply `section.key=value` strings; values parse as YAML scalars."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set needs section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"--set key must be section.key, got {dotted!r}")
        section, key = parts
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"could not parse value in {item!r}: {exc}") from exc
        doc.setdefault(section, {})
        if not isinstance(doc[section], dict):
            raise ConfigError(f"section {section!r} is not a mapping")
        doc[section][key] = value
    return doc


def load_config(path, overrides=()) -> tuple:
    """Read YAML, apply overrides, validate; returns (config, plain dict)."""
    if path is None:
        doc = {}
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if doc is None:
            doc = {}
    doc = apply_overrides(doc, overrides)
    cfg = ExperimentConfig.from_dict(doc).validate()
    return cfg, cfg.to_dict()
