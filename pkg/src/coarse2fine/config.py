"""Run configuration: one serializable record that pins down a whole run.

A run is reproducible from its config and nothing else; the CLI writes the
config verbatim into every output directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .bootstrap import BETA_CHECK_MODES, CS_LOSS_MODES, Schedule
from .model import LossConfig
from .similarity import METRICS, SimilarityConfig

__all__ = ["RunConfig"]


@dataclass(frozen=True)
class RunConfig:
    # input/output paths
    taxonomy: str = ""
    corpus: str = ""
    passages: str = ""
    prototypes: str = ""
    prototypes_no_gloss: str | None = None  # alternate prototype file for --no-gloss
    output_dir: str = "run"

    # similarity
    metric: str = "csls"
    knn_k: int = 3

    # optimization
    margin_global: float = 0.05
    margin_local: float = 0.05
    learning_rate: float = 2e-4
    weight_decay: float = 0.0
    batch_size: int = 8
    d_proj: int | None = None
    init_noise: float = 0.01

    # schedule and selection
    warmup_epochs: int = 1
    bootstrap_epochs: int = 4
    select_percent: float | str = "auto"
    seed: int = 0

    # mode switches
    mapping_free: bool = False
    no_select: bool = False
    no_gloss: bool = False
    cs_losses: str = "both"
    literal_hinge_sign: bool = False
    match_mode: str = "token"
    exclusive_scope: str = "candidates"
    beta_check: str = "warn"
    emit_confusion: bool = False

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.cs_losses not in CS_LOSS_MODES:
            raise ValueError(f"cs_losses must be one of {CS_LOSS_MODES}")
        if self.beta_check not in BETA_CHECK_MODES:
            raise ValueError(f"beta_check must be one of {BETA_CHECK_MODES}")
        if self.match_mode not in ("token", "substring"):
            raise ValueError("match_mode must be 'token' or 'substring'")
        if self.exclusive_scope not in ("candidates", "all"):
            raise ValueError("exclusive_scope must be 'candidates' or 'all'")
        if self.select_percent != "auto":
            r = float(self.select_percent)
            if not 0.0 < r <= 100.0:
                raise ValueError(f"select_percent must be 'auto' or in (0, 100], got {r}")
        if self.no_gloss and not self.prototypes_no_gloss:
            raise ValueError("no_gloss requires prototypes_no_gloss to point at a file")
        # LossConfig/SimilarityConfig/Schedule validate their own fields
        self.loss_config()
        self.similarity_config()
        self.schedule()

    def loss_config(self) -> LossConfig:
        return LossConfig(
            margin_global=self.margin_global,
            margin_local=self.margin_local,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            literal_hinge_sign=self.literal_hinge_sign,
        )

    def similarity_config(self) -> SimilarityConfig:
        return SimilarityConfig(metric=self.metric, knn_k=self.knn_k)

    def schedule(self) -> Schedule:
        return Schedule(warmup_epochs=self.warmup_epochs, bootstrap_epochs=self.bootstrap_epochs)

    def prototype_path(self) -> str:
        return self.prototypes_no_gloss if self.no_gloss else self.prototypes

    def require_files(self) -> None:
        """Fail fast before a run if any referenced input is missing."""
        for name in ("taxonomy", "corpus", "passages"):
            value = getattr(self, name)
            if not value:
                raise ValueError(f"config field {name!r} is required")
            if not Path(value).is_file():
                raise FileNotFoundError(f"{name} file not found: {value}")
        proto = self.prototype_path()
        if not proto:
            raise ValueError("config field 'prototypes' is required")
        if not Path(proto).is_file():
            raise FileNotFoundError(f"prototype file not found: {proto}")

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**raw)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
