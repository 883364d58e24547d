"""Flat run configuration shared by every command, with JSON round-tripping."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from .downstream import AFFINITY, EFFICACY, POCKET_RADIUS, DownstreamConfig
from .errors import InvalidParameter
from .model import ModelConfig
from .pretrain import PretrainConfig

SIGMA_GRID = (1e-5, 1e-3, 1e-1, 1.0)
LR_GRID = (1e-4, 1e-5)
MIN_LR_GRID = (5e-6, 5e-7)


@dataclass(frozen=True)
class RunConfig:
    # encoder
    layers: int = 6
    hidden: int = 256
    feature_dim: int = 128
    prompt_dim: int = 128
    dropout: float = 0.15
    clamp: float = 2.0
    normalize: bool = True
    intervals: tuple[int, ...] = (1, 5, 10)
    pooling: str = "mean"
    gate_scale: float = 1.0
    rbf: int = 0
    # pre-training
    sigma: float = 1e-3
    generative: bool = True
    noise: bool = True
    prompt: bool = True
    ordering: bool = True
    order_weight: float = 1.0
    order_n: int = 4
    order_samples: int = 2
    pretrain_batch: int = 32
    epochs: int = 200
    steps_per_epoch: Optional[int] = None
    max_steps: Optional[int] = None
    lr_decay: Optional[float] = None
    restore_best: bool = True
    lr: float = 1e-4
    min_lr: float = 5e-6
    factor: float = 0.6
    patience: int = 10
    train_ratio: float = 0.9
    # downstream
    task: str = AFFINITY
    downstream_batch: int = 64
    downstream_epochs: int = 200
    downstream_lr: float = 1e-4
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    # data limits
    node_cap: int = 10_000
    atom_cap: int = 600
    pocket_radius: float = POCKET_RADIUS[AFFINITY]
    efficacy_radius: float = POCKET_RADIUS[EFFICACY]
    seed: int = 1234

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(int(i) for i in self.intervals))
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        checks = [
            (self.layers >= 1, "layers must be >= 1"),
            (self.hidden >= 1 and self.feature_dim >= 1 and self.prompt_dim >= 1,
             "widths must be positive"),
            (0 <= self.dropout < 1, "dropout must lie in [0, 1)"),
            (self.clamp > 0, "clamp must be positive"),
            (len(self.intervals) > 0 and min(self.intervals) >= 1, "intervals must be positive"),
            (self.pooling in ("mean", "sum"), "pooling must be mean or sum"),
            (self.sigma >= 0, "sigma must be non-negative"),
            (self.order_n >= 2, "order_n must be >= 2"),
            (self.pretrain_batch >= 1 and self.downstream_batch >= 1, "batch sizes must be positive"),
            (self.epochs >= 1 and self.downstream_epochs >= 1, "epochs must be positive"),
            (0 < self.min_lr <= self.lr and self.downstream_lr > 0, "need 0 < min_lr <= lr"),
            (0 < self.factor < 1 and self.patience >= 1, "scheduler needs factor in (0,1), patience >= 1"),
            (0 < self.train_ratio < 1, "train_ratio must lie in (0, 1)"),
            (self.task in (AFFINITY, EFFICACY), f"unknown task {self.task!r}"),
            (self.node_cap >= 1 and self.atom_cap >= 1, "caps must be positive"),
            (self.pocket_radius > 0 and self.efficacy_radius > 0, "pocket radii must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise InvalidParameter(message)

    # -- views
    def model_config(self) -> ModelConfig:
        return ModelConfig(feature_dim=self.feature_dim, prompt_dim=self.prompt_dim,
                           hidden=self.hidden, layers=self.layers, dropout=self.dropout,
                           clamp=self.clamp, normalize=self.normalize, intervals=self.intervals,
                           pooling=self.pooling, gate_scale=self.gate_scale, rbf=self.rbf)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            sigma=self.sigma, generative=self.generative, noise=self.noise, prompt=self.prompt,
            ordering=self.ordering, order_weight=self.order_weight, order_n=self.order_n,
            order_samples=self.order_samples, epochs=self.epochs, batch_size=self.pretrain_batch,
            steps_per_epoch=self.steps_per_epoch, lr=self.lr, min_lr=self.min_lr,
            factor=self.factor, patience=self.patience, train_ratio=self.train_ratio,
            seed=self.seed, max_steps=self.max_steps, lr_decay=self.lr_decay,
            restore_best=self.restore_best,
        )

    def downstream_config(self, mode: str, task: Optional[str] = None) -> DownstreamConfig:
        return DownstreamConfig(task=task or self.task, mode=mode, epochs=self.downstream_epochs,
                                batch_size=self.downstream_batch, lr=self.downstream_lr,
                                min_lr=min(self.min_lr, self.downstream_lr), factor=self.factor,
                                patience=self.patience, seed=self.seed)

    def radius(self, task: Optional[str] = None) -> float:
        return self.pocket_radius if (task or self.task) == AFFINITY else self.efficacy_radius

    # -- serialisation
    def to_dict(self) -> dict:
        d = asdict(self)
        d["intervals"] = list(self.intervals)
        d["split_fractions"] = list(self.split_fractions)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidParameter(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidParameter(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidParameter("config JSON must be an object")
        return cls.from_dict(data)

    def updated(self, **changes) -> "RunConfig":
        return replace(self, **changes)
