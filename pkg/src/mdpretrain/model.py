"""Parameter container holding encoder, prompt table, ordering classifier and heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from .diffcore import DTYPE, MLP, load_checkpoint, save_checkpoint
from .egmn import Egmn, EgmnConfig
from .errors import InvalidDataset, InvalidParameter, UnknownInterval

FINETUNE = "finetune"


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 128  # psi_h
    prompt_dim: int = 128  # psi_prompt
    hidden: int = 256
    layers: int = 6
    dropout: float = 0.15
    clamp: float = 2.0
    normalize: bool = True
    intervals: tuple[int, ...] = (1, 5, 10)
    pooling: str = "mean"
    gate_scale: float = 1.0
    rbf: int = 0

    @property
    def width(self) -> int:
        return self.feature_dim + self.prompt_dim

    def egmn(self) -> EgmnConfig:
        return EgmnConfig(width=self.width, hidden=self.hidden, layers=self.layers,
                          dropout=self.dropout, clamp=self.clamp, normalize=self.normalize,
                          gate_scale=self.gate_scale, rbf=self.rbf)


class PromptTable(nn.Module):
    """One learnable embedding per time interval plus the fine-tuning prompt."""

    def __init__(self, intervals: Sequence[int], dim: int, generator: torch.Generator):
        super().__init__()
        intervals = tuple(int(i) for i in intervals)
        if len(set(intervals)) != len(intervals) or not intervals or min(intervals) < 1:
            raise InvalidParameter(f"intervals must be unique positive integers, got {intervals}")
        self.intervals = intervals
        self.dim = dim
        self.table = nn.Parameter(torch.randn(len(intervals), dim, generator=generator, dtype=DTYPE))
        self.finetune = nn.Parameter(torch.randn(dim, generator=generator, dtype=DTYPE))

    def embedding(self, interval) -> torch.Tensor:
        if interval == FINETUNE:
            return self.finetune
        try:
            return self.table[self.intervals.index(int(interval))]
        except (ValueError, TypeError):
            raise UnknownInterval(f"no prompt for interval {interval!r}; known: {self.intervals}") from None

    def attach(self, features: torch.Tensor, interval) -> torch.Tensor:
        """Concatenate the interval's embedding to every atom's features."""
        emb = self.embedding(interval)
        return torch.cat([features, emb.expand(features.shape[0], -1)], dim=-1)


class OrderClassifier(nn.Module):
    """Antisymmetric pair scorer: logit(i, j) = g([H_i, H_j]) - g([H_j, H_i])."""

    def __init__(self, width: int, hidden: int, generator: torch.Generator):
        super().__init__()
        self.mlp = MLP([2 * width, hidden, 1], generator)

    def forward(self, hi: torch.Tensor, hj: torch.Tensor) -> torch.Tensor:
        return (self.mlp(torch.cat([hi, hj], -1)) - self.mlp(torch.cat([hj, hi], -1))).squeeze(-1)


class LinearHead(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(width, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros((), dtype=DTYPE))

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return pooled @ self.weight + self.bias


class MDModel(nn.Module):
    def __init__(self, config: ModelConfig, seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.config = config
        self.encoder = Egmn(config.egmn(), gen)
        self.prompts = PromptTable(config.intervals, config.prompt_dim, gen)
        self.orderer = OrderClassifier(config.width, config.hidden, gen)
        self.affinity_head = LinearHead(config.width)
        self.efficacy_head = LinearHead(config.width)

    def tensors(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.state_dict().items()}

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict())

    def load_tensors(self, tensors: dict[str, torch.Tensor]) -> None:
        own = self.state_dict()
        missing = set(own) - set(tensors)
        if missing:
            raise InvalidDataset(f"checkpoint lacks {sorted(missing)[:3]}...")
        for name, t in own.items():
            if tuple(tensors[name].shape) != tuple(t.shape):
                raise InvalidDataset(f"checkpoint shape mismatch for {name}")
        self.load_state_dict({k: tensors[k] for k in own})

    @classmethod
    def from_checkpoint(cls, path, config: ModelConfig) -> "MDModel":
        model = cls(config)
        model.load_tensors(load_checkpoint(path))
        return model
