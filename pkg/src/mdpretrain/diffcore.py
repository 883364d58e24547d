"""Numeric core: feed-forward blocks, gradients, Adam, plateau schedule, checkpoints.

Everything runs in float64 on CPU; reverse-mode differentiation is torch
autograd. Adam and the plateau schedule are implemented here so that their
update rules are explicit and bit-deterministic.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .errors import InvalidDataset, InvalidParameter, NumericalError, ShapeError

DTYPE = torch.float64
CHECKPOINT_MAGIC = b"EGMN"
CHECKPOINT_VERSION = 1


def glorot_uniform_(weight: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    fan_out, fan_in = weight.shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        weight.copy_((torch.rand(weight.shape, generator=generator, dtype=DTYPE) * 2 - 1) * bound)
    return weight


def mlp_apply(layers: Sequence[tuple[torch.Tensor, torch.Tensor]], x: torch.Tensor) -> torch.Tensor:
    """Affine maps with SiLU between them (none after the last)."""
    fan_in = layers[0][0].shape[1]
    if x.shape[-1] != fan_in:
        raise ShapeError(f"input width {x.shape[-1]} does not match fan-in {fan_in}")
    for k, (w, b) in enumerate(layers):
        x = x @ w.T + b
        if k < len(layers) - 1:
            x = torch.nn.functional.silu(x)
    return x


class MLP(nn.Module):
    """Multi-layer perceptron over explicit weight/bias parameters."""

    def __init__(self, sizes: Sequence[int], generator: torch.Generator, final_scale: float = 1.0):
        super().__init__()
        if len(sizes) < 2:
            raise InvalidParameter("an MLP needs at least an input and an output size")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = glorot_uniform_(torch.empty(b, a, dtype=DTYPE), generator)
            if k == len(sizes) - 2 and final_scale != 1.0:
                w = w * final_scale
            self.weights.append(nn.Parameter(w))
            self.biases.append(nn.Parameter(torch.zeros(b, dtype=DTYPE)))

    @property
    def layers(self) -> list[tuple[torch.Tensor, torch.Tensor]]:
        return list(zip(self.weights, self.biases))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return mlp_apply(self.layers, x)


def softmax(logits: torch.Tensor) -> torch.Tensor:
    if logits.numel() == 0:
        raise InvalidParameter("softmax of an empty vector")
    z = torch.exp(logits - logits.max().detach())
    return z / z.sum()


def segment_softmax(logits: torch.Tensor, segment: torch.Tensor, n_segments: int) -> torch.Tensor:
    """Softmax of ``logits`` within groups sharing the same ``segment`` id."""
    peak = torch.full((n_segments,), -torch.inf, dtype=logits.dtype)
    peak = peak.scatter_reduce(0, segment, logits.detach(), reduce="amax", include_self=True)
    z = torch.exp(logits - peak[segment])
    total = torch.zeros(n_segments, dtype=logits.dtype).index_add(0, segment, z)
    return z / total[segment]


def dropout_apply(x: torch.Tensor, rate: float, train: bool,
                  generator: Optional[torch.Generator] = None) -> torch.Tensor:
    if not 0 <= rate < 1:
        raise InvalidParameter(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate
    return x * keep / (1.0 - rate)


def compute_gradients(loss_fn: Callable[[], torch.Tensor],
                      params: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Evaluate ``loss_fn`` and return d loss / d param for every named tensor."""
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss.item()}")
    names = list(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: (torch.zeros_like(params[n]) if g is None else g.detach().clone())
            for n, g in zip(names, grads)}


def finite_difference_check(loss_fn: Callable[[], torch.Tensor],
                            params: Mapping[str, torch.Tensor],
                            eps: float = 1e-6,
                            grads: Optional[Mapping[str, torch.Tensor]] = None,
                            per_group: bool = False,
                            floor: float = 1e-6):
    """Worst relative error between stored gradients and central differences.

    The denominator is ``max(|analytic|, |numeric|, floor)``; the floor keeps
    exactly-zero gradients (e.g. softmax-invariant biases) from turning
    difference roundoff into a large relative error. With ``per_group=True`` a
    dict of worst errors keyed by parameter name is returned instead of the
    overall maximum.
    """
    if not eps > 0:
        raise InvalidParameter(f"eps must be positive, got {eps}")
    if grads is None:
        grads = compute_gradients(loss_fn, params)
    worst: dict[str, float] = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            g = grads[name].reshape(-1)
            err = 0.0
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + eps
                up = loss_fn().item()
                flat[k] = orig - eps
                down = loss_fn().item()
                flat[k] = orig
                numeric = (up - down) / (2 * eps)
                analytic = g[k].item()
                denom = max(abs(analytic), abs(numeric), floor)
                err = max(err, abs(analytic - numeric) / denom)
            worst[name] = err
    if per_group:
        return worst
    return max(worst.values(), default=0.0)


@dataclass
class Adam:
    """Bias-corrected Adam over an ordered list of tensors."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor]) -> None:
        if len(params) != len(grads):
            raise ShapeError("parameter and gradient lists differ in length")
        for p, g in zip(params, grads):
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
            if not torch.all(torch.isfinite(g)):
                raise NumericalError("non-finite gradient")
        if not self.m:
            self.m = [torch.zeros_like(p) for p in params]
            self.v = [torch.zeros_like(p) for p in params]
        elif len(self.m) != len(params):
            raise ShapeError("optimizer state does not match parameter list")
        self.step_count += 1
        c1 = 1 - self.beta1 ** self.step_count
        c2 = 1 - self.beta2 ** self.step_count
        with torch.no_grad():
            for p, g, m, v in zip(params, grads, self.m, self.v):
                m.mul_(self.beta1).add_(g, alpha=1 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1 - self.beta2)
                p.sub_(self.lr * (m / c1) / (torch.sqrt(v / c2) + self.eps))


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` stale epochs.

    The counter must *exceed* ``patience`` before a reduction; any strict
    decrease of the monitored loss counts as an improvement.
    """

    lr: float
    factor: float = 0.6
    patience: int = 10
    min_lr: float = 0.0
    best: float = math.inf
    num_bad: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise InvalidParameter("factor must lie in (0, 1)")
        if self.patience < 1:
            raise InvalidParameter("patience must be at least 1")
        self.lr = max(self.lr, self.min_lr)

    def step(self, loss: float) -> float:
        if loss < self.best:
            self.best = loss
            self.num_bad = 0
        else:
            self.num_bad += 1
        if self.num_bad > self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.num_bad = 0
        return self.lr


def save_checkpoint(path, tensors: Mapping[str, torch.Tensor]) -> None:
    """Write named float64 arrays in the versioned little-endian format."""
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<II", CHECKPOINT_VERSION, len(tensors))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        arr = t.detach().to(DTYPE).contiguous()
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.dim()) + struct.pack(f"<{arr.dim()}I", *arr.shape)
        out += arr.numpy().astype("<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> dict[str, torch.Tensor]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise InvalidDataset(f"{path}: not a parameter checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise InvalidDataset(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    tensors: dict[str, torch.Tensor] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = math.prod(shape)
        values = np.frombuffer(data, dtype="<f8", count=size, offset=pos)
        pos += 8 * size
        tensors[name] = torch.from_numpy(values.astype(np.float64)).reshape(shape)
    return tensors


def named_params(module: nn.Module, names: Optional[Iterable[str]] = None) -> dict[str, torch.Tensor]:
    params = dict(module.named_parameters())
    if names is None:
        return params
    return {n: params[n] for n in names}
