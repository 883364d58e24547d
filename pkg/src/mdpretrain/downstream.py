"""Pooling, prediction heads and the probe / fine-tune transfer protocols."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .diffcore import Adam, PlateauScheduler, compute_gradients
from .egmn import GraphBatch, pool
from .errors import EmptyInput, InvalidDataset, InvalidParameter, InvalidSample, ShapeError, DegenerateInput
from .geom import ComplexSnapshot, Trajectory, extract_pocket
from .metrics import ranking_metrics, regression_report
from .model import FINETUNE, LinearHead, MDModel
from .synthmd import ToyComplexSpec, generate_trajectory, synthetic_affinity_label

AFFINITY = "affinity"
EFFICACY = "efficacy"
PROBE = "probe"
FINETUNE_MODE = "finetune"

DOWNSTREAM_ATOM_CAP = 600
POCKET_RADIUS = {AFFINITY: 6.0, EFFICACY: 5.5}


def pool_embedding(h, mode: str = "mean"):
    """Mean (or sum) of per-atom features; accepts numpy arrays or tensors."""
    is_np = not isinstance(h, torch.Tensor)
    t = torch.as_tensor(np.asarray(h, dtype=np.float64)) if is_np else h
    if t.ndim != 2 or t.shape[0] == 0:
        raise EmptyInput("pooling needs at least one atom")
    out = pool(t, torch.zeros(t.shape[0], dtype=torch.int64), 1, mode)[0]
    return out.numpy() if is_np else out


def pk_from_binding_constant(k_molar: float) -> float:
    """pK = -log10(K) for a dissociation or inhibition constant in molar."""
    if not k_molar > 0:
        raise InvalidParameter(f"binding constant must be positive, got {k_molar}")
    return -math.log10(k_molar)


def _head_input(pooled: torch.Tensor, head: LinearHead) -> torch.Tensor:
    if pooled.shape[-1] != head.weight.shape[0]:
        raise ShapeError(f"embedding width {pooled.shape[-1]} != head fan-in {head.weight.shape[0]}")
    return pooled


def predict_affinity(pooled: torch.Tensor, head: LinearHead) -> torch.Tensor:
    return head(_head_input(pooled, head))


def predict_efficacy(pooled: torch.Tensor, head: LinearHead) -> torch.Tensor:
    return torch.sigmoid(head(_head_input(pooled, head)))


@dataclass
class LabeledComplex:
    snapshot: ComplexSnapshot
    label: float
    name: str = ""
    atom_cap: int = DOWNSTREAM_ATOM_CAP

    def __post_init__(self):
        if self.snapshot.n_atoms > self.atom_cap:
            raise InvalidSample(f"{self.snapshot.n_atoms} atoms exceeds the downstream cap {self.atom_cap}")
        if not math.isfinite(self.label):
            raise InvalidSample("label must be finite")


def check_labels(items: Sequence[LabeledComplex], task: str) -> None:
    if task == EFFICACY and any(c.label not in (0.0, 1.0) for c in items):
        raise InvalidSample("efficacy labels must be 0 or 1")


# ---------------------------------------------------------------- synthetic sets

def efficacy_label(pk: float, threshold: float) -> float:
    return 1.0 if pk >= threshold else 0.0


def labeled_from_trajectory(traj: Trajectory, task: str, frame: Optional[int] = None,
                            name: str = "", threshold: Optional[float] = None,
                            radius: Optional[float] = None,
                            atom_cap: int = DOWNSTREAM_ATOM_CAP) -> LabeledComplex:
    """Pocket-extracted snapshot of one frame (the last by default) with its label.

    Efficacy labels binarise the affinity label at ``threshold`` (by default
    the label of a unit-stiffness tether).
    """
    if traj.label is None:
        raise InvalidDataset("trajectory carries no label")
    radius = POCKET_RADIUS[task] if radius is None else radius
    snap = extract_pocket(traj.snapshot(traj.n_frames if frame is None else frame), radius, traj.cutoff)
    label = float(traj.label)
    if task == EFFICACY:
        label = efficacy_label(label, synthetic_affinity_label(1.0) if threshold is None else threshold)
    return LabeledComplex(snap, label, name, atom_cap)


def synthetic_stiffness(n: int, seed: int, k_range=(0.25, 10.0)) -> np.ndarray:
    """Log-uniform tether stiffnesses."""
    lo, hi = k_range
    rng = np.random.default_rng([seed, 21])
    return np.exp(rng.uniform(math.log(lo), math.log(hi), n))


def synthetic_trajectories(n: int, seed: int = 0, k_range=(0.25, 10.0), **spec_kw) -> list[Trajectory]:
    ks = synthetic_stiffness(n, seed, k_range)
    return [generate_trajectory(ToyComplexSpec(seed=seed * 10_000 + i, k=float(k), **spec_kw))
            for i, k in enumerate(ks)]


def split_dataset(items: Sequence, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle into train/validation/test; every part non-empty when possible."""
    if not items:
        raise InvalidDataset("empty dataset")
    if len(fractions) != 3 or abs(sum(fractions) - 1) > 1e-9 or min(fractions) < 0:
        raise InvalidParameter("fractions must be three non-negative numbers summing to 1")
    order = np.random.default_rng([seed, 31]).permutation(len(items))
    n = len(items)
    n_val = max(1, round(n * fractions[1])) if n >= 3 else 0
    n_test = max(1, round(n * fractions[2])) if n >= 3 else 0
    n_train = n - n_val - n_test
    parts = np.split(order, [n_train, n_train + n_val])
    return tuple([items[i] for i in part] for part in parts)


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class DownstreamConfig:
    task: str = AFFINITY
    mode: str = FINETUNE_MODE
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-4
    min_lr: float = 5e-6
    factor: float = 0.6
    patience: int = 10
    seed: int = 1234

    def __post_init__(self):
        if self.task not in (AFFINITY, EFFICACY):
            raise InvalidParameter(f"unknown task {self.task!r}")
        if self.mode not in (PROBE, FINETUNE_MODE):
            raise InvalidParameter(f"unknown mode {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidParameter("epochs and batch_size must be positive")
        if not self.lr > 0:
            raise InvalidParameter("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def head_for(model: MDModel, task: str) -> LinearHead:
    return model.affinity_head if task == AFFINITY else model.efficacy_head


def embed(model: MDModel, snapshots: Sequence[ComplexSnapshot], train: bool = False,
          generator=None) -> torch.Tensor:
    """Pooled encoder features with the fine-tuning prompt attached."""
    graph = GraphBatch.from_snapshots(snapshots)
    h = model.prompts.attach(graph.h, FINETUNE)
    out = model.encoder(h, graph, train=train, generator=generator)
    return pool(out.h, graph.graph_index, graph.n_graphs, model.config.pooling)


def downstream_params(model: MDModel, config: DownstreamConfig) -> dict[str, torch.Tensor]:
    head = head_for(model, config.task)
    params = {"head.weight": head.weight, "head.bias": head.bias,
              "prompts.finetune": model.prompts.finetune}
    if config.mode == FINETUNE_MODE:
        params.update({f"encoder.{k}": v for k, v in model.encoder.named_parameters()})
    return params


def downstream_loss(model: MDModel, items: Sequence[LabeledComplex], task: str,
                    train: bool = False, generator=None) -> torch.Tensor:
    """Root-mean-squared error for affinity, binary cross-entropy for efficacy."""
    logits = head_for(model, task)(embed(model, [c.snapshot for c in items], train, generator))
    labels = torch.tensor([c.label for c in items], dtype=logits.dtype)
    if task == AFFINITY:
        return torch.sqrt(torch.mean((logits - labels) ** 2))
    return F.binary_cross_entropy_with_logits(logits, labels)


def predict(model: MDModel, items: Sequence[LabeledComplex], task: str,
            batch_size: int = 64) -> np.ndarray:
    """pK estimates (affinity) or probabilities (efficacy)."""
    out = []
    head = head_for(model, task)
    with torch.no_grad():
        for s in range(0, len(items), batch_size):
            pooled = embed(model, [c.snapshot for c in items[s:s + batch_size]])
            fn = predict_affinity if task == AFFINITY else predict_efficacy
            out.append(fn(pooled, head).numpy())
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model: MDModel, items: Sequence[LabeledComplex], task: str) -> dict:
    """RMSE / Pearson / Spearman for affinity, AUROC / AUPRC for efficacy.

    Metrics that are undefined on the given set (constant predictions, a
    single class) are reported as NaN.
    """
    if not items:
        raise InvalidDataset("cannot evaluate an empty split")
    pred = predict(model, items, task)
    truth = np.array([c.label for c in items])
    nan = float("nan")
    row = dict(rmse=nan, pearson=nan, spearman=nan, auroc=nan, auprc=nan)
    if task == AFFINITY:
        row["rmse"] = float(np.sqrt(np.mean((pred - truth) ** 2)))
        try:
            rep = regression_report(pred, truth)
            row.update(pearson=rep.pearson, spearman=rep.spearman)
        except DegenerateInput:
            pass
    else:
        try:
            row["auroc"], row["auprc"] = ranking_metrics(pred, truth)
        except DegenerateInput:
            pass
    return row


def init_head_bias(model: MDModel, items: Sequence[LabeledComplex], task: str) -> None:
    """Start the head at the training-label mean (or the positive-rate logit)."""
    labels = np.array([c.label for c in items])
    if task == AFFINITY:
        value = labels.mean()
    else:
        rate = np.clip(labels.mean(), 1e-3, 1 - 1e-3)
        value = math.log(rate / (1 - rate))
    with torch.no_grad():
        head_for(model, task).bias.fill_(float(value))


@dataclass
class DownstreamResult:
    model: MDModel
    history: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)  # split name -> metric row
    n_trainable: int = 0


def train_downstream(model: MDModel, train: Sequence[LabeledComplex], val: Sequence[LabeledComplex],
                     test: Sequence[LabeledComplex], config: DownstreamConfig,
                     log: Optional[Callable[[dict], None]] = None) -> DownstreamResult:
    """Train the task head in probe or fine-tune mode; the model is updated in place.

    Probe mode optimises only the head and the fine-tuning prompt while the
    encoder runs in evaluation mode; fine-tune mode also updates the encoder.
    The parameters with the lowest validation loss are restored at the end.
    """
    for name, split in (("train", train), ("validation", val), ("test", test)):
        if not split:
            raise InvalidDataset(f"empty {name} split")
        check_labels(split, config.task)
    params = downstream_params(model, config)
    n_trainable = int(sum(p.numel() for p in params.values()))
    finetune = config.mode == FINETUNE_MODE
    init_head_bias(model, train, config.task)

    rng = np.random.default_rng([config.seed, 41])
    gen = torch.Generator().manual_seed(config.seed)
    opt = Adam(lr=config.lr)
    sched = PlateauScheduler(lr=config.lr, factor=config.factor, patience=config.patience,
                             min_lr=config.min_lr)
    best, best_state = math.inf, model.tensors()
    history = []
    train = list(train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        losses, sizes = [], []
        for s in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[s:s + config.batch_size]]
            holder = {}

            def loss_fn():
                loss = downstream_loss(model, batch, config.task, train=finetune, generator=gen)
                holder["loss"] = loss.item()
                return loss

            grads = compute_gradients(loss_fn, params)
            opt.step(list(params.values()), [grads[k] for k in params])
            losses.append(holder["loss"])
            sizes.append(len(batch))
        with torch.no_grad():
            val_loss = downstream_loss(model, list(val), config.task).item()
        if val_loss < best:
            best, best_state = val_loss, model.tensors()
        row = dict(epoch=epoch, train_loss=float(np.average(losses, weights=sizes)),
                   val_loss=val_loss, lr=float(opt.lr))
        history.append(row)
        if log:
            log(row)
        opt.lr = sched.step(val_loss)
    model.load_tensors(best_state)
    metrics = {name: evaluate(model, list(split), config.task)
               for name, split in (("train", train), ("val", val), ("test", test))}
    return DownstreamResult(model, history, metrics, n_trainable)
