"""Self-supervised objectives: prompt-conditioned denoising generation and snapshot ordering."""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .diffcore import Adam, PlateauScheduler, compute_gradients
from .egmn import GraphBatch, pool
from .errors import (FrameOutOfRange, InvalidDataset, InvalidParameter, InvalidSample,
                     NumericalError, ShapeError)
from .geom import ComplexSnapshot, Trajectory, perturb_coordinates
from .model import MDModel


@dataclass(frozen=True)
class PretrainConfig:
    sigma: float = 1e-3
    context: int = 1
    generative: bool = True
    noise: bool = True
    prompt: bool = True
    ordering: bool = True
    order_weight: float = 1.0
    order_n: int = 4
    order_samples: int = 2  # ordering samples per optimisation step
    epochs: int = 200
    batch_size: int = 32
    steps_per_epoch: Optional[int] = None
    lr: float = 1e-4
    min_lr: float = 5e-6
    factor: float = 0.6
    patience: int = 10
    train_ratio: float = 0.9
    seed: int = 1234
    max_steps: Optional[int] = None  # stop after this many optimiser steps
    lr_decay: Optional[float] = None  # exponential decay to lr * lr_decay over max_steps
    restore_best: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidParameter("sigma must be non-negative")
        if self.context != 1:
            raise InvalidParameter("only a context window of 1 frame is supported")
        if self.order_weight < 0:
            raise InvalidParameter("ordering weight must be non-negative")
        if self.order_n < 2:
            raise InvalidParameter("ordering samples need n >= 2")
        if not (self.generative or self.ordering):
            raise InvalidParameter("at least one pre-training task must be enabled")
        if self.lr_decay is not None and (self.max_steps is None or not 0 < self.lr_decay <= 1):
            raise InvalidParameter("lr_decay needs max_steps and must lie in (0, 1]")

    @property
    def effective_sigma(self) -> float:
        return self.sigma if self.noise else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def prompt_intervals(config: PretrainConfig, intervals: Sequence[int]) -> tuple[int, ...]:
    """Intervals actually trained; without prompts only next-frame prediction remains."""
    return tuple(intervals) if config.prompt else (1,)


# ---------------------------------------------------------------- prompts

def attach_prompt(snapshot: ComplexSnapshot, interval, model: MDModel) -> ComplexSnapshot:
    """Snapshot whose features are widened by the interval's prompt embedding."""
    with torch.no_grad():
        h = model.prompts.attach(torch.from_numpy(snapshot.features), interval)
    return snapshot.with_features(h.numpy().copy())


# ---------------------------------------------------------------- generation

@dataclass
class GenerativeSample:
    snapshot: ComplexSnapshot
    target: np.ndarray
    interval: int


def generative_samples(traj: Trajectory, t: int, intervals: Sequence[int]) -> list[GenerativeSample]:
    out = []
    for dt in intervals:
        if t + dt > traj.n_frames:
            raise FrameOutOfRange(f"t + dt = {t + dt} exceeds T = {traj.n_frames}")
        out.append(GenerativeSample(traj.snapshot(t), traj.frames[t + dt - 1], dt))
    return out


def predict_coordinates(model: MDModel, snapshots: Sequence[ComplexSnapshot], intervals,
                        positions=None, train: bool = False, generator=None):
    graph = GraphBatch.from_snapshots(snapshots, positions)
    feats = []
    offset = 0
    for snap, dt in zip(snapshots, intervals):
        feats.append(model.prompts.attach(graph.h[offset:offset + snap.n_atoms], dt))
        offset += snap.n_atoms
    out = model.encoder(torch.cat(feats), graph, train=train, generator=generator)
    return out, graph


def generative_loss_batch(model: MDModel, samples: Sequence[GenerativeSample], sigma: float,
                          rng: Optional[np.random.Generator] = None, train: bool = False,
                          generator=None) -> torch.Tensor:
    """Mean over samples of the per-atom mean squared distance to the target frame."""
    if sigma > 0 and rng is None:
        raise InvalidParameter("a random stream is required when sigma > 0")
    snaps = [s.snapshot if sigma == 0 else perturb_coordinates(s.snapshot, sigma, rng)
             for s in samples]
    out, graph = predict_coordinates(model, snaps, [s.interval for s in samples],
                                     train=train, generator=generator)
    target = torch.from_numpy(np.concatenate([s.target for s in samples]))
    sq = ((out.x - target) ** 2).sum(-1)
    counts = torch.bincount(graph.graph_index, minlength=graph.n_graphs).to(sq.dtype)
    per_graph = torch.zeros(graph.n_graphs, dtype=sq.dtype).index_add(0, graph.graph_index, sq) / counts
    return per_graph.mean()


def generative_loss(model: MDModel, traj: Trajectory, t: int, interval: int, sigma: float,
                    rng: Optional[np.random.Generator] = None, train: bool = False) -> torch.Tensor:
    if interval not in model.prompts.intervals:
        model.prompts.embedding(interval)  # raises UnknownInterval
    sample = generative_samples(traj, t, [interval])[0]
    return generative_loss_batch(model, [sample], sigma, rng, train=train)


# ---------------------------------------------------------------- ordering

@dataclass
class OrderingSample:
    snapshots: list[ComplexSnapshot]  # in presentation order
    timesteps: tuple[int, ...]  # true timestep of each presented snapshot

    def __post_init__(self):
        if len(self.snapshots) < 2:
            raise InvalidSample("an ordering sample needs at least two snapshots")
        if len(set(self.timesteps)) != len(self.timesteps):
            raise InvalidSample("timesteps must be distinct")


def draw_ordering_sample(traj: Trajectory, frames: Sequence[int], n: int,
                         rng: np.random.Generator) -> OrderingSample:
    if len(frames) < n:
        raise InvalidSample(f"need {n} frames, only {len(frames)} available")
    picked = rng.choice(np.asarray(frames), size=n, replace=False)
    return OrderingSample([traj.snapshot(int(t)) for t in picked], tuple(int(t) for t in picked))


def pair_indices(n: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(n), 2))


def pooled_embeddings(model: MDModel, snapshots: Sequence[ComplexSnapshot], interval,
                      train: bool = False, generator=None) -> torch.Tensor:
    out, graph = predict_coordinates(model, snapshots, [interval] * len(snapshots),
                                     train=train, generator=generator)
    return pool(out.h, graph.graph_index, graph.n_graphs, model.config.pooling)


def pairwise_order_logits(pooled: torch.Tensor, classifier) -> torch.Tensor:
    """One logit per presentation pair i < j; positive means i precedes j."""
    n = pooled.shape[0]
    if n < 2:
        raise InvalidSample("need at least two embeddings")
    i, j = zip(*pair_indices(n))
    return classifier(pooled[list(i)], pooled[list(j)])


def order_labels(timesteps: Sequence[int]) -> torch.Tensor:
    return torch.tensor([1.0 if timesteps[i] < timesteps[j] else 0.0
                         for i, j in pair_indices(len(timesteps))], dtype=torch.float64)


def ordering_loss(logits: torch.Tensor, timesteps: Sequence[int]) -> torch.Tensor:
    n = len(timesteps)
    if logits.numel() != n * (n - 1) // 2:
        raise ShapeError(f"{logits.numel()} logits for {n} snapshots")
    return F.binary_cross_entropy_with_logits(logits, order_labels(timesteps))


def topological_order(decisions, n: Optional[int] = None) -> tuple[list[int], bool]:
    """Order items from pairwise precedence probabilities with Kahn's algorithm.

    ``decisions`` maps each pair ``(i, j)``, ``i < j``, to p(i before j), or
    is a sequence of probabilities in :func:`pair_indices` order. Ties among
    ready nodes go to the lowest index. When a cycle stalls the sort, the
    least confident edge lying on a cycle is dropped and the returned flag is
    set.
    """
    if not isinstance(decisions, dict):
        probs = [float(p) for p in decisions]
        if n is None:
            n = int(round((1 + math.sqrt(1 + 8 * len(probs))) / 2))
        pairs = pair_indices(n)
        if len(probs) != len(pairs):
            raise InvalidSample(f"{len(probs)} decisions do not cover {len(pairs)} pairs")
        decisions = dict(zip(pairs, probs))
    if n is None:
        n = 1 + max((max(p) for p in decisions), default=0)
    for pair in pair_indices(n):
        if pair not in decisions:
            raise InvalidSample(f"missing decision for pair {pair}")

    succ: dict[int, dict[int, float]] = {i: {} for i in range(n)}
    for (i, j), p in decisions.items():
        if p > 0.5:
            succ[i][j] = p
        else:
            succ[j][i] = 1.0 - p
    indeg = [0] * n
    for i in range(n):
        for j in succ[i]:
            indeg[j] += 1

    remaining = set(range(n))
    order: list[int] = []
    cycled = False
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    while remaining:
        if not ready:
            u, v = _weakest_cycle_edge(succ, remaining)
            del succ[u][v]
            indeg[v] -= 1
            cycled = True
            if indeg[v] == 0:
                heapq.heappush(ready, v)
            continue
        node = heapq.heappop(ready)
        order.append(node)
        remaining.discard(node)
        for j in sorted(succ[node]):
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, j)
    return order, cycled


def _reaches(succ, start: int, goal: int, allowed: set[int]) -> bool:
    stack, seen = [start], {start}
    while stack:
        u = stack.pop()
        if u == goal:
            return True
        for v in succ[u]:
            if v in allowed and v not in seen:
                seen.add(v)
                stack.append(v)
    return False


def _weakest_cycle_edge(succ, remaining: set[int]) -> tuple[int, int]:
    best = None
    for u in sorted(remaining):
        for v, conf in sorted(succ[u].items()):
            if v in remaining and _reaches(succ, v, u, remaining):
                if best is None or conf < best[0]:
                    best = (conf, u, v)
    if best is None:
        raise RuntimeError("Kahn stalled without a cycle")
    return best[1], best[2]


def best_order_bruteforce(decisions: dict, n: int) -> list[int]:
    """Permutation maximising the product of agreeing pair probabilities."""
    best, best_score = None, -math.inf
    for perm in itertools.permutations(range(n)):
        pos = {v: k for k, v in enumerate(perm)}
        score = 0.0
        for (i, j), p in decisions.items():
            q = p if pos[i] < pos[j] else 1.0 - p
            score += math.log(max(q, 1e-300))
        if score > best_score:
            best, best_score = list(perm), score
    return best


def predict_order(model: MDModel, snapshots: Sequence[ComplexSnapshot], interval) -> tuple[list[int], bool]:
    with torch.no_grad():
        logits = pairwise_order_logits(pooled_embeddings(model, snapshots, interval), model.orderer)
    return topological_order(torch.sigmoid(logits).tolist(), n=len(snapshots))


def pairwise_accuracy(model: MDModel, samples: Sequence[OrderingSample], interval) -> float:
    correct = total = 0
    with torch.no_grad():
        for s in samples:
            logits = pairwise_order_logits(pooled_embeddings(model, s.snapshots, interval), model.orderer)
            labels = order_labels(s.timesteps)
            correct += int(((logits > 0).double() == labels).sum())
            total += len(labels)
    return correct / total


# ---------------------------------------------------------------- training

def split_frames(n_frames: int, ratio: float = 0.9) -> tuple[list[int], list[int]]:
    """Contiguous split: the last ceil(T (1 - ratio)) timesteps are validation."""
    if n_frames < 2:
        raise InvalidDataset("need at least two frames to split")
    n_val = min(max(1, math.ceil(round(n_frames * (1 - ratio), 9))), n_frames - 1)
    cut = n_frames - n_val
    return list(range(1, cut + 1)), list(range(cut + 1, n_frames + 1))


@dataclass
class PretrainBatch:
    generative: list[GenerativeSample] = field(default_factory=list)
    ordering: list[OrderingSample] = field(default_factory=list)


def trainable_pretrain_params(model: MDModel, config: PretrainConfig) -> dict[str, torch.Tensor]:
    params = {f"encoder.{k}": v for k, v in model.encoder.named_parameters()}
    params["prompts.table"] = model.prompts.table
    if config.ordering:
        params.update({f"orderer.{k}": v for k, v in model.orderer.named_parameters()})
    return params


def order_interval(model: MDModel) -> int:
    return model.prompts.intervals[0]


def batch_losses(model: MDModel, batch: PretrainBatch, config: PretrainConfig,
                 rng: Optional[np.random.Generator], train: bool, generator=None):
    zero = torch.zeros((), dtype=torch.float64)
    gen = zero
    if config.generative and batch.generative:
        gen = generative_loss_batch(model, batch.generative, config.effective_sigma if train else 0.0,
                                    rng, train=train, generator=generator)
    order = zero
    if config.ordering and batch.ordering:
        terms = []
        for s in batch.ordering:
            pooled = pooled_embeddings(model, s.snapshots, order_interval(model), train, generator)
            terms.append(ordering_loss(pairwise_order_logits(pooled, model.orderer), s.timesteps))
        order = torch.stack(terms).mean()
    return gen, order, gen + config.order_weight * order


def pretrain_step(model: MDModel, batch: PretrainBatch, config: PretrainConfig, optimizer: Adam,
                  rng: np.random.Generator, generator: Optional[torch.Generator] = None) -> dict:
    """One joint optimisation step; returns the pre-step loss components."""
    if not batch.generative and not batch.ordering:
        raise InvalidSample("empty batch")
    params = trainable_pretrain_params(model, config)
    parts = {}

    def loss_fn():
        gen, order, total = batch_losses(model, batch, config, rng, True, generator)
        parts.update(gen=gen.item(), order=order.item(), total=total.item())
        return total

    grads = compute_gradients(loss_fn, params)  # raises NumericalError before any update
    optimizer.step(list(params.values()), [grads[k] for k in params])
    return parts


class PretrainData:
    """Training/validation sample pools over a set of trajectories."""

    def __init__(self, trajectories: Sequence[Trajectory], intervals: Sequence[int],
                 ratio: float = 0.9, order_n: int = 4):
        if not trajectories:
            raise InvalidDataset("no trajectories")
        self.trajectories = list(trajectories)
        self.intervals = tuple(intervals)
        self.order_n = order_n
        self.train_pairs, self.val_pairs = [], []
        self.train_frames, self.val_frames = [], []
        for k, traj in enumerate(self.trajectories):
            tr, va = split_frames(traj.n_frames, ratio)
            self.train_frames.append(tr)
            self.val_frames.append(va)
            for frames, pairs in ((tr, self.train_pairs), (va, self.val_pairs)):
                last = frames[-1]
                pairs += [(k, t, dt) for t in frames for dt in self.intervals if t + dt <= last]
        if not self.train_pairs:
            raise InvalidDataset("no training (frame, interval) pairs; trajectories too short")

    def sample(self, k: int, t: int, dt: int) -> GenerativeSample:
        traj = self.trajectories[k]
        return GenerativeSample(traj.snapshot(t), traj.frames[t + dt - 1], dt)

    def ordering(self, rng: np.random.Generator, val: bool = False) -> Optional[OrderingSample]:
        frames = self.val_frames if val else self.train_frames
        usable = [k for k, f in enumerate(frames) if len(f) >= self.order_n]
        if not usable:
            return None
        k = usable[int(rng.integers(len(usable)))]
        return draw_ordering_sample(self.trajectories[k], frames[k], self.order_n, rng)


def evaluate_pretrain(model: MDModel, data: PretrainData, config: PretrainConfig,
                      n_order: int = 16, batch_size: int = 64) -> tuple[float, float, float]:
    """Noise-free validation losses with a fixed ordering-sample stream."""
    rng = np.random.default_rng([config.seed, 99])
    gens, weights = [], []
    batch = PretrainBatch()
    with torch.no_grad():
        if config.generative and data.val_pairs:
            for s in range(0, len(data.val_pairs), batch_size):
                chunk = [data.sample(*p) for p in data.val_pairs[s:s + batch_size]]
                gens.append(generative_loss_batch(model, chunk, 0.0).item())
                weights.append(len(chunk))
        if config.ordering:
            batch.ordering = [o for o in (data.ordering(rng, val=True) for _ in range(n_order)) if o]
        _, order, _ = batch_losses(model, batch, config, None, False)
    gen = float(np.average(gens, weights=weights)) if gens else 0.0
    order = order.item()
    return gen, order, gen + config.order_weight * order


def pretrain(model: MDModel, trajectories: Sequence[Trajectory], config: PretrainConfig,
             log=None) -> list[dict]:
    """Train in place, by default restoring the best-validation parameters.

    The learning rate follows the plateau scheduler, or an exponential decay
    when ``config.lr_decay`` is set. Returns one row per epoch: epoch, steps,
    L_gen, L_ord, total, val_total, lr.
    """
    intervals = prompt_intervals(config, model.prompts.intervals)
    data = PretrainData(trajectories, intervals, config.train_ratio, config.order_n)
    rng = np.random.default_rng(config.seed)
    gen_torch = torch.Generator().manual_seed(config.seed)
    opt = Adam(lr=config.lr)
    sched = PlateauScheduler(lr=config.lr, factor=config.factor, patience=config.patience,
                             min_lr=config.min_lr)
    best, best_state = math.inf, model.tensors()
    history = []
    total_steps = 0
    for epoch in range(1, config.epochs + 1):
        if config.max_steps is not None and total_steps >= config.max_steps:
            break
        order = rng.permutation(len(data.train_pairs))
        n_steps = math.ceil(len(order) / config.batch_size)
        if config.steps_per_epoch is not None:
            n_steps = min(n_steps, config.steps_per_epoch)
        if config.max_steps is not None:
            n_steps = min(n_steps, config.max_steps - total_steps)
        sums = np.zeros(3)
        for step in range(n_steps):
            if config.lr_decay is not None:
                opt.lr = config.lr * config.lr_decay ** (total_steps / config.max_steps)
            idx = order[step * config.batch_size:(step + 1) * config.batch_size]
            batch = PretrainBatch(
                generative=[data.sample(*data.train_pairs[i]) for i in idx] if config.generative else [],
                ordering=[o for o in (data.ordering(rng) for _ in range(config.order_samples)) if o]
                if config.ordering else [],
            )
            parts = pretrain_step(model, batch, config, opt, rng, gen_torch)
            sums += [parts["gen"], parts["order"], parts["total"]]
            total_steps += 1
        sums /= n_steps
        val = evaluate_pretrain(model, data, config)
        if not math.isfinite(val[2]):
            raise NumericalError("non-finite validation loss")
        if val[2] < best:
            best, best_state = val[2], model.tensors()
        row = dict(epoch=epoch, steps=total_steps, L_gen=float(sums[0]), L_ord=float(sums[1]),
                   total=float(sums[2]), val_total=float(val[2]), lr=float(opt.lr))
        history.append(row)
        if log:
            log(row)
        if config.lr_decay is None:
            opt.lr = sched.step(val[2])
    if config.restore_best:
        model.load_tensors(best_state)
    return history
