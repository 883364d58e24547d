"""Mobility (space-shift) analysis and embedding projections."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .downstream import embed
from .errors import InvalidDataset
from .geom import ComplexSnapshot, Trajectory
from .metrics import correlations, davies_bouldin, least_squares_fit, pca_project, space_shift
from .model import MDModel
from .pretrain import predict_coordinates


def predicted_shifts(model: MDModel, snapshots: Sequence[ComplexSnapshot], interval: int,
                     batch_size: int = 32) -> np.ndarray:
    """Space shift of the encoder's coordinate output for each snapshot."""
    out = []
    with torch.no_grad():
        for s in range(0, len(snapshots), batch_size):
            chunk = list(snapshots[s:s + batch_size])
            enc, graph = predict_coordinates(model, chunk, [interval] * len(chunk))
            x = enc.x.numpy()
            offset = 0
            for snap in chunk:
                out.append(space_shift(snap.positions, x[offset:offset + snap.n_atoms],
                                       snap.n_ligand, snap.n_receptor))
                offset += snap.n_atoms
    return np.array(out)


def trajectory_shift(model: MDModel, traj: Trajectory, interval: int,
                     frames: Optional[Sequence[int]] = None) -> float:
    """Mean space shift over ``frames`` (all timesteps by default)."""
    frames = range(1, traj.n_frames + 1) if frames is None else frames
    return float(predicted_shifts(model, [traj.snapshot(t) for t in frames], interval).mean())


@dataclass
class ShiftAnalysis:
    ids: list[str]
    shifts: np.ndarray
    labels: np.ndarray
    slope: float
    intercept: float
    r2: float
    pearson: float
    spearman: float


def space_shift_analysis(model: MDModel, trajectories: Sequence[Trajectory], interval: Optional[int] = None,
                         frames: Optional[Sequence[int]] = None,
                         ids: Optional[Sequence[str]] = None) -> ShiftAnalysis:
    """Regress labels on each complex's mean predicted space shift.

    ``interval`` defaults to the longest prompt, where relaxation toward the
    bound state is most visible.
    """
    if len(trajectories) < 2:
        raise InvalidDataset("space-shift analysis needs at least two complexes")
    if any(t.label is None for t in trajectories):
        raise InvalidDataset("every complex needs a label")
    interval = max(model.prompts.intervals) if interval is None else interval
    shifts = np.array([trajectory_shift(model, t, interval, frames) for t in trajectories])
    labels = np.array([float(t.label) for t in trajectories])
    slope, intercept, r2 = least_squares_fit(shifts, labels)
    r_p, r_s = correlations(shifts, labels)
    ids = [str(i) for i in range(len(trajectories))] if ids is None else list(ids)
    return ShiftAnalysis(ids, shifts, labels, slope, intercept, r2, r_p, r_s)


def embedding_projection(model: MDModel, snapshots: Sequence[ComplexSnapshot], dims: int = 2,
                         batch_size: int = 64) -> np.ndarray:
    """PCA of pooled fine-tuning-prompt embeddings."""
    with torch.no_grad():
        pooled = np.concatenate([embed(model, list(snapshots[s:s + batch_size])).numpy()
                                 for s in range(0, len(snapshots), batch_size)])
    return pca_project(pooled, dims)


def cluster_separation(points: np.ndarray, labels: Sequence) -> float:
    return davies_bouldin(points, np.asarray(labels))
