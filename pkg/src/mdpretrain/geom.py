"""Ligand/receptor complexes, trajectories and graph construction.

Atoms are stored ligand-first: indices ``0..N-1`` are ligand atoms and
``N..N+M-1`` are receptor atoms. Intra edges use these global indices;
cross edges are ``(ligand index, receptor-local index)`` pairs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyPartition, InvalidGeometry, InvalidParameter, NoPocket

LIGAND = 0
RECEPTOR = 1

DEFAULT_CUTOFF = 4.0
DEFAULT_NODE_CAP = 10_000


@dataclass(frozen=True)
class Atom:
    element: str
    partition: int
    feature: np.ndarray
    position: np.ndarray


@dataclass(frozen=True)
class EdgeSet:
    intra: np.ndarray  # (E, 2) global indices, i < j
    cross: np.ndarray  # (C, 2) ligand index, receptor-local index

    @classmethod
    def empty(cls) -> "EdgeSet":
        return cls(np.zeros((0, 2), dtype=np.int64), np.zeros((0, 2), dtype=np.int64))


def _check_positions(positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(positions)):
        raise InvalidGeometry("non-finite coordinate")
    return positions


def _check_cutoff(cutoff: float) -> None:
    if not cutoff > 0:
        raise InvalidParameter(f"cutoff must be positive, got {cutoff}")


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def build_intra_edges(positions, partition, cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    """Same-partition pairs ``(i, j)``, ``i < j``, with distance <= cutoff."""
    _check_cutoff(cutoff)
    positions = _check_positions(positions)
    partition = np.asarray(partition)
    if len(partition) != len(positions):
        raise InvalidGeometry("partition length does not match positions")
    dist = pairwise_distances(positions, positions)
    same = partition[:, None] == partition[None, :]
    mask = np.triu(same & (dist <= cutoff), k=1)
    i, j = np.nonzero(mask)
    return np.stack([i, j], axis=1).astype(np.int64)


def build_cross_edges(ligand_positions, receptor_positions, cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    _check_cutoff(cutoff)
    lig = _check_positions(ligand_positions)
    rec = _check_positions(receptor_positions)
    if len(lig) == 0 or len(rec) == 0:
        raise EmptyPartition("cross edges need both a ligand and a receptor atom")
    i, j = np.nonzero(pairwise_distances(lig, rec) <= cutoff)
    return np.stack([i, j], axis=1).astype(np.int64)


def build_edges(positions, n_ligand: int, cutoff: float = DEFAULT_CUTOFF) -> EdgeSet:
    positions = _check_positions(positions)
    partition = np.where(np.arange(len(positions)) < n_ligand, LIGAND, RECEPTOR)
    return EdgeSet(
        build_intra_edges(positions, partition, cutoff),
        build_cross_edges(positions[:n_ligand], positions[n_ligand:], cutoff),
    )


@dataclass(frozen=True)
class ComplexSnapshot:
    """One timeframe of a ligand/receptor pair."""

    elements: tuple[str, ...]
    n_ligand: int
    features: np.ndarray  # (N+M, feature width)
    positions: np.ndarray  # (N+M, 3)
    edges: EdgeSet
    timestep: int = 0

    def __post_init__(self):
        n = len(self.elements)
        if self.n_ligand < 1 or n - self.n_ligand < 1:
            raise EmptyPartition("a complex needs at least one ligand and one receptor atom")
        if self.positions.shape != (n, 3) or self.features.shape[0] != n:
            raise InvalidGeometry("positions/features do not match atom count")
        if not np.all(np.isfinite(self.positions)):
            raise InvalidGeometry("non-finite coordinate")
        if self.timestep < 0:
            raise InvalidParameter("timestep must be non-negative")

    @classmethod
    def build(cls, elements: Sequence[str], n_ligand: int, features, positions,
              timestep: int = 0, cutoff: float = DEFAULT_CUTOFF,
              node_cap: int = DEFAULT_NODE_CAP) -> "ComplexSnapshot":
        positions = _check_positions(positions)
        if len(positions) > node_cap:
            raise InvalidGeometry(f"{len(positions)} atoms exceeds node cap {node_cap}")
        features = np.asarray(features, dtype=np.float64)
        return cls(tuple(elements), int(n_ligand), features, positions,
                   build_edges(positions, n_ligand, cutoff), int(timestep))

    @property
    def n_receptor(self) -> int:
        return len(self.elements) - self.n_ligand

    @property
    def n_atoms(self) -> int:
        return len(self.elements)

    @property
    def partition(self) -> np.ndarray:
        return np.where(np.arange(self.n_atoms) < self.n_ligand, LIGAND, RECEPTOR)

    @property
    def atoms(self) -> list[Atom]:
        part = self.partition
        return [Atom(e, int(p), f, x) for e, p, f, x in
                zip(self.elements, part, self.features, self.positions)]

    def with_positions(self, positions, cutoff: Optional[float] = None) -> "ComplexSnapshot":
        """Copy with new coordinates; edges are rebuilt only if ``cutoff`` is given."""
        positions = _check_positions(positions)
        edges = self.edges if cutoff is None else build_edges(positions, self.n_ligand, cutoff)
        return replace(self, positions=positions, edges=edges)

    def with_features(self, features) -> "ComplexSnapshot":
        return replace(self, features=np.asarray(features, dtype=np.float64))


@dataclass
class Trajectory:
    """Time-ordered frames of one complex with a shared atom table.

    ``frames[t - 1]`` holds the coordinates of timestep ``t``.
    """

    elements: tuple[str, ...]
    n_ligand: int
    features: np.ndarray
    frames: np.ndarray  # (T, N+M, 3)
    label: Optional[float] = None
    cutoff: float = DEFAULT_CUTOFF
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        n = len(self.elements)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (n, 3) or len(self.frames) < 1:
            raise InvalidGeometry(f"frames must have shape (T>=1, {n}, 3), got {self.frames.shape}")
        if self.n_ligand < 1 or n - self.n_ligand < 1:
            raise EmptyPartition("a complex needs at least one ligand and one receptor atom")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidGeometry("non-finite coordinate in trajectory")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def snapshot(self, t: int) -> ComplexSnapshot:
        """Snapshot at 1-based timestep ``t``."""
        if not 1 <= t <= self.n_frames:
            raise IndexError(f"timestep {t} outside 1..{self.n_frames}")
        if t not in self._cache:
            self._cache[t] = ComplexSnapshot.build(self.elements, self.n_ligand, self.features,
                                                   self.frames[t - 1], timestep=t, cutoff=self.cutoff)
        return self._cache[t]

    @property
    def snapshots(self) -> list[ComplexSnapshot]:
        return [self.snapshot(t) for t in range(1, self.n_frames + 1)]


def extract_pocket(snapshot: ComplexSnapshot, radius: float,
                   cutoff: float = DEFAULT_CUTOFF) -> ComplexSnapshot:
    """Keep the ligand plus receptor atoms within ``radius`` of any ligand atom."""
    if not radius > 0:
        raise InvalidParameter(f"radius must be positive, got {radius}")
    n = snapshot.n_ligand
    lig, rec = snapshot.positions[:n], snapshot.positions[n:]
    keep = pairwise_distances(rec, lig).min(axis=1) <= radius
    if not keep.any():
        raise NoPocket(f"no receptor atom within {radius} Å of the ligand")
    idx = np.concatenate([np.arange(n), n + np.nonzero(keep)[0]])
    return ComplexSnapshot.build(
        [snapshot.elements[i] for i in idx], n, snapshot.features[idx],
        snapshot.positions[idx], timestep=snapshot.timestep, cutoff=cutoff,
    )


def perturb_coordinates(snapshot: ComplexSnapshot, sigma: float,
                        rng: np.random.Generator) -> ComplexSnapshot:
    """Add i.i.d. N(0, sigma^2) noise to every coordinate; features and edges are kept."""
    if sigma < 0:
        raise InvalidParameter(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return snapshot.with_positions(snapshot.positions.copy())
    noise = rng.normal(0.0, sigma, size=snapshot.positions.shape)
    return snapshot.with_positions(snapshot.positions + noise)


def random_rigid_motion(rng: np.random.Generator, reflect: Optional[bool] = None):
    """Random orthogonal matrix (optionally improper) and translation."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if reflect is None:
        reflect = bool(rng.integers(2))
    if (np.linalg.det(q) < 0) != reflect:
        q[:, 0] = -q[:, 0]
    return q, rng.normal(scale=5.0, size=3)
