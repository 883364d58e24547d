"""Seedable overdamped Langevin trajectories of toy ligand-pocket complexes.

The ligand is a small lattice cluster caged by a shell of receptor atoms.
The potential is a sum of harmonic springs: bonds inside each molecule,
ligand-pocket tethers of stiffness ``k`` from every ligand atom to its nearest
receptor atoms, and weak positional restraints keeping the receptor shell in
place. Rest lengths are the initial distances, optionally shortened for the
tethers by ``tether_pull`` so that stiffer complexes also sit tighter.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidParameter, NumericalError
from .geom import DEFAULT_CUTOFF, Trajectory, pairwise_distances

LIGAND_ELEMENTS = ("C", "N", "O")
RECEPTOR_ELEMENTS = ("C", "N", "O", "S")
VOCAB = ("C", "N", "O", "S", "H")


@dataclass(frozen=True)
class ToyComplexSpec:
    n_ligand: int = 8
    n_receptor: int = 24
    k: float = 1.0  # ligand-pocket tether stiffness
    bond_stiffness: float = 3.0
    temperature: float = 0.01
    dt: float = 0.005
    n_frames: int = 200
    drift: bool = False
    seed: int = 0
    steps_per_frame: int = 40
    drift_rate: float = 0.01  # Å per frame, applied to the ligand
    anchor_stiffness: float = 1.0
    tethers_per_atom: int = 3
    bond_cutoff: float = 1.6
    spacing: float = 1.5
    feature_dim: int = 8
    element_seed: int = 0  # atom order and element types; shared across seeds by default
    tether_pull: float = 0.0  # tether rest lengths are this much shorter than the initial distance

    def __post_init__(self):
        if self.n_ligand < 1 or self.n_receptor < 1:
            raise InvalidParameter("need at least one ligand and one receptor atom")
        if self.k < 0 or self.bond_stiffness < 0 or self.anchor_stiffness < 0:
            raise InvalidParameter("stiffnesses must be non-negative")
        if not self.dt > 0:
            raise InvalidParameter("dt must be positive")
        if self.n_frames < 1 or self.steps_per_frame < 1:
            raise InvalidParameter("n_frames and steps_per_frame must be at least 1")
        if self.temperature < 0:
            raise InvalidParameter("temperature must be non-negative")
        if not 0 <= self.tether_pull < self.spacing:
            raise InvalidParameter("tether_pull must lie in [0, spacing)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LangevinState:
    positions: np.ndarray
    frame: int = 0


@dataclass(frozen=True)
class ToySystem:
    """Spring network derived from a spec's initial configuration."""

    initial: np.ndarray
    elements: tuple[str, ...]
    pairs: np.ndarray  # (P, 2)
    rest: np.ndarray  # (P,)
    stiffness: np.ndarray  # (P,)
    anchors: np.ndarray  # (M, 3) receptor restraint centres

    def gradient(self, x: np.ndarray, spec: ToyComplexSpec) -> np.ndarray:
        grad = np.zeros_like(x)
        if len(self.pairs):
            i, j = self.pairs[:, 0], self.pairs[:, 1]
            d = x[i] - x[j]
            r = np.sqrt((d * d).sum(-1))
            coef = np.where(r > 0, self.stiffness * (r - self.rest) / np.where(r > 0, r, 1.0), 0.0)
            f = coef[:, None] * d
            np.add.at(grad, i, f)
            np.add.at(grad, j, -f)
        if spec.anchor_stiffness:
            n = spec.n_ligand
            grad[n:] += spec.anchor_stiffness * (x[n:] - self.anchors)
        return grad


def _lattice_points(spacing: float, reach: int) -> np.ndarray:
    r = np.arange(-reach, reach + 2)
    g = np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3)
    return g.astype(np.float64) * spacing


def initial_configuration(spec: ToyComplexSpec) -> tuple[np.ndarray, tuple[str, ...]]:
    """Ligand = lattice points nearest the cell centre; receptor = the next shell around it.

    With the defaults (N = 8, M = 24) this is a 2x2x2 cube caged by the 24
    face-adjacent lattice sites, so every ligand atom faces three receptor atoms.
    """
    rng = np.random.default_rng([spec.seed, 7])
    reach = int(np.ceil((spec.n_ligand + spec.n_receptor) ** (1 / 3))) + 2
    pts = _lattice_points(spec.spacing, reach)
    centre = np.full(3, 0.5 * spec.spacing)
    d_centre = np.linalg.norm(pts - centre, axis=1)
    # lexicographic tie-break keeps the construction deterministic
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], np.round(d_centre, 9)))
    lig = pts[order[:spec.n_ligand]]
    rest = pts[order[spec.n_ligand:]]
    d_lig = pairwise_distances(rest, lig).min(axis=1)
    order = np.lexsort((rest[:, 2], rest[:, 1], rest[:, 0],
                        np.round(np.linalg.norm(rest - centre, axis=1), 9), np.round(d_lig, 9)))
    rec = rest[order[:spec.n_receptor]]
    erng = np.random.default_rng([spec.element_seed, 17])
    positions = np.concatenate([lig[erng.permutation(len(lig))], rec[erng.permutation(len(rec))]])
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    positions = (positions - centre) @ q.T + rng.normal(scale=2.0, size=3)
    elements = tuple(erng.choice(LIGAND_ELEMENTS, spec.n_ligand)) + \
        tuple(erng.choice(RECEPTOR_ELEMENTS, spec.n_receptor))
    return positions, tuple(str(e) for e in elements)


@lru_cache(maxsize=256)
def build_system(spec: ToyComplexSpec) -> ToySystem:
    x0, elements = initial_configuration(spec)
    n = spec.n_ligand
    dist = pairwise_distances(x0, x0)
    part = np.arange(len(x0)) >= n
    same = part[:, None] == part[None, :]
    i, j = np.nonzero(np.triu(same & (dist <= spec.bond_cutoff), k=1))
    pairs = [np.stack([i, j], 1)]
    stiff = [np.full(len(i), spec.bond_stiffness)]
    lig_rec = dist[:n, n:]
    n_teth = min(spec.tethers_per_atom, spec.n_receptor)
    nearest = np.argsort(lig_rec, axis=1, kind="stable")[:, :n_teth]
    ti = np.repeat(np.arange(n), n_teth)
    tj = nearest.reshape(-1) + n
    pairs.append(np.stack([ti, tj], 1))
    stiff.append(np.full(len(ti), spec.k))
    pairs = np.concatenate(pairs).astype(np.int64)
    rest = dist[pairs[:, 0], pairs[:, 1]]
    rest[len(rest) - len(ti):] -= spec.tether_pull
    return ToySystem(x0, elements, pairs, rest, np.concatenate(stiff), x0[n:].copy())


def langevin_step(state: LangevinState, spec: ToyComplexSpec, rng: np.random.Generator,
                  system: ToySystem | None = None) -> LangevinState:
    """One Euler-Maruyama step of x <- x - dt grad U + sqrt(2 T dt) xi."""
    system = build_system(spec) if system is None else system
    x = state.positions
    x_new = x - spec.dt * system.gradient(x, spec)
    if spec.temperature > 0:
        x_new = x_new + math.sqrt(2 * spec.temperature * spec.dt) * rng.standard_normal(x.shape)
    if not np.all(np.isfinite(x_new)):
        raise NumericalError("non-finite Langevin state; dt is probably too large")
    return LangevinState(x_new, state.frame + 1)


def atom_features(elements, n_ligand: int, dim: int) -> np.ndarray:
    """Invariant one-hot element features plus a ligand flag."""
    feats = np.zeros((len(elements), dim))
    for a, e in enumerate(elements):
        feats[a, VOCAB.index(e) % dim] = 1.0
        if a < n_ligand:
            feats[a, len(VOCAB) % dim] += 1.0
    return feats


def drift_axis(spec: ToyComplexSpec) -> np.ndarray:
    v = np.random.default_rng([spec.seed, 11]).normal(size=3)
    return v / np.linalg.norm(v)


def generate_trajectory(spec: ToyComplexSpec) -> Trajectory:
    system = build_system(spec)
    rng = np.random.default_rng([spec.seed, 13])
    frames = np.empty((spec.n_frames, len(system.initial), 3))
    state = LangevinState(system.initial.copy())
    frames[0] = state.positions
    for t in range(1, spec.n_frames):
        for _ in range(spec.steps_per_frame):
            state = langevin_step(state, spec, rng, system)
        frames[t] = state.positions
    if spec.drift:
        offset = np.arange(spec.n_frames)[:, None] * spec.drift_rate * drift_axis(spec)[None, :]
        frames[1:, :spec.n_ligand] += offset[1:, None, :]
    return Trajectory(
        elements=system.elements, n_ligand=spec.n_ligand,
        features=atom_features(system.elements, spec.n_ligand, spec.feature_dim),
        frames=frames, label=synthetic_affinity_label(spec), cutoff=DEFAULT_CUTOFF,
        meta={"spec": spec.to_dict()},
    )


def synthetic_affinity_label(spec, a: float = 4.0, b: float = 2.0) -> float:
    """Binding label that grows with tether stiffness: a + b log(1 + k).

    ``spec`` is a :class:`ToyComplexSpec` or a bare stiffness value.
    """
    k = float(getattr(spec, "k", spec))
    if k < 0:
        raise InvalidParameter("k must be non-negative")
    return a + b * math.log1p(k)


def mean_squared_frame_displacement(traj: Trajectory) -> float:
    d = np.diff(traj.frames, axis=0)
    return float((d * d).sum(-1).mean())
