"""E(3)-equivariant graph matching encoder over ligand/receptor graphs.

One layer computes intra-graph messages from feature pairs and distances,
attention-weighted cross-graph messages, an equivariant coordinate update
gated by those messages, and a node-feature update. Several snapshots can be
processed at once by concatenating them into a :class:`GraphBatch`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .diffcore import MLP, dropout_apply, segment_softmax
from .errors import InvalidParameter, NumericalError, ShapeError
from .geom import ComplexSnapshot

_DIST_EPS = 1e-12


@dataclass(frozen=True)
class EgmnConfig:
    width: int = 256  # node feature width, psi_h + psi_prompt
    hidden: int = 256
    layers: int = 6
    dropout: float = 0.15
    clamp: float = 2.0
    normalize: bool = True
    gate_scale: float = 1.0  # init scale of the coordinate-gate output layers
    rbf: int = 0  # Gaussian distance features appended to the raw distance
    rbf_max: float = 4.0

    def __post_init__(self):
        if self.layers < 1:
            raise InvalidParameter("at least one EGMN layer is required")
        if self.clamp <= 0:
            raise InvalidParameter("coordinate clamp must be positive")
        if not 0 <= self.dropout < 1:
            raise InvalidParameter("dropout must lie in [0, 1)")


@dataclass
class GraphBatch:
    """Disjoint union of snapshots with directed edge lists (receiver = dst)."""

    x: torch.Tensor  # (n, 3)
    h: torch.Tensor  # (n, F)
    intra_src: torch.Tensor
    intra_dst: torch.Tensor
    cross_src: torch.Tensor
    cross_dst: torch.Tensor
    graph_index: torch.Tensor  # (n,) which snapshot each atom belongs to
    n_graphs: int
    n_ligand: tuple[int, ...]

    @property
    def n_atoms(self) -> int:
        return self.x.shape[0]

    @classmethod
    def from_snapshots(cls, snapshots: Sequence[ComplexSnapshot],
                       positions: Optional[Sequence[np.ndarray]] = None) -> "GraphBatch":
        xs, hs, isrc, idst, csrc, cdst, gidx = [], [], [], [], [], [], []
        offset = 0
        for g, snap in enumerate(snapshots):
            n = snap.n_ligand
            intra = snap.edges.intra + offset
            cross_l = snap.edges.cross[:, 0] + offset
            cross_r = snap.edges.cross[:, 1] + n + offset
            isrc += [intra[:, 0], intra[:, 1]]
            idst += [intra[:, 1], intra[:, 0]]
            csrc += [cross_r, cross_l]
            cdst += [cross_l, cross_r]
            xs.append(snap.positions if positions is None else positions[g])
            hs.append(snap.features)
            gidx.append(np.full(snap.n_atoms, g))
            offset += snap.n_atoms

        def cat(parts):
            return torch.from_numpy(np.concatenate(parts).astype(np.int64))

        return cls(
            x=torch.from_numpy(np.concatenate(xs).astype(np.float64)),
            h=torch.from_numpy(np.concatenate(hs).astype(np.float64)),
            intra_src=cat(isrc), intra_dst=cat(idst),
            cross_src=cat(csrc), cross_dst=cat(cdst),
            graph_index=cat(gidx), n_graphs=len(snapshots),
            n_ligand=tuple(s.n_ligand for s in snapshots),
        )


@dataclass
class EncoderOutput:
    h: torch.Tensor
    x: torch.Tensor


def _distance(diff: torch.Tensor) -> torch.Tensor:
    return torch.sqrt((diff * diff).sum(-1, keepdim=True) + _DIST_EPS)


def distance_features(d: torch.Tensor, n_rbf: int, d_max: float) -> torch.Tensor:
    """Raw distance followed by ``n_rbf`` Gaussian bumps on [0, d_max]."""
    if n_rbf == 0:
        return d
    centres = torch.linspace(0.0, d_max, n_rbf, dtype=d.dtype)
    width = d_max / n_rbf
    return torch.cat([d, torch.exp(-((d - centres) / width) ** 2)], dim=-1)


def clamp_norm(disp: torch.Tensor, c: float) -> torch.Tensor:
    """Rescale rows whose Euclidean norm exceeds ``c`` down to norm ``c``."""
    norm = torch.sqrt((disp * disp).sum(-1, keepdim=True) + 1e-30)
    return disp * (c / torch.clamp(norm, min=c))


def _scatter_sum(values: torch.Tensor, index: torch.Tensor, n: int) -> torch.Tensor:
    out = torch.zeros((n,) + values.shape[1:], dtype=values.dtype)
    return out.index_add(0, index, values)


class EgmnLayer(nn.Module):
    def __init__(self, width: int, hidden: int, generator: torch.Generator, gate_scale: float = 1.0,
                 rbf: int = 0, rbf_max: float = 4.0):
        super().__init__()
        self.rbf, self.rbf_max = rbf, rbf_max
        self.phi_e = MLP([2 * width + 1 + rbf, hidden, width], generator)
        self.phi_d = MLP([1 + rbf, hidden, width], generator)
        self.phi_q = MLP([width, hidden], generator)
        self.phi_k = MLP([width, hidden], generator)
        self.phi_m = MLP([width, hidden, 1], generator, final_scale=gate_scale)
        self.phi_mu = MLP([width, hidden, 1], generator, final_scale=gate_scale)
        self.phi_h = MLP([3 * width, hidden, width], generator)
        self.width = width

    def cross_attention(self, h: torch.Tensor, src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
        """Softmax over each receiver's cross neighbours of <q(h_i), k(h_j)>."""
        if len(src) == 0:
            return torch.zeros(0, dtype=h.dtype)
        logits = (self.phi_q(h)[dst] * self.phi_k(h)[src]).sum(-1)
        return segment_softmax(logits, dst, h.shape[0])

    def forward(self, h: torch.Tensor, x: torch.Tensor, graph: GraphBatch,
                clamp: float = 2.0, normalize: bool = True, dropout: float = 0.0,
                train: bool = False, generator: Optional[torch.Generator] = None):
        if h.shape[-1] != self.width:
            raise ShapeError(f"feature width {h.shape[-1]} != layer width {self.width}")
        n = h.shape[0]
        si, di = graph.intra_src, graph.intra_dst
        sc, dc = graph.cross_src, graph.cross_dst

        diff_i = x[di] - x[si]
        dist_i = distance_features(_distance(diff_i), self.rbf, self.rbf_max)
        m = self.phi_e(torch.cat([h[di], h[si], dist_i], dim=-1))

        diff_c = x[dc] - x[sc]
        a = self.cross_attention(h, sc, dc)
        mu = a[:, None] * h[sc] * self.phi_d(distance_features(_distance(diff_c), self.rbf, self.rbf_max))

        disp = torch.cat([
            clamp_norm(diff_i * self.phi_m(m), clamp),
            clamp_norm(diff_c * self.phi_mu(mu), clamp),
        ])
        dst = torch.cat([di, dc])
        shift = _scatter_sum(disp, dst, n)
        if normalize:
            count = _scatter_sum(torch.ones(len(dst), dtype=x.dtype), dst, n)
            shift = shift / torch.clamp(count, min=1.0)[:, None]
        x_new = x + shift

        h_new = self.phi_h(torch.cat([h, _scatter_sum(m, di, n), _scatter_sum(mu, dc, n)], dim=-1))
        h_new = dropout_apply(h_new, dropout, train, generator)
        if not (torch.all(torch.isfinite(h_new)) and torch.all(torch.isfinite(x_new))):
            raise NumericalError("non-finite EGMN layer output")
        return h_new, x_new


class Egmn(nn.Module):
    """Stack of :class:`EgmnLayer` threading features and coordinates."""

    def __init__(self, config: EgmnConfig, generator: torch.Generator):
        super().__init__()
        self.config = config
        self.layers = nn.ModuleList(
            EgmnLayer(config.width, config.hidden, generator, config.gate_scale,
                      config.rbf, config.rbf_max)
            for _ in range(config.layers)
        )

    def forward(self, h: torch.Tensor, graph: GraphBatch, x: Optional[torch.Tensor] = None,
                train: bool = False, generator: Optional[torch.Generator] = None) -> EncoderOutput:
        x = graph.x if x is None else x
        if h.shape[-1] != self.config.width:
            raise ShapeError(f"encoder expects width {self.config.width}, got {h.shape[-1]}")
        c = self.config
        for layer in self.layers:
            h, x = layer(h, x, graph, clamp=c.clamp, normalize=c.normalize,
                         dropout=c.dropout, train=train, generator=generator)
        return EncoderOutput(h=h, x=x)


def layer_forward(layer: EgmnLayer, h, x, graph: GraphBatch, config: EgmnConfig,
                  train: bool = False, generator=None):
    return layer(h, x, graph, clamp=config.clamp, normalize=config.normalize,
                 dropout=config.dropout, train=train, generator=generator)


def encode(encoder: Egmn, h: torch.Tensor, graph: GraphBatch, train: bool = False,
           generator=None) -> EncoderOutput:
    return encoder(h, graph, train=train, generator=generator)


def pool(h: torch.Tensor, graph_index: torch.Tensor, n_graphs: int, mode: str = "mean") -> torch.Tensor:
    """Per-snapshot mean (or sum) of atom features."""
    total = _scatter_sum(h, graph_index, n_graphs)
    if mode == "sum":
        return total
    if mode != "mean":
        raise InvalidParameter(f"unknown pooling mode {mode!r}")
    count = _scatter_sum(torch.ones(h.shape[0], dtype=h.dtype), graph_index, n_graphs)
    return total / count[:, None]
