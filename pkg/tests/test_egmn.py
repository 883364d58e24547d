import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from conftest import random_snapshot
from mdpretrain.egmn import Egmn, EgmnConfig, EgmnLayer, GraphBatch, clamp_norm, layer_forward, pool
from mdpretrain.errors import InvalidParameter, ShapeError
from mdpretrain.geom import ComplexSnapshot, random_rigid_motion

WIDTH = 6


def make_encoder(seed=0, **kw):
    base = dict(width=WIDTH, hidden=10, layers=2, dropout=0.0)
    base.update(kw)
    return Egmn(EgmnConfig(**base), torch.Generator().manual_seed(seed))


def run(encoder, snap, positions=None):
    graph = GraphBatch.from_snapshots([snap], None if positions is None else [positions])
    with torch.no_grad():
        return encoder(graph.h, graph)


@given(st.integers(0, 2**31 - 1), st.integers(2, 12), st.integers(2, 20))
def test_equivariance(seed, n_lig, n_rec):
    rng = np.random.default_rng(seed)
    snap = random_snapshot(rng, n_lig, n_rec, feature_dim=WIDTH, scale=1.5)
    q, shift = random_rigid_motion(rng, reflect=bool(seed % 2))
    enc = make_encoder(seed % 7)
    base = run(enc, snap)
    moved = run(enc, snap, snap.positions @ q.T + shift)
    assert (base.h - moved.h).abs().max() < 1e-10
    expected = base.x.numpy() @ q.T + shift
    assert np.abs(moved.x.numpy() - expected).max() < 1e-6


@given(st.integers(0, 2**31 - 1))
def test_permutation_within_partition(seed):
    rng = np.random.default_rng(seed)
    snap = random_snapshot(rng, 4, 7, feature_dim=WIDTH)
    perm = np.concatenate([rng.permutation(4), 4 + rng.permutation(7)])
    shuffled = ComplexSnapshot.build(snap.elements, 4, snap.features[perm], snap.positions[perm])
    enc = make_encoder()
    a, b = run(enc, snap), run(enc, shuffled)
    assert torch.allclose(a.h[perm], b.h, atol=1e-12)
    assert torch.allclose(a.x[perm], b.x, atol=1e-12)


def test_zero_gates_keep_coordinates(rng):
    snap = random_snapshot(rng, 3, 5, feature_dim=WIDTH)
    enc = make_encoder()
    with torch.no_grad():
        for layer in enc.layers:
            for gate in (layer.phi_m, layer.phi_mu):
                gate.weights[-1].zero_()
                gate.biases[-1].zero_()
    out = run(enc, snap)
    assert torch.equal(out.x, torch.from_numpy(snap.positions))


def reference_layer(layer, h, x, n_ligand, cutoff_edges, clamp):
    """Loop-per-receiver evaluation of one layer, for a handful of atoms."""
    n = len(h)
    intra, cross = cutoff_edges
    nbr_intra = {i: [] for i in range(n)}
    nbr_cross = {i: [] for i in range(n)}
    for i, j in intra:
        nbr_intra[i].append(j)
        nbr_intra[j].append(i)
    for i, r in cross:
        j = n_ligand + r
        nbr_cross[i].append(j)
        nbr_cross[j].append(i)
    h_out, x_out = [], []
    for i in range(n):
        m_sum = torch.zeros(layer.width, dtype=torch.float64)
        mu_sum = torch.zeros(layer.width, dtype=torch.float64)
        disp = torch.zeros(3, dtype=torch.float64)
        for j in nbr_intra[i]:
            d = torch.sqrt(((x[i] - x[j]) ** 2).sum() + 1e-12)
            m = layer.phi_e(torch.cat([h[i], h[j], d[None]]))
            m_sum += m
            disp += clamp_norm(((x[i] - x[j]) * layer.phi_m(m))[None], clamp)[0]
        if nbr_cross[i]:
            q = layer.phi_q(h[i])
            logits = torch.stack([(q * layer.phi_k(h[j])).sum() for j in nbr_cross[i]])
            a = torch.softmax(logits, 0)
            for w, j in zip(a, nbr_cross[i]):
                d = torch.sqrt(((x[i] - x[j]) ** 2).sum() + 1e-12)
                mu = w * h[j] * layer.phi_d(d[None])
                mu_sum += mu
                disp += clamp_norm(((x[i] - x[j]) * layer.phi_mu(mu))[None], clamp)[0]
        deg = max(len(nbr_intra[i]) + len(nbr_cross[i]), 1)
        x_out.append(x[i] + disp / deg)
        h_out.append(layer.phi_h(torch.cat([h[i], m_sum, mu_sum])))
    return torch.stack(h_out), torch.stack(x_out)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_layer_matches_hand_rolled_loops(seed):
    rng = np.random.default_rng(seed)
    pos = np.array([[0.0, 0, 0], [1.2, 0.3, 0], [0.4, 1.6, 0.2], [2.0, 1.0, -0.5]])
    snap = ComplexSnapshot.build(["C"] * 4, 2, rng.normal(size=(4, WIDTH)), pos, cutoff=2.5)
    assert len(snap.edges.cross) > 0
    config = EgmnConfig(width=WIDTH, hidden=5, layers=1, dropout=0.0, clamp=0.3)
    layer = EgmnLayer(WIDTH, 5, torch.Generator().manual_seed(seed), gate_scale=3.0)
    graph = GraphBatch.from_snapshots([snap])
    with torch.no_grad():
        h, x = layer_forward(layer, graph.h, graph.x, graph, config)
        h_ref, x_ref = reference_layer(layer, graph.h, graph.x, 2,
                                       (snap.edges.intra.tolist(), snap.edges.cross.tolist()), 0.3)
    assert torch.allclose(h, h_ref, atol=1e-12)
    assert torch.allclose(x, x_ref, atol=1e-12)


class TestAttention:
    def test_hand_set_logits(self):
        layer = EgmnLayer(1, 1, torch.Generator().manual_seed(0))
        with torch.no_grad():
            layer.phi_q.weights[0].fill_(0.0)
            layer.phi_q.biases[0].fill_(1.0)
            layer.phi_k.weights[0].fill_(1.0)
            layer.phi_k.biases[0].fill_(0.0)
            h = torch.tensor([[5.0], [0.0], [math.log(3)]], dtype=torch.float64)
            a = layer.cross_attention(h, torch.tensor([1, 2]), torch.tensor([0, 0]))
        np.testing.assert_allclose(a.numpy(), [0.25, 0.75], atol=1e-15)

    def test_identical_neighbours_are_uniform(self):
        layer = EgmnLayer(3, 4, torch.Generator().manual_seed(1))
        h = torch.ones(5, 3, dtype=torch.float64)
        a = layer.cross_attention(h, torch.tensor([1, 2, 3, 4]), torch.tensor([0, 0, 0, 0]))
        np.testing.assert_allclose(a.detach().numpy(), [0.25] * 4, atol=1e-15)

    @given(st.integers(0, 2**31 - 1))
    def test_receiver_sums(self, seed):
        rng = np.random.default_rng(seed)
        layer = EgmnLayer(3, 4, torch.Generator().manual_seed(seed % 100))
        h = torch.from_numpy(rng.normal(size=(8, 3)))
        dst = torch.from_numpy(rng.integers(0, 3, size=20))
        src = torch.from_numpy(rng.integers(3, 8, size=20))
        a = layer.cross_attention(h, src, dst).detach()
        sums = torch.zeros(3, dtype=torch.float64).index_add(0, dst, a)
        present = torch.bincount(dst, minlength=3) > 0
        assert (sums[present] - 1).abs().max() < 1e-12


def test_stack_is_layer_composition(rng):
    snap = random_snapshot(rng, 3, 4, feature_dim=WIDTH)
    enc = make_encoder(layers=3)
    graph = GraphBatch.from_snapshots([snap])
    with torch.no_grad():
        h, x = graph.h, graph.x
        for layer in enc.layers:
            h, x = layer_forward(layer, h, x, graph, enc.config)
        out = enc(graph.h, graph)
    assert torch.equal(out.h, h) and torch.equal(out.x, x)


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 1.0))
def test_clamp_bounds_per_atom_shift(seed, c):
    rng = np.random.default_rng(seed)
    snap = random_snapshot(rng, 4, 6, feature_dim=WIDTH, scale=3.0)
    enc = make_encoder(seed % 5, layers=1, clamp=c, gate_scale=50.0)
    out = run(enc, snap)
    moved = (out.x - torch.from_numpy(snap.positions)).norm(dim=-1)
    assert moved.max() <= c + 1e-12


def test_clamp_norm_keeps_short_rows():
    disp = torch.tensor([[0.3, 0.4, 0.0], [3.0, 4.0, 0.0]], dtype=torch.float64)
    out = clamp_norm(disp, 1.0)
    assert torch.allclose(out[0], disp[0]) and out[1].norm().item() == pytest.approx(1.0)


def test_batch_equals_separate_runs(rng):
    snaps = [random_snapshot(rng, 2, 3, feature_dim=WIDTH), random_snapshot(rng, 3, 5, feature_dim=WIDTH)]
    enc = make_encoder()
    graph = GraphBatch.from_snapshots(snaps)
    with torch.no_grad():
        joint = enc(graph.h, graph)
    first = run(enc, snaps[0])
    assert torch.allclose(joint.x[:5], first.x, atol=1e-13)
    pooled = pool(joint.h, graph.graph_index, 2)
    assert torch.allclose(pooled[0], first.h.mean(0), atol=1e-13)


def test_width_mismatch(rng):
    snap = random_snapshot(rng, feature_dim=WIDTH + 1)
    with pytest.raises(ShapeError):
        run(make_encoder(), snap)


def test_bad_config():
    with pytest.raises(InvalidParameter):
        EgmnConfig(layers=0)
    with pytest.raises(InvalidParameter):
        EgmnConfig(clamp=0.0)
