import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_snapshot
from mdpretrain.errors import EmptyPartition, InvalidGeometry, InvalidParameter, NoPocket
from mdpretrain.geom import (ComplexSnapshot, Trajectory, build_cross_edges, build_edges,
                             build_intra_edges, extract_pocket, perturb_coordinates,
                             random_rigid_motion)


def brute_force_edges(positions, n_ligand, cutoff):
    n = len(positions)
    part = [0 if i < n_ligand else 1 for i in range(n)]
    intra = {(i, j) for i, j in itertools.combinations(range(n), 2)
             if part[i] == part[j] and np.linalg.norm(positions[i] - positions[j]) <= cutoff}
    cross = {(i, j - n_ligand) for i in range(n_ligand) for j in range(n_ligand, n)
             if np.linalg.norm(positions[i] - positions[j]) <= cutoff}
    return intra, cross


def as_set(pairs):
    return {tuple(int(v) for v in p) for p in pairs}


class TestIntraEdges:
    def test_three_atoms_on_a_line(self):
        pos = [[0, 0, 0], [3, 0, 0], [10, 0, 0]]
        assert as_set(build_intra_edges(pos, [0, 0, 0], 4.0)) == {(0, 1)}

    def test_single_atom_has_no_edges(self):
        assert len(build_intra_edges([[1, 2, 3]], [0], 4.0)) == 0

    def test_cutoff_is_inclusive(self):
        assert as_set(build_intra_edges([[0, 0, 0], [4, 0, 0]], [0, 0], 4.0)) == {(0, 1)}

    def test_partitions_are_not_mixed(self):
        assert len(build_intra_edges([[0, 0, 0], [1, 0, 0]], [0, 1], 4.0)) == 0

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidGeometry):
            build_intra_edges([[0, 0, np.nan], [1, 0, 0]], [0, 0], 4.0)


class TestCrossEdges:
    def test_example(self):
        assert as_set(build_cross_edges([[0, 0, 0]], [[2, 0, 0], [9, 0, 0]], 4.0)) == {(0, 0)}

    def test_tiny_cutoff_gives_nothing(self):
        assert len(build_cross_edges([[0, 0, 0]], [[2, 0, 0]], 1.0)) == 0

    def test_coincident_atoms_are_complete_bipartite(self):
        edges = build_cross_edges(np.zeros((2, 3)), np.zeros((3, 3)), 4.0)
        assert as_set(edges) == {(i, j) for i in range(2) for j in range(3)}

    def test_empty_partition(self):
        with pytest.raises(EmptyPartition):
            build_cross_edges(np.zeros((0, 3)), np.zeros((2, 3)), 4.0)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1), st.floats(0.5, 6.0))
def test_edges_match_brute_force(n_lig, n_rec, seed, cutoff):
    pos = np.random.default_rng(seed).uniform(-5, 5, size=(n_lig + n_rec, 3))
    edges = build_edges(pos, n_lig, cutoff)
    intra, cross = brute_force_edges(pos, n_lig, cutoff)
    assert as_set(edges.intra) == intra
    assert as_set(edges.cross) == cross


@given(st.integers(0, 2**31 - 1))
def test_rigid_motion_commutes_with_edges(seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-4, 4, size=(14, 3))
    q, t = random_rigid_motion(rng)
    a, b = build_edges(pos, 5, 4.0), build_edges(pos @ q.T + t, 5, 4.0)
    # rounding can move pairs sitting exactly on the cutoff; uniform draws make that measure-zero
    assert as_set(a.intra) == as_set(b.intra) and as_set(a.cross) == as_set(b.cross)


class TestPocket:
    def make(self, receptor):
        pos = np.vstack([[0.0, 0, 0], receptor])
        return ComplexSnapshot.build(["C"] * len(pos), 1, np.eye(len(pos)), pos)

    def test_keeps_only_close_receptor_atoms(self):
        pocket = extract_pocket(self.make([[5.0, 0, 0], [7.0, 0, 0]]), 6.0)
        assert pocket.n_receptor == 1
        np.testing.assert_array_equal(pocket.positions[1], [5.0, 0, 0])
        np.testing.assert_array_equal(pocket.features[1], np.eye(3)[1])

    def test_large_radius_keeps_everything(self):
        snap = self.make([[5.0, 0, 0], [7.0, 0, 0]])
        assert extract_pocket(snap, 100.0).n_atoms == snap.n_atoms

    def test_no_pocket(self):
        with pytest.raises(NoPocket):
            extract_pocket(self.make([[8.0, 0, 0]]), 6.0)

    @given(st.integers(0, 2**31 - 1), st.floats(1.0, 6.0))
    def test_idempotent(self, seed, radius):
        snap = random_snapshot(np.random.default_rng(seed), 3, 10, scale=3.0)
        try:
            once = extract_pocket(snap, radius)
        except NoPocket:
            return
        twice = extract_pocket(once, radius)
        np.testing.assert_array_equal(once.positions, twice.positions)


class TestPerturb:
    def test_zero_sigma_is_identity(self, rng):
        snap = random_snapshot(rng)
        np.testing.assert_array_equal(perturb_coordinates(snap, 0.0, rng).positions, snap.positions)

    def test_same_seed_same_noise(self, rng):
        snap = random_snapshot(rng)
        a = perturb_coordinates(snap, 0.1, np.random.default_rng(5))
        b = perturb_coordinates(snap, 0.1, np.random.default_rng(5))
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_noise_standard_deviation(self):
        pos = np.zeros((33_334, 3))
        snap = ComplexSnapshot(("C",) * len(pos), 1, np.zeros((len(pos), 1)), pos,
                               build_edges(pos[:2], 1, 1e-3), 0)
        noisy = perturb_coordinates(snap, 0.3, np.random.default_rng(1))
        assert abs(noisy.positions.std() / 0.3 - 1) < 0.02

    def test_features_edges_and_timestep_preserved(self, rng):
        snap = random_snapshot(rng)
        noisy = perturb_coordinates(snap, 0.5, rng)
        np.testing.assert_array_equal(noisy.features, snap.features)
        np.testing.assert_array_equal(noisy.edges.intra, snap.edges.intra)
        assert noisy.timestep == snap.timestep and noisy.n_ligand == snap.n_ligand

    def test_negative_sigma(self, rng):
        with pytest.raises(InvalidParameter):
            perturb_coordinates(random_snapshot(rng), -1.0, rng)


class TestSnapshotAndTrajectory:
    def test_node_cap(self, rng):
        with pytest.raises(InvalidGeometry):
            ComplexSnapshot.build(["C"] * 5, 2, np.zeros((5, 1)), rng.normal(size=(5, 3)), node_cap=4)

    def test_needs_both_partitions(self, rng):
        with pytest.raises(EmptyPartition):
            ComplexSnapshot.build(["C"] * 3, 3, np.zeros((3, 1)), rng.normal(size=(3, 3)))

    def test_trajectory_snapshots_are_one_based(self, rng):
        frames = rng.normal(size=(4, 5, 3))
        traj = Trajectory(("C",) * 5, 2, np.zeros((5, 2)), frames)
        np.testing.assert_array_equal(traj.snapshot(1).positions, frames[0])
        assert traj.snapshot(4).timestep == 4
        with pytest.raises(IndexError):
            traj.snapshot(0)

    def test_atoms_view(self, rng):
        snap = random_snapshot(rng, 2, 3)
        atoms = snap.atoms
        assert [a.partition for a in atoms] == [0, 0, 1, 1, 1]

    def test_rigid_motion_includes_reflections(self):
        rng = np.random.default_rng(0)
        q, _ = random_rigid_motion(rng, reflect=True)
        assert np.linalg.det(q) == pytest.approx(-1.0)
        np.testing.assert_allclose(q @ q.T, np.eye(3), atol=1e-12)
