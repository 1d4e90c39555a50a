import itertools

import numpy as np
import pytest

from dispscan import preprocess as pp
from dispscan.dataset import TrajectorySet
from dispscan.errors import (
    DegenerateGeometry,
    EmptyClass,
    EmptyDataset,
    OutOfRange,
    UnknownPartId,
)

from conftest import make_ts


def _rotation(axis, angle):
    a = np.asarray(axis, dtype=float)
    a /= np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def _rigid_ts(n_nodes=20, n_runs=2, n_steps=8, deform=None, seed=0):
    """Initial cloud moved by a known rigid transform per timestep, plus an
    optional per-timestep deformation field applied before the transform."""
    rng = np.random.default_rng(seed)
    cloud = rng.uniform(-50.0, 50.0, size=(n_nodes, 3))
    positions = np.empty((n_nodes, n_runs, n_steps, 3))
    for k in range(n_steps):
        angle = 0.15 * k
        rot = _rotation((0.3, -0.5, 0.8), angle)
        shift = np.array([4.0, -2.0, 1.0]) * k
        frame = cloud if deform is None else cloud + deform[k]
        positions[:, :, k, :] = (frame @ rot.T + shift)[:, None, :]
    return TrajectorySet(np.arange(n_nodes, dtype=np.int64),
                         np.ones(n_nodes, dtype=np.int64),
                         np.arange(n_steps, dtype=np.float64), positions), cloud


def _fit_neutral_deformation(cloud, n_steps, seed):
    """Deformation whose best-fit rigid transform onto the base cloud is the
    identity: zero mean and zero cross-covariance with the centered cloud."""
    rng = np.random.default_rng(seed)
    centered = cloud - cloud.mean(axis=0)
    basis = np.hstack([np.ones((len(cloud), 1)), centered])     # (N, 4)
    q, _ = np.linalg.qr(basis)
    deform = rng.normal(scale=2.0, size=(n_steps, len(cloud), 3))
    deform[0] = 0.0
    for k in range(1, n_steps):
        deform[k] -= q @ (q.T @ deform[k])
    return deform


class TestRigidRemoval:
    def test_pure_rigid_motion_removed_exactly(self):
        ts, cloud = _rigid_ts()
        out = pp.remove_rigid_body_motion(ts)
        expected = np.broadcast_to(cloud[:, None, None, :], out.positions.shape)
        assert np.max(np.abs(out.positions - expected)) < 1e-9

    def test_zero_motion_is_identity(self):
        ts = make_ts(n_nodes=6, n_runs=2, n_steps=4)
        frozen = np.repeat(ts.positions[:, :, :1, :], 4, axis=2)
        ts0 = TrajectorySet(ts.node_ids, ts.part_ids, ts.dt_index, frozen)
        out = pp.remove_rigid_body_motion(ts0)
        assert np.max(np.abs(out.positions - frozen)) < 1e-9

    def test_known_deformation_recovered_under_rigid_motion(self):
        # oracle: the fixture is built as rigid(cloud + d); removal must
        # return cloud + d because d is fit-neutral by construction
        n_steps = 8
        rng_cloud = np.random.default_rng(5)
        cloud = rng_cloud.uniform(-80.0, 80.0, size=(30, 3))
        deform = _fit_neutral_deformation(cloud, n_steps, seed=6)
        positions = np.empty((30, 2, n_steps, 3))
        for k in range(n_steps):
            rot = _rotation((1.0, 0.2, -0.4), 0.12 * k)
            shift = np.array([10.0, 3.0, -7.0]) * k
            positions[:, :, k, :] = ((cloud + deform[k]) @ rot.T + shift)[:, None, :]
        ts = TrajectorySet(np.arange(30, dtype=np.int64), np.ones(30, dtype=np.int64),
                           np.arange(n_steps, dtype=np.float64), positions)
        out = pp.remove_rigid_body_motion(ts)
        expected = cloud[:, None, None, :] + deform.transpose(1, 0, 2)[:, None, :, :]
        assert np.max(np.abs(out.positions - expected)) < 1e-8

    def test_idempotent(self):
        ts = make_ts(n_nodes=15, n_runs=2, n_steps=6, seed=3)
        once = pp.remove_rigid_body_motion(ts)
        twice = pp.remove_rigid_body_motion(once)
        assert np.max(np.abs(twice.positions - once.positions)) < 1e-9

    def test_collinear_cloud_rejected(self):
        line = np.linspace(0, 1, 5)[:, None] * np.array([1.0, 2.0, 3.0])
        positions = np.broadcast_to(line[:, None, None, :], (5, 2, 3, 3)).copy()
        positions[:, :, 1:, :] += 0.5
        ts = TrajectorySet(np.arange(5, dtype=np.int64), np.ones(5, dtype=np.int64),
                           np.arange(3.0), positions)
        with pytest.raises(DegenerateGeometry):
            pp.remove_rigid_body_motion(ts)


class TestPeak:
    def test_argmax_of_profile(self):
        ts = make_ts(n_nodes=1, n_runs=2, n_steps=4)
        pos = np.zeros((1, 2, 4, 3))
        pos[0, :, :, 0] = [0.0, 1.0, 3.0, 2.0]
        pos += 5.0
        ts = TrajectorySet(ts.node_ids[:1], ts.part_ids[:1], ts.dt_index[:4], pos)
        assert pp.compute_peak_timestep(ts, pp.LabelingConfig()) == 2

    def test_explicit_step(self):
        ts = make_ts(n_steps=300)
        cfg = pp.LabelingConfig(peak_rule=pp.PEAK_RULE_EXPLICIT, explicit_step=220)
        assert pp.compute_peak_timestep(ts, cfg) == 220

    def test_explicit_step_out_of_range(self):
        ts = make_ts(n_steps=10)
        cfg = pp.LabelingConfig(peak_rule=pp.PEAK_RULE_EXPLICIT, explicit_step=10)
        with pytest.raises(OutOfRange):
            pp.compute_peak_timestep(ts, cfg)


def _two_run_ts(x_run0, x_run1):
    t = len(x_run0)
    pos = np.zeros((1, 2, t, 3))
    pos[0, 0, :, 0] = x_run0
    pos[0, 1, :, 0] = x_run1
    pos[0, :, 0, 0] = x_run0[0]
    return TrajectorySet(np.array([7], dtype=np.int64), np.array([1], dtype=np.int64),
                         np.arange(float(t)), pos)


class TestLabeling:
    def test_spread_above_threshold(self):
        ts = _two_run_ts([0.0, 100.0], [0.0, 106.0])
        cfg = pp.LabelingConfig(peak_rule=pp.PEAK_RULE_EXPLICIT, explicit_step=1)
        (label,) = pp.label_dispersion(ts, cfg)
        assert label.y == 1 and label.spread_mm == pytest.approx(6.0)

    def test_spread_below_threshold(self):
        ts = _two_run_ts([0.0, 100.0], [0.0, 104.0])
        cfg = pp.LabelingConfig(peak_rule=pp.PEAK_RULE_EXPLICIT, explicit_step=1)
        (label,) = pp.label_dispersion(ts, cfg)
        assert label.y == 0 and label.spread_mm == pytest.approx(4.0)

    def test_boundary_spread_is_stable(self):
        # strict inequality: exactly 5.0 mm is not dispersed
        ts = _two_run_ts([0.0, 100.0], [0.0, 105.0])
        cfg = pp.LabelingConfig(peak_rule=pp.PEAK_RULE_EXPLICIT, explicit_step=1)
        (label,) = pp.label_dispersion(ts, cfg)
        assert label.spread_mm == 5.0
        assert label.y == 0

    def test_run_permutation_invariant(self):
        ts = make_ts(n_nodes=5, n_runs=4, n_steps=10, seed=11)
        base = pp.label_dispersion(ts, pp.LabelingConfig(threshold_mm=0.5))
        for perm in itertools.permutations(range(4)):
            shuffled = TrajectorySet(ts.node_ids, ts.part_ids, ts.dt_index,
                                     ts.positions[:, perm])
            labels = pp.label_dispersion(shuffled, pp.LabelingConfig(threshold_mm=0.5))
            assert [l.y for l in labels] == [l.y for l in base]
            assert [l.spread_mm for l in labels] == [l.spread_mm for l in base]

    def test_translation_invariant(self):
        ts = make_ts(n_nodes=5, n_runs=3, n_steps=10, seed=2)
        shifted = TrajectorySet(ts.node_ids, ts.part_ids, ts.dt_index,
                                ts.positions + np.array([123.0, -45.0, 6.0]))
        a = pp.label_dispersion(ts, pp.LabelingConfig(threshold_mm=0.5))
        b = pp.label_dispersion(shifted, pp.LabelingConfig(threshold_mm=0.5))
        assert [l.y for l in a] == [l.y for l in b]


class TestBalance:
    @staticmethod
    def _labels(n_ones, n_zeros):
        out = []
        for i in range(n_ones + n_zeros):
            out.append(pp.DispersionLabel(i, 1, int(i < n_ones), 0.0, 0))
        return out

    def test_majority_undersampled(self):
        kept = pp.balance_classes(self._labels(10, 40), rng_seed=1)
        labels = {lb.node_id: lb.y for lb in self._labels(10, 40)}
        ys = [labels[n] for n in kept]
        assert len(kept) == 20
        assert sum(ys) == 10

    def test_already_balanced_keeps_all(self):
        kept = pp.balance_classes(self._labels(5, 5), rng_seed=9)
        assert sorted(kept) == list(range(10))

    def test_deterministic(self):
        labels = self._labels(7, 31)
        assert pp.balance_classes(labels, 123) == pp.balance_classes(labels, 123)
        assert pp.balance_classes(labels, 123) != pp.balance_classes(labels, 124)

    def test_empty_class(self):
        with pytest.raises(EmptyClass):
            pp.balance_classes(self._labels(0, 10), rng_seed=0)


class TestFilterTruncate:
    def test_exclude_nothing_is_identity(self, small_ts):
        assert pp.filter_parts(small_ts, []) is small_ts

    def test_exclude_one_part(self):
        ts = make_ts(n_nodes=20)   # parts alternate 1, 2
        out = pp.filter_parts(ts, [2])
        assert out.n_nodes == 10
        assert set(out.part_ids.tolist()) == {1}
        assert np.array_equal(out.node_ids, ts.node_ids[ts.part_ids == 1])

    def test_exclude_all_parts_rejected(self, small_ts):
        with pytest.raises(EmptyDataset):
            pp.filter_parts(small_ts, [1, 2])

    def test_unknown_part_rejected(self, small_ts):
        with pytest.raises(UnknownPartId):
            pp.filter_parts(small_ts, [99])

    def test_truncate(self, small_ts):
        out = pp.truncate_timesteps(small_ts, 7)
        assert out.n_timesteps == 7
        assert np.array_equal(out.positions, small_ts.positions[:, :, :7])
        assert np.array_equal(out.dt_index, small_ts.dt_index[:7])

    def test_truncate_identity(self, small_ts):
        assert pp.truncate_timesteps(small_ts, small_ts.n_timesteps) is small_ts

    def test_truncate_too_short(self, small_ts):
        with pytest.raises(OutOfRange):
            pp.truncate_timesteps(small_ts, 1)
        with pytest.raises(OutOfRange):
            pp.truncate_timesteps(small_ts, small_ts.n_timesteps + 1)


def test_labels_csv_round_trip(tmp_path):
    from dispscan.cli import _read_labels_csv

    labels = [pp.DispersionLabel(3, 1, 1, 7.25, 220),
              pp.DispersionLabel(4, 2, 0, 0.125, 220)]
    path = tmp_path / "labels.csv"
    pp.write_labels_csv(labels, path)
    assert _read_labels_csv(path) == labels
