import numpy as np
import pytest

from dispscan import dataset
from dispscan.errors import (
    EmptyDataset,
    InconsistentInitialState,
    IoFailure,
    MismatchedNodeSet,
    NonFiniteValue,
    SingleRun,
    UnitMismatch,
    VersionMismatch,
)

from conftest import make_ts


def test_round_trip_bit_exact(tmp_path, small_ts):
    path = tmp_path / "data.dspc"
    dataset.save_trajectory_set(small_ts, path, scenario="round-trip")
    loaded = dataset.load_trajectory_set(str(path) + ".manifest.json")
    assert loaded.identical(small_ts)


def test_file_size_matches_format(tmp_path):
    ts = make_ts(n_nodes=100, n_runs=3, n_steps=17)
    path = tmp_path / "sized.dspc"
    dataset.save_trajectory_set(ts, path)
    n, r, t = 100, 3, 17
    expected = 28 + 16 * n + 8 * t + 8 * n * r * t * 3
    assert path.stat().st_size == expected


def test_manifest_concatenates_runs_in_order(tmp_path):
    ts = make_ts(n_nodes=3, n_runs=4, n_steps=9)
    for run in range(4):
        dataset.write_container(tmp_path / f"run{run}.dspc", ts.node_ids,
                                ts.part_ids, ts.dt_index,
                                ts.positions[:, run:run + 1])
    manifest = dataset.DatasetManifest(
        scenario="multi", runs=[f"run{r}.dspc" for r in range(4)], timesteps=9)
    dataset.write_manifest(manifest, tmp_path / "m.json")
    loaded = dataset.load_trajectory_set(tmp_path / "m.json")
    assert loaded.identical(ts)

    reordered = dataset.DatasetManifest(
        scenario="multi", runs=["run2.dspc", "run0.dspc"], timesteps=9)
    out = dataset.load_trajectory_set(reordered, base_dir=tmp_path)
    assert np.array_equal(out.positions[:, 0], ts.positions[:, 2])
    assert np.array_equal(out.positions[:, 1], ts.positions[:, 0])


def test_mismatched_node_set_rejected(tmp_path):
    ts = make_ts(n_nodes=5, n_runs=2, n_steps=6)
    dataset.write_container(tmp_path / "a.dspc", ts.node_ids, ts.part_ids,
                            ts.dt_index, ts.positions[:, :1])
    dataset.write_container(tmp_path / "b.dspc", ts.node_ids[:-1], ts.part_ids[:-1],
                            ts.dt_index, ts.positions[:-1, 1:])
    manifest = dataset.DatasetManifest("bad", ["a.dspc", "b.dspc"], 6)
    with pytest.raises(MismatchedNodeSet):
        dataset.load_trajectory_set(manifest, base_dir=tmp_path)


def test_unit_mismatch_rejected(tmp_path, small_ts):
    path = tmp_path / "u.dspc"
    dataset.save_trajectory_set(small_ts, path)
    manifest = dataset.read_manifest(str(path) + ".manifest.json")
    manifest.units = {"length": "m", "time": "ms"}
    with pytest.raises(UnitMismatch):
        dataset.load_trajectory_set(manifest, base_dir=tmp_path)


def test_non_finite_positions_located():
    ts = make_ts(n_nodes=3, n_runs=2, n_steps=5)
    bad = ts.positions.copy()
    bad[1, 1, 3, 2] = np.nan
    with pytest.raises(NonFiniteValue) as err:
        dataset.TrajectorySet(ts.node_ids, ts.part_ids, ts.dt_index, bad)
    assert "node 11" in str(err.value)
    assert "run 1" in str(err.value)
    assert "timestep 3" in str(err.value)


def test_initial_configuration_must_match():
    ts = make_ts(n_nodes=3, n_runs=2, n_steps=5)
    bad = ts.positions.copy()
    bad[2, 1, 0, 0] += 1e-9
    with pytest.raises(InconsistentInitialState) as err:
        dataset.TrajectorySet(ts.node_ids, ts.part_ids, ts.dt_index, bad)
    assert "12" in str(err.value)


def test_single_run_rejected():
    ts = make_ts(n_nodes=3, n_runs=2, n_steps=5)
    with pytest.raises(SingleRun):
        dataset.TrajectorySet(ts.node_ids, ts.part_ids, ts.dt_index,
                              ts.positions[:, :1])


def test_empty_dataset_rejected(tmp_path):
    with pytest.raises(EmptyDataset):
        dataset.write_container(tmp_path / "e.dspc", np.empty(0, dtype=np.int64),
                                np.empty(0, dtype=np.int64), np.arange(3.0),
                                np.empty((0, 2, 3, 3)))


def test_missing_run_file(tmp_path):
    manifest = dataset.DatasetManifest("gone", ["nope.dspc"], 5)
    with pytest.raises(IoFailure):
        dataset.load_trajectory_set(manifest, base_dir=tmp_path)


def test_corrupt_magic_rejected(tmp_path, small_ts):
    path = tmp_path / "c.dspc"
    dataset.save_trajectory_set(small_ts, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionMismatch):
        dataset.read_container(path)


def test_positions_immutable(small_ts):
    with pytest.raises(ValueError):
        small_ts.positions[0, 0, 0, 0] = 1.0


def test_o1_addressing(small_ts):
    # dense array indexable by (node, run, timestep, axis)
    assert small_ts.positions[2, 1, 3, 0] == small_ts.positions[2][1][3][0]
    assert small_ts.positions.shape == (4, 3, 12, 3)


def test_csv_import(tmp_path):
    ts = make_ts(n_nodes=2, n_runs=2, n_steps=3)
    rows = ["node_id,part_id,run,time_ms,x,y,z"]
    for ni, nid in enumerate(ts.node_ids):
        for run in range(2):
            for k in range(3):
                x, y, z = (float(v) for v in ts.positions[ni, run, k])
                rows.append(f"{nid},{ts.part_ids[ni]},{run},{float(ts.dt_index[k])!r},"
                            f"{x!r},{y!r},{z!r}")
    path = tmp_path / "fixture.csv"
    path.write_text("\n".join(rows) + "\n")
    loaded = dataset.load_trajectory_csv(path)
    assert loaded.identical(ts)


def test_csv_import_incomplete_grid_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("node_id,part_id,run,time_ms,x,y,z\n"
                    "1,1,0,0.0,0,0,0\n1,1,0,1.0,0,0,0\n"
                    "1,1,1,0.0,0,0,0\n")
    with pytest.raises(MismatchedNodeSet):
        dataset.load_trajectory_csv(path)
