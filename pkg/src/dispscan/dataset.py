"""Trajectory data model and on-disk interchange format.

A dataset holds the trajectories of every retained node for R repeated
runs of one crash scenario, as a dense (node, run, timestep, axis) array
in millimetres. Runs of one scenario share node ids, part ids, the time
grid, and the exact initial configuration.

On disk a dataset is a little-endian binary container (magic ``DSPC``)
holding one or more runs, plus a JSON manifest listing the run files.
Text fixtures can be imported from CSV.
"""

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyDataset,
    InconsistentInitialState,
    IoFailure,
    MismatchedNodeSet,
    NonFiniteValue,
    SingleRun,
    UnitMismatch,
    VersionMismatch,
)

MAGIC = b"DSPC"
FORMAT_VERSION = 1

LENGTH_UNIT_CODES = {"mm": 1}
TIME_UNIT_CODES = {"ms": 1}
_LENGTH_NAMES = {v: k for k, v in LENGTH_UNIT_CODES.items()}
_TIME_NAMES = {v: k for k, v in TIME_UNIT_CODES.items()}

_HEADER = struct.Struct("<4sIIIIII")


@dataclass(frozen=True)
class TrajectorySet:
    """All node trajectories for all runs of one scenario.

    positions has shape (n_nodes, n_runs, n_timesteps, 3) with axes
    x (longitudinal), y (lateral, positive left), z (up), in mm.
    """

    node_ids: np.ndarray
    part_ids: np.ndarray
    dt_index: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "node_ids", np.ascontiguousarray(self.node_ids, dtype=np.int64))
        object.__setattr__(self, "part_ids", np.ascontiguousarray(self.part_ids, dtype=np.int64))
        object.__setattr__(self, "dt_index", np.ascontiguousarray(self.dt_index, dtype=np.float64))
        object.__setattr__(self, "positions", np.ascontiguousarray(self.positions, dtype=np.float64))
        self._validate()
        for arr in (self.node_ids, self.part_ids, self.dt_index, self.positions):
            arr.flags.writeable = False

    def _validate(self):
        n, r, t, ax = self.positions.shape
        if n == 0:
            raise EmptyDataset("dataset has no nodes")
        if ax != 3:
            raise ValueError("positions must have 3 spatial components")
        if r < 2:
            raise SingleRun(f"need at least 2 runs, got {r}")
        if t < 2:
            raise ValueError(f"need at least 2 timesteps, got {t}")
        if self.node_ids.shape != (n,) or self.part_ids.shape != (n,):
            raise ValueError("node_ids/part_ids do not match positions")
        if len(np.unique(self.node_ids)) != n:
            raise ValueError("node_ids must be unique")
        if self.dt_index.shape != (t,):
            raise ValueError("dt_index does not match positions")
        if np.any(np.diff(self.dt_index) <= 0):
            raise ValueError("dt_index must be strictly increasing")
        bad = ~np.isfinite(self.positions)
        if bad.any():
            ni, ri, ti, _ = np.argwhere(bad)[0]
            raise NonFiniteValue(
                f"non-finite position at node {self.node_ids[ni]}, run {ri}, timestep {ti}")
        first = self.positions[:, :1, 0, :]
        if not np.array_equal(np.broadcast_to(first, self.positions[:, :, 0, :].shape),
                              self.positions[:, :, 0, :]):
            off = np.any(self.positions[:, :, 0, :] != first, axis=(1, 2))
            ids = self.node_ids[off][:10].tolist()
            raise InconsistentInitialState(
                f"initial positions differ across runs for nodes {ids}"
                + (" ..." if off.sum() > 10 else ""))

    @property
    def n_nodes(self):
        return self.positions.shape[0]

    @property
    def n_runs(self):
        return self.positions.shape[1]

    @property
    def n_timesteps(self):
        return self.positions.shape[2]

    def identical(self, other):
        """Bit-exact equality, used by round-trip tests."""
        return (
            np.array_equal(self.node_ids, other.node_ids)
            and np.array_equal(self.part_ids, other.part_ids)
            and np.array_equal(self.dt_index, other.dt_index)
            and np.array_equal(self.positions, other.positions)
        )


@dataclass
class DatasetManifest:
    scenario: str
    runs: list
    timesteps: int
    units: dict = field(default_factory=lambda: {"length": "mm", "time": "ms"})
    excluded_parts: list = field(default_factory=list)

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "runs": list(self.runs),
            "timesteps": int(self.timesteps),
            "units": dict(self.units),
            "excluded_parts": [int(p) for p in self.excluded_parts],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scenario=d["scenario"],
            runs=list(d["runs"]),
            timesteps=int(d["timesteps"]),
            units=dict(d.get("units", {"length": "mm", "time": "ms"})),
            excluded_parts=list(d.get("excluded_parts", [])),
        )


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    try:
        with open(path) as fh:
            return DatasetManifest.from_dict(json.load(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc


def write_container(path, node_ids, part_ids, dt_index, positions,
                    length_unit="mm", time_unit="ms"):
    """Write a raw run container. positions: (N, R, T, 3), R >= 1."""
    node_ids = np.ascontiguousarray(node_ids, dtype="<i8")
    part_ids = np.ascontiguousarray(part_ids, dtype="<i8")
    dt_index = np.ascontiguousarray(dt_index, dtype="<f8")
    positions = np.ascontiguousarray(positions, dtype="<f8")
    n, r, t, _ = positions.shape
    if n == 0:
        raise EmptyDataset("refusing to write a dataset with no nodes")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, n, r, t,
                          LENGTH_UNIT_CODES[length_unit], TIME_UNIT_CODES[time_unit])
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            node_ids.tofile(fh)
            part_ids.tofile(fh)
            dt_index.tofile(fh)
            positions.tofile(fh)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_container(path):
    """Read a run container; returns (node_ids, part_ids, dt, positions, units)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read(_HEADER.size)
            if len(raw) < _HEADER.size:
                raise VersionMismatch(f"{path}: truncated header")
            magic, version, n, r, t, lu, tu = _HEADER.unpack(raw)
            if magic != MAGIC:
                raise VersionMismatch(f"{path}: bad magic {magic!r}")
            if version != FORMAT_VERSION:
                raise VersionMismatch(f"{path}: unsupported version {version}")
            if lu not in _LENGTH_NAMES or tu not in _TIME_NAMES:
                raise UnitMismatch(f"{path}: unknown unit codes ({lu}, {tu})")
            node_ids = np.fromfile(fh, dtype="<i8", count=n)
            part_ids = np.fromfile(fh, dtype="<i8", count=n)
            dt_index = np.fromfile(fh, dtype="<f8", count=t)
            positions = np.fromfile(fh, dtype="<f8", count=n * r * t * 3)
            if positions.size != n * r * t * 3:
                raise VersionMismatch(f"{path}: truncated payload")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    units = {"length": _LENGTH_NAMES[lu], "time": _TIME_NAMES[tu]}
    return node_ids, part_ids, dt_index, positions.reshape(n, r, t, 3), units


def save_trajectory_set(ts, path, scenario="unnamed"):
    """Write one multi-run container plus sidecar manifest.

    Reloading through the manifest reproduces ``ts`` bit-exactly.
    """
    write_container(path, ts.node_ids, ts.part_ids, ts.dt_index, ts.positions)
    manifest = DatasetManifest(scenario=scenario, runs=[os.path.basename(path)],
                               timesteps=ts.n_timesteps)
    write_manifest(manifest, str(path) + ".manifest.json")


def load_trajectory_set(manifest, base_dir=None):
    """Assemble a validated TrajectorySet from the manifest's run files.

    ``manifest`` may be a DatasetManifest or a path to one. Runs are
    concatenated in manifest order; every file must agree on node ids,
    part ids, time grid, and units.
    """
    if not isinstance(manifest, DatasetManifest):
        if base_dir is None:
            base_dir = os.path.dirname(os.path.abspath(manifest))
        manifest = read_manifest(manifest)
    base_dir = base_dir or "."

    blocks = []
    ref_nodes = ref_parts = ref_dt = None
    for rel in manifest.runs:
        path = rel if os.path.isabs(rel) else os.path.join(base_dir, rel)
        if not os.path.exists(path):
            raise IoFailure(f"run file missing: {path}")
        node_ids, part_ids, dt_index, positions, units = read_container(path)
        if units != manifest.units:
            raise UnitMismatch(f"{path}: file units {units} != manifest units {manifest.units}")
        if positions.shape[2] != manifest.timesteps:
            raise MismatchedNodeSet(
                f"{path}: {positions.shape[2]} timesteps, manifest declares {manifest.timesteps}")
        if ref_nodes is None:
            ref_nodes, ref_parts, ref_dt = node_ids, part_ids, dt_index
        else:
            if not np.array_equal(node_ids, ref_nodes):
                missing = np.setdiff1d(ref_nodes, node_ids)[:10].tolist()
                extra = np.setdiff1d(node_ids, ref_nodes)[:10].tolist()
                raise MismatchedNodeSet(
                    f"{path}: node set differs (missing {missing}, extra {extra})")
            if not np.array_equal(part_ids, ref_parts):
                raise MismatchedNodeSet(f"{path}: part ids differ from first run file")
            if not np.array_equal(dt_index, ref_dt):
                raise MismatchedNodeSet(f"{path}: time grid differs from first run file")
        blocks.append(positions)
    if not blocks:
        raise EmptyDataset("manifest lists no run files")
    positions = np.concatenate(blocks, axis=1)
    return TrajectorySet(ref_nodes, ref_parts, ref_dt, positions)


def load_trajectory_csv(path):
    """Import a small hand-written fixture.

    Expected header: node_id,part_id,run,time_ms,x,y,z with one row per
    (node, run, timestep) and a complete grid.
    """
    rows = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rows.append((int(row["node_id"]), int(row["part_id"]), int(row["run"]),
                             float(row["time_ms"]),
                             float(row["x"]), float(row["y"]), float(row["z"])))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")

    node_ids = sorted({r[0] for r in rows})
    runs = sorted({r[2] for r in rows})
    times = sorted({r[3] for r in rows})
    n, nr, nt = len(node_ids), len(runs), len(times)
    if len(rows) != n * nr * nt:
        raise MismatchedNodeSet(
            f"{path}: {len(rows)} rows, expected full grid of {n * nr * nt}")
    node_pos = {v: i for i, v in enumerate(node_ids)}
    run_pos = {v: i for i, v in enumerate(runs)}
    time_pos = {v: i for i, v in enumerate(times)}
    positions = np.full((n, nr, nt, 3), np.nan)
    part_ids = np.zeros(n, dtype=np.int64)
    for nid, pid, run, tm, x, y, z in rows:
        ni = node_pos[nid]
        part_ids[ni] = pid
        positions[ni, run_pos[run], time_pos[tm]] = (x, y, z)
    return TrajectorySet(np.array(node_ids, dtype=np.int64), part_ids,
                         np.array(times), positions)
