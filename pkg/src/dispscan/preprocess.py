"""Preprocessing: rigid-motion removal, dispersion labeling, filtering.

Labeling rule: a node is dispersed when the range (max - min) of its
x position across runs, measured at the peak response timestep, strictly
exceeds the threshold (default 5 mm).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import TrajectorySet
from .errors import (
    DegenerateGeometry,
    EmptyClass,
    EmptyDataset,
    OutOfRange,
    SingleRun,
    UnknownPartId,
)

AXES = {"x": 0, "y": 1, "z": 2}

PEAK_RULE_MAX_DISPLACEMENT = "max_mean_abs_displacement"
PEAK_RULE_EXPLICIT = "explicit_timestep"


@dataclass(frozen=True)
class LabelingConfig:
    threshold_mm: float = 5.0
    axis: str = "x"
    peak_rule: str = PEAK_RULE_MAX_DISPLACEMENT
    explicit_step: int | None = None

    def __post_init__(self):
        if self.threshold_mm <= 0:
            raise ValueError("threshold must be positive")
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}")
        if self.peak_rule not in (PEAK_RULE_MAX_DISPLACEMENT, PEAK_RULE_EXPLICIT):
            raise ValueError(f"unknown peak rule {self.peak_rule!r}")
        if self.peak_rule == PEAK_RULE_EXPLICIT and self.explicit_step is None:
            raise ValueError("explicit peak rule needs explicit_step")


@dataclass(frozen=True)
class DispersionLabel:
    node_id: int
    part_id: int
    y: int
    spread_mm: float
    peak_timestep: int


def remove_rigid_body_motion(ts):
    """Strip the best-fit rigid transform per (run, timestep).

    For every frame the least-squares rotation + translation mapping the
    initial configuration onto the current one (Kabsch, with reflection
    correction) is inverted out, leaving deformation-only motion
    expressed in the initial frame.
    """
    if ts.n_nodes < 3:
        raise DegenerateGeometry("need at least 3 nodes for a rigid fit")
    initial = ts.positions[:, 0, 0, :]
    c0 = initial.mean(axis=0)
    centered0 = initial - c0
    sv = np.linalg.svd(centered0, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateGeometry("initial node cloud is collinear or coincident")

    out = np.empty_like(ts.positions)
    for run in range(ts.n_runs):
        for k in range(ts.n_timesteps):
            frame = ts.positions[:, run, k, :]
            ck = frame.mean(axis=0)
            h = centered0.T @ (frame - ck)
            u, _, vt = np.linalg.svd(h)
            rot = (u * np.array([1.0, 1.0, np.linalg.det(u @ vt)])) @ vt
            # frame ~= centered0 @ rot + ck; invert the fitted transform
            out[:, run, k, :] = (frame - ck) @ rot.T + c0
    return TrajectorySet(ts.node_ids, ts.part_ids, ts.dt_index, out)


def compute_peak_timestep(ts, cfg):
    """Timestep of peak structural response."""
    if cfg.peak_rule == PEAK_RULE_EXPLICIT:
        step = int(cfg.explicit_step)
        if not 0 <= step < ts.n_timesteps:
            raise OutOfRange(f"explicit peak step {step} outside [0, {ts.n_timesteps})")
        return step
    ax = AXES[cfg.axis]
    disp = np.abs(ts.positions[:, :, :, ax] - ts.positions[:, :, :1, ax])
    return int(np.argmax(disp.mean(axis=(0, 1))))


def label_dispersion(ts, cfg):
    """Per-node binary dispersion labels from the cross-run x spread."""
    if ts.n_runs < 2:
        raise SingleRun("dispersion is undefined for a single run")
    peak = compute_peak_timestep(ts, cfg)
    ax = AXES[cfg.axis]
    at_peak = ts.positions[:, :, peak, ax]
    spreads = np.ptp(at_peak, axis=1)
    return [
        DispersionLabel(int(nid), int(pid), int(spread > cfg.threshold_mm),
                        float(spread), peak)
        for nid, pid, spread in zip(ts.node_ids, ts.part_ids, spreads)
    ]


def balance_classes(labels, rng_seed):
    """Node ids of the minority class plus an equal-size seeded subsample
    of the majority class, in the original label order."""
    ones = [lb.node_id for lb in labels if lb.y == 1]
    zeros = [lb.node_id for lb in labels if lb.y == 0]
    if not ones or not zeros:
        raise EmptyClass("both classes must be present to balance")
    minority, majority = (ones, zeros) if len(ones) <= len(zeros) else (zeros, ones)
    rng = np.random.default_rng(rng_seed)
    picked = rng.choice(len(majority), size=len(minority), replace=False)
    keep = set(minority) | {majority[i] for i in picked}
    return [lb.node_id for lb in labels if lb.node_id in keep]


def filter_parts(ts, excluded_parts):
    """Drop nodes belonging to excluded parts, preserving node order."""
    excluded = {int(p) for p in excluded_parts}
    known = set(int(p) for p in np.unique(ts.part_ids))
    unknown = excluded - known
    if unknown:
        raise UnknownPartId(f"part ids not present in dataset: {sorted(unknown)}")
    if not excluded:
        return ts
    mask = ~np.isin(ts.part_ids, sorted(excluded))
    if not mask.any():
        raise EmptyDataset("excluding these parts removes every node")
    return TrajectorySet(ts.node_ids[mask], ts.part_ids[mask], ts.dt_index,
                         ts.positions[mask])


def select_nodes(ts, node_ids):
    """Subset to the given node ids, preserving dataset order."""
    wanted = set(int(i) for i in node_ids)
    mask = np.array([int(i) in wanted for i in ts.node_ids])
    if not mask.any():
        raise EmptyDataset("node selection is empty")
    return TrajectorySet(ts.node_ids[mask], ts.part_ids[mask], ts.dt_index,
                         ts.positions[mask])


def truncate_timesteps(ts, t_max):
    """Keep timesteps [0, t_max)."""
    if not 2 <= t_max <= ts.n_timesteps:
        raise OutOfRange(f"t_max {t_max} outside [2, {ts.n_timesteps}]")
    if t_max == ts.n_timesteps:
        return ts
    return TrajectorySet(ts.node_ids, ts.part_ids, ts.dt_index[:t_max],
                         ts.positions[:, :, :t_max, :])


def write_labels_csv(labels, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "part_id", "y", "spread_mm", "peak_timestep"])
        for lb in labels:
            writer.writerow([lb.node_id, lb.part_id, lb.y, repr(lb.spread_mm),
                             lb.peak_timestep])
