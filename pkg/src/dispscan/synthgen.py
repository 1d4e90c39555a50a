"""Synthetic multi-run trajectory generator with known dispersion labels.

Every node follows a shared crash-like displacement profile along x (ramp
to a plateau at the planted peak step, mild rebound after), plus smooth
node-specific variation that is identical across runs. Run-to-run
variation comes from two sources:

* bounded smooth noise per (node, run), for every node;
* for dispersed nodes only, a branch term: runs draw tiny perturbations
  whose rank order is amplified onto a symmetric grid of saturation
  amplitudes, so trajectories separate monotonically after an onset step
  and reach the configured spread exactly at the peak.

Amplitude grids exclude a band around zero, so every single run of a
dispersed node carries a visible branch signature, and spreads at peak
are guaranteed margins away from the labeling threshold on both sides.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .dataset import TrajectorySet
from .errors import InfeasibleConfig


@dataclass(frozen=True)
class RigidMotionProfile:
    """Whole-vehicle motion composed on top of all deformations."""

    axis: tuple = (0.0, 0.0, 1.0)
    max_angle_deg: float = 10.0
    translation_mm: tuple = (500.0, 80.0, 40.0)


@dataclass(frozen=True)
class SynthConfig:
    n_nodes: int = 200
    n_runs: int = 10
    timesteps: int = 289
    dt_ms: float = 1.0
    dispersed_fraction: float = 0.5
    perturbation_mm: float = 1e-6
    dispersed_spread_mm: tuple = (12.0, 50.0)
    noise_floor_mm: float = 0.1
    base_amplitude_mm: tuple = (20.0, 60.0)
    wiggle_amplitude_mm: float = 2.0
    branch_center_frac: tuple = (0.40, 0.75)
    branch_tau_steps: tuple = (2.0, 5.0)
    branch_min_level_frac: float = 0.15
    peak_step: int = 220
    threshold_mm: float = 5.0
    rigid_motion: RigidMotionProfile | None = None
    n_parts: int = 4
    seed: int = 0


def _validate(cfg):
    if cfg.n_nodes < 2:
        raise InfeasibleConfig("need at least 2 nodes")
    if cfg.n_runs < 2:
        raise InfeasibleConfig("need at least 2 runs")
    if not 0.0 < cfg.dispersed_fraction < 1.0:
        raise InfeasibleConfig("dispersed_fraction must lie in (0, 1)")
    if cfg.perturbation_mm <= 0.0:
        raise InfeasibleConfig("perturbation scale must be positive; "
                               "zero perturbations cannot branch")
    if not 0 < cfg.peak_step < cfg.timesteps:
        raise InfeasibleConfig("peak step must lie inside the time grid")
    if cfg.dt_ms <= 0:
        raise InfeasibleConfig("dt must be positive")
    lo, hi = cfg.dispersed_spread_mm
    if not 0 < lo <= hi:
        raise InfeasibleConfig("invalid dispersed spread range")
    # margins must make ground truth unambiguous on both sides
    if lo - 2.0 * cfg.noise_floor_mm <= 2.0 * cfg.threshold_mm:
        raise InfeasibleConfig(
            f"minimum dispersed spread {lo} mm too close to threshold "
            f"{cfg.threshold_mm} mm given noise floor {cfg.noise_floor_mm} mm")
    if 2.0 * cfg.noise_floor_mm >= 0.5 * cfg.threshold_mm:
        raise InfeasibleConfig(
            f"noise floor {cfg.noise_floor_mm} mm too large for threshold "
            f"{cfg.threshold_mm} mm")
    if not 0.0 < cfg.branch_min_level_frac < 0.5:
        raise InfeasibleConfig("branch_min_level_frac must lie in (0, 0.5)")
    n_disp = int(round(cfg.dispersed_fraction * cfg.n_nodes))
    if n_disp < 1 or n_disp > cfg.n_nodes - 1:
        raise InfeasibleConfig("dispersed fraction leaves a class empty")
    return n_disp


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _smooth_series(rng, t_norm, n_modes):
    """Low-order random Fourier series, zero at t=0, max abs 1."""
    out = np.zeros_like(t_norm)
    for m in range(1, n_modes + 1):
        a, b = rng.normal(size=2)
        out += a * np.cos(2.0 * np.pi * m * t_norm) + b * np.sin(2.0 * np.pi * m * t_norm)
    out -= out[0]
    top = np.max(np.abs(out))
    if top > 0:
        out /= top
    return out


def _branch_levels(n_runs, min_frac):
    """Saturation amplitudes as fractions of the spread, range exactly 1."""
    n_pos = (n_runs + 1) // 2
    n_neg = n_runs - n_pos
    pos = np.linspace(min_frac, 0.5, n_pos) if n_pos > 1 else np.array([0.5])
    neg = -np.linspace(min_frac, 0.5, n_neg) if n_neg > 1 else np.array([-0.5])
    return np.sort(np.concatenate([neg, pos]))


def _rotation_matrix(axis, angle_rad):
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle_rad) * k + (1.0 - math.cos(angle_rad)) * (k @ k)


def generate(cfg):
    """Build a labeled dataset; returns (TrajectorySet, labels 0/1 per node)."""
    n_disp = _validate(cfg)
    n, r, t = cfg.n_nodes, cfg.n_runs, cfg.timesteps
    peak = cfg.peak_step
    dt_index = np.arange(t, dtype=np.float64) * cfg.dt_ms
    steps = np.arange(t, dtype=np.float64)
    t_norm = steps / (t - 1)

    rng_global = np.random.default_rng([cfg.seed, 0xD15B])
    dispersed = np.zeros(n, dtype=bool)
    dispersed[rng_global.permutation(n)[:n_disp]] = True

    # shared profile: smooth rise to 1 at the peak, 25% rebound afterwards
    profile = np.empty(t)
    profile[:peak + 1] = _smoothstep(steps[:peak + 1] / peak)
    if peak < t - 1:
        profile[peak + 1:] = 1.0 - 0.25 * _smoothstep(
            (steps[peak + 1:] - peak) / (t - 1 - peak))

    levels = _branch_levels(r, cfg.branch_min_level_frac)
    node_ids = 1000 + np.arange(n, dtype=np.int64)
    part_ids = (np.arange(n, dtype=np.int64) % cfg.n_parts) + 1
    positions = np.empty((n, r, t, 3))
    labels = dispersed.astype(np.int8)

    for i in range(n):
        rng = np.random.default_rng([cfg.seed, int(i)])
        origin = np.array([rng.uniform(0.0, 3000.0),
                           rng.uniform(-800.0, 800.0),
                           rng.uniform(0.0, 1200.0)])
        amp_x = rng.uniform(*cfg.base_amplitude_mm)
        shape_q = rng.uniform(0.6, 1.8)
        base_x = amp_x * profile ** shape_q
        base_y = rng.uniform(0.1, 0.4) * amp_x * profile ** rng.uniform(0.6, 1.8)
        base_z = rng.uniform(0.1, 0.4) * amp_x * profile ** rng.uniform(0.6, 1.8)
        base = np.stack([base_x, base_y, base_z], axis=-1)

        # wiggles stay lower-frequency than branch onsets so slope features
        # separate the two by shape
        wig_scale = cfg.wiggle_amplitude_mm * rng.uniform(0.3, 1.0, size=3)
        wiggle = np.stack([_smooth_series(rng, t_norm, 2) * wig_scale[a]
                           for a in range(3)], axis=-1)

        branch = np.zeros((r, t))
        if dispersed[i]:
            spread = rng.uniform(*cfg.dispersed_spread_mm)
            center = rng.uniform(*cfg.branch_center_frac) * peak
            tau = rng.uniform(*cfg.branch_tau_steps)
            raw = 1.0 / (1.0 + np.exp(-(steps - center) / tau))
            g = (raw - raw[0]) / (raw[peak] - raw[0])
            perturb = rng.uniform(-cfg.perturbation_mm, cfg.perturbation_mm, size=r)
            if np.unique(perturb).size < r:
                raise InfeasibleConfig(
                    "tied run perturbations; increase perturbation scale")
            amps = np.empty(r)
            amps[np.argsort(perturb)] = spread * levels
            branch = amps[:, None] * g[None, :]

        for run in range(r):
            noise_scale = cfg.noise_floor_mm * rng.uniform(0.3, 1.0, size=3)
            noise = np.stack([_smooth_series(rng, t_norm, 4) * noise_scale[a]
                              for a in range(3)], axis=-1)
            positions[i, run] = origin + base + wiggle + noise
            positions[i, run, :, 0] += branch[run]

    # realized spreads must sit strictly inside the configured margins
    spread_at_peak = np.ptp(positions[:, :, peak, 0], axis=1)
    if np.any(spread_at_peak[dispersed] <= 2.0 * cfg.threshold_mm):
        raise InfeasibleConfig("a dispersed node missed its spread margin")
    if np.any(spread_at_peak[~dispersed] >= 0.5 * cfg.threshold_mm):
        raise InfeasibleConfig("a stable node exceeded its spread margin")

    if cfg.rigid_motion is not None:
        prof = cfg.rigid_motion
        centroid = positions[:, 0, 0, :].mean(axis=0)
        ramp = _smoothstep(t_norm)
        shift = np.asarray(prof.translation_mm)
        for k in range(t):
            rot = _rotation_matrix(prof.axis, math.radians(prof.max_angle_deg) * ramp[k])
            moved = (positions[:, :, k, :] - centroid) @ rot.T + centroid + ramp[k] * shift
            positions[:, :, k, :] = moved

    return TrajectorySet(node_ids, part_ids, dt_index, positions), labels


def generate_suite(base_cfg, seeds):
    """One dataset per seed, all sharing the base config's shape."""
    return [generate(replace(base_cfg, seed=int(s))) for s in seeds]
