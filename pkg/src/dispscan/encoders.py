"""Per-node signal encodings and the trajectory-crossing diagnostic.

Each encoder turns one (node, run) trajectory into a fixed-length feature
row: relative displacement over all three axes, one-sided Fourier
magnitudes, multi-level db4 wavelet coefficients, or slope variations
between successive stored timesteps. Crossing counts need several runs
of the same node and therefore stay a diagnostic, not a classifier input.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import wavelets
from .errors import (
    DimensionMismatch,
    IoFailure,
    SingleRun,
    TooShortForLevels,
    VersionMismatch,
    ZeroTimeIncrement,
)
from .preprocess import AXES

KIND_DISPLACEMENT = "displacement"
KIND_FOURIER = "fourier"
KIND_WAVELET = "wavelet"
KIND_SLOPE = "slope"
KINDS = (KIND_DISPLACEMENT, KIND_FOURIER, KIND_WAVELET, KIND_SLOPE)


@dataclass(frozen=True)
class FeatureScaling:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class FeatureMatrix:
    kind: str
    samples: np.ndarray          # (n_samples, D)
    node_ids: np.ndarray         # (n_samples,)
    run_ids: np.ndarray          # (n_samples,)
    scaling: FeatureScaling | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise DimensionMismatch("feature samples must be 2-D")
        if not np.isfinite(self.samples).all():
            raise ValueError("feature matrix contains non-finite entries")
        if len(self.node_ids) != len(self.samples) or len(self.run_ids) != len(self.samples):
            raise DimensionMismatch("sample index does not match rows")

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def rows_for_runs(self, runs):
        """Subset of rows whose run id is in ``runs``."""
        mask = np.isin(self.run_ids, np.asarray(sorted(runs)))
        return FeatureMatrix(self.kind, self.samples[mask], self.node_ids[mask],
                             self.run_ids[mask], self.scaling, dict(self.meta))


@dataclass(frozen=True)
class WaveletConfig:
    levels: int | None = None          # default: deepest meaningful depth
    mode: str = "symmetric"

    def __post_init__(self):
        if self.mode not in wavelets.MODES:
            raise ValueError(f"unknown wavelet mode {self.mode!r}")
        if self.levels is not None and self.levels < 1:
            raise ValueError("levels must be >= 1")


def _sample_index(ts):
    nodes = np.repeat(ts.node_ids, ts.n_runs)
    runs = np.tile(np.arange(ts.n_runs, dtype=np.int32), ts.n_nodes)
    return nodes, runs


def _axis_displacement(ts, axis):
    sig = ts.positions[:, :, :, AXES[axis]]
    return sig - sig[:, :, :1]


def encode_displacement(ts):
    """Concatenated (dx, dy, dz) per timestep relative to t=0; D = 3T."""
    disp = ts.positions - ts.positions[:, :, :1, :]
    rows = disp.reshape(ts.n_nodes * ts.n_runs, ts.n_timesteps * 3)
    nodes, runs = _sample_index(ts)
    return FeatureMatrix(KIND_DISPLACEMENT, rows, nodes, runs,
                         meta={"timesteps": ts.n_timesteps})


def magnitude_spectrum(signal):
    """One-sided DFT magnitudes |X_k|, k = 0..floor(T/2), last axis."""
    return np.abs(np.fft.rfft(np.asarray(signal, dtype=np.float64), axis=-1))


def encode_fourier(ts, axis="x"):
    """Magnitude spectrum of the axis displacement; D = floor(T/2)+1."""
    mags = magnitude_spectrum(_axis_displacement(ts, axis))
    rows = mags.reshape(ts.n_nodes * ts.n_runs, -1)
    nodes, runs = _sample_index(ts)
    return FeatureMatrix(KIND_FOURIER, rows, nodes, runs,
                         meta={"axis": axis, "timesteps": ts.n_timesteps})


def encode_wavelet(ts, axis="x", cfg=WaveletConfig()):
    """db4 coefficients [aL, dL, ..., d1] of the axis displacement."""
    levels = cfg.levels if cfg.levels is not None else wavelets.default_levels(ts.n_timesteps)
    if levels < 1:
        raise TooShortForLevels(
            f"{ts.n_timesteps} timesteps cannot support a decomposition level")
    wavelets.level_lengths(ts.n_timesteps, levels)
    sig = _axis_displacement(ts, axis).reshape(ts.n_nodes * ts.n_runs, ts.n_timesteps)
    coeffs = wavelets.wavedec(sig, levels, cfg.mode)
    rows = np.concatenate(coeffs, axis=-1)
    nodes, runs = _sample_index(ts)
    return FeatureMatrix(KIND_WAVELET, rows, nodes, runs,
                         meta={"axis": axis, "levels": levels, "mode": cfg.mode,
                               "timesteps": ts.n_timesteps})


def encode_slope(ts, axis="x"):
    """First differences over the actual time increments (mm/ms); D = T-1."""
    dt = np.diff(ts.dt_index)
    if np.any(dt == 0.0):
        raise ZeroTimeIncrement("time grid contains a zero increment")
    sig = _axis_displacement(ts, axis)
    slopes = np.diff(sig, axis=-1) / dt
    rows = slopes.reshape(ts.n_nodes * ts.n_runs, ts.n_timesteps - 1)
    nodes, runs = _sample_index(ts)
    return FeatureMatrix(KIND_SLOPE, rows, nodes, runs,
                         meta={"axis": axis, "timesteps": ts.n_timesteps})


def count_crossings(ts, node_id, axis="x"):
    """Cumulative trajectory crossings over all run pairs of one node.

    A crossing at step t > 0 is a strict sign change of the pair
    difference relative to its last nonzero sign; exact ties carry the
    previous sign state and never count.
    """
    if ts.n_runs < 2:
        raise SingleRun("crossings need at least two runs")
    idx = np.nonzero(ts.node_ids == node_id)[0]
    if idx.size == 0:
        raise KeyError(f"node id {node_id} not in dataset")
    sig = ts.positions[idx[0], :, :, AXES[axis]]
    r, t = sig.shape
    ii, jj = np.triu_indices(r, k=1)
    delta = sig[ii] - sig[jj]
    sign = np.sign(delta)
    # carry last nonzero sign forward along time
    filled = sign.copy()
    for k in range(1, t):
        zero = filled[:, k] == 0
        filled[zero, k] = filled[zero, k - 1]
    events = (sign[:, 1:] != 0) & (filled[:, :-1] != 0) & (sign[:, 1:] != filled[:, :-1])
    counts = np.zeros(t, dtype=np.int64)
    counts[1:] = np.cumsum(events.sum(axis=0))
    return counts


def normalize_features(fm, scaling=None):
    """Per-feature standardization; returns (normalized matrix, scaling).

    Without ``scaling`` the statistics are computed from ``fm`` itself
    (training set); pass training statistics to transform held-out data.
    """
    if scaling is None:
        mean = fm.samples.mean(axis=0)
        std = np.maximum(fm.samples.std(axis=0), 1e-12)
        scaling = FeatureScaling(mean, std)
    else:
        if scaling.mean.shape != (fm.dim,) or scaling.std.shape != (fm.dim,):
            raise DimensionMismatch(
                f"scaling is for dimension {scaling.mean.shape[0]}, features have {fm.dim}")
    rows = (fm.samples - scaling.mean) / scaling.std
    out = FeatureMatrix(fm.kind, rows, fm.node_ids, fm.run_ids, scaling, dict(fm.meta))
    return out, scaling


FEATURE_MAGIC = b"DSPX"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIIII")
_KIND_CODES = {k: i for i, k in enumerate(KINDS)}


def save_features(fm, path):
    """Binary container (header + row-major f64) plus JSON sidecar."""
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, fm.n_samples,
                                  fm.dim, _KIND_CODES[fm.kind])
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            np.ascontiguousarray(fm.node_ids, dtype="<i8").tofile(fh)
            np.ascontiguousarray(fm.run_ids, dtype="<i4").tofile(fh)
            if fm.scaling is not None:
                np.ascontiguousarray(fm.scaling.mean, dtype="<f8").tofile(fh)
                np.ascontiguousarray(fm.scaling.std, dtype="<f8").tofile(fh)
            np.ascontiguousarray(fm.samples, dtype="<f8").tofile(fh)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    sidecar = {"kind": fm.kind, "n_samples": fm.n_samples, "dim": fm.dim,
               "scaled": fm.scaling is not None, "meta": fm.meta}
    with open(str(path) + ".meta.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_features(path):
    try:
        with open(str(path) + ".meta.json") as fh:
            sidecar = json.load(fh)
        with open(path, "rb") as fh:
            raw = fh.read(_FEATURE_HEADER.size)
            if len(raw) < _FEATURE_HEADER.size:
                raise VersionMismatch(f"{path}: truncated header")
            magic, version, n, dim, kind_code = _FEATURE_HEADER.unpack(raw)
            if magic != FEATURE_MAGIC or version != FEATURE_VERSION:
                raise VersionMismatch(f"{path}: bad magic or version")
            node_ids = np.fromfile(fh, dtype="<i8", count=n)
            run_ids = np.fromfile(fh, dtype="<i4", count=n)
            scaling = None
            if sidecar.get("scaled"):
                mean = np.fromfile(fh, dtype="<f8", count=dim)
                std = np.fromfile(fh, dtype="<f8", count=dim)
                scaling = FeatureScaling(mean, std)
            samples = np.fromfile(fh, dtype="<f8", count=n * dim).reshape(n, dim)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return FeatureMatrix(KINDS[kind_code], samples, node_ids, run_ids, scaling,
                         dict(sidecar.get("meta", {})))
