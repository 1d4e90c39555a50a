"""Encoding-vs-classifier comparison harness.

Whole runs are assigned to training or validation. The forest baseline
trains on every training run; the autoencoder path trains on a single
designated run (run lists are explicit, defaulting to the first training
run) because one new simulation is all that is available when the tool
is applied in production. Labels always come from the full run set.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import encoders, forest, rrae
from .errors import DimensionMismatch
from .evaluation import ComparisonReport, confusion
from .preprocess import truncate_timesteps
from .provenance import config_hash

CLASSIFIER_RF = "rf"
CLASSIFIER_RRAE = "rrae"
CLASSIFIERS = (CLASSIFIER_RF, CLASSIFIER_RRAE)


@dataclass(frozen=True)
class EncodingSpec:
    kind: str
    axis: str = "x"
    truncate_at: int | None = None
    wavelet_levels: int | None = None
    wavelet_mode: str = "symmetric"

    @property
    def name(self):
        if self.truncate_at is None:
            return self.kind
        return f"{self.kind}@{self.truncate_at}"

    def build(self, ts):
        if self.truncate_at is not None:
            ts = truncate_timesteps(ts, self.truncate_at)
        if self.kind == encoders.KIND_DISPLACEMENT:
            return encoders.encode_displacement(ts)
        if self.kind == encoders.KIND_FOURIER:
            return encoders.encode_fourier(ts, self.axis)
        if self.kind == encoders.KIND_WAVELET:
            cfg = encoders.WaveletConfig(self.wavelet_levels, self.wavelet_mode)
            return encoders.encode_wavelet(ts, self.axis, cfg)
        if self.kind == encoders.KIND_SLOPE:
            return encoders.encode_slope(ts, self.axis)
        raise ValueError(f"unknown encoding kind {self.kind!r}")


@dataclass(frozen=True)
class SplitConfig:
    train_runs: tuple
    val_runs: tuple
    rrae_train_runs: tuple | None = None

    def __post_init__(self):
        if not self.train_runs or not self.val_runs:
            raise ValueError("both run lists must be non-empty")
        if set(self.train_runs) & set(self.val_runs):
            raise ValueError("training and validation runs overlap")

    @property
    def resolved_rrae_runs(self):
        if self.rrae_train_runs is not None:
            return tuple(self.rrae_train_runs)
        return (self.train_runs[0],)


def row_labels(fm, labels):
    """Per-row node labels for a feature matrix."""
    mapping = {lb.node_id: lb.y for lb in labels}
    try:
        return np.array([mapping[int(n)] for n in fm.node_ids], dtype=np.int64)
    except KeyError as exc:
        raise DimensionMismatch(f"feature rows mention unlabeled node {exc}") from exc


def _fit_predict_rf(fm, labels, split, cfg):
    train = fm.rows_for_runs(split.train_runs)
    val = fm.rows_for_runs(split.val_runs)
    model = forest.fit_forest(train, row_labels(train, labels), cfg)
    _, pred = forest.predict_forest(model, val)
    return confusion(row_labels(val, labels), pred), model


def _fit_predict_rrae(fm, labels, split, hyper):
    train = fm.rows_for_runs(split.resolved_rrae_runs)
    val = fm.rows_for_runs(split.val_runs)
    model, _ = rrae.train_rrae(train, row_labels(train, labels), hyper)
    _, pred = rrae.predict_features(model, val)
    return confusion(row_labels(val, labels), pred), model


def compare_encodings(ts, labels, encoding_specs, classifiers, split,
                      rrae_hyper=None, forest_cfg=None, metadata=None,
                      keep_models=False):
    """Train every (encoding, classifier) cell under one split; returns the report."""
    rrae_hyper = rrae_hyper or rrae.RraeHyperparams()
    forest_cfg = forest_cfg or forest.ForestConfig()
    report = ComparisonReport(metadata={
        "n_nodes": ts.n_nodes, "n_runs": ts.n_runs, "n_timesteps": ts.n_timesteps,
        "train_runs": list(split.train_runs), "val_runs": list(split.val_runs),
        "rrae_train_runs": list(split.resolved_rrae_runs),
        **(metadata or {}),
    })
    models = {}
    for spec in encoding_specs:
        fm = spec.build(ts)
        for classifier in classifiers:
            cell_cfg = {"encoding": asdict(spec), "classifier": classifier,
                        "split": {"train_runs": list(split.train_runs),
                                  "val_runs": list(split.val_runs),
                                  "rrae_train_runs": list(split.resolved_rrae_runs)}}
            if classifier == CLASSIFIER_RF:
                cell_cfg["forest"] = asdict(forest_cfg)
                cm, model = _fit_predict_rf(fm, labels, split, forest_cfg)
            elif classifier == CLASSIFIER_RRAE:
                cell_cfg["rrae"] = asdict(rrae_hyper)
                cm, model = _fit_predict_rrae(fm, labels, split, rrae_hyper)
            else:
                raise ValueError(f"unknown classifier {classifier!r}")
            report.add(spec.name, classifier, cm,
                       info={"config_hash": config_hash(cell_cfg)})
            if keep_models:
                models[(spec.name, classifier)] = model
    if keep_models:
        return report, models
    return report
