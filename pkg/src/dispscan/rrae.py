"""Rank-reduction autoencoder with an MLP classifier head.

The latent batch is projected onto its top singular subspace before
decoding and classification. Training runs in three phases: joint
training with a per-batch projection basis, extraction of a fixed basis
from the full training latents, then fine-tuning of decoder and
classifier against the frozen basis while the encoder stays untouched.

Gradients treat the projection basis as a constant of the step: they
flow through the linear maps z -> z@U and back, never through the SVD
factorization itself.
"""

import json
import struct
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from .encoders import FeatureScaling
from .errors import (
    BasisAlreadyFrozen,
    BasisMissing,
    DimensionMismatch,
    InsufficientSamples,
    IoFailure,
    NonFiniteLoss,
    RankDeficiencyWarning,
    VersionMismatch,
)
from .mlp import Adam, MlpParams, bce_with_logits, init_mlp, mlp_backward, mlp_forward, sigmoid


@dataclass(frozen=True)
class RraeHyperparams:
    max_rank: int = 4
    recon_weight: float = 1.0
    cls_weight: float = 1.0
    joint_epochs: int = 100
    finetune_epochs: int = 50
    latent_dim: int = 16
    encoder_hidden: tuple = (64, 32)
    decoder_hidden: tuple = (32, 64)
    classifier_hidden: tuple = (16,)
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.max_rank <= min(self.latent_dim, self.batch_size):
            raise ValueError("need 1 <= max_rank <= min(latent_dim, batch_size)")
        if self.recon_weight < 0 or self.cls_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.recon_weight + self.cls_weight <= 0:
            raise ValueError("at least one loss weight must be positive")
        if self.joint_epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    l_recon: float
    l_cls: float
    l_total: float

    @classmethod
    def combine(cls, hyper, l_recon, l_cls):
        l_recon = float(l_recon)
        l_cls = float(l_cls)
        return cls(l_recon, l_cls,
                   hyper.recon_weight * l_recon + hyper.cls_weight * l_cls)


@dataclass
class RraeModel:
    encoder: MlpParams
    decoder: MlpParams
    classifier: MlpParams
    hyper: RraeHyperparams
    basis: np.ndarray | None = None      # (latent_dim, max_rank), frozen after phase 2
    scaling: FeatureScaling | None = None

    @property
    def input_dim(self):
        return self.encoder.input_dim


def build_model(input_dim, hyper):
    rng = np.random.default_rng([hyper.seed, 0])
    enc = init_mlp((input_dim, *hyper.encoder_hidden, hyper.latent_dim), rng)
    dec = init_mlp((hyper.max_rank, *hyper.decoder_hidden, input_dim), rng)
    cls = init_mlp((hyper.max_rank, *hyper.classifier_hidden, 1), rng)
    return RraeModel(enc, dec, cls, hyper)


def svd_project_batch(z, max_rank):
    """Project a latent batch onto its top singular subspace.

    Returns (z_r, basis) where basis holds the leading ``max_rank`` right
    singular vectors of z as columns and z_r = z @ basis. The rank-k
    reconstruction z_r @ basis.T is the best Frobenius approximation.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise DimensionMismatch("latent batch must be a non-empty matrix")
    if max_rank > min(z.shape):
        raise DimensionMismatch(
            f"max_rank {max_rank} exceeds min(batch, latent) = {min(z.shape)}")
    _, s, vt = np.linalg.svd(z, full_matrices=False)
    if s[0] == 0.0 or s[max_rank - 1] <= 1e-12 * s[0]:
        warnings.warn("retained rank exceeds numerical rank of the latent batch",
                      RankDeficiencyWarning, stacklevel=2)
    basis = vt[:max_rank].T.copy()
    return z @ basis, basis


def _step_losses(model, x, y, basis, with_encoder_grad=True):
    """Effective loss and gradients for one batch with a fixed basis.

    Both training phases and the gradient-check oracle share this path;
    the basis is a constant here regardless of how it was obtained.
    """
    hyper = model.hyper
    z, enc_cache = mlp_forward(model.encoder, x)
    z_r = z @ basis
    x_hat, dec_cache = mlp_forward(model.decoder, z_r)
    logit, cls_cache = mlp_forward(model.classifier, z_r)

    batch, dim = x.shape
    resid = x_hat - x
    l_recon = float(np.mean(resid * resid))
    l_cls, d_logit = bce_with_logits(logit, y)
    losses = LossBreakdown.combine(hyper, l_recon, l_cls)
    if not np.isfinite(losses.l_total):
        raise NonFiniteLoss(f"loss diverged: {losses}")

    d_xhat = hyper.recon_weight * 2.0 * resid / (batch * dim)
    dec_grads, d_zr = mlp_backward(model.decoder, dec_cache, d_xhat)
    cls_grads, d_zr_cls = mlp_backward(
        model.classifier, cls_cache, hyper.cls_weight * d_logit[:, None])
    d_zr = d_zr + d_zr_cls
    enc_grads = None
    if with_encoder_grad:
        enc_grads, _ = mlp_backward(model.encoder, enc_cache, d_zr @ basis.T)
    return losses, enc_grads, dec_grads, cls_grads


def _batches(n, batch_size, max_rank, rng):
    if n < max_rank:
        raise InsufficientSamples(f"{n} samples < retained rank {max_rank}")
    perm = rng.permutation(n)
    chunks = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    # tail batch must stay >= max_rank for the SVD projection
    if len(chunks) > 1 and len(chunks[-1]) < max_rank:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def _run_epochs(model, x, y, epochs, rng, basis_of_batch, optimizers, log=None):
    history = []
    for epoch in range(epochs):
        sum_recon = 0.0
        sum_cls = 0.0
        seen = 0
        for idx in _batches(len(x), model.hyper.batch_size, model.hyper.max_rank, rng):
            xb, yb = x[idx], y[idx]
            basis = basis_of_batch(xb)
            with_enc = "encoder" in optimizers
            losses, enc_g, dec_g, cls_g = _step_losses(model, xb, yb, basis,
                                                       with_encoder_grad=with_enc)
            if with_enc:
                optimizers["encoder"].step(model.encoder.arrays(), enc_g.arrays())
            optimizers["decoder"].step(model.decoder.arrays(), dec_g.arrays())
            optimizers["classifier"].step(model.classifier.arrays(), cls_g.arrays())
            sum_recon += losses.l_recon * len(idx)
            sum_cls += losses.l_cls * len(idx)
            seen += len(idx)
        epoch_losses = LossBreakdown.combine(model.hyper, sum_recon / seen, sum_cls / seen)
        history.append(epoch_losses)
        if log is not None:
            log(epoch, epoch_losses)
    return history


def train_phase1(model, x_train, y_train, log=None):
    """Joint training of encoder, decoder, and classifier with per-batch
    SVD projection. Returns (model, per-epoch loss history)."""
    if model.basis is not None:
        raise BasisAlreadyFrozen("joint phase must run before the basis is fixed")
    hyper = model.hyper
    x = np.asarray(x_train, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.float64).reshape(-1)
    rng = np.random.default_rng([hyper.seed, 1])
    optimizers = {name: Adam(net.arrays(), lr=hyper.learning_rate)
                  for name, net in (("encoder", model.encoder),
                                    ("decoder", model.decoder),
                                    ("classifier", model.classifier))}

    def batch_basis(xb):
        z, _ = mlp_forward(model.encoder, xb)
        _, basis = svd_project_batch(z, hyper.max_rank)
        return basis

    history = _run_epochs(model, x, y, hyper.joint_epochs, rng, batch_basis,
                          optimizers, log)
    return model, history


def fit_fixed_basis(model, x_train, chunk=4096):
    """Compute and freeze the top singular basis of the full training latents."""
    x = np.asarray(x_train, dtype=np.float64)
    hyper = model.hyper
    if len(x) < hyper.max_rank:
        raise InsufficientSamples(
            f"{len(x)} samples < retained rank {hyper.max_rank}")
    zs = [mlp_forward(model.encoder, x[i:i + chunk])[0] for i in range(0, len(x), chunk)]
    z = np.concatenate(zs, axis=0)
    if len(z) >= hyper.latent_dim:
        # Gram-matrix route: latent width is small, sample count is not
        gram = z.T @ z
        _, vecs = np.linalg.eigh(gram)
        basis = vecs[:, ::-1][:, :hyper.max_rank].copy()
    else:
        _, _, vt = np.linalg.svd(z, full_matrices=False)
        basis = vt[:hyper.max_rank].T.copy()
    basis.flags.writeable = False
    model.basis = basis
    return model


def train_phase3(model, x_train, y_train, log=None):
    """Fine-tune decoder and classifier against the frozen basis.

    The encoder and the basis are bit-identical before and after."""
    if model.basis is None:
        raise BasisMissing("phase 3 requires the frozen basis")
    hyper = model.hyper
    x = np.asarray(x_train, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.float64).reshape(-1)
    rng = np.random.default_rng([hyper.seed, 2])
    optimizers = {"decoder": Adam(model.decoder.arrays(), lr=hyper.learning_rate),
                  "classifier": Adam(model.classifier.arrays(), lr=hyper.learning_rate)}
    history = _run_epochs(model, x, y, hyper.finetune_epochs, rng,
                          lambda xb: model.basis, optimizers, log)
    return model, history


def predict(model, x):
    """Probabilities and labels for rows of x (already normalized with the
    model's stored statistics). Label 1 when probability >= 0.5."""
    if model.basis is None:
        raise BasisMissing("predict requires the frozen basis; run phase 2")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise DimensionMismatch(
            f"input dim {x.shape[1]} != model input dim {model.input_dim}")
    z, _ = mlp_forward(model.encoder, x)
    logit, _ = mlp_forward(model.classifier, z @ model.basis)
    probs = sigmoid(logit[:, 0])
    labels = (probs >= 0.5).astype(np.int8)
    if single:
        return float(probs[0]), int(labels[0])
    return probs, labels


def train_rrae(features, row_labels, hyper, log=None):
    """Full three-phase training on a raw FeatureMatrix.

    Normalization statistics are computed here and stored on the model.
    Returns (model, {"phase1": [...], "phase3": [...]}).
    """
    from .encoders import normalize_features

    normalized, scaling = normalize_features(features)
    model = build_model(features.dim, hyper)
    model.scaling = scaling
    x = normalized.samples
    y = np.asarray(row_labels, dtype=np.float64).reshape(-1)
    if len(y) != len(x):
        raise DimensionMismatch("labels do not match feature rows")
    _, h1 = train_phase1(model, x, y, log=log)
    fit_fixed_basis(model, x)
    _, h3 = train_phase3(model, x, y, log=log)
    return model, {"phase1": h1, "phase3": h3}


def predict_features(model, features):
    """Predict on a raw FeatureMatrix using the model's stored scaling."""
    from .encoders import normalize_features

    if model.scaling is None:
        x = features.samples
    else:
        normalized, _ = normalize_features(features, model.scaling)
        x = normalized.samples
    return predict(model, x)


MODEL_MAGIC = b"DSPM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sIQ")


def _net_spec(net):
    return {"widths": [int(w.shape[0]) for w in net.weights] + [int(net.weights[-1].shape[1])],
            "activations": list(net.activations)}


def save_model(model, path):
    header = {
        "hyper": asdict(model.hyper),
        "input_dim": int(model.input_dim),
        "encoder": _net_spec(model.encoder),
        "decoder": _net_spec(model.decoder),
        "classifier": _net_spec(model.classifier),
        "has_basis": model.basis is not None,
        "has_scaling": model.scaling is not None,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, len(blob)))
            fh.write(blob)
            for net in (model.encoder, model.decoder, model.classifier):
                for arr in net.arrays():
                    np.ascontiguousarray(arr, dtype="<f8").tofile(fh)
            if model.basis is not None:
                np.ascontiguousarray(model.basis, dtype="<f8").tofile(fh)
            if model.scaling is not None:
                np.ascontiguousarray(model.scaling.mean, dtype="<f8").tofile(fh)
                np.ascontiguousarray(model.scaling.std, dtype="<f8").tofile(fh)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_net(fh, spec):
    widths = spec["widths"]
    weights, biases = [], []
    for i in range(len(widths) - 1):
        weights.append(np.fromfile(fh, dtype="<f8",
                                   count=widths[i] * widths[i + 1]).reshape(widths[i], widths[i + 1]))
    for i in range(len(widths) - 1):
        biases.append(np.fromfile(fh, dtype="<f8", count=widths[i + 1]))
    return MlpParams(weights, biases, list(spec["activations"]))


def load_model(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read(_MODEL_HEADER.size)
            if len(raw) < _MODEL_HEADER.size:
                raise VersionMismatch(f"{path}: truncated header")
            magic, version, blob_len = _MODEL_HEADER.unpack(raw)
            if magic != MODEL_MAGIC or version != MODEL_VERSION:
                raise VersionMismatch(f"{path}: bad magic or version")
            try:
                header = json.loads(fh.read(blob_len).decode())
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise VersionMismatch(f"{path}: corrupted header") from exc
            hyper = RraeHyperparams(**{
                k: tuple(v) if isinstance(v, list) else v
                for k, v in header["hyper"].items()})
            enc = _read_net(fh, header["encoder"])
            dec = _read_net(fh, header["decoder"])
            cls = _read_net(fh, header["classifier"])
            basis = None
            if header["has_basis"]:
                basis = np.fromfile(fh, dtype="<f8",
                                    count=hyper.latent_dim * hyper.max_rank)
                basis = basis.reshape(hyper.latent_dim, hyper.max_rank)
            scaling = None
            if header["has_scaling"]:
                dim = header["input_dim"]
                mean = np.fromfile(fh, dtype="<f8", count=dim)
                std = np.fromfile(fh, dtype="<f8", count=dim)
                scaling = FeatureScaling(mean, std)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return RraeModel(enc, dec, cls, hyper, basis, scaling)
