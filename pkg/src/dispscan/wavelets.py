"""Daubechies-4 discrete wavelet transform, forward and inverse.

Expansive single-level transform: the signal is padded by 7 samples on
each side (symmetric, zero, or periodic extension), correlated with the
analysis filters and downsampled. Each band keeps floor((n+7)/2)
coefficients, which is redundant enough that the inverse reconstructs the
original samples exactly for every extension mode.
"""

import numpy as np

from .errors import TooShortForLevels

# db4 scaling filter, 15 significant digits. Sum is sqrt(2), energy is 1.
DB4_SCALING = np.array([
    0.230377813308855,
    0.714846570552542,
    0.630880767929590,
    -0.0279837694169838,
    -0.187034811718881,
    0.0308413818359870,
    0.0328830116669829,
    -0.0105974017849973,
])

FILTER_LEN = 8

# quadrature mirror: g[i] = (-1)^i h[p-1-i]
DB4_WAVELET = DB4_SCALING[::-1].copy()
DB4_WAVELET[1::2] *= -1.0

MODES = ("symmetric", "zero", "periodic")


def _verify_filters():
    h = DB4_SCALING
    if abs(float(h @ h) - 1.0) > 1e-12 or abs(float(h.sum()) - np.sqrt(2.0)) > 1e-12:
        raise AssertionError("db4 filter constants corrupted")


_verify_filters()


def _extend(x, mode):
    # pad FILTER_LEN - 1 samples per side; requires n >= 7
    k = FILTER_LEN - 1
    if mode == "zero":
        pad = np.zeros(x.shape[:-1] + (k,))
        return np.concatenate([pad, x, pad], axis=-1)
    if mode == "symmetric":
        return np.concatenate([x[..., k - 1::-1], x, x[..., :-k - 1:-1]], axis=-1)
    if mode == "periodic":
        return np.concatenate([x[..., -k:], x, x[..., :k]], axis=-1)
    raise ValueError(f"unknown extension mode {mode!r}")


def _analyze(ext, filt):
    # correlation with filt, then downsample keeping odd positions
    win = np.lib.stride_tricks.sliding_window_view(ext, FILTER_LEN, axis=-1)
    return win[..., 1::2, :] @ filt


def dwt(x, mode="symmetric"):
    """One decomposition level. Works on the last axis; returns (cA, cD)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < FILTER_LEN:
        raise TooShortForLevels(
            f"signal length {x.shape[-1]} shorter than filter length {FILTER_LEN}")
    ext = _extend(x, mode)
    return _analyze(ext, DB4_SCALING), _analyze(ext, DB4_WAVELET)


def idwt(ca, cd, out_len):
    """Invert one level, trimming to the original length ``out_len``."""
    ca = np.asarray(ca, dtype=np.float64)
    cd = np.asarray(cd, dtype=np.float64)
    if ca.shape != cd.shape:
        raise ValueError("coefficient bands differ in shape")
    m = ca.shape[-1]
    if out_len > 2 * m - FILTER_LEN + 2:
        raise ValueError("coefficient bands too short for requested output length")
    up_len = 2 * m - 1
    rec = np.zeros(ca.shape[:-1] + (up_len + FILTER_LEN - 1,))
    for i in range(FILTER_LEN):
        rec[..., i:i + up_len:2] += ca * DB4_SCALING[i]
        rec[..., i:i + up_len:2] += cd * DB4_WAVELET[i]
    lo = FILTER_LEN - 2
    return rec[..., lo:lo + out_len]


def coeff_len(n):
    return (n + FILTER_LEN - 1) // 2


def level_lengths(n, levels):
    """Signal length at each depth, ``[n, len1, ..., lenL]``.

    The length after every level must stay at least the filter length.
    """
    if levels < 1:
        raise TooShortForLevels(f"need at least 1 level, got {levels}")
    out = [n]
    for _ in range(levels):
        nxt = coeff_len(out[-1])
        if nxt < FILTER_LEN:
            raise TooShortForLevels(
                f"length {out[-1]} cannot support another level "
                f"(would leave {nxt} < {FILTER_LEN} coefficients)")
        out.append(nxt)
    return out


def default_levels(n):
    """Deepest meaningful decomposition, floor(log2(n / 7))."""
    return int(np.floor(np.log2(n / (FILTER_LEN - 1))))


def wavedec(x, levels, mode="symmetric"):
    """Multi-level decomposition of the last axis.

    Returns coefficient bands ordered ``[aL, dL, dL-1, ..., d1]``.
    """
    x = np.asarray(x, dtype=np.float64)
    level_lengths(x.shape[-1], levels)
    details = []
    approx = x
    for _ in range(levels):
        approx, d = dwt(approx, mode)
        details.append(d)
    return [approx] + details[::-1]


def waverec(coeffs, lengths):
    """Invert :func:`wavedec`; ``lengths`` from :func:`level_lengths`."""
    approx = coeffs[0]
    levels = len(coeffs) - 1
    for lv in range(levels):
        detail = coeffs[1 + lv]
        approx = idwt(approx, detail, lengths[levels - 1 - lv])
    return approx


def feature_len(n, levels):
    """Total coefficient count produced by ``wavedec`` for length-n input."""
    lens = level_lengths(n, levels)
    return lens[-1] + sum(lens[1:])
