"""Amplitude-preserving phase-motion features.

For each subband response z[s] the base triple is

    b[s, n] = [log1p(|z[s, n]|), Re z[s, n], Im z[s, n]]

and for each lag l the phase-motion product

    delta[s, l, n] = z[s, n] * conj(z[s, n - l]),  zero for n < l,

contributes the triple d[s, l, n] = [log1p(|delta|), Re delta, Im delta].
log1p is the natural logarithm; |.| uses the convention d|z|/dz = 0 at z = 0.

The assembled map is subband-major with lags ascending:

    channel block for subband s:  [b_s | d_{s,l_1} | ... | d_{s,l_L}]

giving 3 * S * (1 + L) channels of length T. delta encodes instantaneous
phase motion without discarding amplitude: for z = A e^{j phi},
delta = A[n] A[n-l] e^{j(phi[n] - phi[n-l])}.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError

DEFAULT_LAGS = (1, 2, 4, 8)


def validate_lags(lags) -> tuple:
    lags = tuple(int(l) for l in lags)
    if not lags:
        raise ConfigError("need at least one lag")
    if any(l < 1 for l in lags):
        raise ConfigError(f"lags must be positive, got {lags}")
    if any(b <= a for a, b in zip(lags, lags[1:])):
        raise ConfigError(f"lags must be strictly ascending, got {lags}")
    return lags


def feature_channel_count(n_subbands: int, lags) -> int:
    return 3 * n_subbands * (1 + len(validate_lags(lags)))


def channel_layout(n_subbands: int, lags) -> list:
    """Human-readable name for every channel, in layout order."""
    lags = validate_lags(lags)
    names = []
    for s in range(n_subbands):
        names += [f"s{s}/base/logmag", f"s{s}/base/re", f"s{s}/base/im"]
        for l in lags:
            names += [f"s{s}/lag{l}/logmag", f"s{s}/lag{l}/re", f"s{s}/lag{l}/im"]
    return names


def _check_bst(z_real, z_imag):
    z_real = np.asarray(z_real)
    z_imag = np.asarray(z_imag)
    if z_real.ndim != 3 or z_real.shape != z_imag.shape:
        raise ShapeError("subband responses must be two (B, S, T) arrays")
    return z_real, z_imag


def _log_magnitude(re, im):
    # returns (log1p(mag), mag); mag reused by the backward pass
    mag = np.hypot(re, im)
    return np.log1p(mag), mag


def base_features(z_real, z_imag):
    """Per-subband base triples, stacked as (B, 3S, T) in subband-major order."""
    z_real, z_imag = _check_bst(z_real, z_imag)
    logmag, _ = _log_magnitude(z_real, z_imag)
    b, s, t = z_real.shape
    out = np.stack([logmag, z_real, z_imag], axis=2)  # (B, S, 3, T)
    return out.reshape(b, 3 * s, t)


def phase_motion_products(z_real, z_imag, lags=DEFAULT_LAGS):
    """delta[s, l, n] = z[s, n] * conj(z[s, n-l]) with zeros for n < l.

    Returns (delta_real, delta_imag), each (B, S, L, T).
    """
    z_real, z_imag = _check_bst(z_real, z_imag)
    lags = validate_lags(lags)
    b, s, t = z_real.shape
    d_r = np.zeros((b, s, len(lags), t), dtype=z_real.dtype)
    d_i = np.zeros_like(d_r)
    for li, lag in enumerate(lags):
        if lag >= t:
            continue  # whole row stays zero
        cur_r, cur_i = z_real[..., lag:], z_imag[..., lag:]
        past_r, past_i = z_real[..., :-lag], z_imag[..., :-lag]
        d_r[:, :, li, lag:] = cur_r * past_r + cur_i * past_i
        d_i[:, :, li, lag:] = cur_i * past_r - cur_r * past_i
    return d_r, d_i


def motion_features(delta_real, delta_imag):
    """Per-(subband, lag) triples, stacked as (B, 3SL, T)."""
    delta_real = np.asarray(delta_real)
    delta_imag = np.asarray(delta_imag)
    if delta_real.ndim != 4 or delta_real.shape != delta_imag.shape:
        raise ShapeError("phase-motion products must be two (B, S, L, T) arrays")
    logmag, _ = _log_magnitude(delta_real, delta_imag)
    b, s, l, t = delta_real.shape
    out = np.stack([logmag, delta_real, delta_imag], axis=3)  # (B, S, L, 3, T)
    return out.reshape(b, 3 * s * l, t)


def assemble_feature_map(base, motion, n_subbands: int, lags=DEFAULT_LAGS):
    """Interleave base and motion triples into the subband-major layout."""
    lags = validate_lags(lags)
    base = np.asarray(base)
    motion = np.asarray(motion)
    b, _, t = base.shape
    s, l = n_subbands, len(lags)
    if base.shape != (b, 3 * s, t):
        raise ShapeError(f"base features must be (B, {3 * s}, T)")
    if motion.shape != (b, 3 * s * l, t):
        raise ShapeError(f"motion features must be (B, {3 * s * l}, T)")
    base = base.reshape(b, s, 1, 3, t)
    motion = motion.reshape(b, s, l, 3, t)
    stacked = np.concatenate([base, motion], axis=2)  # (B, S, 1+L, 3, T)
    return stacked.reshape(b, 3 * s * (1 + l), t)


def features_forward(z_real, z_imag, lags=DEFAULT_LAGS):
    """Full feature map (B, 3S(1+L), T) plus the cache for features_backward."""
    z_real, z_imag = _check_bst(z_real, z_imag)
    lags = validate_lags(lags)
    d_r, d_i = phase_motion_products(z_real, z_imag, lags)
    base = base_features(z_real, z_imag)
    motion = motion_features(d_r, d_i)
    fmap = assemble_feature_map(base, motion, z_real.shape[1], lags)
    cache = {"z_r": z_real, "z_i": z_imag, "d_r": d_r, "d_i": d_i, "lags": lags}
    return fmap, cache


def _grad_through_logmag(g_log, re, im):
    # d log1p(|z|) / d re = re / ((1 + |z|) |z|), zero at the origin
    mag = np.hypot(re, im)
    denom = (1.0 + mag) * mag
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(mag > 0, g_log / np.where(mag > 0, denom, 1.0), 0.0)
    return scale * re, scale * im


def features_backward(grad_fmap, cache):
    """Adjoint of features_forward: cotangent (B, C, T) -> (grad_z_r, grad_z_i)."""
    z_r, z_i = cache["z_r"], cache["z_i"]
    d_r, d_i = cache["d_r"], cache["d_i"]
    lags = cache["lags"]
    b, s, t = z_r.shape
    l = len(lags)
    g = np.asarray(grad_fmap)
    if g.shape != (b, 3 * s * (1 + l), t):
        raise ShapeError(f"cotangent shape {g.shape} does not match feature map")
    g = g.reshape(b, s, 1 + l, 3, t)

    # base triple: logmag, re, im
    g_log, g_re, g_im = g[:, :, 0, 0], g[:, :, 0, 1], g[:, :, 0, 2]
    lr, li = _grad_through_logmag(g_log, z_r, z_i)
    gz_r = g_re + lr
    gz_i = g_im + li

    for li_idx, lag in enumerate(lags):
        gd_log = g[:, :, 1 + li_idx, 0]
        gd_r = g[:, :, 1 + li_idx, 1].copy()
        gd_i = g[:, :, 1 + li_idx, 2].copy()
        mr, mi = _grad_through_logmag(gd_log, d_r[:, :, li_idx], d_i[:, :, li_idx])
        gd_r += mr
        gd_i += mi
        if lag >= t:
            continue
        gd_r = gd_r[..., lag:]
        gd_i = gd_i[..., lag:]
        cur_r, cur_i = z_r[..., lag:], z_i[..., lag:]
        past_r, past_i = z_r[..., :-lag], z_i[..., :-lag]
        # delta_r = cur_r past_r + cur_i past_i ; delta_i = cur_i past_r - cur_r past_i
        gz_r[..., lag:] += gd_r * past_r - gd_i * past_i
        gz_i[..., lag:] += gd_r * past_i + gd_i * past_r
        gz_r[..., :-lag] += gd_r * cur_r + gd_i * cur_i
        gz_i[..., :-lag] += gd_r * cur_i - gd_i * cur_r
    return gz_r, gz_i
