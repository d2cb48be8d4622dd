"""Learnable complex subband filter bank.

A bank of S complex FIR filters slides over the complex baseband input with
"same" zero padding, stride 1, and correlation orientation (no kernel flip):

    z[s, n] = sum_k x[n + k - P] * w[s, k],   P = (K - 1) // 2

expanded into four real correlations

    z_r = xr * wr - xi * wi        z_i = xr * wi + xi * wr.

Three parameterizations: "free" (taps are the parameters), "fixed_morlet"
(Gabor/Morlet taps, frozen), "learnable_morlet" (center frequency f_s and
envelope width sigma_s are the parameters, taps regenerated every step).

Gradients follow the planar convention: the cotangent of a complex array is
the pair (dL/dRe, dL/dIm).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

SIGMA_MIN = 0.5

PARAMETERIZATIONS = ("free", "fixed_morlet", "learnable_morlet")


@dataclass
class ComplexFilterBank:
    """S complex FIR filters of odd length K, planar storage.

    For Morlet parameterizations `center_freqs` (cycles/sample) and
    `bandwidths` (samples) are the source of truth and the taps are derived;
    call `regenerate()` after changing them.
    """

    w_real: np.ndarray
    w_imag: np.ndarray
    parameterization: str = "free"
    center_freqs: np.ndarray = None
    bandwidths: np.ndarray = None
    sigma_min: float = SIGMA_MIN

    def __post_init__(self):
        self.w_real = np.asarray(self.w_real)
        self.w_imag = np.asarray(self.w_imag)
        if self.w_real.ndim != 2 or self.w_real.shape != self.w_imag.shape:
            raise ShapeError("filter taps must be two (S, K) arrays")
        s, k = self.w_real.shape
        if s < 1:
            raise ConfigError("need at least one filter")
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"kernel length must be odd and >= 1, got {k}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigError(f"unknown parameterization {self.parameterization!r}")
        if self.parameterization != "free":
            if self.center_freqs is None or self.bandwidths is None:
                raise ConfigError("Morlet banks need center_freqs and bandwidths")
            self.center_freqs = np.asarray(self.center_freqs, dtype=self.w_real.dtype)
            self.bandwidths = np.asarray(self.bandwidths, dtype=self.w_real.dtype)
            if self.center_freqs.shape != (s,) or self.bandwidths.shape != (s,):
                raise ShapeError("center_freqs and bandwidths must be (S,)")

    @property
    def n_filters(self) -> int:
        return self.w_real.shape[0]

    @property
    def kernel_len(self) -> int:
        return self.w_real.shape[1]

    def regenerate(self):
        """Recompute taps from (center_freqs, bandwidths); no-op for free banks."""
        if self.parameterization == "free":
            return
        self.w_real, self.w_imag, _ = morlet_taps(
            self.center_freqs, self.bandwidths, self.kernel_len, self.sigma_min)


def morlet_taps(center_freqs, bandwidths, kernel_len: int, sigma_min: float = SIGMA_MIN):
    """Build L2-normalized complex Morlet taps.

    w[s, k] = (g[s, k] / ||g[s]||) * exp(j 2 pi f_s n_k), with Gaussian
    envelope g = exp(-n^2 / (2 sigma^2)), n_k = k - (K-1)/2, and sigma
    clamped from below at sigma_min (the clamped branch has zero gradient).

    Returns (w_real, w_imag, cache) where cache feeds morlet_backward.
    """
    f = np.asarray(center_freqs)
    sigma = np.asarray(bandwidths)
    if f.ndim != 1 or f.shape != sigma.shape:
        raise ShapeError("center_freqs and bandwidths must be equal-length 1-D")
    if kernel_len < 1 or kernel_len % 2 == 0:
        raise ConfigError(f"kernel length must be odd and >= 1, got {kernel_len}")
    dtype = np.result_type(f.dtype, sigma.dtype, np.float32)
    n = (np.arange(kernel_len) - (kernel_len - 1) // 2).astype(dtype)
    sig_eff = np.maximum(sigma, dtype.type(sigma_min))[:, None]
    g = np.exp(-0.5 * (n / sig_eff) ** 2)
    norm = np.sqrt(np.sum(g * g, axis=1, keepdims=True))
    env = g / norm
    theta = 2 * np.pi * f[:, None] * n
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cache = {
        "n": n, "env": env, "cos": cos_t, "sin": sin_t,
        "sig_eff": sig_eff,
        # d env / d sigma = env * (n^2 - A) / sigma^3 with A = sum(env^2 n^2)
        "moment": np.sum(env * env * n * n, axis=1, keepdims=True),
        "active": (sigma > sigma_min)[:, None],
    }
    return (env * cos_t).astype(dtype), (env * sin_t).astype(dtype), cache


def morlet_backward(grad_w_real, grad_w_imag, cache):
    """Chain tap cotangents back to (center_freqs, bandwidths).

    The L2 norm depends only on the Gaussian envelope, so f_s has no norm
    term; sigma entries at or below the clamp get zero gradient.
    """
    n = cache["n"]
    env, cos_t, sin_t = cache["env"], cache["cos"], cache["sin"]
    sig = cache["sig_eff"]
    two_pi_n = 2 * np.pi * n
    grad_f = np.sum(two_pi_n * env * (grad_w_imag * cos_t - grad_w_real * sin_t), axis=1)
    denv = env * (n * n - cache["moment"]) / sig ** 3
    grad_sigma = np.sum((grad_w_real * cos_t + grad_w_imag * sin_t) * denv, axis=1)
    grad_sigma = np.where(cache["active"][:, 0], grad_sigma, 0.0)
    return grad_f.astype(env.dtype), grad_sigma.astype(env.dtype)


def make_morlet_bank(n_filters: int, kernel_len: int, parameterization: str,
                     sigma_min: float = SIGMA_MIN, dtype=np.float64) -> ComplexFilterBank:
    """Standard Morlet bank: centers uniform in (-0.5, 0.5), sigma = max(K/6, 1).

    f_s = (s + 0.5) / S - 0.5 avoids a DC-centered filter; K/6 keeps the
    envelope's 3-sigma point inside the kernel, floored at 1.0 so sigma
    starts clear of the clamp.
    """
    if parameterization not in ("fixed_morlet", "learnable_morlet"):
        raise ConfigError(f"not a Morlet parameterization: {parameterization!r}")
    s = np.arange(n_filters, dtype=dtype)
    freqs = (s + 0.5) / n_filters - 0.5
    sigmas = np.full(n_filters, max(kernel_len / 6.0, 1.0), dtype=dtype)
    w_r, w_i, _ = morlet_taps(freqs, sigmas, kernel_len, sigma_min)
    return ComplexFilterBank(w_r, w_i, parameterization, freqs, sigmas, sigma_min)


def _as_batch(x_real, x_imag):
    x_real = np.asarray(x_real)
    x_imag = np.asarray(x_imag)
    if x_real.shape != x_imag.shape:
        raise ShapeError("real/imag parts must have identical shapes")
    if x_real.ndim == 1:
        return x_real[None, :], x_imag[None, :], True
    if x_real.ndim == 2:
        return x_real, x_imag, False
    raise ShapeError(f"expected (T,) or (B, T) input, got ndim={x_real.ndim}")


def _windows(x, kernel_len):
    # (B, T) zero-padded to (B, T + K - 1), then (B, T, K) sliding view
    pad = (kernel_len - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad)))
    return np.lib.stride_tricks.sliding_window_view(xp, kernel_len, axis=1)


def complex_conv_forward(x_real, x_imag, bank: ComplexFilterBank):
    """Correlate a complex input with every filter in the bank.

    Args:
        x_real, x_imag: (T,) or (B, T) planar input, T >= 1.
        bank: the filter bank.

    Returns:
        (z_real, z_imag): (B, S, T) responses, or (S, T) for 1-D input.
        Output length always equals input length ("same" padding).
    """
    xr, xi, squeeze = _as_batch(x_real, x_imag)
    k = bank.kernel_len
    win_r = _windows(xr, k)
    win_i = _windows(xi, k)
    wr, wi = bank.w_real, bank.w_imag
    a = np.tensordot(win_r, wr, axes=([2], [1]))   # (B, T, S)
    b = np.tensordot(win_i, wi, axes=([2], [1]))
    c = np.tensordot(win_r, wi, axes=([2], [1]))
    d = np.tensordot(win_i, wr, axes=([2], [1]))
    z_r = np.transpose(a - b, (0, 2, 1))
    z_i = np.transpose(c + d, (0, 2, 1))
    if squeeze:
        return z_r[0], z_i[0]
    return z_r, z_i


def complex_conv_backward(x_real, x_imag, bank: ComplexFilterBank,
                          grad_z_real, grad_z_imag, need_input_grad: bool = True):
    """Adjoint of complex_conv_forward.

    Args:
        x_real, x_imag: the forward input, (T,) or (B, T).
        grad_z_real, grad_z_imag: cotangents matching the forward output.
        need_input_grad: skip the (relatively costly) input adjoint if False.

    Returns:
        (grad_x_real, grad_x_imag, grad_w_real, grad_w_imag); the input
        grads are None when need_input_grad is False.
    """
    xr, xi, squeeze = _as_batch(x_real, x_imag)
    gz_r = np.asarray(grad_z_real)
    gz_i = np.asarray(grad_z_imag)
    if squeeze:
        gz_r, gz_i = gz_r[None], gz_i[None]
    s, k = bank.w_real.shape
    b_sz, t = xr.shape
    if gz_r.shape != (b_sz, s, t) or gz_i.shape != (b_sz, s, t):
        raise ShapeError(f"cotangent shape {gz_r.shape} does not match ({b_sz}, {s}, {t})")

    win_r = _windows(xr, k)   # (B, T, K)
    win_i = _windows(xi, k)
    # z_r = xr*wr - xi*wi ; z_i = xr*wi + xi*wr
    gw_r = (np.tensordot(gz_r, win_r, axes=([0, 2], [0, 1]))
            + np.tensordot(gz_i, win_i, axes=([0, 2], [0, 1])))
    gw_i = (np.tensordot(gz_i, win_r, axes=([0, 2], [0, 1]))
            - np.tensordot(gz_r, win_i, axes=([0, 2], [0, 1])))

    gx_r = gx_i = None
    if need_input_grad:
        # d x[m] accumulates gz[n] w[k] over n + k - P = m: a full correlation
        # of the cotangent with the reversed kernel, cropped back to T
        pad = k - 1
        gzp_r = np.pad(gz_r, ((0, 0), (0, 0), (pad, pad)))
        gzp_i = np.pad(gz_i, ((0, 0), (0, 0), (pad, pad)))
        w_r_rev = bank.w_real[:, ::-1]
        w_i_rev = bank.w_imag[:, ::-1]
        vr = np.lib.stride_tricks.sliding_window_view(gzp_r, k, axis=2)  # (B,S,T+K-1,K)
        vi = np.lib.stride_tricks.sliding_window_view(gzp_i, k, axis=2)
        full_rr = np.einsum("bsmk,sk->bm", vr, w_r_rev, optimize=True)
        full_ii = np.einsum("bsmk,sk->bm", vi, w_i_rev, optimize=True)
        full_ri = np.einsum("bsmk,sk->bm", vr, w_i_rev, optimize=True)
        full_ir = np.einsum("bsmk,sk->bm", vi, w_r_rev, optimize=True)
        p = (k - 1) // 2
        gx_r = (full_rr + full_ii)[:, p:p + t]
        gx_i = (full_ir - full_ri)[:, p:p + t]
        if squeeze:
            gx_r, gx_i = gx_r[0], gx_i[0]
    return gx_r, gx_i, gw_r, gw_i


def bank_frequency_response(bank: ComplexFilterBank, n_fft: int = 512):
    """DFT magnitude of every filter on an n_fft grid (freqs, magnitudes)."""
    w = bank.w_real.astype(np.float64) + 1j * bank.w_imag.astype(np.float64)
    spec = np.fft.fftshift(np.fft.fft(w, n=n_fft, axis=1), axes=1)
    freqs = np.fft.fftshift(np.fft.fftfreq(n_fft))
    return freqs, np.abs(spec)
