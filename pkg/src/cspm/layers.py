"""Neural network layers with explicit forward caches and hand-derived adjoints.

Every forward returns (output, cache); the matching backward consumes the
cache and the output cotangent and returns input and parameter gradients.
All computation stays in the dtype of the inputs. Conventions:

    batchnorm   per-channel over (B, T), biased variance, momentum update
    conv1d      "same" zero padding, stride 1, correlation (no kernel flip)
    GRU         gates stacked [r | z | n], doubled biases:
                r = sigmoid(W_ir x + b_ir + U_hr h + b_hr)
                z = sigmoid(W_iz x + b_iz + U_hz h + b_hz)
                n = tanh(W_in x + b_in + r * (U_hn h + b_hn))
                h_t = (1 - z) * n + z * h_{t-1},  h_0 = 0
    attention   e_t = v . tanh(W h_t + b), alpha = softmax(e / sqrt(A))
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def sigmoid(x):
    # exp overflow in the negative tail saturates to inf, so the result
    # underflows to exactly 0.0 there; the positive tail reaches exactly 1.0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# BatchNorm over (B, C, T), per channel


def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      eps=1e-5, momentum=0.1, train=True, update_stats=True):
    """Normalize per channel. In train mode statistics come from the batch
    and (optionally) update the running buffers in place; in eval mode the
    running buffers are used as constants.
    """
    if x.ndim != 3:
        raise ShapeError(f"batchnorm expects (B, C, T), got {x.shape}")
    if train:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))  # biased
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma, "train": train,
             "n": x.shape[0] * x.shape[2]}
    return y, cache


def batchnorm_backward(grad_y, cache):
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    dgamma = np.sum(grad_y * xhat, axis=(0, 2))
    dbeta = np.sum(grad_y, axis=(0, 2))
    dxhat = grad_y * gamma[None, :, None]
    if not cache["train"]:
        return dxhat * inv_std[None, :, None], dgamma, dbeta
    n = cache["n"]
    sum_dxhat = np.sum(dxhat, axis=(0, 2), keepdims=True)
    sum_dxhat_xhat = np.sum(dxhat * xhat, axis=(0, 2), keepdims=True)
    dx = (inv_std[None, :, None] / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# 1-D convolution (correlation), "same" padding, stride 1


def _conv_windows(x, k):
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    return np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (B, C, T, K)


def conv1d_forward(x, w, b):
    """x (B, C_in, T), w (C_out, C_in, K) with K odd, b (C_out,) -> (B, C_out, T)."""
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError("conv1d expects x (B, C, T) and w (O, C, K)")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"channel mismatch: x has {x.shape[1]}, w has {w.shape[1]}")
    if w.shape[2] % 2 == 0:
        raise ShapeError("conv1d kernel length must be odd")
    win = _conv_windows(x, w.shape[2])
    y = np.tensordot(win, w, axes=([1, 3], [1, 2]))  # (B, T, O)
    y = np.ascontiguousarray(np.transpose(y, (0, 2, 1)))
    y += b[None, :, None]
    cache = {"win": win, "w": w, "x_shape": x.shape}
    return y, cache


def conv1d_backward(grad_y, cache):
    win, w = cache["win"], cache["w"]
    b_sz, c_in, t = cache["x_shape"]
    o, _, k = w.shape
    if grad_y.shape != (b_sz, o, t):
        raise ShapeError(f"cotangent shape {grad_y.shape} != {(b_sz, o, t)}")
    dw = np.tensordot(grad_y, win, axes=([0, 2], [0, 2]))  # (O, C, K)
    db = grad_y.sum(axis=(0, 2))
    # dx: full correlation of the cotangent with the reversed kernel
    pad = k - 1
    gyp = np.pad(grad_y, ((0, 0), (0, 0), (pad, pad)))
    vw = np.lib.stride_tricks.sliding_window_view(gyp, k, axis=2)  # (B, O, T+K-1, K)
    dxp = np.einsum("bomk,ock->bcm", vw, w[:, :, ::-1], optimize=True)
    p = (k - 1) // 2
    dx = dxp[:, :, p:p + t]
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------------------
# Linear and ReLU


def linear_forward(x, w, b):
    """x (B, N), w (N, M), b (M,) -> (B, M)."""
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    return x @ w + b, {"x": x, "w": w}


def linear_backward(grad_y, cache):
    x, w = cache["x"], cache["w"]
    return grad_y @ w.T, x.T @ grad_y, grad_y.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0), {"mask": x > 0}


def relu_backward(grad_y, cache):
    return grad_y * cache["mask"]


# ---------------------------------------------------------------------------
# Single-layer bidirectional GRU


def _gru_direction_forward(x, w_ih, w_hh, b_ih, b_hh):
    b_sz, t, _ = x.shape
    h_dim = w_hh.shape[0]
    gi = x @ w_ih + b_ih                     # (B, T, 3H), input-side preacts
    h = np.zeros((b_sz, h_dim), dtype=x.dtype)
    hs = np.zeros((b_sz, t, h_dim), dtype=x.dtype)
    h_prev = np.zeros((b_sz, t, h_dim), dtype=x.dtype)
    rs = np.zeros_like(hs)
    zs = np.zeros_like(hs)
    ns = np.zeros_like(hs)
    ghn = np.zeros_like(hs)
    for step in range(t):
        gh = h @ w_hh + b_hh                 # (B, 3H)
        g = gi[:, step]
        rz = sigmoid(g[:, :2 * h_dim] + gh[:, :2 * h_dim])
        r = rz[:, :h_dim]
        z = rz[:, h_dim:]
        n = np.tanh(g[:, 2 * h_dim:] + r * gh[:, 2 * h_dim:])
        h_prev[:, step] = h
        h = (1.0 - z) * n + z * h
        hs[:, step] = h
        rs[:, step], zs[:, step], ns[:, step] = r, z, n
        ghn[:, step] = gh[:, 2 * h_dim:]
    cache = {"x": x, "w_ih": w_ih, "w_hh": w_hh, "r": rs, "z": zs, "n": ns,
             "ghn": ghn, "h_prev": h_prev}
    return hs, cache


def _gru_direction_backward(grad_h, cache):
    x, w_ih, w_hh = cache["x"], cache["w_ih"], cache["w_hh"]
    rs, zs, ns, ghn, h_prev = (cache["r"], cache["z"], cache["n"],
                               cache["ghn"], cache["h_prev"])
    b_sz, t, h_dim = grad_h.shape
    dgi = np.zeros((b_sz, t, 3 * h_dim), dtype=x.dtype)
    dgh = np.zeros_like(dgi)
    dh_next = np.zeros((b_sz, h_dim), dtype=x.dtype)
    for step in range(t - 1, -1, -1):
        dh = grad_h[:, step] + dh_next
        r, z, n, hp = rs[:, step], zs[:, step], ns[:, step], h_prev[:, step]
        dn = dh * (1.0 - z)
        dz = dh * (hp - n)
        dan = dn * (1.0 - n * n)
        dr = dan * ghn[:, step]
        dar = dr * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgi[:, step, :h_dim] = dar
        dgi[:, step, h_dim:2 * h_dim] = daz
        dgi[:, step, 2 * h_dim:] = dan
        dgh[:, step, :2 * h_dim] = dgi[:, step, :2 * h_dim]
        dgh[:, step, 2 * h_dim:] = dan * r
        dh_next = dh * z + dgh[:, step] @ w_hh.T
    x2 = x.reshape(-1, x.shape[2])
    dgi2 = dgi.reshape(-1, 3 * h_dim)
    dgh2 = dgh.reshape(-1, 3 * h_dim)
    hp2 = h_prev.reshape(-1, h_dim)
    grads = {
        "w_ih": x2.T @ dgi2,
        "w_hh": hp2.T @ dgh2,
        "b_ih": dgi2.sum(axis=0),
        "b_hh": dgh2.sum(axis=0),
    }
    dx = (dgi2 @ w_ih.T).reshape(x.shape)
    return dx, grads


def bigru_forward(x, params):
    """Bidirectional single-layer GRU.

    Args:
        x: (B, T, C) input sequence.
        params: dict with keys fwd.w_ih, fwd.w_hh, fwd.b_ih, fwd.b_hh and the
            same under bwd.*; w_ih is (C, 3H), w_hh is (H, 3H), biases (3H,).

    Returns:
        ((B, T, 2H) outputs with [forward | backward] halves, cache).
    """
    if x.ndim != 3:
        raise ShapeError(f"gru expects (B, T, C), got {x.shape}")
    h_f, cache_f = _gru_direction_forward(
        x, params["fwd.w_ih"], params["fwd.w_hh"], params["fwd.b_ih"], params["fwd.b_hh"])
    x_rev = x[:, ::-1]
    h_b_rev, cache_b = _gru_direction_forward(
        x_rev, params["bwd.w_ih"], params["bwd.w_hh"], params["bwd.b_ih"], params["bwd.b_hh"])
    out = np.concatenate([h_f, h_b_rev[:, ::-1]], axis=2)
    return out, {"f": cache_f, "b": cache_b}


def bigru_backward(grad_out, cache):
    """Returns (dx, grads) with grads keyed like the forward params."""
    h_dim = grad_out.shape[2] // 2
    dx_f, g_f = _gru_direction_backward(
        np.ascontiguousarray(grad_out[:, :, :h_dim]), cache["f"])
    dx_b_rev, g_b = _gru_direction_backward(
        np.ascontiguousarray(grad_out[:, ::-1, h_dim:]), cache["b"])
    dx = dx_f + dx_b_rev[:, ::-1]
    grads = {f"fwd.{k}": v for k, v in g_f.items()}
    grads.update({f"bwd.{k}": v for k, v in g_b.items()})
    return dx, grads


# ---------------------------------------------------------------------------
# Scaled additive attention pooling


def attention_forward(h, w, b, v):
    """h (B, T, D), w (D, A), b (A,), v (A,) -> (pooled (B, D), alpha (B, T), cache).

    Scores are scaled by 1/sqrt(A) before the softmax.
    """
    if h.ndim != 3 or h.shape[2] != w.shape[0]:
        raise ShapeError(f"attention shapes do not agree: h {h.shape}, w {w.shape}")
    a = np.tanh(h @ w + b)                   # (B, T, A)
    e = a @ v                                # (B, T)
    scale = 1.0 / np.sqrt(np.asarray(w.shape[1], dtype=h.dtype))
    es = e * scale
    es = es - es.max(axis=1, keepdims=True)
    expe = np.exp(es)
    alpha = expe / expe.sum(axis=1, keepdims=True)
    pooled = np.einsum("bt,btd->bd", alpha, h, optimize=True)
    cache = {"h": h, "w": w, "v": v, "a": a, "alpha": alpha, "scale": scale}
    return pooled, alpha, cache


def attention_backward(grad_pooled, cache):
    h, w, v, a, alpha = cache["h"], cache["w"], cache["v"], cache["a"], cache["alpha"]
    dalpha = np.einsum("bd,btd->bt", grad_pooled, h, optimize=True)
    dh = alpha[:, :, None] * grad_pooled[:, None, :]
    # softmax jacobian
    des = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    de = des * cache["scale"]
    dv = np.einsum("bta,bt->a", a, de, optimize=True)
    da = de[:, :, None] * v[None, None, :]
    dpre = da * (1.0 - a * a)
    dw = np.einsum("btd,bta->da", h, dpre, optimize=True)
    db = dpre.sum(axis=(0, 1))
    dh += dpre @ w.T
    return dh, dw, db, dv
