"""CSPMNet: model assembly, parameter registry, and checkpoint I/O.

The network is a learnable complex subband front end feeding amplitude-
preserving phase-motion features into a light temporal head:

    filter bank -> features -> batchnorm -> mixing conv -> BiGRU
                -> scaled additive attention -> MLP -> logits

Variants:
    full              free complex taps (default)
    phase_motion_only no filter bank; raw I/Q is the single "subband"
    fixed_morlet      Morlet taps, frozen
    learnable_morlet  Morlet taps, (f_s, sigma_s) trainable

Parameters (including frozen tensors and BatchNorm running statistics) live
in an ordered registry; that order is the checkpoint layout.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import frontend as fe
from . import layers as ly
from . import phase_motion as pm
from .errors import (
    BadMagicError,
    BadVersionError,
    ChecksumError,
    ConfigError,
    ShapeError,
    StateError,
    TruncatedFileError,
    FormatError,
)

VARIANTS = ("full", "phase_motion_only", "fixed_morlet", "learnable_morlet")

CHECKPOINT_MAGIC = b"CSPMCKPT"
CHECKPOINT_VERSION = 1

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class ModelConfig:
    n_classes: int = 11
    seq_len: int = 128
    variant: str = "full"
    n_subbands: int = 8
    kernel_len: int = 33
    lags: tuple = pm.DEFAULT_LAGS
    mix_channels: int = 64
    mix_kernel: int = 3
    hidden: int = 128
    attn_dim: int = 64
    mlp_hidden: int = 128
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    sigma_min: float = 0.5
    dtype: str = "f32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")
        self.lags = pm.validate_lags(self.lags)
        for name in ("n_classes", "seq_len", "n_subbands", "kernel_len",
                     "mix_channels", "mix_kernel", "hidden", "attn_dim", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if self.kernel_len % 2 == 0 or self.mix_kernel % 2 == 0:
            raise ConfigError("kernel lengths must be odd")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ConfigError("bn_momentum must be in (0, 1)")
        if self.bn_eps <= 0 or self.sigma_min <= 0:
            raise ConfigError("bn_eps and sigma_min must be positive")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def effective_subbands(self) -> int:
        return 1 if self.variant == "phase_motion_only" else self.n_subbands

    @property
    def feature_channels(self) -> int:
        return pm.feature_channel_count(self.effective_subbands, self.lags)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["lags"] = list(d["lags"])
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad config JSON: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = known - set(d)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        d["lags"] = tuple(d["lags"])
        return cls(**d)


class Param:
    """One named tensor in the registry. `grad` is filled by backward."""

    __slots__ = ("name", "value", "trainable", "grad")

    def __init__(self, name, value, trainable):
        self.name = name
        self.value = value
        self.trainable = trainable
        self.grad = None

    def __repr__(self):
        kind = "trainable" if self.trainable else "frozen"
        return f"Param({self.name}, {self.value.shape}, {kind})"


class CSPMNet:
    """The classifier. Construction is deterministic given (config, seed)."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict = {}
        self._init_rng = np.random.default_rng(seed)
        self._build()
        del self._init_rng

    # -- registry -----------------------------------------------------------

    def _declare(self, name, value, trainable=True):
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name}")
        self.params[name] = Param(name, np.asarray(value, dtype=self.config.np_dtype),
                                  trainable)

    def _uniform(self, shape, bound):
        return self._init_rng.uniform(-bound, bound, size=shape)

    def _build(self):
        cfg = self.config
        if cfg.variant == "full":
            bound = 1.0 / np.sqrt(cfg.n_subbands * cfg.kernel_len)
            self._declare("frontend.w_real", self._uniform((cfg.n_subbands, cfg.kernel_len), bound))
            self._declare("frontend.w_imag", self._uniform((cfg.n_subbands, cfg.kernel_len), bound))
        elif cfg.variant in ("fixed_morlet", "learnable_morlet"):
            bank = fe.make_morlet_bank(cfg.n_subbands, cfg.kernel_len, cfg.variant,
                                       cfg.sigma_min)
            train = cfg.variant == "learnable_morlet"
            self._declare("frontend.freqs", bank.center_freqs, trainable=train)
            self._declare("frontend.sigmas", bank.bandwidths, trainable=train)

        c_feat = cfg.feature_channels
        self._declare("bn.gamma", np.ones(c_feat))
        self._declare("bn.beta", np.zeros(c_feat))
        self._declare("bn.running_mean", np.zeros(c_feat), trainable=False)
        self._declare("bn.running_var", np.ones(c_feat), trainable=False)

        bound = 1.0 / np.sqrt(c_feat * cfg.mix_kernel)
        self._declare("mix.weight", self._uniform((cfg.mix_channels, c_feat, cfg.mix_kernel), bound))
        self._declare("mix.bias", self._uniform(cfg.mix_channels, bound))

        h = cfg.hidden
        bound = 1.0 / np.sqrt(h)
        for d in ("fwd", "bwd"):
            self._declare(f"gru.{d}.w_ih", self._uniform((cfg.mix_channels, 3 * h), bound))
            self._declare(f"gru.{d}.w_hh", self._uniform((h, 3 * h), bound))
            self._declare(f"gru.{d}.b_ih", self._uniform(3 * h, bound))
            self._declare(f"gru.{d}.b_hh", self._uniform(3 * h, bound))

        bound = 1.0 / np.sqrt(2 * h)
        self._declare("attn.weight", self._uniform((2 * h, cfg.attn_dim), bound))
        self._declare("attn.bias", self._uniform(cfg.attn_dim, bound))
        self._declare("attn.score", self._uniform(cfg.attn_dim, 1.0 / np.sqrt(cfg.attn_dim)))

        self._declare("mlp.w1", self._uniform((2 * h, cfg.mlp_hidden), bound))
        self._declare("mlp.b1", self._uniform(cfg.mlp_hidden, bound))
        bound = 1.0 / np.sqrt(cfg.mlp_hidden)
        self._declare("mlp.w2", self._uniform((cfg.mlp_hidden, cfg.n_classes), bound))
        self._declare("mlp.b2", self._uniform(cfg.n_classes, bound))

    def state_items(self):
        """All (name, Param) pairs in declared (checkpoint) order."""
        return list(self.params.items())

    def trainable_params(self):
        return [p for p in self.params.values() if p.trainable]

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype: str) -> "CSPMNet":
        """A copy of this model at another precision (values cast, same config)."""
        cfg = dataclasses.replace(self.config, dtype=dtype)
        other = CSPMNet(cfg, seed=0)
        for name, p in self.params.items():
            other.params[name].value = p.value.astype(cfg.np_dtype)
        return other

    def filter_bank(self):
        """The current front-end bank, or None for phase_motion_only."""
        if self.config.variant == "phase_motion_only":
            return None
        return self._bank()[0]

    # -- forward / backward --------------------------------------------------

    def _bank(self):
        cfg = self.config
        if cfg.variant == "full":
            return fe.ComplexFilterBank(self.params["frontend.w_real"].value,
                                        self.params["frontend.w_imag"].value,
                                        "free"), None
        w_r, w_i, mcache = fe.morlet_taps(self.params["frontend.freqs"].value,
                                          self.params["frontend.sigmas"].value,
                                          cfg.kernel_len, cfg.sigma_min)
        bank = fe.ComplexFilterBank(w_r, w_i, cfg.variant,
                                    self.params["frontend.freqs"].value,
                                    self.params["frontend.sigmas"].value,
                                    cfg.sigma_min)
        return bank, mcache

    def forward(self, x, train: bool = False, update_stats: bool = True):
        """Compute logits for x (B, 2, T).

        Returns (logits (B, n_classes), cache). Pass the cache to backward.
        In eval mode (train=False) BatchNorm uses running statistics and the
        output of one example does not depend on its batch neighbours.
        """
        cfg = self.config
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[1] != 2:
            raise ShapeError(f"expected input (B, 2, T), got {x.shape}")
        if x.shape[2] != cfg.seq_len:
            raise ShapeError(f"input length {x.shape[2]} != configured {cfg.seq_len}")
        x = x.astype(cfg.np_dtype, copy=False)

        cache = {"x": x}
        if cfg.variant == "phase_motion_only":
            z_r = x[:, 0][:, None, :]
            z_i = x[:, 1][:, None, :]
        else:
            bank, mcache = self._bank()
            cache["bank"] = bank
            cache["morlet"] = mcache
            z_r, z_i = fe.complex_conv_forward(x[:, 0], x[:, 1], bank)

        fmap, feat_cache = pm.features_forward(z_r, z_i, cfg.lags)
        cache["feat"] = feat_cache

        bn_out, bn_cache = ly.batchnorm_forward(
            fmap, self.params["bn.gamma"].value, self.params["bn.beta"].value,
            self.params["bn.running_mean"].value, self.params["bn.running_var"].value,
            eps=cfg.bn_eps, momentum=cfg.bn_momentum, train=train,
            update_stats=train and update_stats)
        cache["bn"] = bn_cache

        mixed, conv_cache = ly.conv1d_forward(
            bn_out, self.params["mix.weight"].value, self.params["mix.bias"].value)
        cache["conv"] = conv_cache

        seq = np.ascontiguousarray(np.transpose(mixed, (0, 2, 1)))  # (B, T, C_mix)
        gru_params = {k[len("gru."):]: self.params[k].value
                      for k in self.params if k.startswith("gru.")}
        gru_out, gru_cache = ly.bigru_forward(seq, gru_params)
        cache["gru"] = gru_cache

        pooled, alpha, attn_cache = ly.attention_forward(
            gru_out, self.params["attn.weight"].value,
            self.params["attn.bias"].value, self.params["attn.score"].value)
        cache["attn"] = attn_cache
        cache["alpha"] = alpha

        hid, lin1_cache = ly.linear_forward(
            pooled, self.params["mlp.w1"].value, self.params["mlp.b1"].value)
        cache["lin1"] = lin1_cache
        act, relu_cache = ly.relu_forward(hid)
        cache["relu"] = relu_cache
        logits, lin2_cache = ly.linear_forward(
            act, self.params["mlp.w2"].value, self.params["mlp.b2"].value)
        cache["lin2"] = lin2_cache
        return logits, cache

    def backward(self, grad_logits, cache):
        """Fill .grad on every trainable parameter from the logits cotangent."""
        if cache is None:
            raise StateError("backward called without a forward cache")
        cfg = self.config

        d_act, dw2, db2 = ly.linear_backward(np.asarray(grad_logits), cache["lin2"])
        self.params["mlp.w2"].grad = dw2
        self.params["mlp.b2"].grad = db2
        d_hid = ly.relu_backward(d_act, cache["relu"])
        d_pooled, dw1, db1 = ly.linear_backward(d_hid, cache["lin1"])
        self.params["mlp.w1"].grad = dw1
        self.params["mlp.b1"].grad = db1

        d_gru_out, dwa, dba, dva = ly.attention_backward(d_pooled, cache["attn"])
        self.params["attn.weight"].grad = dwa
        self.params["attn.bias"].grad = dba
        self.params["attn.score"].grad = dva

        d_seq, gru_grads = ly.bigru_backward(d_gru_out, cache["gru"])
        for k, v in gru_grads.items():
            self.params[f"gru.{k}"].grad = v

        d_mixed = np.ascontiguousarray(np.transpose(d_seq, (0, 2, 1)))
        d_bn_out, dw_mix, db_mix = ly.conv1d_backward(d_mixed, cache["conv"])
        self.params["mix.weight"].grad = dw_mix
        self.params["mix.bias"].grad = db_mix

        d_fmap, dgamma, dbeta = ly.batchnorm_backward(d_bn_out, cache["bn"])
        self.params["bn.gamma"].grad = dgamma
        self.params["bn.beta"].grad = dbeta

        # below the features only the bank can be trainable
        if cfg.variant == "phase_motion_only" or cfg.variant == "fixed_morlet":
            return
        gz_r, gz_i = pm.features_backward(d_fmap, cache["feat"])
        x = cache["x"]
        _, _, gw_r, gw_i = fe.complex_conv_backward(
            x[:, 0], x[:, 1], cache["bank"], gz_r, gz_i, need_input_grad=False)
        if cfg.variant == "full":
            self.params["frontend.w_real"].grad = gw_r
            self.params["frontend.w_imag"].grad = gw_i
        else:
            gf, gs = fe.morlet_backward(gw_r, gw_i, cache["morlet"])
            self.params["frontend.freqs"].grad = gf
            self.params["frontend.sigmas"].grad = gs

    def predict_logits(self, x, batch_size: int = 512):
        """Eval-mode logits, computed in chunks."""
        x = np.asarray(x)
        outs = []
        for start in range(0, x.shape[0], batch_size):
            logits, _ = self.forward(x[start:start + batch_size], train=False)
            outs.append(logits)
        return np.concatenate(outs, axis=0)

    def predict(self, x, batch_size: int = 512):
        """Predicted labels; ties resolve to the lowest class index."""
        return np.argmax(self.predict_logits(x, batch_size), axis=1)


# ---------------------------------------------------------------------------
# Checkpoint I/O
#
# Layout, little-endian:
#   magic "CSPMCKPT" | u32 version | u32 config_len | config JSON (UTF-8)
#   u32 crc32(config JSON) | u32 n_tensors
#   per tensor: u16 name_len | name UTF-8 | u8 ndim | ndim * u32 dims | payload
# Payload dtype is the config dtype (f32 or f64), little-endian, C order.


def save_checkpoint(model: CSPMNet, path: str) -> None:
    cfg_bytes = model.config.to_json().encode("utf-8")
    wire = "<f4" if model.config.dtype == "f32" else "<f8"
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<II", CHECKPOINT_VERSION, len(cfg_bytes))
    buf += cfg_bytes
    buf += struct.pack("<II", zlib.crc32(cfg_bytes), len(model.params))
    for name, p in model.state_items():
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<B", p.value.ndim)
        for d in p.value.shape:
            buf += struct.pack("<I", d)
        buf += np.ascontiguousarray(p.value).astype(wire).tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(buf))
    os.replace(tmp, path)


class _Cursor:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"{self.path}: truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def peek_checkpoint_config(path: str) -> ModelConfig:
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data, path)
    if len(data) < len(CHECKPOINT_MAGIC) or cur.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint file")
    version, cfg_len = cur.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise BadVersionError(f"{path}: unsupported checkpoint version {version}")
    cfg_bytes = cur.take(cfg_len)
    (crc,) = cur.unpack("<I")
    if crc != zlib.crc32(cfg_bytes):
        raise ChecksumError(f"{path}: config checksum mismatch")
    return ModelConfig.from_json(cfg_bytes.decode("utf-8"))


def load_checkpoint(path: str) -> CSPMNet:
    """Rebuild a model from a checkpoint, validating layout exhaustively."""
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data, path)
    if len(data) < len(CHECKPOINT_MAGIC) or cur.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint file")
    version, cfg_len = cur.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise BadVersionError(f"{path}: unsupported checkpoint version {version}")
    cfg_bytes = cur.take(cfg_len)
    (crc,) = cur.unpack("<I")
    if crc != zlib.crc32(cfg_bytes):
        raise ChecksumError(f"{path}: config checksum mismatch")
    config = ModelConfig.from_json(cfg_bytes.decode("utf-8"))
    (n_tensors,) = cur.unpack("<I")
    model = CSPMNet(config, seed=0)
    expected = model.state_items()
    if n_tensors != len(expected):
        raise ConfigError(
            f"{path}: {n_tensors} tensors stored, model declares {len(expected)}")
    wire = "<f4" if config.dtype == "f32" else "<f8"
    itemsize = 4 if config.dtype == "f32" else 8
    for name, p in expected:
        (name_len,) = cur.unpack("<H")
        stored = cur.take(name_len).decode("utf-8")
        if stored != name:
            raise ConfigError(f"{path}: tensor order mismatch: {stored!r} != {name!r}")
        (ndim,) = cur.unpack("<B")
        shape = tuple(cur.unpack("<" + "I" * ndim)) if ndim else ()
        if shape != p.value.shape:
            raise ConfigError(f"{path}: {name} has shape {shape}, expected {p.value.shape}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = cur.take(count * itemsize)
        p.value = np.frombuffer(raw, dtype=wire).reshape(shape).astype(
            config.np_dtype).copy()
    if cur.pos != len(data):
        raise FormatError(f"{path}: {len(data) - cur.pos} trailing bytes")
    return model
