"""Synthetic I/Q dataset generation.

Eleven-class modulation set (BPSK, QPSK, 8PSK, PAM4, QAM16, QAM64, GFSK,
CPFSK, WBFM, AM-DSB, AM-SSB), an SNR-calibrated channel model (phase offset,
carrier frequency offset, timing resample, complex AWGN), stratified
splitting, and a small binary container format for labeled I/Q records.

Conventions: frequencies are in cycles/sample, SNR in dB relative to the
unit-power clean waveform, time indices are integer sample counts. Waveform
math runs in float64; stored records are float32.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    TruncatedFileError,
)

MODULATION_NAMES = (
    "bpsk", "qpsk", "8psk", "pam4", "qam16", "qam64",
    "gfsk", "cpfsk", "wbfm", "am-dsb", "am-ssb",
)

CONTAINER_MAGIC = b"CSPM"
CONTAINER_VERSION = 1

_RRC_SPAN = 8          # symbols each side of the peak, span*sps+1 taps total
_RRC_BETA = 0.35
_GAUSS_SPAN = 4        # symbols, GFSK frequency-pulse smoothing window
_GAUSS_BT = 0.35
_FSK_MOD_INDEX = 0.5
_FM_DEVIATION = 0.08   # cycles/sample per unit message amplitude
_AM_DEPTH = 0.5
_MSG_BAND = (0.05, 0.15)   # analog message band, cycles/sample
_CROP_JITTER_SYMBOLS = 4   # random crop slack so symbol timing phase varies


# ---------------------------------------------------------------------------
# Core types


@dataclass
class ComplexSequence:
    """Planar complex baseband record: separate I and Q sample arrays.

    Both arrays must be 1-D, equal length, non-empty, and finite.
    """

    i_samples: np.ndarray
    q_samples: np.ndarray

    def __post_init__(self):
        self.i_samples = np.asarray(self.i_samples)
        self.q_samples = np.asarray(self.q_samples)
        if self.i_samples.ndim != 1 or self.q_samples.ndim != 1:
            raise ShapeError("I and Q must be 1-D arrays")
        if self.i_samples.shape != self.q_samples.shape:
            raise ShapeError(
                f"I/Q length mismatch: {self.i_samples.size} vs {self.q_samples.size}")
        if self.i_samples.size == 0:
            raise ShapeError("empty sequence")
        if not (np.isfinite(self.i_samples).all() and np.isfinite(self.q_samples).all()):
            raise NumericError("non-finite samples in sequence")

    def __len__(self) -> int:
        return self.i_samples.size

    def as_complex(self) -> np.ndarray:
        """Return the sequence as a complex128 vector."""
        return self.i_samples.astype(np.float64) + 1j * self.q_samples.astype(np.float64)

    def as_planar(self) -> np.ndarray:
        """Return a (2, T) array with I in row 0 and Q in row 1."""
        return np.stack([self.i_samples, self.q_samples])

    def mean_power(self) -> float:
        i = self.i_samples.astype(np.float64)
        q = self.q_samples.astype(np.float64)
        return float(np.mean(i * i + q * q))

    @classmethod
    def from_complex(cls, z: np.ndarray, dtype=np.float64) -> "ComplexSequence":
        z = np.asarray(z)
        return cls(
            np.ascontiguousarray(z.real, dtype=dtype),
            np.ascontiguousarray(z.imag, dtype=dtype),
        )


@dataclass
class LabeledExample:
    """One I/Q record with its class label and the SNR it was generated at."""

    signal: ComplexSequence
    label: int
    snr_db: float


@dataclass
class Dataset:
    """A labeled I/Q corpus on a fixed (class x SNR) grid.

    Invariants checked on construction: every sequence has length ``seq_len``,
    every label indexes ``class_names``, every snr_db lies on ``snr_grid``.
    """

    examples: list
    class_names: list
    seq_len: int
    snr_grid: list

    def __post_init__(self):
        if self.seq_len < 1:
            raise ConfigError("seq_len must be >= 1")
        if len(set(self.class_names)) != len(self.class_names):
            raise ConfigError("duplicate class names")
        grid = set(self.snr_grid)
        for k, ex in enumerate(self.examples):
            if len(ex.signal) != self.seq_len:
                raise ShapeError(
                    f"example {k} has length {len(ex.signal)}, dataset seq_len {self.seq_len}")
            if not 0 <= ex.label < len(self.class_names):
                raise ConfigError(f"example {k} label {ex.label} out of range")
            if ex.snr_db not in grid:
                raise ConfigError(f"example {k} snr {ex.snr_db} not on the grid")

    def __len__(self) -> int:
        return len(self.examples)

    def cell_indices(self) -> dict:
        """Map (label, snr_db) -> list of example indices, keys sorted."""
        cells = {}
        for k, ex in enumerate(self.examples):
            cells.setdefault((ex.label, ex.snr_db), []).append(k)
        return dict(sorted(cells.items()))

    def subset(self, indices) -> "Dataset":
        return Dataset(
            examples=[self.examples[int(i)] for i in indices],
            class_names=list(self.class_names),
            seq_len=self.seq_len,
            snr_grid=list(self.snr_grid),
        )

    def to_arrays(self):
        """Return (X, y, snr): float32 (N, 2, T), int64 (N,), float64 (N,)."""
        n = len(self.examples)
        x = np.zeros((n, 2, self.seq_len), dtype=np.float32)
        y = np.zeros(n, dtype=np.int64)
        snr = np.zeros(n, dtype=np.float64)
        for k, ex in enumerate(self.examples):
            x[k] = ex.signal.as_planar()
            y[k] = ex.label
            snr[k] = ex.snr_db
        return x, y, snr


@dataclass
class ChannelConfig:
    """Impairments applied to a unit-power waveform, in application order:
    phase rotation, carrier frequency offset, timing resample, complex AWGN.
    """

    snr_db: float
    carrier_freq_offset: float = 0.0    # cycles/sample
    phase_offset: float = 0.0           # radians
    timing_resample_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.snr_db):
            raise ConfigError("snr_db must not be NaN")
        if not 0.9 <= self.timing_resample_ratio <= 1.1:
            raise ConfigError(
                f"timing_resample_ratio {self.timing_resample_ratio} outside [0.9, 1.1]")
        if not (math.isfinite(self.carrier_freq_offset) and math.isfinite(self.phase_offset)):
            raise ConfigError("offsets must be finite")


@dataclass
class GenerationSpec:
    """Everything needed to synthesize a dataset deterministically."""

    modulations: tuple = MODULATION_NAMES
    snr_grid_db: tuple = tuple(range(-20, 22, 2))
    per_cell: int = 100
    seq_len: int = 128
    seed: int = 0
    sps: int = 8
    pulse: str = "rrc"
    random_phase: bool = True
    max_cfo: float = 0.005              # cycles/sample
    timing_jitter: float = 0.01         # resample ratio = 1 +- jitter


# ---------------------------------------------------------------------------
# Symbol maps (Gray-coded) and pulse shaping


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def _psk_table(order: int) -> np.ndarray:
    table = np.zeros(order, dtype=np.complex128)
    for k in range(order):
        table[_gray(k)] = np.exp(2j * np.pi * k / order)
    return table


def _pam_levels(order: int) -> np.ndarray:
    # gray(k) carries level 2k-(order-1); unnormalized
    table = np.zeros(order)
    for k in range(order):
        table[_gray(k)] = 2 * k - (order - 1)
    return table


def _qam_table(order: int) -> np.ndarray:
    side = int(round(math.sqrt(order)))
    rail = _pam_levels(side)
    table = np.zeros(order, dtype=np.complex128)
    for hi in range(side):
        for lo in range(side):
            table[hi * side + lo] = rail[hi] + 1j * rail[lo]
    return table / np.sqrt(np.mean(np.abs(table) ** 2))


def _qpsk_table() -> np.ndarray:
    # independent I/Q sign bits: (1-2*b0 + j(1-2*b1)) / sqrt(2), Gray by construction
    table = np.zeros(4, dtype=np.complex128)
    for b0 in range(2):
        for b1 in range(2):
            table[2 * b0 + b1] = ((1 - 2 * b0) + 1j * (1 - 2 * b1)) / np.sqrt(2)
    return table


_SYMBOL_TABLES = {
    "bpsk": np.array([1.0 + 0j, -1.0 + 0j]),
    "qpsk": _qpsk_table(),
    "8psk": _psk_table(8),
    "pam4": (_pam_levels(4) / np.sqrt(np.mean(_pam_levels(4) ** 2))).astype(np.complex128),
    "qam16": _qam_table(16),
    "qam64": _qam_table(64),
}

_BITS_PER_SYMBOL = {"bpsk": 1, "qpsk": 2, "8psk": 3, "pam4": 2, "qam16": 4, "qam64": 6}


def map_bits(mod_type: str, bits: np.ndarray) -> np.ndarray:
    """Map a flat bit array onto Gray-coded complex symbols.

    Bits are consumed in groups of log2(order), most significant first.
    """
    if mod_type not in _SYMBOL_TABLES:
        raise ConfigError(f"no symbol table for {mod_type!r}")
    bps = _BITS_PER_SYMBOL[mod_type]
    bits = np.asarray(bits)
    if bits.size % bps:
        raise ShapeError(f"bit count {bits.size} not a multiple of {bps}")
    weights = 1 << np.arange(bps - 1, -1, -1)
    idx = bits.reshape(-1, bps) @ weights
    return _SYMBOL_TABLES[mod_type][idx]


def rrc_taps(sps: int, span: int = _RRC_SPAN, beta: float = _RRC_BETA) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, span symbols each side of the peak."""
    if not 0.0 < beta < 1.0:
        raise ConfigError("rrc roll-off must be in (0, 1)")
    if sps < 1 or span < 1:
        raise ConfigError("sps and span must be >= 1")
    t = (np.arange(span * sps + 1) - span * sps / 2) / sps
    taps = np.zeros_like(t)
    mid = np.isclose(t, 0.0, atol=1e-12)
    edge = np.isclose(np.abs(t), 1 / (4 * beta), atol=1e-12)
    rest = ~(mid | edge)
    taps[mid] = 1 - beta + 4 * beta / np.pi
    taps[edge] = (beta / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
        + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    tr = t[rest]
    num = np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    den = np.pi * tr * (1 - (4 * beta * tr) ** 2)
    taps[rest] = num / den
    return taps / np.sqrt(np.sum(taps ** 2))


def gaussian_taps(sps: int, span: int = _GAUSS_SPAN, bt: float = _GAUSS_BT) -> np.ndarray:
    """Unit-sum Gaussian window used to smooth the GFSK frequency pulse."""
    if bt <= 0:
        raise ConfigError("BT product must be positive")
    sigma = sps * math.sqrt(math.log(2)) / (2 * math.pi * bt)
    n = np.arange(span * sps + 1) - span * sps / 2
    g = np.exp(-0.5 * (n / sigma) ** 2)
    return g / g.sum()


def shape_pulse(symbols: np.ndarray, sps: int, pulse: str = "rrc") -> np.ndarray:
    """Upsample symbols by sps and apply the pulse filter.

    "rect" holds each symbol for sps samples; "rrc" inserts zeros and
    convolves with unit-energy RRC taps ("same" length).
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    if sps < 1:
        raise ConfigError("sps must be >= 1")
    if pulse == "rect":
        return np.repeat(symbols, sps)
    if pulse == "rrc":
        up = np.zeros(symbols.size * sps, dtype=np.complex128)
        up[::sps] = symbols
        return np.convolve(up, rrc_taps(sps), mode="same")
    raise ConfigError(f"unknown pulse {pulse!r}")


def _crop(x: np.ndarray, rng: np.random.Generator, length: int, guard: int) -> np.ndarray:
    # guard keeps filter warmup out of the window; start jitter randomizes
    # symbol timing phase
    lo = guard
    hi = x.size - guard - length
    if hi < lo:
        raise ShapeError("waveform too short to crop")
    start = int(rng.integers(lo, hi + 1))
    return x[start:start + length]


# ---------------------------------------------------------------------------
# Modulators


def _linear_waveform(mod_type, rng, length, sps, pulse):
    span = _RRC_SPAN if pulse == "rrc" else 1
    n_sym = -(-length // sps) + 2 * span + _CROP_JITTER_SYMBOLS
    bits = rng.integers(0, 2, size=n_sym * _BITS_PER_SYMBOL[mod_type])
    x = shape_pulse(map_bits(mod_type, bits), sps, pulse)
    return _crop(x, rng, length, span * sps)


def _fsk_waveform(mod_type, rng, length, sps):
    span = _GAUSS_SPAN if mod_type == "gfsk" else 1
    n_sym = -(-length // sps) + 2 * span + _CROP_JITTER_SYMBOLS
    nrz = 1.0 - 2.0 * rng.integers(0, 2, size=n_sym)
    freq = np.repeat(nrz, sps)
    if mod_type == "gfsk":
        freq = np.convolve(freq, gaussian_taps(sps), mode="same")
    # +-1 frequency pulse integrates to +-pi*h per symbol
    phase = np.cumsum(freq) * (np.pi * _FSK_MOD_INDEX / sps)
    return _crop(np.exp(1j * phase), rng, length, span * sps)


def _bandlimited_message(rng, length):
    """White Gaussian noise FFT-bandpassed to the analog message band, unit RMS."""
    w = rng.standard_normal(length)
    spec = np.fft.rfft(w)
    f = np.fft.rfftfreq(length)
    spec[(f < _MSG_BAND[0]) | (f > _MSG_BAND[1])] = 0.0
    m = np.fft.irfft(spec, length)
    rms = np.sqrt(np.mean(m ** 2))
    if rms == 0.0:
        raise NumericError("degenerate analog message")
    return m / rms


def _analog_waveform(mod_type, rng, length):
    m = _bandlimited_message(rng, length)
    if mod_type == "wbfm":
        return np.exp(2j * np.pi * _FM_DEVIATION * np.cumsum(m))
    if mod_type == "am-dsb":
        return (1.0 + _AM_DEPTH * m).astype(np.complex128)
    if mod_type == "am-ssb":
        # upper sideband via the FFT analytic signal of the bandpass message
        spec = np.fft.fft(m)
        h = np.zeros(length)
        h[0] = 1.0
        if length % 2 == 0:
            h[length // 2] = 1.0
            h[1:length // 2] = 2.0
        else:
            h[1:(length + 1) // 2] = 2.0
        return np.fft.ifft(spec * h)
    raise ConfigError(f"unknown analog modulation {mod_type!r}")


def modulate(mod_type: str, length: int, seed, sps: int = 8, pulse: str = "rrc") -> ComplexSequence:
    """Generate one clean unit-power baseband waveform.

    Args:
        mod_type: one of MODULATION_NAMES.
        length: number of complex samples to produce.
        seed: anything np.random.default_rng accepts.
        sps: samples per symbol for the digital classes (>= 2).
        pulse: "rrc" or "rect", linear classes only.

    Returns:
        ComplexSequence of exactly `length` samples with mean power 1.
    """
    if mod_type not in MODULATION_NAMES:
        raise ConfigError(f"unknown modulation {mod_type!r}")
    if length < 1:
        raise ConfigError("length must be >= 1")
    rng = np.random.default_rng(seed)
    if mod_type in _SYMBOL_TABLES:
        if sps < 2:
            raise ConfigError("digital modulations need sps >= 2")
        x = _linear_waveform(mod_type, rng, length, sps, pulse)
    elif mod_type in ("gfsk", "cpfsk"):
        if sps < 2:
            raise ConfigError("digital modulations need sps >= 2")
        x = _fsk_waveform(mod_type, rng, length, sps)
    else:
        x = _analog_waveform(mod_type, rng, length)
    power = np.mean(np.abs(x) ** 2)
    if power <= 0.0:
        raise NumericError("zero-power waveform")
    return ComplexSequence.from_complex(x / np.sqrt(power))


# ---------------------------------------------------------------------------
# Channel


def _resample_linear(z: np.ndarray, ratio: float) -> np.ndarray:
    # centered linear interpolation; edge samples clamp
    n = z.size
    c = (n - 1) / 2.0
    t = c + (np.arange(n) - c) / ratio
    return np.interp(t, np.arange(n), z.real) + 1j * np.interp(t, np.arange(n), z.imag)


def apply_channel(x: ComplexSequence, config: ChannelConfig) -> ComplexSequence:
    """Apply phase rotation, CFO spin, timing resample, and complex AWGN.

    Noise power is 10^(-snr_db/10) relative to the unit-power input, split
    evenly between I and Q. snr_db = +inf disables noise.
    """
    z = x.as_complex()
    n = np.arange(z.size)
    z = z * np.exp(1j * (config.phase_offset + 2 * np.pi * config.carrier_freq_offset * n))
    if config.timing_resample_ratio != 1.0:
        z = _resample_linear(z, config.timing_resample_ratio)
    if not math.isinf(config.snr_db):
        sigma2 = 10.0 ** (-config.snr_db / 10.0)
        rng = np.random.default_rng(config.seed)
        noise = rng.standard_normal((2, z.size))
        z = z + np.sqrt(sigma2 / 2.0) * (noise[0] + 1j * noise[1])
    return ComplexSequence.from_complex(z)


# ---------------------------------------------------------------------------
# Dataset synthesis and splitting


def _example_seeds(master: int, class_idx: int, snr_idx: int, idx: int):
    ss = np.random.SeedSequence([master, class_idx, snr_idx, idx])
    return [int(v) for v in ss.generate_state(3, dtype=np.uint64)]


def synthesize_dataset(spec: GenerationSpec) -> Dataset:
    """Synthesize a balanced dataset over the class x SNR grid.

    Every example gets its own RNG streams derived from
    (seed, class_idx, snr_idx, example_idx), so the corpus is reproducible
    and order-independent.
    """
    mods = list(spec.modulations)
    if not mods:
        raise ConfigError("empty modulation list")
    unknown = [m for m in mods if m not in MODULATION_NAMES]
    if unknown:
        raise ConfigError(f"unknown modulations: {unknown}")
    if len(set(mods)) != len(mods):
        raise ConfigError("duplicate modulations")
    grid = [float(s) for s in spec.snr_grid_db]
    if not grid:
        raise ConfigError("empty SNR grid")
    if any(not math.isfinite(s) for s in grid):
        raise ConfigError("SNR grid values must be finite")
    if len(set(grid)) != len(grid):
        raise ConfigError("duplicate SNR grid values")
    if spec.per_cell < 1:
        raise ConfigError("per_cell must be >= 1")
    if spec.seq_len < 1:
        raise ConfigError("seq_len must be >= 1")
    if not 0.0 <= spec.timing_jitter <= 0.1:
        raise ConfigError("timing_jitter must be in [0, 0.1]")
    if spec.max_cfo < 0:
        raise ConfigError("max_cfo must be >= 0")

    examples = []
    for ci, mod in enumerate(mods):
        for si, snr in enumerate(grid):
            for k in range(spec.per_cell):
                s_mod, s_off, s_noise = _example_seeds(spec.seed, ci, si, k)
                clean = modulate(mod, spec.seq_len, s_mod, spec.sps, spec.pulse)
                off = np.random.default_rng(s_off)
                phase = off.uniform(-np.pi, np.pi) if spec.random_phase else 0.0
                cfo = off.uniform(-spec.max_cfo, spec.max_cfo) if spec.max_cfo else 0.0
                ratio = 1.0 + (off.uniform(-spec.timing_jitter, spec.timing_jitter)
                               if spec.timing_jitter else 0.0)
                cfg = ChannelConfig(
                    snr_db=snr,
                    carrier_freq_offset=cfo,
                    phase_offset=phase,
                    timing_resample_ratio=ratio,
                    seed=s_noise,
                )
                rx = apply_channel(clean, cfg)
                sig = ComplexSequence(
                    rx.i_samples.astype(np.float32),
                    rx.q_samples.astype(np.float32),
                )
                examples.append(LabeledExample(sig, ci, snr))
    return Dataset(examples=examples, class_names=mods, seq_len=spec.seq_len, snr_grid=grid)


def split_indices(dataset: Dataset, ratios=(0.6, 0.2, 0.2), seed: int = 42):
    """Stratified per-(class, SNR)-cell split into train/val/test index arrays.

    Train and val take floor(n*ratio) of each shuffled cell; the remainder is
    test. Raises ConfigError if any cell would leave the test split empty.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError("ratios must be three non-negative numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)}")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for (label, snr), idx in dataset.cell_indices().items():
        idx = np.asarray(idx)
        perm = idx[rng.permutation(idx.size)]
        # +1e-9 absorbs f64 representation error in n*ratio (e.g. 15*0.2)
        n_tr = int(math.floor(idx.size * ratios[0] + 1e-9))
        n_val = int(math.floor(idx.size * ratios[1] + 1e-9))
        n_te = idx.size - n_tr - n_val
        if n_te < 1:
            raise ConfigError(
                f"cell (class {label}, snr {snr}) has {idx.size} examples, "
                "not enough for a test share")
        train.extend(perm[:n_tr])
        val.extend(perm[n_tr:n_tr + n_val])
        test.extend(perm[n_tr + n_val:])
    return (np.sort(np.asarray(train, dtype=np.int64)),
            np.sort(np.asarray(val, dtype=np.int64)),
            np.sort(np.asarray(test, dtype=np.int64)))


def split_dataset(dataset: Dataset, ratios=(0.6, 0.2, 0.2), seed: int = 42):
    """Return (train, val, test) Datasets; see split_indices."""
    idx_tr, idx_val, idx_te = split_indices(dataset, ratios, seed)
    return dataset.subset(idx_tr), dataset.subset(idx_val), dataset.subset(idx_te)


# ---------------------------------------------------------------------------
# Container I/O
#
# Layout, all little-endian:
#   magic "CSPM" | u32 version=1 | u32 C | u32 T | u32 N
#   C null-terminated UTF-8 class names
#   N records: u32 label | f32 snr_db | T f32 I samples | T f32 Q samples


def write_container(dataset: Dataset, path: str) -> None:
    """Serialize a Dataset to `path` atomically (temp file + rename)."""
    c = len(dataset.class_names)
    if c < 1:
        raise ConfigError("container needs at least one class name")
    for name in dataset.class_names:
        if not name or "\x00" in name:
            raise ConfigError(f"bad class name {name!r}")
    for ex in dataset.examples:
        if not math.isfinite(ex.snr_db):
            raise ConfigError("container snr values must be finite")
    buf = bytearray()
    buf += CONTAINER_MAGIC
    buf += struct.pack("<IIII", CONTAINER_VERSION, c, dataset.seq_len, len(dataset.examples))
    for name in dataset.class_names:
        buf += name.encode("utf-8") + b"\x00"
    for ex in dataset.examples:
        buf += struct.pack("<If", ex.label, ex.snr_db)
        buf += ex.signal.i_samples.astype("<f4").tobytes()
        buf += ex.signal.q_samples.astype("<f4").tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf)
    os.replace(tmp, path)


def read_container(path: str) -> Dataset:
    """Parse a container file, validating magic, version, and exact length."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != CONTAINER_MAGIC:
        raise BadMagicError(f"{path}: not a CSPM container")
    if len(data) < 20:
        raise TruncatedFileError(f"{path}: header truncated")
    version, c, t, n = struct.unpack_from("<IIII", data, 4)
    if version != CONTAINER_VERSION:
        raise BadVersionError(f"{path}: unsupported container version {version}")
    if c < 1 or t < 1:
        raise FormatError(f"{path}: degenerate header (C={c}, T={t})")
    pos = 20
    names = []
    for _ in range(c):
        end = data.find(b"\x00", pos)
        if end < 0:
            raise TruncatedFileError(f"{path}: class name table truncated")
        try:
            names.append(data[pos:end].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: class name is not valid UTF-8") from exc
        pos = end + 1
    record = 8 + 8 * t
    expected = pos + n * record
    if len(data) < expected:
        raise TruncatedFileError(
            f"{path}: need {expected} bytes for {n} records, file has {len(data)}")
    if len(data) > expected:
        raise FormatError(f"{path}: {len(data) - expected} trailing bytes after last record")
    examples = []
    for _ in range(n):
        label, snr = struct.unpack_from("<If", data, pos)
        if label >= c:
            raise FormatError(f"{path}: record label {label} out of range")
        pos += 8
        i = np.frombuffer(data, dtype="<f4", count=t, offset=pos)
        pos += 4 * t
        q = np.frombuffer(data, dtype="<f4", count=t, offset=pos)
        pos += 4 * t
        examples.append(LabeledExample(ComplexSequence(i.copy(), q.copy()), int(label), float(snr)))
    grid = sorted({ex.snr_db for ex in examples})
    return Dataset(examples=examples, class_names=names, seq_len=t, snr_grid=grid)
