"""Evaluation and ablation harness: accuracy metrics, SNR segments, cost
counters (trainable parameters, forward FLOPs), and report emission.

The FLOP sheet convention (see docs/formulas.md): one multiply-add = 2 FLOPs,
linear and conv layers cost 2 * inputs * outputs with the bias fold-in,
sigmoid/tanh/exp/sqrt/log = 4 FLOPs, other elementwise ops = 1, softmax = 8
per element. Counts are for one eval-mode forward pass at batch size 1.
Filter-tap regeneration from center/width parameters is parameter
preprocessing and is not counted.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import CSPMNet, ModelConfig, VARIANTS
from .signal_gen import Dataset, split_dataset
from .training import TrainConfig, train

SEGMENT_LOW_MAX_DB = -10.0   # low:  snr <= -10
SEGMENT_MID_MAX_DB = 0.0     # mid:  -10 < snr <= 0; high: snr > 0


# ---------------------------------------------------------------------------
# cost counters


def count_params(config: ModelConfig) -> int:
    """Trainable parameter count from the closed-form sheet (no model built)."""
    c_feat = config.feature_channels
    if config.variant == "full":
        frontend = 2 * config.n_subbands * config.kernel_len
    elif config.variant == "learnable_morlet":
        frontend = 2 * config.n_subbands
    else:
        frontend = 0
    bn = 2 * c_feat
    mix = config.mix_channels * (c_feat * config.mix_kernel + 1)
    h = config.hidden
    gru = 2 * 3 * h * (config.mix_channels + h + 2)
    attn = 2 * h * config.attn_dim + 2 * config.attn_dim
    mlp = (2 * h * config.mlp_hidden + config.mlp_hidden
           + config.mlp_hidden * config.n_classes + config.n_classes)
    return frontend + bn + mix + gru + attn + mlp


def linear_flops(n_in: int, n_out: int) -> int:
    """Dense layer cost: 2 * n_in * n_out (multiply-add = 2, bias folded)."""
    return 2 * n_in * n_out


def flops_breakdown(config: ModelConfig) -> dict:
    """Per-stage FLOPs for one eval-mode forward pass at batch size 1."""
    t = config.seq_len
    s = config.effective_subbands
    n_lags = len(config.lags)
    c_feat = config.feature_channels
    c_mix = config.mix_channels
    k = config.mix_kernel
    h = config.hidden
    a = config.attn_dim

    if config.variant == "phase_motion_only":
        frontend = 0            # raw planes pass through as one subband
    else:
        # 4 real convolutions of 2*K*T each, plus 2 combine adds per sample
        frontend = config.n_subbands * (8 * config.kernel_len * t + 2 * t)
    # base triple: log1p(|z|) = mul,mul,add,sqrt(4),add,log(4) = 12; Re/Im free
    # each lag triple adds the conjugate product (6) before the same 12
    features = s * t * 12 + s * n_lags * t * 18
    batchnorm = 2 * c_feat * t  # folded scale + shift
    mix = linear_flops(c_feat * k, c_mix) * t
    # per direction, per step: two GEMVs + 20h of gate arithmetic
    gru = 2 * t * (6 * h * (c_mix + h) + 20 * h)
    attention = (t * (linear_flops(2 * h, a) + 4 * a + 2 * a + 1)  # scores
                 + 8 * t                                           # softmax
                 + linear_flops(2 * h, 1) * t)                     # pooling
    mlp = (linear_flops(2 * h, config.mlp_hidden) + config.mlp_hidden
           + linear_flops(config.mlp_hidden, config.n_classes))
    return {"frontend": frontend, "features": features, "batchnorm": batchnorm,
            "mix": mix, "gru": gru, "attention": attention, "mlp": mlp}


def count_flops(config: ModelConfig) -> int:
    return sum(flops_breakdown(config).values())


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    overall_accuracy: float
    segment_low: float          # None when the grid has no SNR in the segment
    segment_mid: float
    segment_high: float
    per_snr: list               # (snr_db, accuracy, count) rows, ascending SNR
    confusion: np.ndarray       # (C, C) int64, rows = true, cols = predicted
    n_examples: int
    class_names: list
    params: int
    flops: int

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "overall_accuracy": self.overall_accuracy,
            "segment_low": self.segment_low,
            "segment_mid": self.segment_mid,
            "segment_high": self.segment_high,
            "n_examples": self.n_examples,
            "class_names": list(self.class_names),
            "params": self.params,
            "flops": self.flops,
            "per_snr": [{"snr_db": s, "accuracy": acc, "count": n}
                        for s, acc, n in self.per_snr],
        }


def _segment_mean(per_snr, lo, hi):
    accs = [acc for snr, acc, _ in per_snr if lo < snr <= hi]
    return float(np.mean(accs)) if accs else None


def evaluate(model: CSPMNet, dataset: Dataset, batch_size: int = 512) -> MetricsReport:
    """Accuracy metrics for the model on a labeled dataset.

    Segment accuracies are unweighted means of the per-SNR accuracies with
    boundaries low <= -10 dB < mid <= 0 dB < high; a segment with no grid
    point is reported as None.
    """
    if len(dataset.class_names) != model.config.n_classes:
        raise ConfigError(
            f"dataset has {len(dataset.class_names)} classes, "
            f"model expects {model.config.n_classes}")
    if dataset.seq_len != model.config.seq_len:
        raise ConfigError(
            f"dataset length {dataset.seq_len} != model length {model.config.seq_len}")
    x, y, snr = dataset.to_arrays()
    pred = model.predict(x, batch_size=batch_size)
    correct = pred == y

    per_snr = []
    for s in dataset.snr_grid:
        mask = snr == s
        n = int(mask.sum())
        if n:
            per_snr.append((float(s), float(np.mean(correct[mask])), n))
    c = model.config.n_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)

    return MetricsReport(
        overall_accuracy=float(np.mean(correct)),
        segment_low=_segment_mean(per_snr, -np.inf, SEGMENT_LOW_MAX_DB),
        segment_mid=_segment_mean(per_snr, SEGMENT_LOW_MAX_DB, SEGMENT_MID_MAX_DB),
        segment_high=_segment_mean(per_snr, SEGMENT_MID_MAX_DB, np.inf),
        per_snr=per_snr,
        confusion=confusion,
        n_examples=int(y.size),
        class_names=list(dataset.class_names),
        params=count_params(model.config),
        flops=count_flops(model.config),
    )


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def emit_report(report: MetricsReport, out_dir: str) -> dict:
    """Write report.json, per_snr.csv, and confusion.csv; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(out_dir, "report.json"),
        "per_snr": os.path.join(out_dir, "per_snr.csv"),
        "confusion": os.path.join(out_dir, "confusion.csv"),
    }
    _atomic_write_text(paths["report"],
                       json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")

    lines = ["snr_db,accuracy,count"]
    lines += [f"{s!r},{acc!r},{n}" for s, acc, n in report.per_snr]
    _atomic_write_text(paths["per_snr"], "\n".join(lines) + "\n")

    header = ["true\\pred"] + list(report.class_names)
    lines = [",".join(header)]
    for i, name in enumerate(report.class_names):
        lines.append(",".join([name] + [str(int(v)) for v in report.confusion[i]]))
    _atomic_write_text(paths["confusion"], "\n".join(lines) + "\n")
    return paths


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationRow:
    variant: str
    params: int
    overall_accuracy: float
    segment_low: float
    segment_mid: float
    segment_high: float


def run_ablation(dataset: Dataset, base_config: ModelConfig,
                 train_config: TrainConfig = None, variants=VARIANTS,
                 ratios=(0.6, 0.2, 0.2), split_seed: int = 42,
                 model_seed: int = 0) -> list:
    """Train and evaluate each variant on one shared split of `dataset`.

    Everything except the variant field is held fixed: same split, same
    model seed, same training schedule. Returns one AblationRow per variant.
    """
    train_config = train_config or TrainConfig()
    train_set, val_set, test_set = split_dataset(dataset, ratios, split_seed)
    rows = []
    for variant in variants:
        cfg = dataclasses.replace(base_config, variant=variant)
        model = CSPMNet(cfg, seed=model_seed)
        train(model, train_set, val_set, train_config)
        rep = evaluate(model, test_set)
        rows.append(AblationRow(variant, rep.params, rep.overall_accuracy,
                                rep.segment_low, rep.segment_mid, rep.segment_high))
    return rows


def write_ablation_csv(rows, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "params", "overall_accuracy",
                         "segment_low", "segment_mid", "segment_high"])
        for r in rows:
            writer.writerow([r.variant, r.params, repr(r.overall_accuracy),
                             "" if r.segment_low is None else repr(r.segment_low),
                             "" if r.segment_mid is None else repr(r.segment_mid),
                             "" if r.segment_high is None else repr(r.segment_high)])
    os.replace(tmp, path)
