"""Tests for metrics, SNR segments, cost counters, and report emission."""

import dataclasses
import json

import numpy as np
import pytest

from cspm.errors import ConfigError
from cspm.evaluation import (AblationRow, count_flops, count_params, emit_report,
                             evaluate, flops_breakdown, linear_flops,
                             run_ablation, write_ablation_csv)
from cspm.model import VARIANTS, CSPMNet, ModelConfig
from cspm.signal_gen import GenerationSpec, synthesize_dataset
from cspm.training import TrainConfig, count_trainable, default_gradcheck_config


# ---------------------------------------------------------------------------
# parameter counter


class TestCountParams:
    def test_formula_matches_live_model_for_declared_configs(self):
        configs = [ModelConfig(variant=v) for v in VARIANTS]
        configs.append(default_gradcheck_config())
        for cfg in configs:
            live = count_trainable(CSPMNet(cfg, seed=0))
            assert count_params(cfg) == live, cfg.variant

    def test_frozen_totals_for_default_configs(self):
        assert count_params(ModelConfig(variant="full")) == 223_691
        assert count_params(ModelConfig(variant="phase_motion_only")) == 202_793
        assert count_params(ModelConfig(variant="fixed_morlet")) == 223_163
        assert count_params(ModelConfig(variant="learnable_morlet")) == 223_179

    def test_default_model_fits_budget(self):
        assert count_params(ModelConfig()) <= 300_000

    def test_formula_matches_live_model_for_random_configs(self):
        rng = np.random.default_rng(0)
        for i in range(8):
            cfg = ModelConfig(
                n_classes=int(rng.integers(2, 6)),
                seq_len=32,
                variant=VARIANTS[i % len(VARIANTS)],
                n_subbands=int(rng.integers(1, 5)),
                kernel_len=int(rng.integers(0, 5)) * 2 + 1,
                lags=tuple(sorted(rng.choice([1, 2, 3, 4, 8], size=int(rng.integers(1, 4)),
                                             replace=False).tolist())),
                mix_channels=int(rng.integers(2, 7)),
                mix_kernel=int(rng.integers(0, 3)) * 2 + 1,
                hidden=int(rng.integers(2, 6)),
                attn_dim=int(rng.integers(2, 7)),
                mlp_hidden=int(rng.integers(2, 9)),
            )
            assert count_params(cfg) == count_trainable(CSPMNet(cfg, seed=i))


# ---------------------------------------------------------------------------
# FLOP counter


class TestCountFlops:
    def test_dense_layer_pin(self):
        # one multiply-add = 2 FLOPs, bias folded: 3 inputs, 2 outputs = 12
        assert linear_flops(3, 2) == 12

    def test_default_full_breakdown_by_hand(self):
        b = flops_breakdown(ModelConfig(variant="full"))
        # T=128, S=8, K=33: 8 * (8*33*128 + 2*128)
        assert b["frontend"] == 272_384
        # 8*128*12 + 8*4*128*18
        assert b["features"] == 86_016
        # 2 * 120 * 128
        assert b["batchnorm"] == 30_720
        # 2 * (120*3) * 64 * 128
        assert b["mix"] == 5_898_240
        # 2*128 * (6*128*(64+128) + 20*128)
        assert b["gru"] == 38_404_096
        # 128*(2*256*64 + 4*64 + 2*64 + 1) + 8*128 + 2*256*128
        assert b["attention"] == 4_310_144
        # 2*256*128 + 128 + 2*128*11
        assert b["mlp"] == 68_480
        assert count_flops(ModelConfig(variant="full")) == 49_070_080

    def test_tiny_config_total_by_hand(self):
        cfg = default_gradcheck_config()
        # T=16, S=2, K=5, L=4, C_feat=30, C_mix=4, k=3, H=3, A=4, H_mlp=4, C=3
        expected = (
            2 * (8 * 5 * 16 + 2 * 16)            # frontend  = 1344
            + 2 * 16 * 12 + 2 * 4 * 16 * 18      # features  = 2688
            + 2 * 30 * 16                        # batchnorm = 960
            + 2 * 90 * 4 * 16                    # mix       = 11520
            + 2 * 16 * (6 * 3 * 7 + 60)          # gru       = 5952
            + 16 * (2 * 6 * 4 + 16 + 8 + 1) + 8 * 16 + 2 * 6 * 16   # attention = 1488
            + 2 * 6 * 4 + 4 + 2 * 4 * 3          # mlp       = 76
        )
        assert expected == 24_028
        assert count_flops(cfg) == expected

    def test_phase_motion_only_skips_frontend(self):
        cfg = ModelConfig(variant="phase_motion_only")
        b = flops_breakdown(cfg)
        assert b["frontend"] == 0
        # single raw subband: 1*128*12 + 1*4*128*18
        assert b["features"] == 10_752
        assert count_flops(cfg) == 43_534_592

    def test_morlet_variants_cost_same_forward_as_full(self):
        # tap regeneration is not counted, so the conv cost is identical
        full = flops_breakdown(ModelConfig(variant="full"))
        for v in ("fixed_morlet", "learnable_morlet"):
            assert flops_breakdown(ModelConfig(variant=v)) == full

    def test_flops_scale_linearly_with_length(self):
        short = count_flops(ModelConfig(seq_len=128))
        long = count_flops(ModelConfig(seq_len=256))
        # everything except the MLP head is per-timestep
        mlp = flops_breakdown(ModelConfig())["mlp"]
        assert long - mlp == 2 * (short - mlp)


# ---------------------------------------------------------------------------
# evaluate()


def two_class_dataset(snr_grid=(-12, 10), per_cell=6, seq_len=32):
    spec = GenerationSpec(modulations=("bpsk", "qpsk"), snr_grid_db=snr_grid,
                          per_cell=per_cell, seq_len=seq_len, seed=11, sps=4)
    return synthesize_dataset(spec)


def tiny_model(tiny_config, **kw):
    return CSPMNet(tiny_config(n_classes=2, seq_len=32, dtype="f32", **kw), seed=0)


class TestEvaluate:
    def test_perfect_predictions(self, tiny_config):
        ds = two_class_dataset()
        model = tiny_model(tiny_config)
        model.predict = lambda x, batch_size=512: ds.to_arrays()[1]
        rep = evaluate(model, ds)
        assert rep.overall_accuracy == 1.0
        assert rep.segment_low == 1.0 and rep.segment_high == 1.0
        assert rep.segment_mid is None          # no grid point in (-10, 0]
        assert rep.n_examples == 24
        assert rep.confusion.tolist() == [[12, 0], [0, 12]]
        assert [row[0] for row in rep.per_snr] == [-12.0, 10.0]
        assert all(n == 12 for _, _, n in rep.per_snr)

    def test_snr_dependent_predictions(self, tiny_config):
        ds = two_class_dataset()
        x, y, snr = ds.to_arrays()
        model = tiny_model(tiny_config)
        # correct at +10 dB, always wrong at -12 dB
        rigged = np.where(snr > 0, y, 1 - y)
        model.predict = lambda x, batch_size=512: rigged
        rep = evaluate(model, ds)
        assert rep.overall_accuracy == 0.5
        assert rep.segment_low == 0.0
        assert rep.segment_high == 1.0
        assert rep.confusion.sum() == rep.n_examples

    def test_segments_are_unweighted_means(self, tiny_config):
        ds = two_class_dataset(snr_grid=(-20, -12), per_cell=8)
        x, y, snr = ds.to_arrays()
        # drop half of the -12 dB cell so the two SNRs have unequal counts
        keep = np.concatenate([np.where(snr == -20)[0], np.where(snr == -12)[0][:8]])
        ds = ds.subset(np.sort(keep))
        x, y, snr = ds.to_arrays()
        rigged = y.copy()
        wrong = np.where(snr == -20)[0][:8]     # -20 dB: 8/16 correct
        rigged[wrong] = 1 - y[wrong]            # -12 dB: 8/8 correct
        model = tiny_model(tiny_config)
        model.predict = lambda x, batch_size=512: rigged
        rep = evaluate(model, ds)
        assert rep.segment_low == pytest.approx((0.5 + 1.0) / 2)
        # a count-weighted mean would give 16/24 instead
        assert rep.segment_low != pytest.approx(16 / 24)

    def test_segment_boundaries(self, tiny_config):
        ds = two_class_dataset(snr_grid=(-10, 0, 2), per_cell=4)
        model = tiny_model(tiny_config)
        model.predict = lambda x, batch_size=512: ds.to_arrays()[1]
        rep = evaluate(model, ds)
        # -10 is low, 0 is mid, 2 is high
        assert rep.segment_low == 1.0
        assert rep.segment_mid == 1.0
        assert rep.segment_high == 1.0
        assert len(rep.per_snr) == 3

    def test_confusion_rows_are_true_classes(self, tiny_config):
        ds = two_class_dataset()
        y = ds.to_arrays()[1]
        model = tiny_model(tiny_config)
        model.predict = lambda x, batch_size=512: np.zeros_like(y)  # always class 0
        rep = evaluate(model, ds)
        assert rep.confusion[0, 0] == 12 and rep.confusion[1, 0] == 12
        assert rep.confusion[0, 1] == 0 and rep.confusion[1, 1] == 0

    def test_real_model_end_to_end(self, tiny_config):
        ds = two_class_dataset()
        model = tiny_model(tiny_config)
        rep = evaluate(model, ds)
        assert 0.0 <= rep.overall_accuracy <= 1.0
        assert rep.confusion.sum() == rep.n_examples
        assert rep.params == count_params(model.config)
        assert rep.flops == count_flops(model.config)

    def test_class_count_mismatch(self, tiny_config):
        ds = two_class_dataset()
        model = CSPMNet(tiny_config(n_classes=3, seq_len=32), seed=0)
        with pytest.raises(ConfigError, match="classes"):
            evaluate(model, ds)

    def test_seq_len_mismatch(self, tiny_config):
        ds = two_class_dataset()
        model = CSPMNet(tiny_config(n_classes=2, seq_len=64), seed=0)
        with pytest.raises(ConfigError, match="length"):
            evaluate(model, ds)


# ---------------------------------------------------------------------------
# report emission


class TestEmitReport:
    @pytest.fixture()
    def report(self, tiny_config):
        ds = two_class_dataset()
        model = tiny_model(tiny_config)
        model.predict = lambda x, batch_size=512: ds.to_arrays()[1]
        return evaluate(model, ds)

    def test_files_and_schema(self, report, tmp_path):
        paths = emit_report(report, str(tmp_path))
        data = json.loads((tmp_path / "report.json").read_text())
        assert data["schema_version"] == 1
        assert data["overall_accuracy"] == 1.0
        assert data["segment_mid"] is None
        assert data["class_names"] == ["bpsk", "qpsk"]
        assert data["params"] == report.params
        assert data["flops"] == report.flops
        assert len(data["per_snr"]) == 2
        assert data["per_snr"][0] == {"snr_db": -12.0, "accuracy": 1.0, "count": 12}
        assert set(paths) == {"report", "per_snr", "confusion"}

    def test_per_snr_csv(self, report, tmp_path):
        emit_report(report, str(tmp_path))
        lines = (tmp_path / "per_snr.csv").read_text().splitlines()
        assert lines[0] == "snr_db,accuracy,count"
        assert lines[1] == "-12.0,1.0,12"
        assert len(lines) == 3

    def test_confusion_csv(self, report, tmp_path):
        emit_report(report, str(tmp_path))
        lines = (tmp_path / "confusion.csv").read_text().splitlines()
        assert lines[0] == "true\\pred,bpsk,qpsk"
        assert lines[1] == "bpsk,12,0"
        assert lines[2] == "qpsk,0,12"

    def test_json_is_sorted_and_reparseable(self, report, tmp_path):
        emit_report(report, str(tmp_path))
        text = (tmp_path / "report.json").read_text()
        assert json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n" == text


# ---------------------------------------------------------------------------
# ablation harness


class TestAblation:
    def test_rows_cover_requested_variants(self, tiny_config):
        spec = GenerationSpec(modulations=("bpsk", "wbfm"), snr_grid_db=(20,),
                              per_cell=40, seq_len=32, seed=5, sps=4)
        ds = synthesize_dataset(spec)
        base = tiny_config(n_classes=2, seq_len=32, dtype="f32")
        rows = run_ablation(ds, base, TrainConfig(epochs=2, batch_size=16, seed=0),
                            variants=("full", "phase_motion_only"),
                            ratios=(0.5, 0.25, 0.25), split_seed=1)
        assert [r.variant for r in rows] == ["full", "phase_motion_only"]
        for row in rows:
            cfg = dataclasses.replace(base, variant=row.variant)
            assert row.params == count_params(cfg)
            assert 0.0 <= row.overall_accuracy <= 1.0
            assert row.segment_low is None and row.segment_mid is None
            assert row.segment_high is not None

    def test_csv_layout_with_empty_segments(self, tmp_path):
        rows = [AblationRow("full", 100, 0.75, None, 0.5, 1.0)]
        path = tmp_path / "ablation.csv"
        write_ablation_csv(rows, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "variant,params,overall_accuracy,segment_low,segment_mid,segment_high"
        assert lines[1] == "full,100,0.75,,0.5,1.0"
