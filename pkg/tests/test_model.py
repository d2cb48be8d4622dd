import numpy as np
import pytest

from cspm.errors import (
    BadMagicError,
    BadVersionError,
    ChecksumError,
    ConfigError,
    FormatError,
    ShapeError,
    StateError,
    TruncatedFileError,
)
from cspm.model import (
    CSPMNet,
    ModelConfig,
    load_checkpoint,
    peek_checkpoint_config,
    save_checkpoint,
)


def batch(cfg, n=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 2, cfg.seq_len)).astype(cfg.np_dtype)


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.n_classes == 11 and cfg.seq_len == 128
        assert cfg.feature_channels == 120
        assert cfg.lags == (1, 2, 4, 8)

    def test_phase_motion_only_channels(self):
        cfg = ModelConfig(variant="phase_motion_only")
        assert cfg.effective_subbands == 1
        assert cfg.feature_channels == 15

    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(variant="transformer")
        with pytest.raises(ConfigError):
            ModelConfig(kernel_len=32)
        with pytest.raises(ConfigError):
            ModelConfig(n_classes=1)
        with pytest.raises(ConfigError):
            ModelConfig(lags=(2, 1))
        with pytest.raises(ConfigError):
            ModelConfig(dtype="f16")

    def test_json_roundtrip(self):
        cfg = ModelConfig(n_classes=5, lags=(1, 3), dtype="f64")
        back = ModelConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_json_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_json('{"bogus": 1}')


class TestConstruction:
    def test_deterministic_init(self, tiny_config):
        a = CSPMNet(tiny_config(), seed=7)
        b = CSPMNet(tiny_config(), seed=7)
        for (na, pa), (nb, pb) in zip(a.state_items(), b.state_items()):
            assert na == nb
            np.testing.assert_array_equal(pa.value, pb.value)

    def test_seed_changes_init(self, tiny_config):
        a = CSPMNet(tiny_config(), seed=1)
        b = CSPMNet(tiny_config(), seed=2)
        assert not np.array_equal(a.params["mlp.w1"].value, b.params["mlp.w1"].value)

    def test_variant_parameter_sets(self, tiny_config):
        full = CSPMNet(tiny_config(variant="full"))
        assert full.params["frontend.w_real"].trainable
        fixed = CSPMNet(tiny_config(variant="fixed_morlet"))
        assert not fixed.params["frontend.freqs"].trainable
        learn = CSPMNet(tiny_config(variant="learnable_morlet"))
        assert learn.params["frontend.freqs"].trainable
        pmo = CSPMNet(tiny_config(variant="phase_motion_only"))
        assert not any(k.startswith("frontend.") for k in pmo.params)

    def test_running_stats_not_trainable(self, tiny_config):
        m = CSPMNet(tiny_config())
        assert not m.params["bn.running_mean"].trainable
        assert not m.params["bn.running_var"].trainable
        names = [p.name for p in m.trainable_params()]
        assert "bn.gamma" in names and "bn.running_var" not in names

    def test_dtype_applied(self, tiny_config):
        m32 = CSPMNet(tiny_config(dtype="f32"))
        assert all(p.value.dtype == np.float32 for p in m32.params.values())
        m64 = m32.astype("f64")
        assert all(p.value.dtype == np.float64 for p in m64.params.values())
        np.testing.assert_array_equal(
            m64.params["mlp.w1"].value, m32.params["mlp.w1"].value.astype(np.float64))


class TestForward:
    @pytest.mark.parametrize("variant", ["full", "phase_motion_only",
                                         "fixed_morlet", "learnable_morlet"])
    def test_logit_shapes(self, tiny_config, variant):
        cfg = tiny_config(variant=variant)
        m = CSPMNet(cfg, seed=3)
        logits, cache = m.forward(batch(cfg, n=4), train=False)
        assert logits.shape == (4, cfg.n_classes)
        assert np.all(np.isfinite(logits))

    def test_input_shape_validated(self, tiny_config):
        cfg = tiny_config()
        m = CSPMNet(cfg)
        with pytest.raises(ShapeError):
            m.forward(np.zeros((2, 3, cfg.seq_len)))
        with pytest.raises(ShapeError):
            m.forward(np.zeros((2, 2, cfg.seq_len + 1)))

    def test_eval_independent_of_batch_composition(self, tiny_config):
        cfg = tiny_config()
        m = CSPMNet(cfg, seed=4)
        x = batch(cfg, n=5, seed=9)
        all_logits = m.predict_logits(x)
        solo = m.predict_logits(x[2:3])
        np.testing.assert_allclose(all_logits[2], solo[0], atol=1e-12)

    def test_train_mode_updates_running_stats(self, tiny_config):
        cfg = tiny_config()
        m = CSPMNet(cfg, seed=5)
        before = m.params["bn.running_mean"].value.copy()
        m.forward(batch(cfg), train=True)
        assert not np.array_equal(m.params["bn.running_mean"].value, before)

    def test_eval_mode_preserves_running_stats(self, tiny_config):
        cfg = tiny_config()
        m = CSPMNet(cfg, seed=5)
        before = m.params["bn.running_mean"].value.copy()
        m.forward(batch(cfg), train=False)
        np.testing.assert_array_equal(m.params["bn.running_mean"].value, before)

    def test_argmax_tie_breaks_low_index(self, tiny_config, monkeypatch):
        cfg = tiny_config()
        m = CSPMNet(cfg)
        monkeypatch.setattr(m, "predict_logits",
                            lambda x, batch_size=512: np.array([[1.0, 1.0, 0.5]]))
        assert m.predict(np.zeros((1, 2, cfg.seq_len)))[0] == 0

    def test_backward_without_cache_raises(self, tiny_config):
        m = CSPMNet(tiny_config())
        with pytest.raises(StateError):
            m.backward(np.zeros((1, 3)), None)


class TestFullModelGradients:
    @pytest.mark.parametrize("variant", ["full", "learnable_morlet",
                                         "phase_motion_only", "fixed_morlet"])
    def test_selected_groups_match_finite_differences(self, tiny_config, variant):
        cfg = tiny_config(variant=variant)
        m = CSPMNet(cfg, seed=11)
        x = batch(cfg, n=3, seed=12)
        cot = np.random.default_rng(13).standard_normal((3, cfg.n_classes))

        def loss():
            logits, _ = m.forward(x, train=True, update_stats=False)
            return float(np.sum(logits * cot))

        logits, cache = m.forward(x, train=True, update_stats=False)
        m.backward(cot, cache)

        names = ["mix.weight", "gru.fwd.w_hh", "gru.bwd.b_ih", "attn.score",
                 "bn.gamma", "mlp.w2"]
        if variant == "full":
            names += ["frontend.w_real", "frontend.w_imag"]
        elif variant == "learnable_morlet":
            names += ["frontend.freqs", "frontend.sigmas"]
        h = 1e-6
        for name in names:
            p = m.params[name]
            num = np.zeros_like(p.value)
            it = np.nditer(p.value, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                keep = p.value[idx]
                p.value[idx] = keep + h
                lp = loss()
                p.value[idx] = keep - h
                lm = loss()
                p.value[idx] = keep
                num[idx] = (lp - lm) / (2 * h)
                it.iternext()
            np.testing.assert_allclose(p.grad, num, rtol=1e-5, atol=1e-8,
                                       err_msg=f"{variant}:{name}")

    def test_frozen_morlet_gets_no_grad(self, tiny_config):
        cfg = tiny_config(variant="fixed_morlet")
        m = CSPMNet(cfg, seed=1)
        x = batch(cfg)
        logits, cache = m.forward(x, train=True, update_stats=False)
        m.backward(np.ones_like(logits), cache)
        assert m.params["frontend.freqs"].grad is None
        assert m.params["mlp.w1"].grad is not None


class TestCheckpoint:
    def test_roundtrip_values_and_config(self, tiny_config, tmp_path):
        cfg = tiny_config(dtype="f32")
        m = CSPMNet(cfg, seed=21)
        x = batch(cfg, n=4, seed=2)
        m.forward(x, train=True)  # move running stats off their init
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(m, path)
        back = load_checkpoint(path)
        assert back.config == cfg
        for (na, pa), (nb, pb) in zip(m.state_items(), back.state_items()):
            assert na == nb
            np.testing.assert_array_equal(pa.value, pb.value)
            assert pa.trainable == pb.trainable

    def test_save_load_save_is_byte_identical(self, tiny_config, tmp_path):
        m = CSPMNet(tiny_config(), seed=3)
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_checkpoint(m, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_predictions_survive_roundtrip(self, tiny_config, tmp_path):
        cfg = tiny_config(dtype="f32")
        m = CSPMNet(cfg, seed=8)
        x = batch(cfg, n=6, seed=4)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(m, path)
        np.testing.assert_array_equal(
            m.predict_logits(x), load_checkpoint(path).predict_logits(x))

    def test_peek_config(self, tiny_config, tmp_path):
        cfg = tiny_config(n_classes=4)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(CSPMNet(cfg), path)
        assert peek_checkpoint_config(path) == cfg

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(BadMagicError):
            load_checkpoint(str(path))

    def test_bad_version(self, tiny_config, tmp_path):
        path = str(tmp_path / "v.ckpt")
        save_checkpoint(CSPMNet(tiny_config()), path)
        blob = bytearray(open(path, "rb").read())
        blob[8:12] = (9).to_bytes(4, "little")
        open(path, "wb").write(bytes(blob))
        with pytest.raises(BadVersionError):
            load_checkpoint(str(path))

    def test_corrupt_config_checksum(self, tiny_config, tmp_path):
        path = str(tmp_path / "c.ckpt")
        save_checkpoint(CSPMNet(tiny_config()), path)
        blob = bytearray(open(path, "rb").read())
        # flip a byte inside the config JSON
        blob[20] ^= 0xFF
        open(path, "wb").write(bytes(blob))
        with pytest.raises((ChecksumError, FormatError, ConfigError)):
            load_checkpoint(str(path))

    def test_truncated(self, tiny_config, tmp_path):
        path = str(tmp_path / "t.ckpt")
        save_checkpoint(CSPMNet(tiny_config()), path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:len(blob) // 2])
        with pytest.raises(TruncatedFileError):
            load_checkpoint(str(path))

    def test_trailing_bytes(self, tiny_config, tmp_path):
        path = str(tmp_path / "tr.ckpt")
        save_checkpoint(CSPMNet(tiny_config()), path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob + b"\x01")
        with pytest.raises(FormatError):
            load_checkpoint(str(path))
