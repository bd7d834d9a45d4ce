"""Assembled model: shapes, determinism, variants, parameter accounting."""

import numpy as np
import pytest

from viofusion.config import Config
from viofusion.errors import ConfigError, ShapeError
from viofusion.model import VioModel, build_model, param_report

from conftest import tiny_config


def small_inputs(rng, n=3, image_size=64, imu_len=11):
    pairs = rng.standard_normal((n, 2, image_size, image_size))
    imus = rng.standard_normal((n, 6, imu_len))
    return pairs, imus


class TestForward:
    def test_pair_output_shape(self, rng):
        model = VioModel(Config(), seed=0)
        pairs, imus = small_inputs(rng, n=1)
        out = model.forward_pair(pairs[0], imus[0])
        assert out.shape == (6,)

    def test_sequence_has_one_output_per_interval(self, rng):
        model = VioModel(Config(), seed=0)
        pairs, imus = small_inputs(rng, n=4)
        out = model.forward_sequence(pairs, imus)
        assert out.shape == (4, 6)
        single = model.forward_pair(pairs[2], imus[2])
        assert np.array_equal(out.numpy()[2], single.numpy())

    def test_sequence_shape_guard(self, rng):
        model = VioModel(Config(), seed=0)
        pairs, imus = small_inputs(rng, n=3)
        with pytest.raises(ShapeError):
            model.forward_sequence(pairs, imus[:2])
        with pytest.raises(ShapeError):
            model.forward_sequence(pairs[0], imus)

    def test_zeroed_regressor_emits_zero_pose(self, rng):
        model = VioModel(Config(), seed=0)
        model.regressor.fc2.weight.data = np.zeros_like(model.regressor.fc2.weight.data)
        model.regressor.fc2.bias.data = np.zeros_like(model.regressor.fc2.bias.data)
        pairs, imus = small_inputs(rng, n=1)
        out = model.forward_pair(pairs[0], imus[0]).numpy()
        assert np.array_equal(out, np.zeros(6))

    def test_stage_dim_guard(self, rng):
        model = VioModel(Config(), seed=0)
        model.config = Config(visual_dim=192, inertial_dim=64)
        pairs, imus = small_inputs(rng, n=1)
        with pytest.raises(ConfigError, match="visual stage"):
            model.forward_pair(pairs[0], imus[0])


class TestPrecision:
    def test_f32_default(self, rng):
        model = VioModel(Config(), seed=0)
        for _, p in model.named_parameters():
            assert p.data.dtype == np.float32
        pairs, imus = small_inputs(rng, n=1)
        assert model.forward_pair(pairs[0], imus[0]).dtype == np.float32

    def test_f64_mode(self, rng):
        model = VioModel(Config(precision="f64"), seed=0)
        for _, p in model.named_parameters():
            assert p.data.dtype == np.float64
        pairs, imus = small_inputs(rng, n=1)
        assert model.forward_pair(pairs[0], imus[0]).dtype == np.float64


class TestDeterminism:
    def test_same_seed_same_weights_and_outputs(self, rng):
        a = VioModel(Config(), seed=7)
        b = VioModel(Config(), seed=7)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)
        pairs, imus = small_inputs(rng, n=2)
        assert np.array_equal(
            a.forward_sequence(pairs, imus).numpy(),
            b.forward_sequence(pairs, imus).numpy(),
        )

    def test_different_seed_different_weights(self):
        a = VioModel(Config(), seed=7)
        b = VioModel(Config(), seed=8)
        assert not np.array_equal(a.visual.convs[0].weight.data,
                                  b.visual.convs[0].weight.data)

    def test_build_model_defaults_to_train_seed(self):
        cfg = Config(train_seed=5)
        a = build_model(cfg)
        b = VioModel(cfg, seed=5)
        assert np.array_equal(a.regressor.fc1.weight.data, b.regressor.fc1.weight.data)


class TestVariants:
    def test_all_fusion_modes_forward(self, rng):
        pairs, imus = small_inputs(rng, n=2)
        for mode in ("ema", "self_attention", "lstm"):
            model = VioModel(Config(fusion_mode=mode), seed=1)
            assert model.forward_sequence(pairs, imus).shape == (2, 6)

    def test_lstm_fusion_narrows_the_head(self):
        wide = VioModel(Config(), seed=0)
        narrow = VioModel(Config(fusion_mode="lstm"), seed=0)
        assert wide.regressor.in_width == 256
        assert narrow.regressor.in_width == 64

    def test_lstm_inertial_encoder_variant(self, rng):
        model = VioModel(Config(use_wavenet=False), seed=1)
        pairs, imus = small_inputs(rng, n=2)
        assert model.forward_sequence(pairs, imus).shape == (2, 6)

    def test_memory_flag_variants_forward(self, rng):
        pairs, imus = small_inputs(rng, n=1)
        for overrides in ({"memory_norm": "softmax"}, {"memory_target": "v"},
                          {"attention_scale": True}):
            model = VioModel(Config(**overrides), seed=1)
            assert model.forward_pair(pairs[0], imus[0]).shape == (6,)


class TestAccounting:
    def test_default_block_param_counts(self):
        counts = VioModel(Config(), seed=0).block_param_counts()
        assert counts == {
            "visual": 151752,
            "inertial": 103936,
            "fusion": 24576,
            "regressor": 33670,
            "total": 313934,
        }

    def test_counts_match_actual_parameters(self):
        model = VioModel(Config(), seed=0)
        total = sum(p.size for _, p in model.named_parameters())
        assert model.block_param_counts()["total"] == total

    def test_default_macs(self):
        macs = VioModel(Config(), seed=0).block_macs()
        assert macs == {
            "visual": 1269760,
            "inertial": 1048704,
            "fusion": 100352,
            "regressor": 33536,
            "total": 2452352,
        }

    def test_param_report_fusion_comparison(self):
        report = param_report(Config())
        assert report["fusion_comparison"] == {"ema": 24576, "lstm": 33024}
        assert report["fusion_comparison"]["ema"] < report["fusion_comparison"]["lstm"]
        assert report["blocks"]["total"] == 313934
        assert report["config"]["model"]["fusion_mode"] == "ema"

    def test_lstm_fusion_accounting(self):
        counts = VioModel(Config(fusion_mode="lstm"), seed=0).block_param_counts()
        assert counts["fusion"] == 33024
        # head shrinks: 64 -> 128 hidden instead of 256 -> 128
        assert counts["regressor"] == 64 * 128 + 128 + 128 * 6 + 6

    def test_self_attention_accounting(self):
        counts = VioModel(Config(fusion_mode="self_attention"), seed=0).block_param_counts()
        assert counts["fusion"] == 16384

    def test_macs_scale_with_image_size(self):
        small = VioModel(tiny_config(), seed=0).block_macs()
        big = VioModel(tiny_config(image_size=128), seed=0).block_macs()
        assert big["visual"] > small["visual"]
        assert big["inertial"] == small["inertial"]
