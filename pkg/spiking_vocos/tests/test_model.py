import math
import unittest

import torch

from spiking_vocos.blocks import ConvNeXtBlock, SpikeProbe, SpikingConvNeXtBlock
from spiking_vocos.dsp import StftConfig
from spiking_vocos.errors import InvalidConfig, InvalidInput
from spiking_vocos.model import (
    VARIANTS,
    GeneratorConfig,
    build_generator,
    encode_time,
    readout,
)


def toy_config(**changes) -> GeneratorConfig:
    base = dict(
        n_mels=16,
        dim=8,
        intermediate_dim=16,
        n_blocks=2,
        timesteps=4,
        stft=StftConfig(n_fft=64, n_hop=16),
        layer_scale_init=0.1,
    )
    base.update(changes)
    return GeneratorConfig(**base)


def toy_mel(n_mels: int = 16, frames: int = 6, seed: int = 0) -> torch.Tensor:
    return torch.randn(n_mels, frames, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


class GeneratorConfigTests(unittest.TestCase):
    def test_ann_mode_forces_single_step_without_tsm(self) -> None:
        cfg = GeneratorConfig(mode="ANN", timesteps=8, tsm_enabled=True)
        self.assertEqual(cfg.mode, "ann")
        self.assertEqual(cfg.timesteps, 1)
        self.assertFalse(cfg.tsm_enabled)

    def test_default_tsm_split(self) -> None:
        tsm = GeneratorConfig().tsm
        self.assertEqual((tsm.c_minus, tsm.c_zero, tsm.c_one, tsm.alpha), (128, 384, 512, 0.5))

    def test_invalid_values_rejected(self) -> None:
        with self.assertRaises(InvalidConfig):
            GeneratorConfig(n_blocks=0)
        with self.assertRaises(InvalidConfig):
            GeneratorConfig(mode="hybrid")
        with self.assertRaises(InvalidConfig):
            GeneratorConfig.from_dict({"dims": 3})

    def test_variant_presets(self) -> None:
        cfg = GeneratorConfig.for_variant("spiking-4-tsm-kd", dim=16, intermediate_dim=48)
        self.assertTrue(cfg.is_spiking)
        self.assertEqual(cfg.timesteps, 4)
        self.assertTrue(cfg.tsm_enabled)
        self.assertTrue(cfg.distill_expected)
        self.assertEqual(cfg.tsm.c_one, 16)
        self.assertFalse(GeneratorConfig.for_variant("spiking-8").distill_expected)
        self.assertEqual(GeneratorConfig.for_variant("vocos").mode, "ann")
        self.assertEqual(len(VARIANTS), 6)

    def test_dict_round_trip(self) -> None:
        cfg = toy_config(tsm_enabled=True, per_channel_tau=True, variant="spiking-4-tsm")
        self.assertEqual(GeneratorConfig.from_dict(cfg.to_dict()), cfg)

    def test_replace_resets_tsm_split_for_new_width(self) -> None:
        cfg = toy_config().replace(dim=12)
        self.assertEqual(cfg.tsm.c_one, 12)


class TimeCodingTests(unittest.TestCase):
    def test_encode_replicates(self) -> None:
        x = toy_mel(8, 5).unsqueeze(0)
        self.assertTrue(torch.equal(encode_time(x, 1), x))
        coded = encode_time(x, 4)
        self.assertEqual(tuple(coded.shape), (4, 8, 5))
        for t in range(4):
            self.assertTrue(torch.equal(coded[t], coded[0]))

    def test_readout_is_mean(self) -> None:
        x = toy_mel(8, 5).unsqueeze(0)
        self.assertTrue(torch.equal(readout(x), x))
        self.assertTrue(torch.allclose(readout(encode_time(x, 3)), x))
        spikes = torch.zeros(4, 2, 3)
        spikes[0] = 1.0
        self.assertTrue(torch.equal(readout(spikes), torch.full((1, 2, 3), 0.25)))


class GeneratorShapeTests(unittest.TestCase):
    def test_mel_frames_to_waveform_length(self) -> None:
        cfg = GeneratorConfig(dim=32, intermediate_dim=96, n_blocks=2, timesteps=4)
        model = build_generator(cfg, seed=0)
        for frames in (1, 10, 94, 1000):
            with torch.no_grad():
                out = model(torch.zeros(100, frames))
            self.assertEqual(tuple(out.waveform.shape), (256 * frames,))
            self.assertEqual(len(out.taps), 2)

    def test_embed_preserves_frames(self) -> None:
        model = build_generator(GeneratorConfig(n_blocks=1, mode="ann"), seed=0)
        with torch.no_grad():
            self.assertEqual(tuple(model.embed(torch.zeros(100, 94)).shape), (1, 512, 94))

    def test_embed_conv_is_linear(self) -> None:
        model = build_generator(toy_config(mode="ann"), dtype=torch.float64, seed=0)
        mel = toy_mel()
        with torch.no_grad():
            a = model.embed_conv(3.0 * mel.unsqueeze(0))
            b = 3.0 * model.embed_conv(mel.unsqueeze(0))
        self.assertTrue(torch.allclose(a, b))

    def test_wrong_mel_height_rejected(self) -> None:
        model = build_generator(toy_config(), seed=0)
        with self.assertRaises(InvalidInput):
            model(torch.zeros(80, 6))

    def test_block_types_follow_mode(self) -> None:
        self.assertIsInstance(build_generator(toy_config(mode="ann")).blocks[0], ConvNeXtBlock)
        self.assertNotIsInstance(build_generator(toy_config(mode="ann")).blocks[0], SpikingConvNeXtBlock)
        self.assertIsInstance(build_generator(toy_config()).blocks[0], SpikingConvNeXtBlock)


class HeadTests(unittest.TestCase):
    def setUp(self) -> None:
        self.model = build_generator(toy_config(mode="ann"), dtype=torch.float64, seed=0)

    def test_zero_projection_gives_unit_magnitude(self) -> None:
        with torch.no_grad():
            self.model.head_proj.weight.zero_()
            self.model.head_proj.bias.zero_()
            spectrum, waveform = self.model.head(torch.zeros(1, 8, 6, dtype=torch.float64))
        self.assertTrue(torch.equal(spectrum.magnitude, torch.ones(33, 6, dtype=torch.float64)))
        self.assertEqual(float(spectrum.phase.abs().max()), 0.0)
        self.assertEqual(tuple(waveform.shape), (96,))

    def test_magnitude_is_clipped_at_ceiling(self) -> None:
        with torch.no_grad():
            self.model.head_proj.weight.zero_()
            self.model.head_proj.bias.fill_(10.0)
            spectrum, _ = self.model.head(torch.zeros(1, 8, 3, dtype=torch.float64))
        self.assertTrue(torch.allclose(spectrum.magnitude, torch.full((33, 3), 100.0, dtype=torch.float64)))


class GeneratorForwardTests(unittest.TestCase):
    def test_ann_forward_shapes(self) -> None:
        model = build_generator(toy_config(mode="ann"), dtype=torch.float64, seed=1)
        out = model(toy_mel())
        self.assertEqual(tuple(out.waveform.shape), (96,))
        self.assertEqual(tuple(out.spectrum.magnitude.shape), (33, 6))
        self.assertEqual([tuple(t.shape) for t in out.taps], [(1, 8, 6), (1, 8, 6)])
        self.assertEqual(out.spike_stats, {})

    def test_snn_forward_reports_rates(self) -> None:
        model = build_generator(toy_config(), dtype=torch.float64, seed=2)
        with torch.no_grad():
            out = model(toy_mel(seed=3) * 3)
        self.assertTrue(bool(torch.isfinite(out.waveform).all()))
        self.assertEqual(sorted(out.spike_stats), ["block0.plif1", "block0.plif2", "block1.plif1", "block1.plif2"])
        for rate in out.spike_stats.values():
            self.assertGreaterEqual(rate, 0.0)
            self.assertLessEqual(rate, 1.0)

    def test_unreachable_threshold_never_fires(self) -> None:
        model = build_generator(toy_config(v_threshold=1e9), dtype=torch.float64, seed=4)
        probe = SpikeProbe()
        with torch.no_grad():
            out = model(toy_mel(seed=5) * 10, probe=probe)
        self.assertEqual(probe.total_spikes(), 0)
        self.assertEqual(set(out.spike_stats.values()), {0.0})

    def test_timesteps_override(self) -> None:
        model = build_generator(toy_config(), dtype=torch.float64, seed=6)
        probe = SpikeProbe()
        with torch.no_grad():
            model(toy_mel(), probe=probe, timesteps=8)
        self.assertEqual(probe.sites[(0, 0)].shape[0], 8)

    def test_non_positive_timesteps_override_rejected(self) -> None:
        model = build_generator(toy_config(), dtype=torch.float64, seed=6)
        for steps in (0, -2):
            with self.assertRaises(InvalidConfig):
                model(toy_mel(), timesteps=steps)

    def test_ann_rejects_timesteps_override(self) -> None:
        model = build_generator(toy_config(mode="ann"), seed=7)
        with self.assertRaises(InvalidConfig):
            model(toy_mel().float(), timesteps=4)

    def test_same_seed_is_bit_identical(self) -> None:
        outputs = []
        for _ in range(2):
            model = build_generator(toy_config(tsm_enabled=True), dtype=torch.float64, seed=8)
            with torch.no_grad():
                outputs.append(model(toy_mel(seed=9) * 2).waveform)
        self.assertTrue(torch.equal(outputs[0], outputs[1]))

    def test_non_finite_mel_rejected(self) -> None:
        model = build_generator(toy_config(), seed=10)
        mel = torch.zeros(16, 4)
        mel[0, 0] = math.inf
        with self.assertRaises(InvalidInput):
            model(mel)


if __name__ == "__main__":
    unittest.main()
