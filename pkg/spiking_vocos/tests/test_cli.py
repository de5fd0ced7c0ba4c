import contextlib
import csv
import io
import json
import re
import tempfile
import unittest
from pathlib import Path

import numpy as np
import soundfile as sf
import torch

from spiking_vocos.blocks import SpikeProbe
from spiking_vocos.checkpoint import load_checkpoint, load_tensor, save_checkpoint, save_tensor
from spiking_vocos.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main
from spiking_vocos.model import GeneratorConfig, build_generator
from spiking_vocos.train import METRIC_COLUMNS

TOY_GENERATOR = {
    "n_mels": 32,
    "dim": 8,
    "intermediate_dim": 16,
    "n_blocks": 2,
    "stft": {"n_fft": 256, "n_hop": 64},
}


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


class CliTestCase(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def write_config(self, name="cfg.json", **sections) -> Path:
        path = self.tmp / name
        path.write_text(json.dumps(sections), encoding="utf-8")
        return path

    def toy_checkpoint(self, name: str, **changes) -> Path:
        cfg = GeneratorConfig.from_dict({**TOY_GENERATOR, **changes})
        return save_checkpoint(build_generator(cfg, seed=0), self.tmp / name)

    def toy_mel(self, frames: int = 8) -> Path:
        mel = torch.randn(32, frames, generator=torch.Generator().manual_seed(0)) * 3
        return save_tensor(self.tmp / "mel.svoc", mel)


class MelCommandTests(CliTestCase):
    def test_one_second_clip(self) -> None:
        wav = self.tmp / "in.wav"
        t = np.arange(24000) / 24000
        sf.write(str(wav), 0.3 * np.sin(2 * np.pi * 440 * t), 24000, subtype="PCM_16")
        code, out, err = run_cli("mel", "--in", wav, "--out", self.tmp / "mel.svoc")
        self.assertEqual(code, EXIT_OK, msg=err)
        self.assertEqual(tuple(load_tensor(self.tmp / "mel.svoc").shape), (100, 94))
        self.assertIn('"n_mels":100', err)

    def test_missing_file(self) -> None:
        code, _, err = run_cli("mel", "--in", self.tmp / "missing.wav", "--out", self.tmp / "mel.svoc")
        self.assertEqual(code, EXIT_IO)
        self.assertIn("missing.wav", err)

    def test_wrong_rate(self) -> None:
        wav = self.tmp / "cd.wav"
        sf.write(str(wav), np.zeros(4410), 44100, subtype="PCM_16")
        code, _, err = run_cli("mel", "--in", wav, "--out", self.tmp / "mel.svoc")
        self.assertEqual(code, EXIT_IO)
        self.assertIn("44100", err)

    def test_malformed_config(self) -> None:
        wav = self.tmp / "in.wav"
        sf.write(str(wav), np.zeros(2400), 24000, subtype="PCM_16")
        cfg = self.tmp / "bad.json"
        cfg.write_text('{\n  "mel": {\n    "n_mels": ,\n  }\n}\n', encoding="utf-8")
        code, _, err = run_cli("mel", "--in", wav, "--out", self.tmp / "mel.svoc", "--config", cfg)
        self.assertEqual(code, EXIT_USAGE)
        self.assertRegex(err, re.escape(str(cfg)) + r":3:\d+:")

    def test_usage_error(self) -> None:
        code, _, err = run_cli("mel", "--out", self.tmp / "mel.svoc")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("--in", err)


class SynthCommandTests(CliTestCase):
    def test_spiking_synthesis(self) -> None:
        ckpt = self.toy_checkpoint("snn.svoc")
        code, out, err = run_cli("synth", "--mel", self.toy_mel(), "--ckpt", ckpt, "--out", self.tmp / "o.wav")
        self.assertEqual(code, EXIT_OK, msg=err)
        samples, rate = sf.read(str(self.tmp / "o.wav"))
        self.assertEqual((samples.shape[0], rate), (512, 24000))
        self.assertIn("firing rate mean=", out)
        self.assertIn("block 1: r=", out)

    def test_timesteps_override(self) -> None:
        ckpt = self.toy_checkpoint("snn.svoc")
        code, out, _ = run_cli(
            "synth", "--mel", self.toy_mel(), "--ckpt", ckpt, "--out", self.tmp / "o.wav", "--timesteps", "8"
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn("(T=8)", out)

    def test_ann_rejects_timesteps(self) -> None:
        ckpt = self.toy_checkpoint("ann.svoc", mode="ann")
        code, _, err = run_cli(
            "synth", "--mel", self.toy_mel(), "--ckpt", ckpt, "--out", self.tmp / "o.wav", "--timesteps", "4"
        )
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("--timesteps", err)

    def test_zero_timesteps_rejected(self) -> None:
        ckpt = self.toy_checkpoint("snn.svoc")
        code, _, err = run_cli(
            "synth", "--mel", self.toy_mel(), "--ckpt", ckpt, "--out", self.tmp / "o.wav", "--timesteps", "0"
        )
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("timesteps", err)
        self.assertFalse((self.tmp / "o.wav").exists())

    def test_corrupt_checkpoint(self) -> None:
        ckpt = self.tmp / "junk.svoc"
        ckpt.write_bytes(b"SVOC\x01")
        code, _, _ = run_cli("synth", "--mel", self.toy_mel(), "--ckpt", ckpt, "--out", self.tmp / "o.wav")
        self.assertEqual(code, EXIT_IO)


class TrainCommandTests(CliTestCase):
    def setUp(self) -> None:
        super().setUp()
        self.config = self.write_config(
            generator=TOY_GENERATOR,
            train={"steps": 3, "lr": 0.01},
            data={"n_clips": 2, "clip_seconds": 0.05},
        )

    def test_same_seed_gives_identical_logs(self) -> None:
        for name in ("a", "b"):
            code, _, err = run_cli("train", "--config", self.config, "--out", self.tmp / f"{name}.svoc", "--seed", "4")
            self.assertEqual(code, EXIT_OK, msg=err)
        a = (self.tmp / "a.csv").read_text(encoding="utf-8")
        self.assertEqual(a, (self.tmp / "b.csv").read_text(encoding="utf-8"))
        self.assertEqual(len(a.splitlines()), 4)
        model = load_checkpoint(self.tmp / "a.svoc")
        self.assertEqual(model.config.dim, 8)

    def test_variant_flag_and_steps(self) -> None:
        code, _, err = run_cli(
            "train", "--config", self.config, "--out", self.tmp / "v.svoc", "--variant", "vocos", "--steps", "2",
            "--log", self.tmp / "v-log.csv",
        )
        self.assertEqual(code, EXIT_OK, msg=err)
        self.assertFalse(load_checkpoint(self.tmp / "v.svoc").config.is_spiking)
        self.assertEqual(len((self.tmp / "v-log.csv").read_text(encoding="utf-8").splitlines()), 3)

    def test_distill_without_teacher(self) -> None:
        code, _, err = run_cli("distill", "--config", self.config, "--out", self.tmp / "s.svoc")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("--teacher", err)

    def test_distill_rejects_spiking_teacher(self) -> None:
        teacher = self.toy_checkpoint("snn-teacher.svoc")
        code, _, _ = run_cli("distill", "--config", self.config, "--out", self.tmp / "s.svoc", "--teacher", teacher)
        self.assertEqual(code, EXIT_USAGE)

    def test_distill_writes_kd_columns(self) -> None:
        teacher = self.toy_checkpoint("ann.svoc", mode="ann")
        code, _, err = run_cli(
            "distill", "--config", self.config, "--out", self.tmp / "s.svoc", "--teacher", teacher,
            "--variant", "spiking-4-tsm-kd",
        )
        self.assertEqual(code, EXIT_OK, msg=err)
        with (self.tmp / "s.csv").open(newline="") as handle:
            rows = list(csv.DictReader(handle))
        self.assertEqual(tuple(rows[0].keys()), METRIC_COLUMNS)
        self.assertTrue(all(float(row["loss_feat"]) > 0 for row in rows))
        student = load_checkpoint(self.tmp / "s.svoc")
        self.assertTrue(student.config.tsm_enabled)

    def test_train_rejects_distillation_variant(self) -> None:
        code, _, err = run_cli("train", "--config", self.config, "--out", self.tmp / "kd.svoc", "--variant", "spiking-4-kd")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("svoc distill", err)
        self.assertFalse((self.tmp / "kd.svoc").exists())

    def test_distill_rejects_plain_variant(self) -> None:
        teacher = self.toy_checkpoint("ann.svoc", mode="ann")
        code, _, err = run_cli(
            "distill", "--config", self.config, "--out", self.tmp / "s.svoc", "--teacher", teacher,
            "--variant", "spiking-4",
        )
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("spiking-4-kd", err)
        self.assertFalse((self.tmp / "s.svoc").exists())

    def test_unknown_section(self) -> None:
        config = self.write_config("odd.json", optimiser={"lr": 1})
        code, _, err = run_cli("train", "--config", config, "--out", self.tmp / "x.svoc")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("optimiser", err)


class EnergyCommandTests(CliTestCase):
    def test_all_rows(self) -> None:
        code, out, _ = run_cli("energy", "--all", "--csv", self.tmp / "e.csv")
        self.assertEqual(code, EXIT_OK)
        for label in ("vocos", "spiking-8", "spiking-4-tsm-kd"):
            self.assertIn(label, out)
        self.assertEqual(len((self.tmp / "e.csv").read_text(encoding="utf-8").splitlines()), 7)

    def test_frames_scale_totals(self) -> None:
        totals = []
        for frames in (1000, 2000):
            path = self.tmp / f"e{frames}.csv"
            code, _, _ = run_cli("energy", "--rate", "0.2", "--frames", frames, "--csv", path)
            self.assertEqual(code, EXIT_OK)
            with path.open(newline="") as handle:
                totals.append([float(row["energy_pj"]) for row in csv.DictReader(handle)])
        for short, long in zip(*totals):
            self.assertAlmostEqual(long / short, 2.0, places=9)

    def test_needs_a_rate_source(self) -> None:
        code, _, _ = run_cli("energy")
        self.assertEqual(code, EXIT_USAGE)

    def test_rate_sources_are_exclusive(self) -> None:
        code, _, _ = run_cli("energy", "--all", "--rate", "0.1")
        self.assertEqual(code, EXIT_USAGE)

    def test_rate_out_of_range(self) -> None:
        code, _, _ = run_cli("energy", "--rate", "1.5")
        self.assertEqual(code, EXIT_USAGE)


class SpikesCommandTests(CliTestCase):
    def test_ann_checkpoint_rejected(self) -> None:
        ckpt = self.toy_checkpoint("ann.svoc", mode="ann")
        code, _, _ = run_cli("spikes", "--mel", self.toy_mel(), "--ckpt", ckpt, "--out", self.tmp / "run")
        self.assertEqual(code, EXIT_USAGE)

    def test_zero_timesteps_rejected(self) -> None:
        ckpt = self.toy_checkpoint("snn.svoc")
        code, _, _ = run_cli("spikes", "--mel", self.toy_mel(), "--ckpt", ckpt, "--out", self.tmp / "run", "--timesteps", "0")
        self.assertEqual(code, EXIT_USAGE)
        self.assertFalse((self.tmp / "run.csv").exists())

    def test_measured_run_keeps_recorded_timesteps(self) -> None:
        ckpt = self.toy_checkpoint("snn8.svoc", timesteps=8)
        code, _, err = run_cli("spikes", "--mel", self.toy_mel(), "--ckpt", ckpt, "--out", self.tmp / "run8")
        self.assertEqual(code, EXIT_OK, msg=err)
        config = self.write_config(generator=TOY_GENERATOR)

        tables = {}
        for name, extra in (("implicit", []), ("explicit", ["--timesteps", "8"])):
            path = self.tmp / f"{name}.csv"
            code, _, err = run_cli(
                "energy", "--from-run", self.tmp / "run8.csv", "--config", config, "--frames", "8", "--csv", path, *extra
            )
            self.assertEqual(code, EXIT_OK, msg=err)
            with path.open(newline="") as handle:
                tables[name] = list(csv.DictReader(handle))
        self.assertEqual(tables["implicit"][1]["timesteps"], "8")
        self.assertEqual(tables["implicit"], tables["explicit"])

    def test_raster_matches_forward_pass(self) -> None:
        ckpt = self.toy_checkpoint("snn.svoc")
        mel_path = self.toy_mel()
        code, out, err = run_cli("spikes", "--mel", mel_path, "--ckpt", ckpt, "--out", self.tmp / "run")
        self.assertEqual(code, EXIT_OK, msg=err)

        probe = SpikeProbe()
        with torch.no_grad():
            load_checkpoint(ckpt)(load_tensor(mel_path), probe=probe)
        rows = (self.tmp / "run.csv").read_text(encoding="utf-8").splitlines()
        self.assertEqual(len(rows) - 1, probe.total_spikes())
        self.assertIn(f"{probe.total_spikes()} spikes over 2 blocks", out)

        svg = (self.tmp / "run.svg").read_text(encoding="utf-8")
        self.assertEqual(len(re.findall(r'id="raster-panel-\d+"', svg)), 2)

        code, out, _ = run_cli(
            "energy", "--from-run", self.tmp / "run.csv", "--config", self.write_config(generator=TOY_GENERATOR),
            "--frames", "8",
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn("(measured)", out)


if __name__ == "__main__":
    unittest.main()
