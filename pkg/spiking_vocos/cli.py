"""
Command-line workflows: mel extraction, synthesis, toy training and
distillation, energy tables and spike rasters.

Exit codes: 0 success, 1 usage or configuration, 2 file I/O, 3 numerical.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence

import torch

from . import settings
from .audio_io import read_wav, write_wav
from .blocks import SpikeProbe
from .checkpoint import canonical_json, load_checkpoint, load_tensor, save_checkpoint, save_tensor
from .data import DataConfig, ToyDataset
from .dsp import MelConfig, mel_spectrogram
from .energy import (
    REPORTED_SCENARIOS,
    EnergyConstants,
    format_table,
    measure_firing_rates,
    report_table,
    write_table_csv,
)
from .errors import InvalidConfig, InvalidInput, InvalidState, IoError, NumericalError
from .model import VARIANTS, GeneratorConfig
from .raster import export_run, read_run_rates
from .train import TrainConfig, train_loop, write_metric_log

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

CONFIG_SECTIONS = ("generator", "mel", "train", "kd", "data", "energy")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _UsageError(Exception):
    """Raised instead of exiting when argparse rejects the command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(f"{self.prog}: {message}")


def load_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    config_path = Path(path)
    text = config_path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{config_path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise InvalidConfig(f"{config_path}: top level must be a JSON object.")
    unknown = sorted(set(data) - set(CONFIG_SECTIONS))
    if unknown:
        raise InvalidConfig(f"{config_path}: unknown sections {unknown}; allowed {list(CONFIG_SECTIONS)}.")
    for name, section in data.items():
        if not isinstance(section, dict):
            raise InvalidConfig(f"{config_path}: section {name!r} must be a JSON object.")
    return data


def _generator_config(config: Mapping[str, Any], variant: Optional[str] = None) -> GeneratorConfig:
    section = dict(config.get("generator", {}))
    if variant:
        # the flag's preset wins over mode/timesteps/tsm from the file
        section.update(VARIANTS[variant][0])
        section["variant"] = variant
    return GeneratorConfig.from_dict(section)


def _mel_config(config: Mapping[str, Any], gen: Optional[GeneratorConfig] = None) -> MelConfig:
    section = config.get("mel")
    if section is not None:
        mel_cfg = MelConfig.from_dict(section)
    elif gen is not None:
        mel_cfg = MelConfig(stft=gen.stft, n_mels=gen.n_mels)
    else:
        mel_cfg = MelConfig()
    if gen is not None and (mel_cfg.n_mels != gen.n_mels or mel_cfg.stft != gen.stft):
        raise InvalidConfig("mel and generator sections disagree on n_mels or STFT settings.")
    return mel_cfg


def _echo(effective: Mapping[str, Any]) -> None:
    print(canonical_json(effective), file=sys.stderr)


def _seed(flag: Optional[int], section: Mapping[str, Any]) -> int:
    if flag is not None:
        return flag
    if "seed" in section:
        return int(section["seed"])
    return settings.default_seed()


def cmd_mel(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    mel_cfg = _mel_config(config)
    _echo({"mel": mel_cfg.to_dict()})
    samples, _ = read_wav(args.input, expected_rate=mel_cfg.stft.sample_rate)
    signal = torch.from_numpy(samples).to(settings.compute_dtype())
    mel = mel_spectrogram(signal, mel_cfg)
    save_tensor(args.out, mel, name="mel", meta={"mel": mel_cfg.to_dict(), "source": str(args.input)})
    print(f"wrote mel {tuple(mel.shape)} to {args.out}")
    return EXIT_OK


def _forward(model, mel: torch.Tensor, timesteps: Optional[int], probe: Optional[SpikeProbe] = None):
    cfg = model.config
    if timesteps is not None and not cfg.is_spiking:
        raise InvalidConfig("--timesteps is only valid for spiking checkpoints.")
    with torch.no_grad():
        return model(mel, probe=probe, timesteps=timesteps)


def cmd_synth(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.ckpt)
    mel = load_tensor(args.mel)
    _echo({"generator": model.config.to_dict(), "timesteps": args.timesteps})
    probe = SpikeProbe(keep_spikes=False) if model.config.is_spiking else None
    out = _forward(model, mel, args.timesteps, probe)
    if not bool(torch.isfinite(out.waveform).all()):
        raise NumericalError("synthesised waveform contains non-finite samples.")
    write_wav(args.out, out.waveform, model.config.stft.sample_rate)
    print(f"wrote {out.waveform.numel()} samples to {args.out}")
    if probe is not None:
        rates = measure_firing_rates(probe)
        steps = args.timesteps if args.timesteps is not None else model.config.timesteps
        print(f"firing rate mean={rates.mean:.4f} over {len(rates.sites)} sites (T={steps})")
        for block, rate in sorted(rates.blocks.items()):
            print(f"  block {block}: r={rate:.4f}")
    return EXIT_OK


def _run_training(args: argparse.Namespace, distill: bool) -> int:
    config = load_config(args.config)
    gen = _generator_config(config, args.variant)
    if gen.distill_expected and not distill:
        raise InvalidConfig(
            f"variant {gen.variant!r} is trained by distillation; run 'svoc distill --teacher <ann.svoc>' instead."
        )
    if distill and gen.variant is not None and not gen.distill_expected:
        kd_variants = sorted(name for name, (_, expected) in VARIANTS.items() if expected)
        raise InvalidConfig(
            f"variant {gen.variant!r} is trained without a teacher; use 'svoc train' or one of {kd_variants}."
        )
    mel_cfg = _mel_config(config, gen)
    train_section = dict(config.get("train", {}))
    if args.steps is not None:
        train_section["steps"] = args.steps
    train_section["seed"] = _seed(args.seed, train_section)

    teacher = None
    if distill:
        if not args.teacher:
            raise InvalidConfig("distill requires --teacher pointing at an ANN checkpoint.")
        teacher = load_checkpoint(args.teacher)
        if teacher.config.is_spiking:
            raise InvalidConfig("the distillation teacher must be an ANN checkpoint.")
        train_section["kd"] = config.get("kd", train_section.get("kd") or {})
        if not gen.is_spiking:
            raise InvalidConfig("the distillation student must be a spiking generator.")
    elif "kd" in config:
        train_section["kd"] = config["kd"]
    t_cfg = TrainConfig.from_dict(train_section)

    data_section = dict(config.get("data", {}))
    data_section.setdefault("seed", t_cfg.seed)
    data_section.setdefault("sample_rate", gen.stft.sample_rate)
    data_section.setdefault("n_hop", gen.stft.n_hop)
    data_cfg = DataConfig.from_dict(data_section)

    _echo(
        {
            "generator": gen.to_dict(),
            "mel": mel_cfg.to_dict(),
            "train": t_cfg.to_dict(),
            "data": data_cfg.to_dict(),
            "precision": settings.precision_name(),
        }
    )
    result = train_loop(gen, ToyDataset(data_cfg), t_cfg, teacher=teacher, mel_cfg=mel_cfg)
    save_checkpoint(result.model, args.out, step=result.steps, extra={"train": t_cfg.to_dict(), "data": data_cfg.to_dict()})
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".csv")
    write_metric_log(result.log, log_path)
    first, last = result.log[0], result.log[-1]
    print(f"wrote checkpoint to {args.out} and metrics to {log_path}")
    print(f"loss_mel {first.loss_mel:.5f} -> {last.loss_mel:.5f} over {result.steps} steps")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    return _run_training(args, distill=False)


def cmd_distill(args: argparse.Namespace) -> int:
    return _run_training(args, distill=True)


def _energy_label(variant: Optional[str], base: GeneratorConfig, timesteps: int) -> str:
    return variant if variant and base.is_spiking else f"spiking-{timesteps}"


def cmd_energy(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    base = _generator_config(config, args.variant)
    constants = EnergyConstants.from_dict(config.get("energy", {}))
    if args.timesteps is not None and args.timesteps < 1:
        raise InvalidConfig(f"--timesteps must be at least 1, got {args.timesteps}.")
    timesteps = args.timesteps
    if timesteps is None:
        timesteps = base.timesteps if base.is_spiking else GeneratorConfig().timesteps

    if args.all:
        scenarios = list(REPORTED_SCENARIOS)
    elif args.rate is not None:
        scenarios = [(_energy_label(args.variant, base, timesteps), timesteps, args.rate)]
    elif args.from_run:
        rates = read_run_rates(args.from_run)
        if args.timesteps is None:
            # price the run at the T it was recorded with
            timesteps = rates.timesteps
        scenarios = [(f"{_energy_label(args.variant, base, timesteps)} (measured)", timesteps, rates.mean)]
    else:
        raise InvalidConfig("energy needs --rate, --from-run or --all.")

    _echo({"generator": base.to_dict(), "energy": constants.to_dict(), "frames": args.frames})
    rows = report_table(scenarios, base=base, frames=args.frames, constants=constants)
    print(format_table(rows, frames=args.frames))
    if args.csv:
        write_table_csv(rows, args.csv)
        print(f"wrote {args.csv}")
    return EXIT_OK


def cmd_spikes(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.ckpt)
    if not model.config.is_spiking:
        raise InvalidConfig("spike rasters need a spiking checkpoint; this one is ANN.")
    mel = load_tensor(args.mel)
    _echo({"generator": model.config.to_dict(), "timesteps": args.timesteps})
    probe = SpikeProbe(keep_spikes=True)
    _forward(model, mel, args.timesteps, probe)
    paths = export_run(probe, args.out)
    print(f"{probe.total_spikes()} spikes over {probe.n_blocks()} blocks")
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="svoc", description="Spiking vocoder engine.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    mel = sub.add_parser("mel", help="Extract a log-mel spectrogram from a WAV file.")
    mel.add_argument("--in", dest="input", required=True, help="24 kHz mono WAV file")
    mel.add_argument("--out", required=True, help="output SVOC tensor file")
    mel.add_argument("--config", help="JSON config with an optional 'mel' section")
    mel.set_defaults(handler=cmd_mel)

    synth = sub.add_parser("synth", help="Synthesise a waveform from a mel file.")
    synth.add_argument("--mel", required=True)
    synth.add_argument("--ckpt", required=True)
    synth.add_argument("--out", required=True)
    synth.add_argument("--timesteps", type=int, help="override T (spiking checkpoints only)")
    synth.set_defaults(handler=cmd_synth)

    for name, handler, help_text in (
        ("train", cmd_train, "Train a toy generator on synthetic clips."),
        ("distill", cmd_distill, "Distil a spiking student from an ANN teacher."),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="JSON config (generator, mel, train, kd, data sections)")
        cmd.add_argument("--out", required=True, help="output checkpoint")
        cmd.add_argument("--log", help="metric CSV (default: <out>.csv)")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--steps", type=int)
        cmd.add_argument("--variant", choices=sorted(VARIANTS))
        if name == "distill":
            cmd.add_argument("--teacher", help="frozen ANN teacher checkpoint")
        cmd.set_defaults(handler=handler)

    energy = sub.add_parser("energy", help="Estimate ConvNeXt-stack energy.")
    energy.add_argument("--config")
    source = energy.add_mutually_exclusive_group()
    source.add_argument("--rate", type=float, help="fixed firing rate in [0, 1]")
    source.add_argument("--from-run", dest="from_run", help="raster CSV written by 'spikes'")
    source.add_argument("--all", action="store_true", help="every preset row with its reported rate")
    energy.add_argument("--frames", type=int, default=1000)
    energy.add_argument("--timesteps", type=int)
    energy.add_argument("--variant", choices=sorted(VARIANTS))
    energy.add_argument("--csv", help="also write the table as CSV")
    energy.set_defaults(handler=cmd_energy)

    spikes = sub.add_parser("spikes", help="Export spike rasters for one forward pass.")
    spikes.add_argument("--mel", required=True)
    spikes.add_argument("--ckpt", required=True)
    spikes.add_argument("--out", required=True, help="output prefix")
    spikes.add_argument("--timesteps", type=int)
    spikes.set_defaults(handler=cmd_spikes)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=settings.log_level(), format=LOG_FORMAT)
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    command = args.command
    try:
        return args.handler(args)
    except (InvalidConfig, InvalidInput, InvalidState) as exc:
        print(f"{command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IoError, OSError) as exc:
        print(f"{command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"{command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
