"""Seeded synthetic clips standing in for a speech corpus."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple

import torch

from .errors import InvalidConfig, InvalidInput

KINDS = ("sines", "chirp", "noise")


@dataclass(frozen=True)
class DataConfig:
    n_clips: int = 4
    clip_seconds: float = 1.0
    sample_rate: int = 24000
    n_hop: int = 256
    seed: int = 0
    noise_floor: float = 0.01

    def __post_init__(self) -> None:
        if self.n_clips < 1:
            raise InvalidConfig("n_clips must be at least 1.")
        if self.clip_samples < self.n_hop:
            raise InvalidConfig("clips must span at least one hop.")

    @property
    def clip_samples(self) -> int:
        """Clip length rounded down to a whole number of hops."""
        return int(self.clip_seconds * self.sample_rate) // self.n_hop * self.n_hop

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DataConfig":
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise InvalidConfig(f"Unknown DataConfig keys: {unknown}")
        return cls(**dict(data))


def _sines(t: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    n_partials = int(torch.randint(2, 5, (1,), generator=gen))
    f0 = 110.0 + 330.0 * float(torch.rand(1, generator=gen))
    out = torch.zeros_like(t)
    for k in range(1, n_partials + 1):
        phase = 2 * math.pi * float(torch.rand(1, generator=gen))
        out = out + torch.sin(2 * math.pi * f0 * k * t + phase) / k
    return 0.3 * out / out.abs().max().clamp(min=1e-9)


def _chirp(t: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    f_start = 200.0 + 400.0 * float(torch.rand(1, generator=gen))
    f_end = 1000.0 + 3000.0 * float(torch.rand(1, generator=gen))
    duration = float(t[-1]) if t.numel() > 1 else 1.0
    sweep = f_start * t + (f_end - f_start) * t * t / (2 * duration)
    return 0.3 * torch.sin(2 * math.pi * sweep)


def _band_noise(t: torch.Tensor, gen: torch.Generator, sample_rate: int) -> torch.Tensor:
    noise = torch.randn(t.shape, generator=gen, dtype=t.dtype)
    spectrum = torch.fft.rfft(noise)
    freqs = torch.fft.rfftfreq(t.numel(), d=1.0 / sample_rate).to(t.dtype)
    low = 300.0 + 1200.0 * float(torch.rand(1, generator=gen))
    mask = ((freqs >= low) & (freqs <= 2.0 * low)).to(spectrum.dtype)
    band = torch.fft.irfft(spectrum * mask, n=t.numel())
    return 0.3 * band / band.abs().max().clamp(min=1e-9)


class ToyDataset:
    """Deterministic clips at a fixed sample rate; each length a multiple of n_hop."""

    def __init__(self, config: DataConfig = DataConfig(), clips: Optional[List[torch.Tensor]] = None) -> None:
        self.config = config
        self.clips = clips if clips is not None else self._generate(config)

    @staticmethod
    def _generate(config: DataConfig) -> List[torch.Tensor]:
        gen = torch.Generator().manual_seed(config.seed)
        n = config.clip_samples
        t = torch.arange(n, dtype=torch.float64) / config.sample_rate
        clips = []
        for index in range(config.n_clips):
            kind = KINDS[index % len(KINDS)]
            if kind == "sines":
                clip = _sines(t, gen)
            elif kind == "chirp":
                clip = _chirp(t, gen)
            else:
                clip = _band_noise(t, gen, config.sample_rate)
            clip = clip + config.noise_floor * torch.randn(n, generator=gen, dtype=torch.float64)
            clips.append(clip)
        return clips

    def __len__(self) -> int:
        return len(self.clips)

    def __getitem__(self, index: int) -> torch.Tensor:
        return self.clips[index]

    def split(self, n_val: int) -> Tuple["ToyDataset", "ToyDataset"]:
        if not 0 < n_val < len(self.clips):
            raise InvalidInput(f"validation size must be in [1, {len(self.clips) - 1}], got {n_val}.")
        return (
            ToyDataset(self.config, self.clips[:-n_val]),
            ToyDataset(self.config, self.clips[-n_val:]),
        )

    def batches(self, batch_size: int, seed: int) -> Iterator[List[int]]:
        """Endless deterministic stream of clip-index batches, reshuffled per epoch."""
        if batch_size < 1:
            raise InvalidInput("batch_size must be at least 1.")
        gen = torch.Generator().manual_seed(seed)
        while True:
            order = torch.randperm(len(self.clips), generator=gen).tolist()
            for start in range(0, len(order), batch_size):
                yield order[start:start + batch_size]
