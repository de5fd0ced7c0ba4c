"""
Generator assembly: mel embedding, ConvNeXt stack (spiking student or ANN
teacher), temporal readout and the iSTFT head.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import torch
import torch.nn as nn

from .blocks import ConvNeXtBlock, SpikeProbe, SpikingConvNeXtBlock, TsmConfig
from .dsp import ComplexSpectrum, StftConfig, istft
from .errors import InvalidConfig, InvalidInput, NumericalError
from .neuron import SurrogateConfig

logger = logging.getLogger(__name__)

MODES = ("snn", "ann")
MAGNITUDE_CEILING = 1e2

# preset name -> (overrides, trained with distillation)
VARIANTS: Dict[str, Tuple[Dict[str, Any], bool]] = {
    "vocos": ({"mode": "ann", "timesteps": 1, "tsm_enabled": False}, False),
    "spiking-8": ({"mode": "snn", "timesteps": 8, "tsm_enabled": False}, False),
    "spiking-4": ({"mode": "snn", "timesteps": 4, "tsm_enabled": False}, False),
    "spiking-4-tsm": ({"mode": "snn", "timesteps": 4, "tsm_enabled": True}, False),
    "spiking-4-kd": ({"mode": "snn", "timesteps": 4, "tsm_enabled": False}, True),
    "spiking-4-tsm-kd": ({"mode": "snn", "timesteps": 4, "tsm_enabled": True}, True),
}


@dataclass(frozen=True)
class GeneratorConfig:
    n_mels: int = 100
    dim: int = 512
    intermediate_dim: int = 1536
    n_blocks: int = 8
    kernel_size: int = 7
    timesteps: int = 4
    tsm_enabled: bool = False
    tsm: Optional[TsmConfig] = None
    stft: StftConfig = field(default_factory=StftConfig)
    mode: str = "snn"
    v_threshold: float = 1.0
    v_reset: float = 0.0
    surrogate_alpha: float = 2.0
    per_channel_tau: bool = False
    layer_scale_init: float = 1e-6
    amplitude_shortcut: bool = True
    variant: Optional[str] = None

    def __post_init__(self) -> None:
        mode = self.mode.lower()
        if mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}.")
        object.__setattr__(self, "mode", mode)
        if self.n_blocks < 1:
            raise InvalidConfig("n_blocks must be at least 1.")
        if self.timesteps < 1:
            raise InvalidConfig("timesteps must be at least 1.")
        if min(self.n_mels, self.dim, self.intermediate_dim) < 1:
            raise InvalidConfig("n_mels, dim and intermediate_dim must be positive.")
        if self.kernel_size % 2 == 0:
            raise InvalidConfig("kernel_size must be odd.")
        if mode == "ann" and (self.timesteps != 1 or self.tsm_enabled):
            logger.debug("ANN mode forces timesteps=1 and disables TSM")
            object.__setattr__(self, "timesteps", 1)
            object.__setattr__(self, "tsm_enabled", False)
        if self.tsm is None:
            object.__setattr__(self, "tsm", TsmConfig.for_channels(self.dim))
        elif self.tsm.c_one > self.dim:
            raise InvalidConfig(f"TSM split reaches channel {self.tsm.c_one} beyond dim={self.dim}.")
        if self.variant is not None and self.variant not in VARIANTS:
            raise InvalidConfig(f"Unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}.")

    @property
    def is_spiking(self) -> bool:
        return self.mode == "snn"

    @property
    def distill_expected(self) -> bool:
        return bool(self.variant and VARIANTS[self.variant][1])

    def replace(self, **changes: Any) -> "GeneratorConfig":
        if "dim" in changes and "tsm" not in changes:
            changes["tsm"] = None
        return dataclasses.replace(self, **changes)

    @classmethod
    def for_variant(cls, name: str, **changes: Any) -> "GeneratorConfig":
        if name not in VARIANTS:
            raise InvalidConfig(f"Unknown variant {name!r}; choose from {sorted(VARIANTS)}.")
        overrides = dict(VARIANTS[name][0])
        overrides.update(changes)
        return cls(variant=name, **overrides)

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["stft"] = self.stft.to_dict()
        data["tsm"] = self.tsm.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GeneratorConfig":
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise InvalidConfig(f"Unknown GeneratorConfig keys: {unknown}")
        payload = dict(data)
        if payload.get("stft") is not None:
            payload["stft"] = StftConfig.from_dict(payload["stft"])
        if payload.get("tsm") is not None:
            payload["tsm"] = TsmConfig.from_dict(payload["tsm"])
        variant = payload.get("variant")
        if variant is not None:
            base = dict(VARIANTS.get(variant, ({}, False))[0])
            base.update(payload)
            payload = base
        return cls(**payload)


@dataclass
class GeneratorOutput:
    waveform: torch.Tensor
    spectrum: ComplexSpectrum
    taps: List[torch.Tensor]
    spike_stats: Dict[str, float] = field(default_factory=dict)


def encode_time(x: torch.Tensor, timesteps: int) -> torch.Tensor:
    """Direct coding: the same features at every timestep."""
    if timesteps < 1:
        raise InvalidInput("timesteps must be at least 1.")
    return x.repeat(timesteps, 1, 1)


def readout(x: torch.Tensor) -> torch.Tensor:
    if x.dim() != 3 or x.shape[0] < 1:
        raise InvalidInput(f"expected a [T, C, L] tensor, got {tuple(x.shape)}.")
    return x.mean(dim=0, keepdim=True)


def _site_key(block: int, plif_index: int) -> str:
    return f"block{block}.plif{plif_index + 1}"


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig) -> None:
        super().__init__()
        self.config = config
        self.embed_conv = nn.Conv1d(config.n_mels, config.dim, kernel_size=7, padding=3)
        self.embed_norm = nn.LayerNorm(config.dim, eps=1e-6)
        self.blocks = nn.ModuleList([self._make_block(config) for _ in range(config.n_blocks)])
        self.final_norm = nn.LayerNorm(config.dim, eps=1e-6)
        self.head_proj = nn.Linear(config.dim, config.stft.n_fft + 2)
        self.apply(self._init_weights)

    @staticmethod
    def _make_block(config: GeneratorConfig) -> nn.Module:
        if not config.is_spiking:
            return ConvNeXtBlock(
                config.dim, config.intermediate_dim, config.kernel_size, config.layer_scale_init
            )
        return SpikingConvNeXtBlock(
            config.dim,
            config.intermediate_dim,
            config.kernel_size,
            config.layer_scale_init,
            tsm=config.tsm if config.tsm_enabled else None,
            amplitude_shortcut=config.amplitude_shortcut,
            per_channel_tau=config.per_channel_tau,
            v_threshold=config.v_threshold,
            v_reset=config.v_reset,
            surrogate=SurrogateConfig(alpha=config.surrogate_alpha),
        )

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, (nn.Conv1d, nn.Linear)):
            nn.init.trunc_normal_(module.weight, std=0.02)
            nn.init.constant_(module.bias, 0.0)

    def embed(self, mel: torch.Tensor) -> torch.Tensor:
        """[n_mels, L] -> [1, C, L]"""
        if mel.dim() == 2:
            mel = mel.unsqueeze(0)
        if mel.dim() != 3 or mel.shape[0] != 1 or mel.shape[1] != self.config.n_mels:
            raise InvalidInput(
                f"expected a mel tensor of height {self.config.n_mels}, got {tuple(mel.shape)}."
            )
        if not bool(torch.isfinite(mel).all()):
            raise InvalidInput("mel contains non-finite values.")
        x = self.embed_conv(mel.to(self.embed_conv.weight.dtype))
        return self.embed_norm(x.transpose(1, 2)).transpose(1, 2)

    def head(self, features: torch.Tensor) -> Tuple[ComplexSpectrum, torch.Tensor]:
        if bool(torch.isnan(features).any()):
            raise NumericalError("NaN features reached the iSTFT head.")
        x = self.final_norm(features.transpose(1, 2))
        x = self.head_proj(x).transpose(1, 2)[0]
        n_bins = self.config.stft.n_bins
        m, p = x[:n_bins], x[n_bins:]
        magnitude = torch.exp(torch.clamp(m, max=math.log(MAGNITUDE_CEILING)))
        spectrum = ComplexSpectrum(magnitude=magnitude, phase=p)
        return spectrum, istft(spectrum, self.config.stft)

    def forward(
        self,
        mel: torch.Tensor,
        probe: Optional[SpikeProbe] = None,
        timesteps: Optional[int] = None,
    ) -> GeneratorOutput:
        cfg = self.config
        if timesteps is not None and timesteps < 1:
            raise InvalidConfig(f"timesteps must be at least 1, got {timesteps}.")
        if timesteps is not None and not cfg.is_spiking and timesteps != 1:
            raise InvalidConfig("timesteps cannot be overridden for an ANN generator.")
        steps = (timesteps if timesteps is not None else cfg.timesteps) if cfg.is_spiking else 1
        if cfg.is_spiking and probe is None:
            probe = SpikeProbe(keep_spikes=False)
        x = encode_time(self.embed(mel), steps)
        taps: List[torch.Tensor] = []
        for index, block in enumerate(self.blocks):
            x = block(x, probe, index)
            taps.append(readout(x))
        spectrum, waveform = self.head(readout(x))
        stats: Dict[str, float] = {}
        if cfg.is_spiking and probe is not None:
            stats = {_site_key(b, i): site.rate for (b, i), site in sorted(probe.sites.items())}
        return GeneratorOutput(waveform=waveform, spectrum=spectrum, taps=taps, spike_stats=stats)


def build_generator(
    config: GeneratorConfig,
    dtype: Optional[torch.dtype] = None,
    seed: Optional[int] = None,
) -> Generator:
    if seed is not None:
        torch.manual_seed(seed)
    model = Generator(config)
    if dtype is not None:
        model = model.to(dtype)
    return model
