"""
ConvNeXt building blocks for the generator backbone.

Tensors flowing through the backbone are laid out [T, C, L]: simulation
timestep, channel, frame. The T axis doubles as the convolution batch axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import torch
import torch.nn as nn

from .errors import InvalidConfig, InvalidInput, NumericalError
from .neuron import PLIFNode, SurrogateConfig


@dataclass(frozen=True)
class TsmConfig:
    """Channels [0, c_minus) look one step ahead, [c_zero, c_one) one step back."""

    c_minus: int
    c_zero: int
    c_one: int
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not 0 <= self.c_minus < self.c_zero <= self.c_one:
            raise InvalidConfig(
                f"TSM split must satisfy 0 <= c_minus < c_zero <= c_one, got "
                f"({self.c_minus}, {self.c_zero}, {self.c_one})."
            )

    @classmethod
    def for_channels(cls, channels: int, alpha: float = 0.5) -> "TsmConfig":
        return cls(c_minus=channels // 4, c_zero=3 * channels // 4, c_one=channels, alpha=alpha)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TsmConfig":
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise InvalidConfig(f"Unknown TsmConfig keys: {unknown}")
        return cls(**dict(data))


def _check_feature(z: torch.Tensor) -> None:
    if z.dim() != 3 or z.shape[0] < 1:
        raise InvalidInput(f"expected a [T, C, L] feature tensor, got {tuple(z.shape)}.")


def tsm_shift(z: torch.Tensor, cfg: TsmConfig) -> torch.Tensor:
    _check_feature(z)
    if cfg.c_one > z.shape[1]:
        raise InvalidInput(f"TSM split reaches channel {cfg.c_one} but the tensor has {z.shape[1]}.")
    cm, c0, c1 = cfg.c_minus, cfg.c_zero, cfg.c_one
    out = torch.zeros_like(z)
    out[:-1, :cm] = z[1:, :cm]  # future
    out[:, cm:c0] = z[:, cm:c0]
    out[1:, c0:c1] = z[:-1, c0:c1]  # past
    out[:, c1:] = z[:, c1:]
    return out


def tsm_apply(z: torch.Tensor, cfg: TsmConfig) -> torch.Tensor:
    return cfg.alpha * tsm_shift(z, cfg) + z


def amplitude_shortcut(z_in: torch.Tensor, z_out: torch.Tensor) -> torch.Tensor:
    if z_in.shape != z_out.shape:
        raise InvalidInput(f"shortcut shapes differ: {tuple(z_in.shape)} vs {tuple(z_out.shape)}.")
    return z_in.abs() * z_out


@dataclass
class SiteRecord:
    """Firing statistics of one PLIF layer during one forward pass."""

    block: int
    plif_index: int
    shape: Tuple[int, int, int]
    fan_out: int
    ones: int
    spikes: Optional[torch.Tensor] = None

    @property
    def elements(self) -> int:
        t, c, l = self.shape
        return t * c * l

    @property
    def rate(self) -> float:
        return self.ones / self.elements if self.elements else 0.0

    @property
    def gated_ops(self) -> int:
        """Accumulate operations this site can trigger in the next pointwise conv."""
        return self.elements * self.fan_out


@dataclass
class SpikeProbe:
    """Collects per-site spike statistics and distillation taps for one forward pass."""

    keep_spikes: bool = True
    sites: Dict[Tuple[int, int], SiteRecord] = field(default_factory=dict)
    taps: Dict[int, torch.Tensor] = field(default_factory=dict)

    def record_spikes(self, block: int, plif_index: int, spikes: torch.Tensor, fan_out: int) -> None:
        detached = spikes.detach()
        self.sites[(block, plif_index)] = SiteRecord(
            block=block,
            plif_index=plif_index,
            shape=tuple(detached.shape),
            fan_out=fan_out,
            ones=int(detached.sum().item()),
            spikes=detached.to(torch.uint8).cpu() if self.keep_spikes else None,
        )

    def record_tap(self, block: int, tap: torch.Tensor) -> None:
        self.taps[block] = tap.detach()

    def is_empty(self) -> bool:
        return not self.sites

    def total_spikes(self) -> int:
        return sum(site.ones for site in self.sites.values())

    def n_blocks(self) -> int:
        return len({site.block for site in self.sites.values()})

    def clear(self) -> None:
        self.sites.clear()
        self.taps.clear()


class ConvNeXtBlock(nn.Module):
    """ANN block: dwconv -> norm -> pw1 -> GELU -> pw2, layer-scaled residual."""

    def __init__(
        self,
        dim: int,
        intermediate_dim: int,
        kernel_size: int = 7,
        layer_scale_init: float = 1e-6,
    ) -> None:
        super().__init__()
        if kernel_size % 2 == 0:
            raise InvalidConfig("depthwise kernel size must be odd.")
        self.dwconv = nn.Conv1d(dim, dim, kernel_size, padding=kernel_size // 2, groups=dim)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.pwconv1 = nn.Conv1d(dim, intermediate_dim, 1)
        self.act = nn.GELU()
        self.pwconv2 = nn.Conv1d(intermediate_dim, dim, 1)
        self.gamma = nn.Parameter(torch.full((dim,), float(layer_scale_init)))

    def _normed(self, x: torch.Tensor) -> torch.Tensor:
        d = self.dwconv(x)
        return self.norm(d.transpose(1, 2)).transpose(1, 2)

    def forward(self, x: torch.Tensor, probe: Optional[SpikeProbe] = None, index: int = 0) -> torch.Tensor:
        _check_feature(x)
        if x.shape[0] != 1:
            raise InvalidInput("the ANN block runs a single timestep.")
        residual = x
        x = self._normed(x)
        x = self.pwconv1(x)
        x = self.act(x)
        x = self.pwconv2(x)
        out = residual + self.gamma.view(-1, 1) * x
        if probe is not None:
            probe.record_tap(index, out)
        return out


class SpikingConvNeXtBlock(ConvNeXtBlock):
    """Spiking block: PLIF neurons precede both pointwise convolutions.

    Z_in is the normalised depthwise output fed to the first neuron; Z_out is
    the second pointwise output; the residual branch carries |Z_in| * Z_out.
    """

    def __init__(
        self,
        dim: int,
        intermediate_dim: int,
        kernel_size: int = 7,
        layer_scale_init: float = 1e-6,
        tsm: Optional[TsmConfig] = None,
        amplitude_shortcut: bool = True,
        per_channel_tau: bool = False,
        v_threshold: float = 1.0,
        v_reset: float = 0.0,
        surrogate: SurrogateConfig = SurrogateConfig(),
    ) -> None:
        super().__init__(dim, intermediate_dim, kernel_size, layer_scale_init)
        del self.act
        self.tsm = tsm
        self.amplitude_shortcut = amplitude_shortcut
        self.plif1 = PLIFNode(
            dim if per_channel_tau else None,
            v_threshold=v_threshold,
            v_reset=v_reset,
            surrogate=surrogate,
        )
        self.plif2 = PLIFNode(
            intermediate_dim if per_channel_tau else None,
            v_threshold=v_threshold,
            v_reset=v_reset,
            surrogate=surrogate,
        )

    def forward(self, x: torch.Tensor, probe: Optional[SpikeProbe] = None, index: int = 0) -> torch.Tensor:
        _check_feature(x)
        h = tsm_apply(x, self.tsm) if self.tsm is not None else x
        z_in = self._normed(h)
        s1 = self.plif1(z_in)
        s2 = self.plif2(self.pwconv1(s1))
        z_out = self.pwconv2(s2)
        r = amplitude_shortcut(z_in, z_out) if self.amplitude_shortcut else z_out
        out = x + self.gamma.view(-1, 1) * r
        if bool(torch.isnan(out).any()):
            raise NumericalError(f"NaN in the output of block {index}.")
        if probe is not None:
            probe.record_spikes(index, 0, s1, fan_out=self.pwconv1.out_channels)
            probe.record_spikes(index, 1, s2, fan_out=self.pwconv2.out_channels)
            probe.record_tap(index, out.mean(dim=0, keepdim=True))
        return out
