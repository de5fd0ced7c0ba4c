"""
STFT / iSTFT and log-mel analysis shared by feature extraction, the
synthesis head and the reconstruction losses.

All functions are pure and operate on torch tensors whose last axis is time
(samples) or frames; leading batch axes are carried through unchanged.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Mapping, Optional

import torch
import torchaudio

from .errors import InvalidConfig, InvalidInput, NumericalError

logger = logging.getLogger(__name__)

WINDOWS = {"hann"}


def _check_keys(cls_name: str, data: Mapping[str, Any], allowed) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise InvalidConfig(f"Unknown {cls_name} keys: {unknown}")


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 1024
    n_hop: int = 256
    sample_rate: int = 24000
    window: str = "hann"
    center_pad: bool = True

    def __post_init__(self) -> None:
        if self.n_fft <= 0 or self.n_fft % 2:
            raise InvalidConfig(f"n_fft must be a positive even number, got {self.n_fft}.")
        if self.n_hop <= 0 or self.n_hop > self.n_fft:
            raise InvalidConfig(f"n_hop must be in [1, n_fft], got {self.n_hop}.")
        if self.n_fft % self.n_hop:
            raise InvalidConfig("n_hop must divide n_fft for overlap-add reconstruction.")
        if self.sample_rate <= 0:
            raise InvalidConfig("sample_rate must be positive.")
        if self.window.lower() not in WINDOWS:
            raise InvalidConfig(f"Unsupported window {self.window!r}; only Hann is available.")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if self.center_pad:
            return 1 + n_samples // self.n_hop
        return 1 + (n_samples - self.n_fft) // self.n_hop

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StftConfig":
        _check_keys(cls.__name__, data, cls.__dataclass_fields__)
        return cls(**dict(data))


@dataclass(frozen=True)
class MelConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    n_mels: int = 100
    f_min: float = 0.0
    f_max: Optional[float] = None
    log_floor: float = 1e-5

    def __post_init__(self) -> None:
        if self.n_mels < 1:
            raise InvalidConfig("n_mels must be at least 1.")
        nyquist = self.stft.sample_rate / 2
        f_max = self.upper_frequency
        if not 0 <= self.f_min < f_max <= nyquist:
            raise InvalidConfig(
                f"Mel band must satisfy 0 <= f_min < f_max <= {nyquist}, got [{self.f_min}, {f_max}]."
            )
        if self.log_floor <= 0:
            raise InvalidConfig("log_floor must be positive.")

    @property
    def upper_frequency(self) -> float:
        return float(self.f_max) if self.f_max is not None else self.stft.sample_rate / 2

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["stft"] = self.stft.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MelConfig":
        _check_keys(cls.__name__, data, cls.__dataclass_fields__)
        payload = dict(data)
        if "stft" in payload:
            payload["stft"] = StftConfig.from_dict(payload["stft"])
        return cls(**payload)


@dataclass
class ComplexSpectrum:
    """Magnitude and phase arrays shaped [..., F, L]."""

    magnitude: torch.Tensor
    phase: torch.Tensor

    def __post_init__(self) -> None:
        if self.magnitude.shape != self.phase.shape:
            raise InvalidInput(
                f"magnitude {tuple(self.magnitude.shape)} and phase {tuple(self.phase.shape)} differ in shape."
            )
        if self.magnitude.dim() < 2:
            raise InvalidInput("spectra need at least [F, L] axes.")
        if bool((self.magnitude.detach() < 0).any()):
            raise InvalidInput("magnitude must be nonnegative.")

    @property
    def n_bins(self) -> int:
        return self.magnitude.shape[-2]

    @property
    def n_frames(self) -> int:
        return self.magnitude.shape[-1]

    def to_complex(self) -> torch.Tensor:
        return torch.complex(
            self.magnitude * torch.cos(self.phase),
            self.magnitude * torch.sin(self.phase),
        )


def hann_window(cfg: StftConfig, dtype: torch.dtype, device=None) -> torch.Tensor:
    return torch.hann_window(cfg.n_fft, periodic=True, dtype=dtype, device=device)


def _as_signal(signal) -> torch.Tensor:
    signal = torch.as_tensor(signal)
    if not signal.is_floating_point():
        signal = signal.to(torch.get_default_dtype())
    if signal.numel() == 0 or signal.shape[-1] == 0:
        raise InvalidInput("signal must not be empty.")
    if not bool(torch.isfinite(signal).all()):
        raise InvalidInput("signal contains non-finite samples.")
    return signal


def _stft_complex(signal: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    n_samples = signal.shape[-1]
    if not cfg.center_pad and n_samples < cfg.n_fft:
        raise InvalidInput(f"signal of {n_samples} samples is shorter than n_fft={cfg.n_fft}.")
    pad_mode = "reflect"
    if cfg.center_pad and n_samples <= cfg.n_fft // 2:
        logger.debug("signal of %d samples too short for reflect padding; using zeros", n_samples)
        pad_mode = "constant"
    return torch.stft(
        signal,
        n_fft=cfg.n_fft,
        hop_length=cfg.n_hop,
        win_length=cfg.n_fft,
        window=hann_window(cfg, signal.dtype, signal.device),
        center=cfg.center_pad,
        pad_mode=pad_mode,
        return_complex=True,
    )


def stft(signal, cfg: StftConfig = StftConfig()) -> ComplexSpectrum:
    """Analyse `signal` into F = n_fft/2+1 bins by 1 + len//n_hop frames."""
    signal = _as_signal(signal)
    spec = _stft_complex(signal, cfg)
    phase = torch.angle(spec)
    # atan2 may return -pi; keep phase in (-pi, pi]
    phase = torch.where(phase <= -math.pi, phase + 2 * math.pi, phase)
    return ComplexSpectrum(magnitude=spec.abs(), phase=phase)


def istft(spec: ComplexSpectrum, cfg: StftConfig = StftConfig(), length: Optional[int] = None) -> torch.Tensor:
    """Overlap-add synthesis normalised by the summed squared window.

    The output has L * n_hop samples unless `length` is given.
    """
    if spec.n_bins != cfg.n_bins:
        raise InvalidInput(f"spectrum has {spec.n_bins} bins, expected {cfg.n_bins} for n_fft={cfg.n_fft}.")
    if spec.n_frames < 1:
        raise InvalidInput("spectrum has no frames.")
    length = spec.n_frames * cfg.n_hop if length is None else length
    coefficients = spec.to_complex()
    try:
        return torch.istft(
            coefficients,
            n_fft=cfg.n_fft,
            hop_length=cfg.n_hop,
            win_length=cfg.n_fft,
            window=hann_window(cfg, spec.magnitude.dtype, spec.magnitude.device),
            center=cfg.center_pad,
            length=length,
        )
    except RuntimeError as exc:
        if "window overlap add min" in str(exc):
            raise NumericalError(f"zero window energy in overlap-add: {exc}") from exc
        raise


def mel_filterbank(cfg: MelConfig = MelConfig(), dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Triangular HTK-mel filters shaped [n_mels, F]."""
    with warnings.catch_warnings():
        # empty filters are reported below as InvalidInput
        warnings.simplefilter("ignore")
        fb = torchaudio.functional.melscale_fbanks(
            n_freqs=cfg.stft.n_bins,
            f_min=float(cfg.f_min),
            f_max=cfg.upper_frequency,
            n_mels=cfg.n_mels,
            sample_rate=cfg.stft.sample_rate,
            norm=None,
            mel_scale="htk",
        )
    fb = fb.t().contiguous().to(dtype)
    empty = (fb.sum(dim=1) <= 0).nonzero().flatten().tolist()
    if empty:
        raise InvalidInput(
            f"n_mels={cfg.n_mels} is too large for {cfg.stft.n_bins} STFT bins; empty filters {empty[:5]}."
        )
    return fb


def hz_to_mel(freq) -> torch.Tensor:
    return 2595.0 * torch.log10(1.0 + torch.as_tensor(freq, dtype=torch.float64) / 700.0)


def mel_to_hz(mel) -> torch.Tensor:
    return 700.0 * (10.0 ** (torch.as_tensor(mel, dtype=torch.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MelConfig = MelConfig()) -> torch.Tensor:
    points = torch.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.upper_frequency), cfg.n_mels + 2, dtype=torch.float64)
    return mel_to_hz(points[1:-1])


def mel_magnitude(magnitude: torch.Tensor, cfg: MelConfig) -> torch.Tensor:
    fb = mel_filterbank(cfg, dtype=magnitude.dtype).to(magnitude.device)
    mel = torch.matmul(fb, magnitude)
    return torch.log(torch.clamp(mel, min=cfg.log_floor))


def mel_spectrogram(signal, cfg: MelConfig = MelConfig()) -> torch.Tensor:
    """ln(max(filterbank @ |STFT|, log_floor)), shaped [..., n_mels, L]."""
    signal = _as_signal(signal)
    return mel_magnitude(_stft_complex(signal, cfg.stft).abs(), cfg)
