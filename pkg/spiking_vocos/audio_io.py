"""Mono WAV reading and writing (PCM16 or IEEE float32)."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import soundfile as sf
import torch

from .errors import InvalidInput, SampleRateMismatch, UnsupportedFormat

logger = logging.getLogger(__name__)

PIPELINE_RATE = 24000
READABLE_SUBTYPES = ("PCM_16", "FLOAT")
PCM_SCALE = 32768.0

Samples = Union[np.ndarray, torch.Tensor]


def read_wav(path, expected_rate: Optional[int] = None) -> Tuple[np.ndarray, int]:
    """Return float32 samples in [-1, 1] and the file's sample rate."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such audio file: {path}")
    try:
        info = sf.info(str(path))
    except RuntimeError as exc:
        raise UnsupportedFormat(f"{path}: not a readable audio file ({exc}).") from exc
    if info.format != "WAV":
        raise UnsupportedFormat(f"{path}: container {info.format} is not WAV.")
    if info.channels != 1:
        raise UnsupportedFormat(f"{path}: {info.channels} channels, only mono is supported.")
    if info.subtype not in READABLE_SUBTYPES:
        raise UnsupportedFormat(f"{path}: sample format {info.subtype} is not PCM16 or float32.")
    if expected_rate is not None and info.samplerate != expected_rate:
        raise SampleRateMismatch(f"{path}: sample rate {info.samplerate} Hz, expected {expected_rate} Hz.")
    data, rate = sf.read(str(path), dtype="float32", always_2d=False)
    if info.subtype == "FLOAT" and data.size and float(np.max(np.abs(data))) > 1.0:
        logger.warning("%s: float samples exceed [-1, 1]; clipping", path)
    return np.clip(data, -1.0, 1.0).astype(np.float32, copy=False), int(rate)


def write_wav(path, samples: Samples, rate: int = PIPELINE_RATE) -> Path:
    """PCM16 without dithering: round to the nearest step and saturate."""
    if rate <= 0:
        raise InvalidInput("sample rate must be positive.")
    if isinstance(samples, torch.Tensor):
        samples = samples.detach().cpu().double().numpy()
    data = np.asarray(samples, dtype=np.float64)
    if data.ndim != 1:
        raise InvalidInput(f"expected mono samples, got shape {data.shape}.")
    if not np.all(np.isfinite(data)):
        raise InvalidInput("samples contain non-finite values.")
    pcm = np.clip(np.round(data * PCM_SCALE), -PCM_SCALE, PCM_SCALE - 1).astype(np.int16)
    path = Path(path)
    sf.write(str(path), pcm, rate, subtype="PCM_16", format="WAV")
    return path
