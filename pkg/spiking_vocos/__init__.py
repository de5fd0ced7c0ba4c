"""Spiking neural vocoder engine: mel features in, waveform out."""

__version__ = "0.1.0"
