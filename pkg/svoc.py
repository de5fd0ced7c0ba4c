#!/usr/bin/env python
"""Command-line utility for the spiking vocoder engine."""
import sys


def main():
    try:
        from spiking_vocos.cli import main as run
    except ImportError as exc:
        raise ImportError(
            "Couldn't import spiking_vocos. Are torch, torchaudio and soundfile "
            "installed (pip install -r requirements.txt)?"
        ) from exc
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
