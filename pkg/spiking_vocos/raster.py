"""Spike raster export: event CSV, per-site table and an SVG panel per depth."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Dict, Iterator, List, Set, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import torch  # noqa: E402

from .blocks import SiteRecord, SpikeProbe  # noqa: E402
from .energy import FiringRates, measure_firing_rates  # noqa: E402
from .errors import InvalidInput, InvalidState, UnsupportedFormat  # noqa: E402

logger = logging.getLogger(__name__)

FORMATS = ("csv", "svg")
RASTER_COLUMNS = ("block", "plif_index", "t", "c", "l")
SITE_COLUMNS = ("block", "plif_index", "timesteps", "channels", "frames", "fan_out", "spikes", "rate")


def _site_spikes(site: SiteRecord) -> torch.Tensor:
    if site.spikes is None:
        raise InvalidState(
            f"site ({site.block}, {site.plif_index}) kept no spike tensor; record with keep_spikes=True."
        )
    return site.spikes


def iter_events(probe: SpikeProbe) -> Iterator[Tuple[int, int, int, int, int]]:
    for (block, plif_index), site in sorted(probe.sites.items()):
        for t, c, l in torch.nonzero(_site_spikes(site)).tolist():
            yield block, plif_index, t, c, l


def write_raster_csv(probe: SpikeProbe, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RASTER_COLUMNS)
        for event in iter_events(probe):
            writer.writerow(event)
    return path


def write_site_table(probe: SpikeProbe, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SITE_COLUMNS)
        for (block, plif_index), site in sorted(probe.sites.items()):
            t, c, l = site.shape
            writer.writerow([block, plif_index, t, c, l, site.fan_out, site.ones, repr(site.rate)])
    return path


def write_raster_svg(probe: SpikeProbe, path) -> Path:
    path = Path(path)
    blocks = sorted({site.block for site in probe.sites.values()})
    rates = measure_firing_rates(probe).blocks if blocks else {}
    with matplotlib.rc_context({"svg.fonttype": "none"}):
        fig, axes = plt.subplots(max(len(blocks), 1), 1, figsize=(8, 1.6 * max(len(blocks), 1)), squeeze=False)
        try:
            if not blocks:
                axes[0][0].text(0.5, 0.5, "no spike sites recorded", ha="center", va="center")
                axes[0][0].set_axis_off()
            for ax, block in zip(axes[:, 0], blocks):
                ax.set_gid(f"raster-panel-{block}")
                offset = 0
                for plif_index in (0, 1):
                    site = probe.sites.get((block, plif_index))
                    if site is None:
                        continue
                    t_steps, channels, frames = site.shape
                    events = torch.nonzero(_site_spikes(site))
                    if events.numel():
                        x = (events[:, 0] * frames + events[:, 2]).numpy()
                        y = (events[:, 1] + offset).numpy()
                        ax.scatter(x, y, s=0.5, marker=".", linewidths=0, color=f"C{plif_index}")
                    offset += channels
                ax.set_ylabel(f"block {block}")
                ax.text(
                    1.0, 1.02, f"block {block}: r={rates[block]:.4f}",
                    transform=ax.transAxes, ha="right", va="bottom", fontsize=8,
                )
            axes[-1][0].set_xlabel("timestep x frame")
            fig.tight_layout()
            fig.savefig(path, format="svg")
        finally:
            plt.close(fig)
    return path


def export_raster(probe: SpikeProbe, path, fmt: str = "csv") -> Path:
    if fmt not in FORMATS:
        raise UnsupportedFormat(f"raster format must be one of {FORMATS}, got {fmt!r}.")
    if fmt == "csv":
        return write_raster_csv(probe, path)
    return write_raster_svg(probe, path)


def sites_path_for(raster_csv) -> Path:
    """`run.csv` -> `run.sites.csv`"""
    raster_csv = Path(raster_csv)
    return raster_csv.with_name(f"{raster_csv.stem}.sites.csv")


def read_run_rates(raster_csv) -> FiringRates:
    """Recount firing rates from a raster CSV and its sibling site table."""
    raster_csv = Path(raster_csv)
    table = sites_path_for(raster_csv)
    if not raster_csv.is_file():
        raise FileNotFoundError(f"No such raster file: {raster_csv}")
    if not table.is_file():
        raise FileNotFoundError(f"Raster site table not found next to the raster: {table}")

    shapes: Dict[Tuple[int, int], Tuple[int, int]] = {}
    steps: Set[int] = set()
    with table.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or tuple(reader.fieldnames) != SITE_COLUMNS:
            raise InvalidInput(f"{table}: expected columns {','.join(SITE_COLUMNS)}.")
        for row in reader:
            key = (int(row["block"]), int(row["plif_index"]))
            steps.add(int(row["timesteps"]))
            elements = int(row["timesteps"]) * int(row["channels"]) * int(row["frames"])
            shapes[key] = (elements, int(row["fan_out"]))
    if not shapes:
        raise InvalidState(f"{table}: no spike sites recorded.")
    if len(steps) != 1:
        raise InvalidInput(f"{table}: sites disagree on timesteps {sorted(steps)}.")

    ones: Dict[Tuple[int, int], int] = {key: 0 for key in shapes}
    with raster_csv.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RASTER_COLUMNS:
            raise InvalidInput(f"{raster_csv}: expected columns {','.join(RASTER_COLUMNS)}.")
        for row in reader:
            key = (int(row["block"]), int(row["plif_index"]))
            if key not in ones:
                raise InvalidInput(f"{raster_csv}: event for unknown site {key}.")
            ones[key] += 1

    sites = {key: ones[key] / elements if elements else 0.0 for key, (elements, _) in shapes.items()}
    gated = {key: elements * fan_out for key, (elements, fan_out) in shapes.items()}
    total = sum(gated.values())
    mean = sum(sites[k] * gated[k] for k in sites) / total if total else 0.0
    block_ones: Dict[int, int] = {}
    block_elements: Dict[int, int] = {}
    for (block, _), (elements, _) in shapes.items():
        block_elements[block] = block_elements.get(block, 0) + elements
    for (block, plif_index), count in ones.items():
        block_ones[block] = block_ones.get(block, 0) + count
    blocks = {b: block_ones[b] / block_elements[b] if block_elements[b] else 0.0 for b in block_elements}
    logger.debug("recounted %d events over %d sites from %s", sum(ones.values()), len(shapes), raster_csv)
    return FiringRates(
        sites=dict(sorted(sites.items())),
        blocks=blocks,
        mean=mean,
        gated=gated,
        timesteps=steps.pop(),
    )


def export_run(probe: SpikeProbe, prefix) -> List[Path]:
    """Write `<prefix>.csv`, `<prefix>.sites.csv` and `<prefix>.svg`."""
    prefix = Path(prefix)
    return [
        export_raster(probe, prefix.with_name(prefix.name + ".csv"), "csv"),
        write_site_table(probe, prefix.with_name(prefix.name + ".sites.csv")),
        export_raster(probe, prefix.with_name(prefix.name + ".svg"), "svg"),
    ]
