"""
Analytical operation counts and 45nm energy estimates for the ConvNeXt stack.

Depthwise convolutions see continuous inputs and stay MAC-counted at every
timestep; in spiking mode both pointwise convolutions receive binary spikes
and cost one accumulate per nonzero input, so their energy scales with the
firing rate. Embedding, head, norms and elementwise ops are not counted.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .blocks import SpikeProbe
from .errors import InvalidConfig, InvalidInput, InvalidState
from .model import GeneratorConfig

MAC = "MAC"
AC = "AC"
FOOTNOTE = "Only the ConvNeXt stack is counted (embedding, head, norms and elementwise ops excluded)."

# label, timesteps, firing rate
REPORTED_SCENARIOS: Tuple[Tuple[str, int, float], ...] = (
    ("spiking-8", 8, 0.147),
    ("spiking-4", 4, 0.129),
    ("spiking-4-tsm", 4, 0.141),
    ("spiking-4-kd", 4, 0.180),
    ("spiking-4-tsm-kd", 4, 0.176),
)

TABLE_COLUMNS = ("model", "timesteps", "firing_rate", "energy_pj", "ratio_vs_ann", "efficiency")


@dataclass(frozen=True)
class EnergyConstants:
    e_mac: float = 4.6
    e_ac: float = 0.9

    def __post_init__(self) -> None:
        if not (self.e_mac > 0 and self.e_ac > 0):
            raise InvalidConfig("energy constants must be positive.")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EnergyConstants":
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise InvalidConfig(f"Unknown EnergyConstants keys: {unknown}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class OpCount:
    layer: str
    kind: str
    count: int
    gated_by_rate: bool = False

    def __post_init__(self) -> None:
        if self.count < 0:
            raise InvalidInput(f"{self.layer}: negative operation count.")
        if self.kind not in (MAC, AC):
            raise InvalidInput(f"{self.layer}: kind must be MAC or AC.")


def count_ops(cfg: GeneratorConfig, frames: int, timesteps: Optional[int] = None) -> List[OpCount]:
    if frames < 1:
        raise InvalidInput("frames must be at least 1.")
    if timesteps is not None and timesteps < 1:
        raise InvalidInput("timesteps must be at least 1.")
    t = 1 if not cfg.is_spiking else (timesteps if timesteps is not None else cfg.timesteps)
    c, c_mid, k = cfg.dim, cfg.intermediate_dim, cfg.kernel_size
    pw_kind = AC if cfg.is_spiking else MAC
    counts: List[OpCount] = []
    for b in range(cfg.n_blocks):
        counts.append(OpCount(f"block{b}.dwconv", MAC, k * c * frames * t))
        counts.append(OpCount(f"block{b}.pwconv1", pw_kind, c * c_mid * frames * t, cfg.is_spiking))
        counts.append(OpCount(f"block{b}.pwconv2", pw_kind, c_mid * c * frames * t, cfg.is_spiking))
    return counts


@dataclass
class FiringRates:
    sites: Dict[Tuple[int, int], float]
    blocks: Dict[int, float]
    mean: float
    gated: Dict[Tuple[int, int], int] = field(default_factory=dict)
    timesteps: Optional[int] = None

    def for_layers(self) -> Dict[str, float]:
        """Rate of the spikes feeding each pointwise convolution, keyed by layer id."""
        return {f"block{b}.pwconv{i + 1}": rate for (b, i), rate in self.sites.items()}


def measure_firing_rates(probe: SpikeProbe) -> FiringRates:
    if probe is None or probe.is_empty():
        raise InvalidState("the spike probe holds no recorded sites.")
    sites: Dict[Tuple[int, int], float] = {}
    gated: Dict[Tuple[int, int], int] = {}
    block_ones: Dict[int, int] = {}
    block_elements: Dict[int, int] = {}
    for key, site in sorted(probe.sites.items()):
        sites[key] = site.rate
        gated[key] = site.gated_ops
        block_ones[site.block] = block_ones.get(site.block, 0) + site.ones
        block_elements[site.block] = block_elements.get(site.block, 0) + site.elements
    total_gated = sum(gated.values())
    mean = sum(sites[k] * gated[k] for k in sites) / total_gated if total_gated else 0.0
    blocks = {b: block_ones[b] / block_elements[b] if block_elements[b] else 0.0 for b in block_ones}
    steps = {site.shape[0] for site in probe.sites.values()}
    return FiringRates(
        sites=sites,
        blocks=blocks,
        mean=mean,
        gated=gated,
        timesteps=steps.pop() if len(steps) == 1 else None,
    )


@dataclass(frozen=True)
class EnergyRow:
    layer: str
    kind: str
    count: int
    rate: Optional[float]
    pj: float


@dataclass
class EnergyReport:
    rows: List[EnergyRow]
    total_pj: float
    mac_pj: float
    ac_pj: float
    firing_rate_mean: Optional[float]

    def to_text(self) -> str:
        lines = [f"{'layer':<18} {'kind':<4} {'ops':>16} {'rate':>7} {'energy_pj':>14}"]
        for row in self.rows:
            rate = f"{row.rate:.4f}" if row.rate is not None else "-"
            lines.append(f"{row.layer:<18} {row.kind:<4} {row.count:>16d} {rate:>7} {row.pj:>14.6e}")
        lines.append(f"{'total':<18} {'':<4} {'':>16} {'':>7} {self.total_pj:>14.6e}")
        lines.append(FOOTNOTE)
        return "\n".join(lines)


RateSource = Union[float, Mapping[str, float], FiringRates, None]


def _rate_lookup(rates: RateSource):
    if rates is None:
        return lambda layer: None
    if isinstance(rates, FiringRates):
        rates = rates.for_layers()
    if isinstance(rates, Mapping):
        return rates.get
    fixed = float(rates)
    return lambda layer: fixed


def estimate_energy(
    counts: Sequence[OpCount],
    rates: RateSource = None,
    constants: EnergyConstants = EnergyConstants(),
) -> EnergyReport:
    lookup = _rate_lookup(rates)
    rows: List[EnergyRow] = []
    mac_pj = ac_pj = 0.0
    weighted = gated_total = 0.0
    for op in counts:
        if op.kind == MAC:
            pj = op.count * constants.e_mac
            rows.append(EnergyRow(op.layer, op.kind, op.count, None, pj))
            mac_pj += pj
            continue
        rate = lookup(op.layer) if op.gated_by_rate else 1.0
        if rate is None:
            raise InvalidInput(f"no firing rate for rate-gated layer {op.layer}.")
        if not 0.0 <= rate <= 1.0:
            raise InvalidInput(f"firing rate {rate} for {op.layer} is outside [0, 1].")
        pj = op.count * rate * constants.e_ac
        rows.append(EnergyRow(op.layer, op.kind, op.count, rate, pj))
        ac_pj += pj
        if op.gated_by_rate:
            weighted += rate * op.count
            gated_total += op.count
    mean = weighted / gated_total if gated_total else None
    return EnergyReport(rows=rows, total_pj=mac_pj + ac_pj, mac_pj=mac_pj, ac_pj=ac_pj, firing_rate_mean=mean)


@dataclass(frozen=True)
class TableRow:
    model: str
    timesteps: int
    firing_rate: Optional[float]
    energy_pj: float
    ratio_vs_ann: float
    efficiency: float

    def as_row(self) -> Dict[str, Any]:
        return asdict(self)


Scenario = Union[Tuple[int, float], Tuple[str, int, float]]


def _scenario(entry: Scenario) -> Tuple[str, int, float]:
    if len(entry) == 3:
        label, t, r = entry
    elif len(entry) == 2:
        t, r = entry
        label = f"spiking-{t}"
    else:
        raise InvalidInput(f"scenario must be (T, r) or (label, T, r), got {entry!r}.")
    if int(t) < 1:
        raise InvalidInput("scenario timesteps must be at least 1.")
    return str(label), int(t), float(r)


def report_table(
    scenarios: Iterable[Scenario],
    base: Optional[GeneratorConfig] = None,
    frames: int = 1000,
    constants: EnergyConstants = EnergyConstants(),
) -> List[TableRow]:
    """ANN baseline first, then one row per scenario with its share of the ANN energy."""
    entries = [_scenario(entry) for entry in scenarios]
    if not entries:
        return []
    base = base or GeneratorConfig()
    ann_cfg = base.replace(mode="ann", timesteps=1, tsm_enabled=False, variant=None)
    ann_pj = estimate_energy(count_ops(ann_cfg, frames), None, constants).total_pj
    rows = [TableRow("vocos", 1, None, ann_pj, 1.0, 1.0)]
    snn_cfg = base.replace(mode="snn", variant=None)
    for label, t, r in entries:
        pj = estimate_energy(count_ops(snn_cfg, frames, timesteps=t), r, constants).total_pj
        rows.append(TableRow(label, t, r, pj, pj / ann_pj, ann_pj / pj if pj else float("inf")))
    return rows


def format_table(rows: Sequence[TableRow], frames: int = 1000) -> str:
    lines = [
        f"Estimated energy, L={frames} frames",
        f"{'model':<18} {'T':>3} {'rate':>7} {'energy (1e9 pJ)':>16} {'vs ANN':>8} {'gain':>6}",
    ]
    for row in rows:
        rate = f"{row.firing_rate:.3f}" if row.firing_rate is not None else "-"
        lines.append(
            f"{row.model:<18} {row.timesteps:>3} {rate:>7} {row.energy_pj / 1e9:>16.2f} "
            f"{row.ratio_vs_ann * 100:>7.1f}% {row.efficiency:>5.1f}x"
        )
    lines.append(FOOTNOTE)
    return "\n".join(lines)


def write_table_csv(rows: Sequence[TableRow], path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_row())
    return path
