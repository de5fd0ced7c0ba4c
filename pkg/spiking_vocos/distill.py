"""
Self-architectural distillation: an ANN generator teaches a spiking one of
the same shape through layer-wise feature alignment plus magnitude and
anti-wrapped phase losses on the head output.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidConfig, InvalidInput
from .model import Generator, GeneratorOutput

TWO_PI = 2.0 * math.pi
ACTIVATIONS = ("gelu", "identity")


@dataclass(frozen=True)
class KdWeights:
    lambda_feat: float = 1.0
    lambda_p: float = 1.0
    lambda_m: float = 1.0

    def __post_init__(self) -> None:
        if min(self.lambda_feat, self.lambda_p, self.lambda_m) < 0:
            raise InvalidConfig("distillation weights must be nonnegative.")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "KdWeights":
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise InvalidConfig(f"Unknown KdWeights keys: {unknown}")
        return cls(**{k: float(v) for k, v in data.items()})


class Adapter(nn.Module):
    """Projects a student tap [1, C, L] into the teacher's feature space."""

    def __init__(self, dim: int, activation: str = "gelu") -> None:
        super().__init__()
        if activation not in ACTIVATIONS:
            raise InvalidConfig(f"adapter activation must be one of {ACTIVATIONS}.")
        self.linear = nn.Linear(dim, dim)
        self.act = nn.GELU() if activation == "gelu" else nn.Identity()

    @classmethod
    def identity(cls, dim: int, offset: float = 0.0) -> "Adapter":
        adapter = cls(dim, activation="identity")
        with torch.no_grad():
            adapter.linear.weight.copy_(torch.eye(dim))
            adapter.linear.bias.fill_(offset)
        return adapter

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.act(self.linear(z.transpose(-1, -2))).transpose(-1, -2)


def anti_wrap(x: torch.Tensor) -> torch.Tensor:
    """|x - 2*pi*round(x / 2*pi)| with rounding half away from zero; in [0, pi]."""
    y = x / TWO_PI
    nearest = torch.sign(y) * torch.floor(torch.abs(y) + 0.5)
    return torch.abs(x - TWO_PI * nearest)


def align_taps(
    taps_stu: Sequence[torch.Tensor],
    taps_tea: Sequence[torch.Tensor],
    shifted: bool = False,
) -> Tuple[List[torch.Tensor], List[torch.Tensor]]:
    """Pair student and teacher taps; with TSM the teacher side moves one block later."""
    if len(taps_stu) != len(taps_tea):
        raise InvalidInput(f"{len(taps_stu)} student taps vs {len(taps_tea)} teacher taps.")
    if shifted:
        return list(taps_stu[:-1]), list(taps_tea[1:])
    return list(taps_stu), list(taps_tea)


def feature_loss(
    taps_stu: Sequence[torch.Tensor],
    taps_tea: Sequence[torch.Tensor],
    adapters: Sequence[nn.Module],
) -> torch.Tensor:
    if not (len(taps_stu) == len(taps_tea) == len(adapters)):
        raise InvalidInput(
            f"feature loss needs equal counts, got {len(taps_stu)} student, "
            f"{len(taps_tea)} teacher taps and {len(adapters)} adapters."
        )
    if not taps_stu:
        raise InvalidInput("feature loss needs at least one tap pair.")
    total = None
    for n, (z_stu, z_tea, adapter) in enumerate(zip(taps_stu, taps_tea, adapters)):
        if z_stu.shape != z_tea.shape:
            raise InvalidInput(f"tap {n}: {tuple(z_stu.shape)} vs {tuple(z_tea.shape)}.")
        term = F.mse_loss(adapter(z_stu), z_tea)
        total = term if total is None else total + term
    return total


def magnitude_loss(a_stu: torch.Tensor, a_tea: torch.Tensor) -> torch.Tensor:
    if a_stu.shape != a_tea.shape:
        raise InvalidInput(f"magnitude shapes differ: {tuple(a_stu.shape)} vs {tuple(a_tea.shape)}.")
    if bool((a_stu.detach() <= 0).any()) or bool((a_tea.detach() <= 0).any()):
        raise InvalidInput("magnitudes must be strictly positive.")
    return torch.mean(torch.abs(torch.log(a_stu) - torch.log(a_tea)))


@dataclass
class PhaseLosses:
    ip: torch.Tensor
    gd: torch.Tensor
    ptd: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.ip + self.gd + self.ptd

    def as_tuple(self) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.ip, self.gd, self.ptd, self.total


def phase_loss(phi_stu: torch.Tensor, phi_tea: torch.Tensor) -> PhaseLosses:
    """Instantaneous phase, group delay and phase time difference losses over [..., F, L]."""
    if phi_stu.shape != phi_tea.shape:
        raise InvalidInput(f"phase shapes differ: {tuple(phi_stu.shape)} vs {tuple(phi_tea.shape)}.")
    if phi_stu.dim() < 2 or phi_stu.shape[-2] < 2 or phi_stu.shape[-1] < 2:
        raise InvalidInput("phase losses need at least 2 bins and 2 frames.")
    ip = torch.mean(anti_wrap(phi_tea - phi_stu))
    gd = torch.mean(anti_wrap(torch.diff(phi_tea, dim=-2) - torch.diff(phi_stu, dim=-2)))
    ptd = torch.mean(anti_wrap(torch.diff(phi_tea, dim=-1) - torch.diff(phi_stu, dim=-1)))
    return PhaseLosses(ip=ip, gd=gd, ptd=ptd)


@dataclass
class KdComponents:
    feat: torch.Tensor
    magnitude: torch.Tensor
    phase: PhaseLosses

    def as_floats(self) -> Dict[str, float]:
        return {
            "loss_feat": float(self.feat.detach()),
            "loss_m": float(self.magnitude.detach()),
            "loss_ip": float(self.phase.ip.detach()),
            "loss_gd": float(self.phase.gd.detach()),
            "loss_ptd": float(self.phase.ptd.detach()),
        }


def kd_loss(components: KdComponents, weights: KdWeights = KdWeights()) -> torch.Tensor:
    return (
        weights.lambda_feat * components.feat
        + weights.lambda_p * components.phase.total
        + weights.lambda_m * components.magnitude
    )


class KdObjective(nn.Module):
    """Frozen teacher plus trainable adapters; only the adapters are submodules."""

    def __init__(
        self,
        teacher: Generator,
        student_blocks: int,
        weights: KdWeights = KdWeights(),
        shifted: bool = False,
        activation: str = "gelu",
    ) -> None:
        super().__init__()
        if teacher.config.n_blocks != student_blocks:
            raise InvalidConfig(
                f"teacher has {teacher.config.n_blocks} blocks, student {student_blocks}."
            )
        if shifted and student_blocks < 2:
            raise InvalidConfig("shifted distillation points need at least two blocks.")
        teacher.eval()
        teacher.requires_grad_(False)
        # not a registered submodule: excluded from parameters() and state_dict()
        object.__setattr__(self, "teacher", teacher)
        self.weights = weights
        self.shifted = shifted
        pairs = student_blocks - 1 if shifted else student_blocks
        dim = teacher.config.dim
        self.adapters = nn.ModuleList([Adapter(dim, activation) for _ in range(pairs)])

    def teacher_output(self, mel: torch.Tensor) -> GeneratorOutput:
        with torch.no_grad():
            return self.teacher(mel)

    def components(self, student: GeneratorOutput, teacher: GeneratorOutput) -> KdComponents:
        taps_stu, taps_tea = align_taps(student.taps, teacher.taps, self.shifted)
        return KdComponents(
            feat=feature_loss(taps_stu, taps_tea, self.adapters),
            magnitude=magnitude_loss(student.spectrum.magnitude, teacher.spectrum.magnitude),
            phase=phase_loss(student.spectrum.phase, teacher.spectrum.phase),
        )

    def forward(self, student: GeneratorOutput, teacher: GeneratorOutput) -> Tuple[torch.Tensor, KdComponents]:
        parts = self.components(student, teacher)
        return kd_loss(parts, self.weights), parts


def warm_start(student: Generator, teacher: Generator) -> List[str]:
    """Copy every teacher tensor into the same-named student tensor.

    Returns the student-only keys (the PLIF time constants), which keep their
    fresh initialisation.
    """
    try:
        result = student.load_state_dict(teacher.state_dict(), strict=False)
    except RuntimeError as exc:
        raise InvalidConfig(f"teacher weights do not fit the student: {exc}") from exc
    if result.unexpected_keys:
        raise InvalidConfig(f"teacher tensors without a student counterpart: {result.unexpected_keys}")
    return list(result.missing_keys)
