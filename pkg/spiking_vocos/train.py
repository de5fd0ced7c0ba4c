"""
Toy-scale training: mel reconstruction, optional distillation from a frozen
ANN teacher, AdamW updates, and a finite-difference gradient checker.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import settings
from .data import ToyDataset
from .distill import KdObjective, KdWeights, warm_start
from .dsp import MelConfig, mel_spectrogram
from .errors import InvalidConfig, InvalidInput, InvalidState
from .model import Generator, GeneratorConfig, build_generator

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "step",
    "loss_total",
    "loss_mel",
    "loss_feat",
    "loss_m",
    "loss_ip",
    "loss_gd",
    "loss_ptd",
    "firing_rate_mean",
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    steps: int = 200
    batch_size: int = 1
    seed: int = 0
    mel_recon_weight: float = 1.0
    kd: Optional[KdWeights] = None
    grad_clip: float = 1.0
    log_every: int = 10
    # distillation only: start the student from the teacher's shared tensors
    init_from_teacher: bool = True

    def __post_init__(self) -> None:
        # lr == 0 is accepted so a run can be replayed without updates
        if self.lr < 0:
            raise InvalidConfig("lr must be nonnegative.")
        if self.steps < 1:
            raise InvalidConfig("steps must be at least 1.")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be at least 1.")
        if self.mel_recon_weight < 0:
            raise InvalidConfig("mel_recon_weight must be nonnegative.")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["kd"] = self.kd.to_dict() if self.kd is not None else None
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise InvalidConfig(f"Unknown TrainConfig keys: {unknown}")
        payload = dict(data)
        if payload.get("kd") is not None:
            payload["kd"] = KdWeights.from_dict(payload["kd"])
        return cls(**payload)


@dataclass
class StepLog:
    step: int
    loss_total: float
    loss_mel: float
    loss_feat: float = 0.0
    loss_m: float = 0.0
    loss_ip: float = 0.0
    loss_gd: float = 0.0
    loss_ptd: float = 0.0
    firing_rate_mean: float = 0.0

    def as_row(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainResult:
    model: Generator
    log: List[StepLog]
    kd: Optional[KdObjective] = None
    steps: int = 0


def mel_reconstruction_loss(wav_hat: torch.Tensor, wav_ref: torch.Tensor, mel_cfg: MelConfig = MelConfig()) -> torch.Tensor:
    if wav_hat.shape != wav_ref.shape:
        raise InvalidInput(f"waveform lengths differ: {tuple(wav_hat.shape)} vs {tuple(wav_ref.shape)}.")
    return F.l1_loss(mel_spectrogram(wav_hat, mel_cfg), mel_spectrogram(wav_ref, mel_cfg))


def backward(loss: torch.Tensor) -> None:
    """Reverse-mode accumulation into .grad; Heaviside nodes use the surrogate."""
    if not isinstance(loss, torch.Tensor) or not loss.requires_grad:
        raise InvalidState("loss is detached from any trainable parameter.")
    if loss.numel() != 1:
        raise InvalidInput("backward expects a scalar loss.")
    loss.backward()


def mean_firing_rate(spike_stats: Mapping[str, float]) -> float:
    if not spike_stats:
        return 0.0
    return sum(spike_stats.values()) / len(spike_stats)


def _check_teacher(student: GeneratorConfig, teacher: Generator) -> None:
    t = teacher.config
    if (t.dim, t.n_blocks, t.n_mels, t.stft) != (student.dim, student.n_blocks, student.n_mels, student.stft):
        raise InvalidConfig(
            "teacher and student must share dim, n_blocks, n_mels and STFT settings for "
            "layer-wise distillation."
        )


def train_loop(
    model_cfg: GeneratorConfig,
    data: ToyDataset,
    t_cfg: TrainConfig,
    teacher: Optional[Generator] = None,
    dtype: Optional[torch.dtype] = None,
    mel_cfg: Optional[MelConfig] = None,
) -> TrainResult:
    if t_cfg.kd is not None and teacher is None:
        raise InvalidConfig("distillation is enabled but no teacher checkpoint was given.")
    dtype = dtype or settings.compute_dtype()
    mel_cfg = mel_cfg or MelConfig(stft=model_cfg.stft, n_mels=model_cfg.n_mels)
    model = build_generator(model_cfg, dtype=dtype, seed=t_cfg.seed)
    model.train()

    kd: Optional[KdObjective] = None
    params = list(model.parameters())
    if t_cfg.kd is not None:
        _check_teacher(model_cfg, teacher)
        teacher = teacher.to(dtype)
        kd = KdObjective(
            teacher,
            model_cfg.n_blocks,
            t_cfg.kd,
            shifted=model_cfg.is_spiking and model_cfg.tsm_enabled,
        ).to(dtype)
        if t_cfg.init_from_teacher:
            fresh = warm_start(model, teacher)
            logger.info("student initialised from the teacher; %d tensors kept fresh", len(fresh))
        params += list(kd.adapters.parameters())

    optimizer = torch.optim.AdamW(
        params,
        lr=t_cfg.lr,
        betas=(t_cfg.beta1, t_cfg.beta2),
        eps=t_cfg.eps,
        weight_decay=t_cfg.weight_decay,
    )

    clips = [clip.to(dtype) for clip in data.clips]
    mels = [mel_spectrogram(clip, mel_cfg) for clip in clips]
    teacher_outputs: Dict[int, Any] = {}
    batches = data.batches(t_cfg.batch_size, t_cfg.seed)
    log: List[StepLog] = []

    for step in range(t_cfg.steps):
        batch = next(batches)
        mel_total = 0.0
        parts: Dict[str, float] = {}
        rates: List[float] = []
        loss = None
        for index in batch:
            out = model(mels[index])
            wav_hat = out.waveform[: clips[index].shape[-1]]
            loss_mel = mel_reconstruction_loss(wav_hat, clips[index], mel_cfg)
            clip_loss = t_cfg.mel_recon_weight * loss_mel
            if kd is not None:
                if index not in teacher_outputs:
                    teacher_outputs[index] = kd.teacher_output(mels[index])
                kd_total, components = kd(out, teacher_outputs[index])
                clip_loss = clip_loss + kd_total
                for key, value in components.as_floats().items():
                    parts[key] = parts.get(key, 0.0) + value / len(batch)
            clip_loss = clip_loss / len(batch)
            loss = clip_loss if loss is None else loss + clip_loss
            mel_total += float(loss_mel.detach()) / len(batch)
            rates.append(mean_firing_rate(out.spike_stats))
        total = float(loss.detach())

        entry = StepLog(
            step=step,
            loss_total=total,
            loss_mel=mel_total,
            firing_rate_mean=sum(rates) / len(rates),
            **parts,
        )
        log.append(entry)
        if t_cfg.log_every and step % t_cfg.log_every == 0:
            logger.info(
                "step %d total=%.5f mel=%.5f rate=%.4f", step, entry.loss_total, entry.loss_mel, entry.firing_rate_mean
            )

        optimizer.zero_grad(set_to_none=True)
        backward(loss)
        if t_cfg.grad_clip and t_cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, t_cfg.grad_clip)
        optimizer.step()

    model.eval()
    return TrainResult(model=model, log=log, kd=kd, steps=t_cfg.steps)


def evaluate(model: Generator, clips: Sequence[torch.Tensor], mel_cfg: Optional[MelConfig] = None) -> float:
    """Mean mel reconstruction distance over `clips`."""
    cfg = model.config
    mel_cfg = mel_cfg or MelConfig(stft=cfg.stft, n_mels=cfg.n_mels)
    dtype = next(model.parameters()).dtype
    distances = []
    with torch.no_grad():
        for clip in clips:
            clip = clip.to(dtype)
            out = model(mel_spectrogram(clip, mel_cfg))
            distances.append(float(mel_reconstruction_loss(out.waveform[: clip.shape[-1]], clip, mel_cfg)))
    if not distances:
        raise InvalidInput("evaluate needs at least one clip.")
    return sum(distances) / len(distances)


def write_metric_log(log: Iterable[StepLog], path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for entry in log:
            writer.writerow({key: repr(value) if isinstance(value, float) else value for key, value in entry.as_row().items()})
    return path


@dataclass
class GradCheckReport:
    max_rel_error: float
    offender: Optional[Tuple[str, int]]
    analytic: float = 0.0
    numeric: float = 0.0
    n_checked: int = 0
    errors: Dict[str, float] = field(default_factory=dict)

    def passed(self, tolerance: float = 1e-5) -> bool:
        return self.max_rel_error < tolerance


def grad_check(
    model: nn.Module,
    objective: Callable[[], torch.Tensor],
    eps: float = 1e-5,
    parameters: Optional[Iterable[Tuple[str, nn.Parameter]]] = None,
    floor: float = 1e-3,
    max_params: int = 10_000,
) -> GradCheckReport:
    """Central differences (f(p+eps) - f(p-eps)) / 2eps against recorded gradients.

    The relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
    `floor` keeps vanishing gradients from turning round-off into large ratios.
    """
    if not eps > 0:
        raise InvalidInput("eps must be positive.")
    named = list(parameters if parameters is not None else model.named_parameters())
    if not named:
        raise InvalidInput("no parameters to check.")
    if any(p.dtype != torch.float64 for _, p in named):
        raise InvalidInput("gradient checks require double precision parameters.")
    total = sum(p.numel() for _, p in named)
    if total > max_params:
        raise InvalidInput(f"{total} parameters exceed the finite-difference budget of {max_params}.")

    for _, p in named:
        p.grad = None
    backward(objective())
    analytic = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) for name, p in named}

    report = GradCheckReport(max_rel_error=0.0, offender=None)
    with torch.no_grad():
        for name, p in named:
            flat = p.data.view(-1)
            grad = analytic[name].view(-1)
            worst = 0.0
            for i in range(flat.numel()):
                original = float(flat[i])
                flat[i] = original + eps
                f_plus = float(objective())
                flat[i] = original - eps
                f_minus = float(objective())
                flat[i] = original
                numeric = (f_plus - f_minus) / (2 * eps)
                a = float(grad[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, rel)
                report.n_checked += 1
                if rel > report.max_rel_error or report.offender is None:
                    if rel >= report.max_rel_error:
                        report.max_rel_error = rel
                        report.offender = (name, i)
                        report.analytic = a
                        report.numeric = numeric
            report.errors[name] = worst
    return report


def waveform_objective(model: Generator, mel: torch.Tensor, seed: int = 0) -> Callable[[], torch.Tensor]:
    """Smooth scalar of the generator output, suitable for finite differences."""
    with torch.no_grad():
        n = model(mel).waveform.numel()
    gen = torch.Generator().manual_seed(seed)
    weights = torch.randn(n, generator=gen, dtype=torch.float64).to(next(model.parameters()).dtype)

    def objective() -> torch.Tensor:
        wav = model(mel).waveform
        return (wav * weights).sum() / math.sqrt(n) + 0.5 * wav.pow(2).mean()

    return objective
