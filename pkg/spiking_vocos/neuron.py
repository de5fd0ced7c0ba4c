"""
PLIF neuron dynamics: charge, fire, reset.

    H_t = V_{t-1} + (1/tau) * (X_t - (V_{t-1} - V_re))
    S_t = Heaviside(H_t - V_th)            # Heaviside(0) = 1
    V_t = V_re * S_t + H_t * (1 - S_t)     # hard reset

1/tau = sigmoid(w) with w learnable, so tau > 1 always. The forward pass uses
the exact step function; the backward pass substitutes the arctan surrogate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, List, Optional, Tuple, Union

import torch
import torch.nn as nn

from .errors import InvalidConfig, InvalidInput, NumericalError

SURROGATES = {"arctan"}


@dataclass(frozen=True)
class SurrogateConfig:
    kind: str = "arctan"
    alpha: float = 2.0

    def __post_init__(self) -> None:
        if self.kind.lower() not in SURROGATES:
            raise InvalidConfig(f"Unknown surrogate {self.kind!r}.")
        if not self.alpha > 0:
            raise InvalidConfig("surrogate alpha must be positive.")


def heaviside_surrogate_grad(u, cfg: SurrogateConfig = SurrogateConfig()):
    """alpha / (2 * (1 + (pi * alpha * u / 2)^2)); accepts floats or tensors."""
    alpha = cfg.alpha
    return alpha / (2.0 * (1.0 + (math.pi * alpha * u / 2.0) ** 2))


class _HeavisideArctan(torch.autograd.Function):
    @staticmethod
    def forward(ctx: Any, u: torch.Tensor, alpha: float) -> torch.Tensor:
        ctx.save_for_backward(u)
        ctx.alpha = alpha
        return u.ge(0.0).to(u)

    @staticmethod
    def backward(ctx: Any, grad_output: torch.Tensor):
        (u,) = ctx.saved_tensors
        grad = heaviside_surrogate_grad(u, SurrogateConfig(alpha=ctx.alpha))
        return grad_output * grad, None


def heaviside(u: torch.Tensor, cfg: SurrogateConfig = SurrogateConfig()) -> torch.Tensor:
    return _HeavisideArctan.apply(u, cfg.alpha)


def tau_to_w(tau: float) -> float:
    if not tau > 1:
        raise InvalidInput(f"tau must exceed 1, got {tau}.")
    return -math.log(tau - 1.0)


@dataclass
class PlifParams:
    """PLIF parameters; `w` is a scalar or a per-channel vector."""

    w: Union[torch.Tensor, float] = 0.0
    v_threshold: float = 1.0
    v_reset: float = 0.0

    def __post_init__(self) -> None:
        if not self.v_threshold > self.v_reset:
            raise InvalidConfig(
                f"v_threshold ({self.v_threshold}) must exceed v_reset ({self.v_reset})."
            )

    @classmethod
    def from_tau(cls, tau: float, v_threshold: float = 1.0, v_reset: float = 0.0) -> "PlifParams":
        return cls(w=tau_to_w(tau), v_threshold=v_threshold, v_reset=v_reset)

    def inv_tau(self, like: torch.Tensor) -> torch.Tensor:
        if isinstance(self.w, torch.Tensor):
            w = self.w.to(dtype=like.dtype, device=like.device)
        else:
            w = torch.tensor(float(self.w), dtype=like.dtype, device=like.device)
        inv = torch.sigmoid(w)
        if inv.dim() == 1 and like.dim() >= 2:
            # one time constant per channel; channel axis is -2 of [..., C, L]
            inv = inv.view(-1, 1)
        return inv


@dataclass
class NeuronState:
    v: torch.Tensor

    @classmethod
    def initial(cls, like: torch.Tensor, params: PlifParams) -> "NeuronState":
        return cls(v=torch.full_like(like, params.v_reset))


def plif_step(
    x: torch.Tensor,
    state: NeuronState,
    params: PlifParams,
    surrogate: SurrogateConfig = SurrogateConfig(),
) -> Tuple[torch.Tensor, NeuronState]:
    if x.shape != state.v.shape:
        raise InvalidInput(f"input {tuple(x.shape)} does not match state {tuple(state.v.shape)}.")
    if bool(torch.isnan(x).any()):
        raise NumericalError("NaN input reached a PLIF neuron.")
    v = state.v
    h = v + params.inv_tau(x) * (x - (v - params.v_reset))
    spikes = heaviside(h - params.v_threshold, surrogate)
    v_next = params.v_reset * spikes + h * (1.0 - spikes)
    return spikes, NeuronState(v=v_next)


def plif_trace(
    xs: torch.Tensor,
    params: PlifParams,
    surrogate: SurrogateConfig = SurrogateConfig(),
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Run a fresh neuron over the leading T axis; returns (spikes, potentials)."""
    if xs.dim() < 1 or xs.shape[0] == 0:
        raise InvalidInput("plif_sequence needs at least one timestep.")
    state = NeuronState.initial(xs[0], params)
    spikes: List[torch.Tensor] = []
    potentials: List[torch.Tensor] = []
    for x_t in xs.unbind(0):
        s_t, state = plif_step(x_t, state, params, surrogate)
        spikes.append(s_t)
        potentials.append(state.v)
    return torch.stack(spikes), torch.stack(potentials)


def plif_sequence(
    xs: torch.Tensor,
    params: PlifParams,
    surrogate: SurrogateConfig = SurrogateConfig(),
) -> torch.Tensor:
    return plif_trace(xs, params, surrogate)[0]


class PLIFNode(nn.Module):
    """Learnable-tau neuron layer over [T, C, L] inputs; state resets every call."""

    def __init__(
        self,
        channels: Optional[int] = None,
        init_tau: float = 2.0,
        v_threshold: float = 1.0,
        v_reset: float = 0.0,
        surrogate: SurrogateConfig = SurrogateConfig(),
    ) -> None:
        super().__init__()
        shape = (channels,) if channels else ()
        self.w = nn.Parameter(torch.full(shape, tau_to_w(init_tau)))
        self.v_threshold = float(v_threshold)
        self.v_reset = float(v_reset)
        self.surrogate = surrogate

    def params(self) -> PlifParams:
        return PlifParams(w=self.w, v_threshold=self.v_threshold, v_reset=self.v_reset)

    def forward(self, xs: torch.Tensor) -> torch.Tensor:
        return plif_sequence(xs, self.params(), self.surrogate)

    def extra_repr(self) -> str:
        return f"v_threshold={self.v_threshold}, v_reset={self.v_reset}, per_channel={self.w.dim() == 1}"
