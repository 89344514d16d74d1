"""Factored second-moment optimizer (Adafactor) without first moment.

Matrices keep row and column running means of the squared gradient instead
of a full second-moment tensor.  The step size is relative to the
parameter scale and decays as 1/sqrt(step), and each update is clipped
to an RMS of ``clip_threshold``.
"""

from __future__ import annotations

import math

import torch
from torch.optim import Optimizer


class Adafactor(Optimizer):
    def __init__(
        self,
        params,
        lr: float | None = None,
        eps1: float = 1e-30,
        eps2: float = 1e-3,
        clip_threshold: float = 1.0,
        decay_rate: float = -0.8,
        relative_step: bool = True,
        scale_parameter: bool = True,
        warmup_init: bool = False,
        weight_decay: float = 0.0,
    ):
        if lr is not None and relative_step:
            raise ValueError("explicit lr cannot be combined with relative_step")
        if lr is None and not relative_step:
            raise ValueError("lr is required when relative_step is off")
        if warmup_init and not relative_step:
            raise ValueError("warmup_init requires relative_step")
        defaults = dict(
            lr=lr, eps1=eps1, eps2=eps2, clip_threshold=clip_threshold,
            decay_rate=decay_rate, relative_step=relative_step,
            scale_parameter=scale_parameter, warmup_init=warmup_init,
            weight_decay=weight_decay,
        )
        super().__init__(params, defaults)

    @staticmethod
    def _rms(t: torch.Tensor) -> torch.Tensor:
        return t.norm(2) / math.sqrt(t.numel())

    @staticmethod
    def step_size(group: dict, step: int, param_rms: float) -> float:
        if group["relative_step"]:
            min_step = 1e-6 * step if group["warmup_init"] else 1e-2
            rel = min(min_step, 1.0 / math.sqrt(step))
        else:
            rel = group["lr"]
        scale = max(group["eps2"], param_rms) if group["scale_parameter"] else 1.0
        return scale * rel

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                if grad.is_sparse:
                    raise RuntimeError("sparse gradients are not supported")
                state = self.state[p]
                factored = grad.dim() >= 2
                if not state:
                    state["step"] = 0
                    if factored:
                        state["row"] = torch.zeros(grad.shape[:-1], dtype=grad.dtype)
                        state["col"] = torch.zeros(grad.shape[:-2] + grad.shape[-1:], dtype=grad.dtype)
                    else:
                        state["sq"] = torch.zeros_like(grad)
                state["step"] += 1
                t = state["step"]

                lr = self.step_size(group, t, self._rms(p).item())
                beta2 = 1.0 - t ** group["decay_rate"]
                sq = grad * grad + group["eps1"]
                if factored:
                    row, col = state["row"], state["col"]
                    row.mul_(beta2).add_(sq.mean(-1), alpha=1 - beta2)
                    col.mul_(beta2).add_(sq.mean(-2), alpha=1 - beta2)
                    r = (row / row.mean(-1, keepdim=True)).rsqrt().unsqueeze(-1)
                    c = col.rsqrt().unsqueeze(-2)
                    update = grad * r * c
                else:
                    state["sq"].mul_(beta2).add_(sq, alpha=1 - beta2)
                    update = grad * state["sq"].rsqrt()

                update.div_((self._rms(update) / group["clip_threshold"]).clamp(min=1.0))
                if group["weight_decay"]:
                    p.mul_(1 - group["weight_decay"] * lr)
                p.add_(update, alpha=-lr)
        return loss
