"""Adam with parameter groups and the warmup + cosine learning-rate schedule."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from partequiv.autodiff.module import Parameter
from partequiv.errors import get_error_message
from partequiv.utils.error_handling import TrainingError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First and second moment estimates of one parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class ParamGroup:
    name: str
    lr: float
    params: List[Tuple[str, Parameter]] = field(default_factory=list)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
              weight_decay: float = 0.0) -> np.ndarray:
    """
    Apply one bias-corrected Adam update to `param` in place.

    Weight decay is added to the gradient (L2 regularisation).

    Raises:
        TrainingError: If lr <= 0
    """
    if not lr > 0:
        raise TrainingError(get_error_message('BAD_LR', lr=lr))
    beta1, beta2 = betas
    if weight_decay:
        grad = grad + weight_decay * param
    state.step += 1
    state.m *= beta1
    state.m += (1 - beta1) * grad
    state.v *= beta2
    state.v += (1 - beta2) * grad * grad
    m_hat = state.m / (1 - beta1 ** state.step)
    v_hat = state.v / (1 - beta2 ** state.step)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)
    return param


def cosine_warmup_lr(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """
    Linear warmup to base_lr, then cosine annealing to zero at total_steps.

    Args:
        step: Update counter; the first optimiser update uses step 1
        base_lr: Peak learning rate reached at step == warmup_steps
        warmup_steps: Length of the linear ramp (0 disables warmup)
        total_steps: Step at which the rate reaches zero
    """
    if step <= warmup_steps and warmup_steps > 0:
        return base_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = min(1.0, (step - warmup_steps) / (total_steps - warmup_steps))
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    """Adam over named parameter groups, each with its own base learning rate."""

    def __init__(self, groups: List[ParamGroup], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        for group in groups:
            if not group.lr > 0:
                raise TrainingError(get_error_message('BAD_LR', lr=group.lr))
        self.groups = groups
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state: Dict[str, AdamState] = {}
        for group in groups:
            for name, p in group.params:
                self.state[name] = AdamState(np.zeros_like(p.data), np.zeros_like(p.data))

    def zero_grad(self):
        for group in self.groups:
            for _, p in group.params:
                p.zero_grad()

    def step(self, lr_scale: float = 1.0) -> Dict[str, float]:
        """
        Update every parameter that has a gradient.

        The learning rate of each group is base_lr * lr_scale. A zero scale
        (the cosine endpoint) leaves parameters and moments untouched.

        Returns:
            dict mapping group name to the learning rate used
        """
        used = {}
        for group in self.groups:
            lr = group.lr * lr_scale
            used[group.name] = lr
            if lr_scale <= 0:
                continue
            for name, p in group.params:
                if p.grad is None:
                    continue
                adam_step(p.data, p.grad, self.state[name], lr, self.betas, self.eps, self.weight_decay)
        if lr_scale <= 0:
            logger.debug("Optimizer step skipped at zero learning rate")
        return used

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Flatten optimiser state into named arrays for checkpointing."""
        arrays = {}
        for name, st in self.state.items():
            arrays[f"adam.m.{name}"] = st.m
            arrays[f"adam.v.{name}"] = st.v
            arrays[f"adam.step.{name}"] = np.array([st.step], dtype=np.float32)
        return arrays

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]):
        for name, st in self.state.items():
            st.m[...] = arrays[f"adam.m.{name}"]
            st.v[...] = arrays[f"adam.v.{name}"]
            st.step = int(arrays[f"adam.step.{name}"][0])
