"""Parameter containers."""
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from partequiv.autodiff import functional as F
from partequiv.autodiff.tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """A leaf tensor that always requires gradients."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)

    def __repr__(self):
        return f"Parameter(shape={self.shape})"


class Module:
    """Base class for anything owning parameters, buffers or submodules."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{name}.{index}", item
            elif isinstance(value, (Module, Parameter)):
                yield name, value

    def named_parameters(self, prefix: str = '') -> List[Tuple[str, Parameter]]:
        """Parameters in a stable, definition-ordered naming."""
        named = []
        for name, child in self._children():
            full = f"{prefix}{name}"
            if isinstance(child, Parameter):
                named.append((full, child))
            else:
                named.extend(child.named_parameters(f"{full}."))
        return named

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = '') -> List[Tuple[str, np.ndarray]]:
        """Non-trainable arrays that belong in checkpoints (e.g. running statistics)."""
        named = [(f"{prefix}{name}", array) for name, array in self.buffers().items()]
        for name, child in self._children():
            if isinstance(child, Module):
                named.extend(child.named_buffers(f"{prefix}{name}."))
        return named

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def modules(self) -> Iterator['Module']:
        yield self
        for _, child in self._children():
            if isinstance(child, Module):
                yield from child.modules()

    def train(self, mode: bool = True) -> 'Module':
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class Linear(Module):
    """Affine map x @ W + b with W of shape (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bound: float = None):
        bound = 1.0 / np.sqrt(in_features) if bound is None else bound
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_features, out_features)))
        self.bias = Parameter(rng.uniform(-bound, bound, size=(out_features,)))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class BatchNorm(Module):
    """Per-channel batch normalisation with running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        dtype = get_default_dtype()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def buffers(self) -> Dict[str, np.ndarray]:
        return {'running_mean': self.running_mean, 'running_var': self.running_var}

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        return F.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           training=self.training, momentum=self.momentum, eps=self.eps, mask=mask)
