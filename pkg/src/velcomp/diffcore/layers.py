"""Parameter containers and the fully connected building blocks."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import BatchNormState, Tensor, add, batchnorm, matmul


def xavier_init(shape: tuple[int, int], rng: np.random.Generator) -> Tensor:
    """Glorot-uniform weights: U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"xavier_init needs positive fans, got {shape}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Minimal parameter registry.

    Attributes holding :class:`Tensor` parameters, sub-modules or lists of
    sub-modules are discovered by :meth:`named_parameters` in attribute
    insertion order, so parameter names are stable across runs.
    """

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, BatchNormState):
                yield name + ".running_mean", value.running_mean
                yield name + ".running_var", value.running_var
            elif isinstance(value, list) and value and isinstance(value[0], BatchNormState):
                for i, st in enumerate(value):
                    yield f"{name}.{i}.running_mean", st.running_mean
                    yield f"{name}.{i}.running_var", st.running_var
            elif isinstance(value, Module):
                yield from value.named_buffers(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        *path, state_name, field = name.split(".")
        obj = self
        for part in path:
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        if isinstance(obj, list):
            # per-step batchnorm statistics are created on demand
            idx = int(state_name)
            while len(obj) <= idx:
                obj.append(BatchNormState(np.size(value), obj[0].momentum if obj else 0.1,
                                          obj[0].eps if obj else 1e-5))
            target = obj[idx]
        else:
            target = getattr(obj, state_name)
        setattr(target, field, np.array(value, dtype=float))

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.n_in, self.n_out = n_in, n_out
        self.weight = xavier_init((n_in, n_out), rng)
        self.bias = Tensor(np.zeros((1, n_out)), requires_grad=True) if bias else None

    def __call__(self, x) -> Tensor:
        out = matmul(x, self.weight)
        return add(out, self.bias) if self.bias is not None else out


class BatchNorm(Module):
    """Batch normalization with optional per-time-step running statistics.

    Recurrent models set :attr:`step` before every step of a sequence; each
    step then keeps its own running mean and variance (the affine
    parameters are shared), because a single average over steps does not
    describe any one step.  Step 0 uses :attr:`state`.  At inference, steps
    beyond the longest training sequence reuse the last step's statistics.
    """

    def __init__(self, width: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones((1, width)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, width)), requires_grad=True)
        self.state = BatchNormState(width, momentum, eps)
        self.step_states: list[BatchNormState] = []
        self.step = 0

    def current_state(self) -> BatchNormState:
        if self.step == 0:
            return self.state
        if self.training:
            s0 = self.state
            while len(self.step_states) < self.step:
                self.step_states.append(BatchNormState(s0.running_mean.shape[1], s0.momentum, s0.eps))
        elif not self.step_states:
            return self.state
        return self.step_states[min(self.step, len(self.step_states)) - 1]

    def __call__(self, x) -> Tensor:
        return batchnorm(x, self.gamma, self.beta, self.current_state(), self.training)


def set_sequence_step(module: Module, step: int) -> None:
    """Select the per-step batchnorm statistics of every batchnorm in ``module``."""
    for m in module.modules():
        if isinstance(m, BatchNorm):
            m.step = step
