"""Parameter containers: a tiny module tree with named parameters."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, get_default_dtype


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype or get_default_dtype()), requires_grad=True, name=name)


def uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, dtype=None) -> Tensor:
    """Glorot-style uniform draw scaled by fan-in and fan-out."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    shape = shape or (fan_in, fan_out)
    return parameter(rng.uniform(-bound, bound, size=shape), dtype=dtype)


def zeros(shape, dtype=None) -> Tensor:
    return parameter(np.zeros(shape), dtype=dtype)


def ones(shape, dtype=None) -> Tensor:
    return parameter(np.ones(shape), dtype=dtype)


class Module:
    """Base class; parameters are attributes holding grad-requiring tensors.

    Children may be modules or lists of modules. Attribute insertion order
    fixes the parameter order, and a tensor reachable under two names (tied
    weights) is reported once, under the first name.
    """

    training = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            yield key, value

    def named_parameters(self, prefix: str = "", _seen=None) -> Iterator[tuple[str, Tensor]]:
        seen = set() if _seen is None else _seen
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad and value.id not in seen:
                    seen.add(value.id)
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.", seen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.shape}")
            p.data[...] = value

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)
