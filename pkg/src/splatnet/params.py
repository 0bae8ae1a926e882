"""Parameters, module tree, RNG, and weight initialization.

Every trainable array in the library is a :class:`Parameter`: a named value
tensor with a same-shaped gradient accumulator and a weight-decay eligibility
flag (decay applies to conv / fully-connected weights only, never to biases
or normalization scale/shift).

All randomness flows through explicit ``numpy.random.Generator`` objects
seeded from a 64-bit integer via PCG64, so identical seeds give identical
streams on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Raised for invalid shapes, divisibility violations, or bad settings."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: PCG64 seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent substream derived from (seed, stream ids), reproducibly."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *stream))))


@dataclass
class Parameter:
    """A named tensor with an accumulated gradient.

    ``decay_eligible`` is True only for convolution and fully-connected
    weights; the optimizer skips L2 decay for everything else.
    """

    value: np.ndarray
    decay_eligible: bool
    name: str = ""
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ConfigurationError(
                f"gradient shape {g.shape} does not match parameter "
                f"{self.name or '<unnamed>'} shape {self.value.shape}"
            )
        self.grad += g


class Module:
    """Minimal container: tracks Parameters and child Modules by attribute.

    Children are discovered by scanning instance attributes (including lists
    of modules), which is enough for the fixed, small topologies built here.
    ``assign_names`` stamps dotted path names onto every Parameter so that
    checkpoints and reports can refer to them stably.
    """

    def _children(self):
        for attr, obj in vars(self).items():
            if isinstance(obj, Module):
                yield attr, obj
            elif isinstance(obj, (list, tuple)):
                for i, item in enumerate(obj):
                    if isinstance(item, Module):
                        yield f"{attr}{i}", item

    def named_parameters(self, prefix: str = ""):
        for attr, obj in vars(self).items():
            if isinstance(obj, Parameter):
                yield (f"{prefix}{attr}", obj)
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def extra_state(self) -> dict[str, np.ndarray]:
        """Non-trainable arrays to persist (e.g. normalization running stats)."""
        return {}

    def named_state(self, prefix: str = ""):
        """All persistent tensors: parameters plus extra state, path-named."""
        for attr, obj in vars(self).items():
            if isinstance(obj, Parameter):
                yield (f"{prefix}{attr}", obj.value)
        for key, arr in self.extra_state().items():
            yield (f"{prefix}{key}", arr)
        for name, child in self._children():
            yield from child.named_state(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        return dict(self.named_state())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_state())
        missing = [k for k in own if k not in state]
        extra = [k for k in state if k not in own]
        if missing or extra:
            raise ConfigurationError(
                f"state mismatch: missing={missing[:4]} unexpected={extra[:4]}"
            )
        for key, arr in own.items():
            src = state[key]
            if src.shape != arr.shape:
                raise ConfigurationError(
                    f"state tensor {key}: shape {src.shape} != expected {arr.shape}"
                )
            arr[...] = src


def kaiming_normal(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=np.float64
) -> np.ndarray:
    """Fan-in scaled normal init, std = sqrt(2 / fan_in)."""
    if fan_in <= 0:
        raise ConfigurationError(f"fan_in must be positive, got {fan_in}")
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
