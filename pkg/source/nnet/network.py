from __future__ import annotations

import copy
import logging
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from errors import InvalidInputError, StaleTraceError
from nnet.layers import Layer, LayerSpec, Parameter


class Trace:
    """Activation caches of one forward pass, valid until the parameters change."""

    def __init__(self, network: Network, caches: List[Any], version: int) -> None:
        self.network_id: int = id(network)
        self.caches: List[Any] = caches
        self.version: int = version

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(layers={len(self.caches)}, version={self.version})"


class Network:
    """An ordered stack of layers run front to back."""

    def __init__(self, name: str, layers: List[Layer]) -> None:
        self.name: str = name
        self.layers: List[Layer] = layers
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise InvalidInputError(f"Network {name} has duplicate parameter names.")

    @classmethod
    def from_specs(cls, name: str, specs: Sequence[LayerSpec], rng: np.random.Generator, dtype=np.float32) -> Network:
        layers = [spec.build(f"{name}.{i}.{spec.kind}", rng, dtype) for i, spec in enumerate(specs)]
        return cls(name, layers)

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(name={self.name!r}, layers={len(self.layers)}, parameters={self.num_parameters()})"

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def version(self) -> int:
        return sum(p.version for p in self.parameters())

    def parameters(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Trace]:
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, Trace(self, caches, self.version)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, trace: Trace, gy: np.ndarray) -> np.ndarray:
        """Accumulates parameter gradients and returns the gradient w.r.t. the input."""
        if trace.network_id != id(self):
            raise StaleTraceError(f"Trace does not belong to network {self.name}.")
        if trace.version != self.version:
            raise StaleTraceError(f"Trace of {self.name} is stale: parameters changed since the forward pass.")
        for layer, cache in zip(reversed(self.layers), reversed(trace.caches)):
            gy = layer.backward(cache, gy)
        return gy

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        params = {p.name: p for p in self.parameters()}
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if strict and (missing or unexpected):
            raise InvalidInputError(f"State of {self.name} does not match: missing={missing}, unexpected={unexpected}")
        for name, value in state.items():
            if name in params:
                params[name].assign(np.asarray(value, dtype=params[name].value.dtype))
        logging.debug(f"Loaded {len(state)} tensors into {self.name}")

    def copy(self) -> Network:
        return copy.deepcopy(self)

    def astype(self, dtype) -> Network:
        """A copy whose parameters and gradients use `dtype`."""
        clone = self.copy()
        for p in clone.parameters():
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)
        return clone


def average_gradients(replicas: Sequence[Network]) -> None:
    """Replaces every replica's gradients by the mean over replicas."""
    if not replicas:
        return
    grouped = list(zip(*(r.parameters() for r in replicas)))
    for params in grouped:
        mean = sum(p.grad for p in params) / len(replicas)
        for p in params:
            p.grad[...] = mean
