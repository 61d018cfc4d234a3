from typing import Dict, List, Optional

import numpy as np

from classes.enums import OptimizerKind
from errors import InvalidInputError
from nnet.layers import Parameter


class Optimizer:
    def __init__(self, parameters: List[Parameter], kind: OptimizerKind = OptimizerKind.SGD,
                 learning_rate: float = 1e-3, momentum: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip_norm: Optional[float] = None) -> None:
        if learning_rate <= 0:
            raise InvalidInputError(f"Learning rate must be > 0, got {learning_rate}.")
        if not 0.0 <= momentum < 1.0:
            raise InvalidInputError(f"Momentum must be in [0, 1), got {momentum}.")
        self.parameters: List[Parameter] = list(parameters)
        self.kind: OptimizerKind = kind
        self.learning_rate: float = float(learning_rate)
        self.momentum: float = float(momentum)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm: Optional[float] = clip_norm
        self.steps: int = 0
        self._first = [np.zeros_like(p.value) for p in self.parameters]
        self._second = [np.zeros_like(p.value) for p in self.parameters]

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(kind={self.kind}, lr={self.learning_rate:g}, steps={self.steps})"

    def gradient_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(p.grad.astype(np.float64) ** 2) for p in self.parameters)))

    def step(self) -> None:
        """Applies one update from the accumulated gradients, then clears them."""
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.gradient_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        self.steps += 1
        for p, m, v in zip(self.parameters, self._first, self._second):
            g = p.grad * scale
            if self.kind is OptimizerKind.SGD:
                if self.momentum > 0:
                    m *= self.momentum
                    m += g
                    g = m
                update = self.learning_rate * g
            else:
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                m_hat = m / (1 - self.beta1 ** self.steps)
                v_hat = v / (1 - self.beta2 ** self.steps)
                update = self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            p.value -= update.astype(p.value.dtype)
            p.version += 1
            p.zero_grad()

    def state_dict(self) -> Dict[str, object]:
        """Step count and moment buffers keyed by parameter name."""
        return {
            'kind': str(self.kind),
            'steps': self.steps,
            'first': {p.name: m.copy() for p, m in zip(self.parameters, self._first)},
            'second': {p.name: v.copy() for p, v in zip(self.parameters, self._second)},
        }

    def load_state_dict(self, state: Dict[str, object]) -> None:
        if state['kind'] != str(self.kind):
            raise InvalidInputError(f"Optimizer state is for {state['kind']}, this optimizer is {self.kind}.")
        for key, buffers in (('first', self._first), ('second', self._second)):
            saved = state[key]
            for i, p in enumerate(self.parameters):
                value = saved.get(p.name)
                if value is None or value.shape != p.value.shape:
                    raise InvalidInputError(f"Optimizer state has no {key} moment matching {p.name}.")
                buffers[i] = np.array(value, dtype=buffers[i].dtype)
        self.steps = int(state['steps'])
