from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from errors import InvalidInputError


class LossOutput:
    """A scalar loss together with its gradients, keyed by input name."""

    def __init__(self, value: float, gradients: Optional[Dict[str, np.ndarray]] = None) -> None:
        self.value: float = float(value)
        self.gradients: Dict[str, np.ndarray] = dict(gradients or {})
        for name, grad in self.gradients.items():
            if not np.all(np.isfinite(grad)):
                raise InvalidInputError(f"Gradient '{name}' is not finite.")

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(value={self.value:.6g}, gradients={sorted(self.gradients)})"

    def __float__(self) -> float:
        return self.value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.gradients[name]

    def scaled(self, weight: float) -> LossOutput:
        return LossOutput(weight * self.value, {k: weight * g for k, g in self.gradients.items()})

    def negate(self) -> LossOutput:
        return self.scaled(-1.0)

    def __add__(self, other: LossOutput) -> LossOutput:
        gradients = {k: g.copy() for k, g in self.gradients.items()}
        for name, grad in other.gradients.items():
            if name in gradients:
                if gradients[name].shape != grad.shape:
                    raise InvalidInputError(f"Gradient '{name}' shapes differ: {gradients[name].shape} vs {grad.shape}.")
                gradients[name] = gradients[name] + grad
            else:
                gradients[name] = grad.copy()
        return LossOutput(self.value + other.value, gradients)

    @classmethod
    def combine(cls, *weighted: tuple) -> LossOutput:
        """Sum of (weight, LossOutput) pairs; gradients combine with the same weights."""
        total = cls(0.0)
        for weight, loss in weighted:
            total = total + loss.scaled(weight)
        return total


class SvLossWeights:
    def __init__(self, omega1: float = 0.2, omega2: float = 0.001) -> None:
        if omega1 < 0 or omega2 < 0:
            raise InvalidInputError(f"SV loss weights must be >= 0, got omega1={omega1}, omega2={omega2}.")
        self.omega1: float = float(omega1)
        self.omega2: float = float(omega2)

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(omega1={self.omega1}, omega2={self.omega2})"
