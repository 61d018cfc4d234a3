from __future__ import annotations

from typing import Dict, List

import numpy as np

from classes.enums import StageId


class TrainingState:
    """Everything besides the model weights that an embedder stage needs to continue where it stopped."""

    def __init__(self, stage: StageId, speakers: List[str], head_weight: np.ndarray, optimizer: Dict[str, object],
                 rng_state: dict) -> None:
        self.stage: StageId = stage
        self.speakers: List[str] = list(speakers)
        self.head_weight: np.ndarray = head_weight
        self.optimizer: Dict[str, object] = optimizer
        self.rng_state: dict = rng_state

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(stage={self.stage}, speakers={len(self.speakers)}, steps={self.optimizer.get('steps')})"
