from __future__ import annotations

import logging
import os
from typing import List

import numpy as np
import pandas as pd

from classes.enums import StageId


class TrainingHistory:
    """Per-step and per-epoch losses of one training stage."""

    def __init__(self, stage: StageId) -> None:
        self.stage: StageId = stage
        self.step_losses: List[float] = []
        self.step_epochs: List[int] = []
        self.epoch_losses: List[float] = []
        self.max_gradient: float = 0.0
        self._epoch_start: int = 0

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        last = f"{self.epoch_losses[-1]:.4f}" if self.epoch_losses else 'n/a'
        return f"{cls_name}(stage={self.stage}, epochs={len(self.epoch_losses)}, steps={len(self.step_losses)}, last={last})"

    def record_step(self, loss: float, max_gradient: float = 0.0) -> None:
        self.step_losses.append(float(loss))
        self.step_epochs.append(len(self.epoch_losses))
        self.max_gradient = max(self.max_gradient, float(max_gradient))

    def end_epoch(self) -> float:
        losses = self.step_losses[self._epoch_start:]
        mean = float(np.mean(losses)) if losses else float('nan')
        self.epoch_losses.append(mean)
        self._epoch_start = len(self.step_losses)
        logging.info(f"[{self.stage}] epoch {len(self.epoch_losses)}: mean loss {mean:.5f} over {len(losses)} steps")
        return mean

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'step': np.arange(len(self.step_losses)),
            'epoch': self.step_epochs,
            'loss': self.step_losses,
        })

    def save(self, filename: str) -> None:
        os.makedirs(os.path.dirname(filename) or '.', exist_ok=True)
        self.to_frame().to_csv(filename, sep='\t', index=False, float_format='%.9g')
        logging.info(f"Training history saved to {filename}")

    @classmethod
    def load(cls, filename: str, stage: StageId) -> TrainingHistory:
        obj_df = pd.read_csv(filename, sep='\t')
        history = cls(stage)
        for epoch, group in obj_df.groupby('epoch', sort=True):
            for loss in group['loss']:
                history.record_step(float(loss))
            history.end_epoch()
        return history
