"""Stage configuration: flat KEY=VALUE files read with python-dotenv."""
from __future__ import annotations

import logging
import math
import os
from typing import Dict, Optional

from dotenv import dotenv_values

from classes.enums import StageId, SiSnrMode, FusionMode, OptimizerKind
from classes.loss_output import SvLossWeights
from errors import InvalidInputError
from mixture import parse_ratio, DEFAULT_NONTARGET_RATIO

FINETUNE_LEARNING_RATE = 1e-6

_STAGE_DEFAULTS: Dict[StageId, Dict[str, object]] = {
    StageId.PRETRAIN: {'lr': 1e-3, 'epochs': 20, 'optimizer': OptimizerKind.ADAM},
    StageId.TS_DISTILL: {'lr': 1e-3, 'epochs': 10, 'optimizer': OptimizerKind.ADAM},
    StageId.JOINT_TRAIN: {'lr': 1e-3, 'epochs': 10, 'optimizer': OptimizerKind.ADAM},
    StageId.FINETUNE: {'lr': FINETUNE_LEARNING_RATE, 'epochs': 1, 'optimizer': OptimizerKind.SGD},
}

_BOOLEAN_TRUE = ('1', 'true', 'yes', 'on')


def _parse_bool(value: str) -> bool:
    return value.strip().lower() in _BOOLEAN_TRUE


class StageConfig:
    KEYS = (
        'stage', 'lr', 'epochs', 'batch', 'seed', 'nontarget_ratio', 'si_snr_mode', 'fusion', 'optimizer',
        'momentum', 'omega1', 'omega2', 'lmcl_margin', 'lmcl_scale', 'triplet_margin', 'tase_si_snr_weight',
        'tase_sv_weight', 'enroll_count', 'allow_undistilled', 'from_scratch', 'corpus', 'out',
    )

    def __init__(self, stage: StageId = StageId.PRETRAIN, **overrides) -> None:
        defaults = _STAGE_DEFAULTS[stage]
        self.stage: StageId = stage
        self.lr: float = float(defaults['lr'])
        self.epochs: int = int(defaults['epochs'])
        self.optimizer: OptimizerKind = defaults['optimizer']
        self.batch: int = 8
        self.seed: int = 0
        self.nontarget_ratio: float = float(DEFAULT_NONTARGET_RATIO)
        self.si_snr_mode: SiSnrMode = SiSnrMode.STANDARD
        self.fusion: FusionMode = FusionMode.MEAN
        self.momentum: float = 0.0
        self.omega1: float = 0.2
        self.omega2: float = 0.001
        self.lmcl_margin: float = 0.2
        self.lmcl_scale: float = 30.0
        self.triplet_margin: float = 0.2
        self.tase_si_snr_weight: float = 1.0
        self.tase_sv_weight: float = 1.0
        self.enroll_count: int = 3
        self.allow_undistilled: bool = False
        self.from_scratch: bool = False
        self.corpus: str = ''
        self.out: str = ''
        for key, value in overrides.items():
            if key not in self.KEYS or key == 'stage':
                raise InvalidInputError(f"Unknown stage configuration key '{key}'.")
            setattr(self, key, value)
        self.validate()

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(stage={self.stage}, lr={self.lr:g}, epochs={self.epochs}, batch={self.batch}, seed={self.seed})"

    def validate(self) -> None:
        if self.lr <= 0:
            raise InvalidInputError(f"lr must be > 0, got {self.lr}.")
        if self.epochs < 1 or self.batch < 1:
            raise InvalidInputError(f"epochs and batch must be >= 1, got {self.epochs} and {self.batch}.")
        if self.enroll_count < 1:
            raise InvalidInputError(f"enroll_count must be >= 1, got {self.enroll_count}.")
        if self.nontarget_ratio < 0 or math.isnan(self.nontarget_ratio):
            raise InvalidInputError(f"nontarget_ratio must be >= 0, got {self.nontarget_ratio}.")

    @property
    def sv_weights(self) -> SvLossWeights:
        return SvLossWeights(self.omega1, self.omega2)

    @classmethod
    def from_values(cls, values: Dict[str, Optional[str]], stage: Optional[StageId] = None) -> StageConfig:
        """Builds a config from raw string values; `stage` fills in when the values carry none."""
        values = {k.strip().lower(): (v or '').strip() for k, v in values.items()}
        unknown = sorted(set(values) - set(cls.KEYS))
        if unknown:
            raise InvalidInputError(f"Unknown stage configuration keys: {', '.join(unknown)}.")
        stage_value = values.pop('stage', '')
        if stage_value:
            try:
                stage = StageId(stage_value)
            except ValueError:
                raise InvalidInputError(f"Unknown stage '{stage_value}'.")
        stage = stage or StageId.PRETRAIN

        parsers = {
            'lr': float, 'epochs': int, 'batch': int, 'seed': int, 'momentum': float, 'omega1': float,
            'omega2': float, 'lmcl_margin': float, 'lmcl_scale': float, 'triplet_margin': float,
            'tase_si_snr_weight': float, 'tase_sv_weight': float, 'enroll_count': int,
            'nontarget_ratio': parse_ratio, 'si_snr_mode': SiSnrMode, 'fusion': FusionMode,
            'optimizer': OptimizerKind, 'allow_undistilled': _parse_bool, 'from_scratch': _parse_bool,
            'corpus': str, 'out': str,
        }
        overrides = {}
        for key, raw in values.items():
            try:
                overrides[key] = parsers[key](raw)
            except ValueError as e:
                raise InvalidInputError(f"Bad value {raw!r} for '{key}': {e}") from e
        return cls(stage, **overrides)

    @classmethod
    def from_file(cls, filename: str, stage: Optional[StageId] = None, seed: Optional[int] = None) -> StageConfig:
        if not os.path.exists(filename):
            raise InvalidInputError(f"Config file {filename} does not exist.")
        values = dict(dotenv_values(filename))
        if seed is not None:
            values['seed'] = str(seed)
        config = cls.from_values(values, stage)
        logging.info(f"Loaded {config!r} from {filename}")
        return config
