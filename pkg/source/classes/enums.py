from __future__ import annotations

import math
from enum import Enum


class TripletLabel(Enum):
    TARGET = "target"
    NONTARGET = "nontarget"

    def __str__(self) -> str:
        return self.value


class SiSnrMode(Enum):
    STANDARD = "standard"
    LITERAL = "literal"

    def __str__(self) -> str:
        return self.value


class StageId(Enum):
    PRETRAIN = "pretrain"
    TS_DISTILL = "ts_distill"
    JOINT_TRAIN = "joint_train"
    FINETUNE = "finetune"

    def __str__(self) -> str:
        return self.value


class FusionMode(Enum):
    MEAN = "mean"
    PASS1 = "pass1"
    PASS2 = "pass2"

    def __str__(self) -> str:
        return self.value


class OptimizerKind(Enum):
    SGD = "sgd"
    ADAM = "adam"

    def __str__(self) -> str:
        return self.value


class NoiseKind(Enum):
    PINK = "pink"
    BABBLE = "babble"
    MIXED = "mixed"

    def __str__(self) -> str:
        return self.value


class LayerKind(Enum):
    CONV1D = 1
    POINTWISE_LINEAR = 2
    RELU = 3
    PRELU = 4
    LAYERNORM = 5
    MEAN_POOL_TIME = 6
    STATS_POOL_TIME = 7
    L2_NORMALIZE = 8
    SIGMOID_MASK = 9
    TRANSPOSED_CONV1D = 10

    def __str__(self) -> str:
        return self.name.lower().replace('_', '-')


class PaddingMode(Enum):
    VALID = "valid"
    REPLICATE = "replicate"

    def __str__(self) -> str:
        return self.value


class SnrBand(Enum):
    # Half-open [low, high) in dB
    A = (-math.inf, 3.0)
    B = (3.0, 15.0)
    C = (15.0, 20.0)
    D = (20.0, math.inf)

    def __str__(self) -> str:
        return self.name

    @property
    def low(self) -> float:
        return self.value[0]

    @property
    def high(self) -> float:
        return self.value[1]

    def contains(self, snr_db: float) -> bool:
        return self.low <= snr_db < self.high

    @classmethod
    def of(cls, snr_db: float) -> SnrBand:
        for band in cls:
            if band.contains(snr_db):
                return band
        # +inf only
        return cls.D
