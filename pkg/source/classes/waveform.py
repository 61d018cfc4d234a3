from __future__ import annotations

from typing import Union, Sequence

import numpy as np

from errors import InvalidInputError

SAMPLE_RATE_HZ = 16000
N_BINS = 257
WINDOW_SAMPLES = 512  # 32 ms
HOP_SAMPLES = 256  # 16 ms


class Waveform:
    """Mono time-domain signal at the project-wide 16 kHz rate."""

    def __init__(self, samples: Union[np.ndarray, Sequence[float]], sample_rate_hz: int = SAMPLE_RATE_HZ) -> None:
        samples = np.asarray(samples, dtype=np.float64).reshape(-1)
        if samples.size < 1:
            raise InvalidInputError("Waveform must contain at least one sample.")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("Waveform samples must be finite.")
        if sample_rate_hz != SAMPLE_RATE_HZ:
            raise InvalidInputError(f"Unsupported sample rate {sample_rate_hz} Hz, expected {SAMPLE_RATE_HZ}.")
        self.samples: np.ndarray = samples
        self.sample_rate_hz: int = sample_rate_hz

    def __len__(self) -> int:
        return self.samples.size

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(length={len(self)}, seconds={self.duration:.3f})"

    def __eq__(self, other: object) -> bool:
        return (
                isinstance(other, Waveform)
                and self.sample_rate_hz == other.sample_rate_hz
                and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate_hz

    def power(self) -> float:
        return float(np.mean(self.samples ** 2))

    def scaled(self, gain: float) -> Waveform:
        return Waveform(self.samples * gain, self.sample_rate_hz)

    def cropped(self, start: int, length: int) -> Waveform:
        return Waveform(self.samples[start:start + length], self.sample_rate_hz)


class FeatureMatrix:
    """T x 257 STFT magnitudes, 32 ms window, 16 ms shift."""

    def __init__(self, frames: np.ndarray) -> None:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != N_BINS:
            raise InvalidInputError(f"FeatureMatrix must be T x {N_BINS}, got {frames.shape}.")
        if not np.all(np.isfinite(frames)) or np.any(frames < 0):
            raise InvalidInputError("FeatureMatrix entries must be finite and nonnegative.")
        self.frames: np.ndarray = frames

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(frames={len(self)})"

    def select(self, mask: np.ndarray) -> FeatureMatrix:
        return FeatureMatrix(self.frames[np.asarray(mask, dtype=bool)])


class VadMask:
    def __init__(self, voiced: np.ndarray) -> None:
        self.voiced: np.ndarray = np.asarray(voiced, dtype=bool).reshape(-1)

    def __len__(self) -> int:
        return self.voiced.size

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(voiced={int(self.voiced.sum())}/{len(self)})"

    def any(self) -> bool:
        return bool(self.voiced.any())
