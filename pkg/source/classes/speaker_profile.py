from __future__ import annotations

from typing import List, Optional

import numpy as np

from classes.waveform import Waveform
from errors import InvalidInputError

UNIT_TOLERANCE = 1e-5


def _unit(vector: np.ndarray, name: str) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    if abs(float(np.linalg.norm(vector)) - 1.0) > UNIT_TOLERANCE:
        raise InvalidInputError(f"{name} must be unit-norm, got norm {np.linalg.norm(vector):.6f}.")
    return vector


class SpeakerProfile:
    """An enrolled speaker: raw enrolment audio and the bias vectors conditioning the enhancer."""

    def __init__(self, speaker_id: str, enrollment_ids: List[str], enrollments: List[Waveform], bias: np.ndarray,
                 enhanced_bias: Optional[np.ndarray] = None) -> None:
        if not enrollments:
            raise InvalidInputError(f"Profile of {speaker_id} needs at least one enrolment utterance.")
        if len(enrollment_ids) != len(enrollments):
            raise InvalidInputError(f"{len(enrollment_ids)} ids for {len(enrollments)} enrolment utterances.")
        self.speaker_id: str = speaker_id
        self.enrollment_ids: List[str] = list(enrollment_ids)
        self.enrollments: List[Waveform] = list(enrollments)
        self.bias: np.ndarray = _unit(bias, 'bias')
        self.enhanced_bias: Optional[np.ndarray] = None if enhanced_bias is None else _unit(enhanced_bias, 'enhanced_bias')

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return (f"{cls_name}(speaker_id={self.speaker_id!r}, enrollments={len(self.enrollments)}, "
                f"second_pass={self.enhanced_bias is not None})")

    def __str__(self) -> str:
        return self.speaker_id

    def __eq__(self, other: object) -> bool:
        return (
                isinstance(other, SpeakerProfile)
                and self.speaker_id == other.speaker_id
                and self.enrollment_ids == other.enrollment_ids
        )

    def __hash__(self):
        return hash((self.speaker_id, tuple(self.enrollment_ids)))

    def key(self) -> str:
        """Profiles are looked up by speaker and sorted enrolment ids."""
        return f"{self.speaker_id}|{','.join(sorted(self.enrollment_ids))}"
