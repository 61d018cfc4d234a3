from __future__ import annotations

import math
from typing import List, Optional, TYPE_CHECKING

from classes.enums import TripletLabel, SnrBand
from errors import InvalidInputError

if TYPE_CHECKING:
    from classes.types_base import TrialRow


def _format_float(value: float) -> str:
    return repr(float(value))


class Trial:
    def __init__(self, data: TrialRow) -> None:
        self.enroll_spk: str = data['enroll_spk']
        self.enroll_utts: List[str] = list(data['enroll_utts'])
        self.test_utt: str = data['test_utt']
        self.label: TripletLabel = TripletLabel(data['label'])
        self.snr_db: float = float(data.get('snr_db', math.nan))
        if self.test_utt in self.enroll_utts:
            raise InvalidInputError(f"Trial pairs utterance {self.test_utt} with itself.")

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(enroll_spk={self.enroll_spk!r}, test_utt={self.test_utt!r}, label={self.label})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Trial) and self.to_row() == other.to_row()

    def __hash__(self):
        return hash(tuple(self.to_row()))

    @property
    def is_target(self) -> bool:
        return self.label is TripletLabel.TARGET

    @property
    def has_snr(self) -> bool:
        return not math.isnan(self.snr_db)

    def band(self) -> SnrBand:
        return SnrBand.of(self.snr_db)

    def to_payload(self) -> TrialRow:
        return {
            'enroll_spk': self.enroll_spk,
            'enroll_utts': list(self.enroll_utts),
            'test_utt': self.test_utt,
            'label': str(self.label),
            'snr_db': self.snr_db,
        }

    def to_row(self) -> List[str]:
        return [self.enroll_spk, ','.join(self.enroll_utts), self.test_utt, str(self.label),
                _format_float(self.snr_db)]

    @classmethod
    def from_row(cls, row: List[str]) -> Trial:
        return cls({
            'enroll_spk': row[0],
            'enroll_utts': row[1].split(','),
            'test_utt': row[2],
            'label': row[3],
            'snr_db': float(row[4]),
        })


class ScoredTrial:
    """A trial with its score, or with the error that prevented scoring."""

    def __init__(self, trial: Trial, score: Optional[float] = None, error: str = '') -> None:
        self.trial: Trial = trial
        self.score: Optional[float] = None if score is None or math.isnan(score) else float(score)
        self.error: str = error

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(trial={self.trial!r}, score={self.score}, error={self.error!r})"

    @property
    def ok(self) -> bool:
        return self.score is not None

    def to_row(self) -> List[str]:
        # one line, no tabs or double quotes
        error = ' '.join(self.error.split()).replace('"', "'")
        return self.trial.to_row() + [_format_float(self.score if self.score is not None else math.nan), error]

    @classmethod
    def from_row(cls, row: List[str]) -> ScoredTrial:
        score = float(row[5])
        error = row[6] if len(row) > 6 and isinstance(row[6], str) else ''
        if math.isnan(score) and not error:
            error = 'unscored'
        return cls(Trial.from_row(row[:5]), None if math.isnan(score) else score, error=error)


class DetPoint:
    def __init__(self, threshold: float, far: float, miss: float) -> None:
        self.threshold: float = float(threshold)
        self.far: float = float(far)
        self.miss: float = float(miss)

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(threshold={self.threshold:.6g}, far={self.far:.4f}, miss={self.miss:.4f})"

    def __eq__(self, other: object) -> bool:
        return (
                isinstance(other, DetPoint)
                and self.threshold == other.threshold
                and self.far == other.far
                and self.miss == other.miss
        )

    def __hash__(self):
        return hash((self.threshold, self.far, self.miss))

    def to_payload(self) -> dict:
        return {'threshold': self.threshold, 'far': self.far, 'miss': self.miss}
