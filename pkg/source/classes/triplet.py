from __future__ import annotations

import math
from typing import List, Optional, TYPE_CHECKING

import numpy as np

from classes.enums import TripletLabel
from classes.waveform import Waveform
from errors import InvalidInputError

if TYPE_CHECKING:
    from classes.types_base import ManifestRow

SPEAKER_COUNTS = (1, 2, 3)
SIR_GRID_DB = (0.0, 6.0, 12.0, math.inf)
SNR_GRID_DB = (6.0, 12.0, 18.0, 24.0, 30.0)
NULL_REFERENCE = "NULL"


class MixtureSpec:
    def __init__(self, n_speakers: int, sir_db: float, snr_db: float) -> None:
        if n_speakers not in SPEAKER_COUNTS:
            raise InvalidInputError(f"n_speakers must be one of {SPEAKER_COUNTS}, got {n_speakers}.")
        if float(sir_db) not in SIR_GRID_DB:
            raise InvalidInputError(f"sir_db must be one of {SIR_GRID_DB}, got {sir_db}.")
        if float(snr_db) not in SNR_GRID_DB:
            raise InvalidInputError(f"snr_db must be one of {SNR_GRID_DB}, got {snr_db}.")
        self.n_speakers: int = int(n_speakers)
        self.sir_db: float = float(sir_db)
        self.snr_db: float = float(snr_db)

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(n_speakers={self.n_speakers}, sir_db={self.sir_db}, snr_db={self.snr_db})"

    def __eq__(self, other: object) -> bool:
        return (
                isinstance(other, MixtureSpec)
                and self.n_speakers == other.n_speakers
                and self.sir_db == other.sir_db
                and self.snr_db == other.snr_db
        )

    def __hash__(self):
        return hash((self.n_speakers, self.sir_db, self.snr_db))

    @classmethod
    def sample(cls, rng: np.random.Generator) -> MixtureSpec:
        """Every field drawn uniformly from its grid."""
        return cls(
            n_speakers=SPEAKER_COUNTS[int(rng.integers(len(SPEAKER_COUNTS)))],
            sir_db=SIR_GRID_DB[int(rng.integers(len(SIR_GRID_DB)))],
            snr_db=SNR_GRID_DB[int(rng.integers(len(SNR_GRID_DB)))],
        )


class TrainingTriplet:
    """Enrollment utterances, a test mixture and its reference (None is the NULL reference)."""

    def __init__(
            self,
            triplet_id: str,
            enrollment: List[Waveform],
            test_mixture: Waveform,
            reference: Optional[Waveform],
            label: TripletLabel,
            spec: MixtureSpec,
            enroll_speaker: str,
            mixture_speakers: List[str],
    ) -> None:
        if not enrollment:
            raise InvalidInputError("A triplet needs at least one enrollment utterance.")
        if label is TripletLabel.TARGET:
            if reference is None:
                raise InvalidInputError("Target triplet requires a clean reference.")
            if len(reference) != len(test_mixture):
                raise InvalidInputError("Reference must be aligned to the test mixture.")
            if enroll_speaker not in mixture_speakers:
                raise InvalidInputError("Target triplet must contain the enrolled speaker.")
        else:
            if reference is not None:
                raise InvalidInputError("Nontarget triplet takes the NULL reference.")
            if enroll_speaker in mixture_speakers:
                raise InvalidInputError("Nontarget triplet must not contain the enrolled speaker.")

        self.id: str = triplet_id
        self.enrollment: List[Waveform] = enrollment
        self.test_mixture: Waveform = test_mixture
        self.reference: Optional[Waveform] = reference
        self.label: TripletLabel = label
        self.spec: MixtureSpec = spec
        self.enroll_speaker: str = enroll_speaker
        self.mixture_speakers: List[str] = list(mixture_speakers)

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(id={self.id!r}, label={self.label}, enroll_speaker={self.enroll_speaker!r}, spec={self.spec!r})"

    @property
    def is_target(self) -> bool:
        return self.label is TripletLabel.TARGET


class TripletRecord:
    """One manifest line: where a simulated triplet lives on disk."""

    def __init__(self, data: ManifestRow) -> None:
        self.id: str = data['id']
        self.label: TripletLabel = TripletLabel(data['label'])
        self.enroll_paths: List[str] = list(data['enroll_paths'])
        self.mix_path: str = data['mix_path']
        self.ref_path: str = data['ref_path']
        self.spec: MixtureSpec = MixtureSpec(data['n_spk'], data['sir_db'], data['snr_db'])
        self.speaker_ids: List[str] = list(data['speaker_ids'])

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(id={self.id!r}, label={self.label})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TripletRecord) and self.to_payload() == other.to_payload()

    def __hash__(self):
        return hash(self.id)

    @property
    def enroll_speaker(self) -> str:
        """First speaker id is the enrolled speaker; the rest are the mixture's speakers."""
        return self.speaker_ids[0]

    @property
    def mixture_speakers(self) -> List[str]:
        return self.speaker_ids[1:]

    @property
    def has_null_reference(self) -> bool:
        return self.ref_path == NULL_REFERENCE

    def to_payload(self) -> ManifestRow:
        return {
            'id': self.id,
            'label': str(self.label),
            'enroll_paths': list(self.enroll_paths),
            'mix_path': self.mix_path,
            'ref_path': self.ref_path,
            'n_spk': self.spec.n_speakers,
            'sir_db': self.spec.sir_db,
            'snr_db': self.spec.snr_db,
            'speaker_ids': list(self.speaker_ids),
        }


class CorpusManifest:
    def __init__(self, records: List[TripletRecord], seed: int) -> None:
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("Triplet ids in a manifest must be unique.")
        self.records: List[TripletRecord] = records
        self.seed: int = int(seed)

    def __len__(self) -> int:
        return len(self.records)

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(records={len(self)}, seed={self.seed})"

    def nontarget_count(self) -> int:
        return sum(1 for r in self.records if r.label is TripletLabel.NONTARGET)
