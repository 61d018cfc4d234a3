from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from classes.waveform import Waveform
from errors import InvalidInputError


class Utterance:
    def __init__(self, utt_id: str, speaker_ids: List[str], waveform: Waveform, path: str = '',
                 snr_db: float = float('nan')) -> None:
        self.id: str = utt_id
        self.speaker_ids: List[str] = list(speaker_ids)
        self.waveform: Waveform = waveform
        self.path: str = path
        self.snr_db: float = float(snr_db)

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(id={self.id!r}, speakers={self.speaker_ids})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Utterance) and self.id == other.id

    def __hash__(self):
        return hash(self.id)

    @property
    def is_single_speaker(self) -> bool:
        return len(self.speaker_ids) == 1

    @property
    def speaker_id(self) -> str:
        if not self.is_single_speaker:
            raise InvalidInputError(f"Utterance {self.id} has {len(self.speaker_ids)} speakers.")
        return self.speaker_ids[0]


class SpeakerCorpus:
    """Clean single-speaker utterances indexed by speaker id."""

    def __init__(self, name: str, utterances: Optional[List[Utterance]] = None) -> None:
        self.name: str = name
        self._by_speaker: Dict[str, List[Utterance]] = {}
        for utt in utterances or []:
            self.add_utterance(utt)

    def __str__(self) -> str:
        return self.name

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(name={self.name!r}, speakers={len(self._by_speaker)}, utterances={len(self)})"

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_speaker.values())

    def add_utterance(self, utt: Utterance) -> None:
        self._by_speaker.setdefault(utt.speaker_id, []).append(utt)

    @property
    def speakers(self) -> List[str]:
        return sorted(self._by_speaker)

    def utterances(self, speaker_id: Optional[str] = None) -> List[Utterance]:
        if speaker_id is not None:
            return list(self._by_speaker.get(speaker_id, []))
        return [utt for spk in self.speakers for utt in self._by_speaker[spk]]

    def speaker_index(self) -> Dict[str, int]:
        """Class id of every speaker, in sorted speaker order."""
        return {spk: i for i, spk in enumerate(self.speakers)}

    def filter_speakers(self, min_utterances: int) -> SpeakerCorpus:
        kept = [u for spk in self.speakers if len(self._by_speaker[spk]) >= min_utterances
                for u in self._by_speaker[spk]]
        return SpeakerCorpus(name=f"{self.name}_min{min_utterances}", utterances=kept)

    def split_speakers(self, held_out: int, rng: np.random.Generator) -> tuple[SpeakerCorpus, SpeakerCorpus]:
        """Disjoint (train, held-out) corpora by speaker."""
        if held_out >= len(self.speakers):
            raise InvalidInputError(f"Cannot hold out {held_out} of {len(self.speakers)} speakers.")
        order = list(rng.permutation(self.speakers))
        test_speakers = set(order[:held_out])
        train = [u for u in self.utterances() if u.speaker_id not in test_speakers]
        test = [u for u in self.utterances() if u.speaker_id in test_speakers]
        return SpeakerCorpus(f"{self.name}_train", train), SpeakerCorpus(f"{self.name}_heldout", test)

    def pick(self, speaker_id: str, rng: np.random.Generator, count: int = 1,
             exclude: Optional[List[str]] = None) -> List[Utterance]:
        """Draw `count` distinct utterances of a speaker, skipping excluded ids."""
        exclude = set(exclude or [])
        pool = [u for u in self._by_speaker.get(speaker_id, []) if u.id not in exclude]
        if len(pool) < count:
            raise InvalidInputError(f"Speaker {speaker_id} has {len(pool)} utterances, {count} requested.")
        chosen = rng.choice(len(pool), size=count, replace=False)
        return [pool[int(i)] for i in chosen]
