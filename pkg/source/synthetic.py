"""Toy speakers for desk-scale experiments.

Each speaker has a fixed pitch range, vocal-tract scale, spectral tilt and a
timbre resonance; utterances are harmonic sources with random pitch contours
and syllable envelopes, filtered through vowel formants scaled to the
speaker's vocal tract.
"""
import logging
import os
from typing import List

import numpy as np
from scipy.signal import lfilter

from classes.speaker_corpus import SpeakerCorpus, Utterance
from classes.waveform import Waveform, SAMPLE_RATE_HZ
from corpus_io import write_wav

# (F1, F2, F3) in Hz of a reference vocal tract
VOWEL_FORMANTS = (
    (730.0, 1090.0, 2440.0),
    (270.0, 2290.0, 3010.0),
    (530.0, 1840.0, 2480.0),
    (570.0, 840.0, 2410.0),
    (300.0, 870.0, 2240.0),
)
FORMANT_BANDWIDTHS = (80.0, 100.0, 140.0)
MAX_HARMONIC_HZ = 7000.0
TARGET_RMS = 0.05


class SpeakerVoice:
    def __init__(self, speaker_id: str, rng: np.random.Generator) -> None:
        self.speaker_id: str = speaker_id
        self.f0_hz: float = float(rng.uniform(85.0, 260.0))
        self.f0_spread: float = float(rng.uniform(0.05, 0.15))
        self.tract_scale: float = float(rng.uniform(0.82, 1.22))
        self.tilt: float = float(rng.uniform(0.6, 1.6))
        self.timbre_hz: float = float(rng.uniform(1200.0, 5000.0))
        self.breathiness: float = float(rng.uniform(0.005, 0.04))

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(id={self.speaker_id!r}, f0={self.f0_hz:.0f}Hz, tract={self.tract_scale:.2f})"


def _resonator(signal: np.ndarray, centre_hz: float, bandwidth_hz: float) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth_hz / SAMPLE_RATE_HZ)
    theta = 2.0 * np.pi * centre_hz / SAMPLE_RATE_HZ
    return lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(theta), r * r], signal)


def _harmonic_source(f0: np.ndarray, tilt: float) -> np.ndarray:
    phase = 2.0 * np.pi * np.cumsum(f0) / SAMPLE_RATE_HZ
    n_harmonics = int(MAX_HARMONIC_HZ // f0.min())
    k = np.arange(1, n_harmonics + 1)
    below_nyquist = (f0[:, None] * k[None, :]) < MAX_HARMONIC_HZ
    amplitudes = below_nyquist / k[None, :] ** tilt
    return np.sum(amplitudes * np.sin(k[None, :] * phase[:, None]), axis=1)


def _syllable_envelope(n_samples: int, rng: np.random.Generator) -> List[tuple]:
    """(start, stop) sample ranges of voiced syllables, with leading and trailing pauses."""
    syllables = []
    position = int(rng.uniform(0.05, 0.2) * SAMPLE_RATE_HZ)
    while True:
        length = int(rng.uniform(0.12, 0.32) * SAMPLE_RATE_HZ)
        if position + length > n_samples - int(0.05 * SAMPLE_RATE_HZ):
            break
        syllables.append((position, position + length))
        position += length + int(rng.uniform(0.03, 0.15) * SAMPLE_RATE_HZ)
    if not syllables:
        syllables.append((0, n_samples))
    return syllables


def synthesize_utterance(voice: SpeakerVoice, seconds: float, rng: np.random.Generator) -> Waveform:
    n_samples = max(int(seconds * SAMPLE_RATE_HZ), 1024)
    t = np.arange(n_samples) / SAMPLE_RATE_HZ

    # Slow pitch contour from a few random low-frequency sinusoids
    contour = np.zeros(n_samples)
    for _ in range(3):
        contour += rng.normal(0.0, 1.0) * np.sin(2 * np.pi * rng.uniform(0.3, 3.0) * t + rng.uniform(0, 2 * np.pi))
    f0 = voice.f0_hz * (1.0 + voice.f0_spread * contour / 3.0)
    f0 = np.clip(f0, 60.0, 400.0)

    source = _harmonic_source(f0, voice.tilt)
    source += voice.breathiness * rng.normal(0.0, 1.0, n_samples)

    speech = np.zeros(n_samples)
    for start, stop in _syllable_envelope(n_samples, rng):
        vowel = VOWEL_FORMANTS[int(rng.integers(len(VOWEL_FORMANTS)))]
        segment = source[start:stop]
        for centre, bandwidth in zip(vowel, FORMANT_BANDWIDTHS):
            segment = _resonator(segment, centre / voice.tract_scale, bandwidth) * 4.0
        segment = segment + 0.5 * _resonator(source[start:stop], voice.timbre_hz, 200.0)
        ramp = np.hanning(stop - start)
        speech[start:stop] += segment * np.sqrt(ramp)

    rms = np.sqrt(np.mean(speech ** 2))
    if rms > 0:
        speech *= TARGET_RMS / rms
    return Waveform(speech)


def make_speaker_corpus(
        n_speakers: int,
        utts_per_speaker: int,
        seconds: float = 2.0,
        seed: int = 0,
        name: str = 'toy',
) -> SpeakerCorpus:
    """In-memory corpus of synthetic speakers; utterance lengths jitter by +-25%."""
    rng = np.random.default_rng(seed)
    corpus = SpeakerCorpus(name=name)
    for s in range(n_speakers):
        speaker_id = f"spk{s:03d}"
        voice = SpeakerVoice(speaker_id, rng)
        logging.debug(f"Synthesizing {voice!r}")
        for u in range(utts_per_speaker):
            duration = seconds * rng.uniform(0.75, 1.25)
            waveform = synthesize_utterance(voice, duration, rng)
            corpus.add_utterance(Utterance(f"{speaker_id}/u{u:03d}", [speaker_id], waveform))
    logging.info(f"Synthesized {corpus!r}")
    return corpus


def write_speaker_corpus(corpus: SpeakerCorpus, directory: str) -> None:
    """DIR/<speaker>/<utt>.wav, the layout load_speaker_corpus reads."""
    for utt in corpus.utterances():
        path = os.path.join(directory, f"{utt.id}.wav")
        write_wav(utt.waveform, path)
        utt.path = path
    logging.info(f"Wrote {len(corpus)} utterances to {directory}")
