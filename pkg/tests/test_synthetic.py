import numpy as np
import pytest

import synthetic
from classes.waveform import SAMPLE_RATE_HZ
from corpus_io import load_speaker_corpus
from pipeline import voiced_frame_bank


def test_corpus_layout(toy_corpus):
    assert toy_corpus.speakers == ['spk000', 'spk001', 'spk002', 'spk003']
    assert len(toy_corpus) == 20
    assert toy_corpus.utterances('spk002')[4].id == 'spk002/u004'


def test_lengths_jitter_around_the_request(toy_corpus):
    lengths = np.array([len(u.waveform) for u in toy_corpus.utterances()])
    assert lengths.min() >= 0.75 * SAMPLE_RATE_HZ - 1
    assert lengths.max() <= 1.25 * SAMPLE_RATE_HZ + 1
    assert len(set(lengths)) > 1


def test_utterances_are_normalised(toy_corpus):
    for utt in toy_corpus.utterances():
        assert np.sqrt(utt.waveform.power()) == pytest.approx(synthetic.TARGET_RMS, rel=1e-6)


def test_same_seed_same_corpus():
    a = synthetic.make_speaker_corpus(2, 2, seconds=0.5, seed=3)
    b = synthetic.make_speaker_corpus(2, 2, seconds=0.5, seed=3)
    c = synthetic.make_speaker_corpus(2, 2, seconds=0.5, seed=4)
    for x, y, z in zip(a.utterances(), b.utterances(), c.utterances()):
        np.testing.assert_array_equal(x.waveform.samples, y.waveform.samples)
        assert len(x.waveform) != len(z.waveform) or not np.array_equal(x.waveform.samples, z.waveform.samples)


def test_every_utterance_has_voiced_frames(toy_corpus):
    bank = voiced_frame_bank(toy_corpus)
    assert sorted(bank) == toy_corpus.speakers
    assert all(len(frames) == 5 for frames in bank.values())


def test_speakers_differ_in_pitch():
    rng = np.random.default_rng(0)
    voices = [synthetic.SpeakerVoice(f"spk{i}", rng) for i in range(8)]
    assert len({round(v.f0_hz) for v in voices}) == 8


def test_written_corpus_loads_back(tmp_path):
    corpus = synthetic.make_speaker_corpus(2, 2, seconds=0.5, seed=1)
    synthetic.write_speaker_corpus(corpus, str(tmp_path))
    loaded = load_speaker_corpus(str(tmp_path))
    assert [u.id for u in loaded.utterances()] == [u.id for u in corpus.utterances()]
    for original, read in zip(corpus.utterances(), loaded.utterances()):
        np.testing.assert_allclose(read.waveform.samples, original.waveform.samples, atol=1.0 / 32768)
