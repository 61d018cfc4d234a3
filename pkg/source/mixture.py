"""Target-speaker-enhancement training corpus: mixtures at a controlled SIR/SNR and training triplets."""
import logging
import math
import os
from typing import List, Optional, Tuple

import numpy as np

from classes.enums import TripletLabel, NoiseKind
from classes.speaker_corpus import SpeakerCorpus, Utterance
from classes.triplet import MixtureSpec, TrainingTriplet, TripletRecord, CorpusManifest, NULL_REFERENCE
from classes.waveform import Waveform
from corpus_io import write_wav, write_manifest, read_wav, write_utterance_manifest
from errors import InvalidInputError
from to_thread import gather_in_threads

NULL_SIGMA = 1e-6
DEFAULT_NONTARGET_RATIO = 11.0  # target:nontarget = 11:1
EVAL_SNR_RANGE_DB = (-5.0, 30.0)


class MixtureComponents:
    """The parts a mixture is made of, kept for re-measuring SIR and SNR."""

    def __init__(self, target: np.ndarray, interference: np.ndarray, noise: np.ndarray,
                 interference_mask: np.ndarray) -> None:
        self.target: np.ndarray = target
        self.interference: np.ndarray = interference
        self.noise: np.ndarray = noise
        self.interference_mask: np.ndarray = interference_mask

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(length={self.target.size}, sir_db={self.measured_sir_db():.2f}, snr_db={self.measured_snr_db():.2f})"

    @property
    def mixture(self) -> np.ndarray:
        return self.target + self.interference + self.noise

    def measured_sir_db(self) -> float:
        if not self.interference_mask.any():
            return math.inf
        region = self.interference_mask
        p_int = np.mean(self.interference[region] ** 2)
        if p_int == 0:
            return math.inf
        return float(10.0 * np.log10(np.mean(self.target[region] ** 2) / p_int))

    def measured_snr_db(self) -> float:
        return float(10.0 * np.log10(np.mean(self.target ** 2) / np.mean(self.noise ** 2)))


def parse_ratio(value) -> float:
    """'11:1' -> 11.0; 'inf' or 'inf:1' -> inf; plain numbers pass through."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    if ':' in text:
        num, den = text.split(':', 1)
        den_value = float(den)
        if den_value == 0:
            return math.inf
        return float(num) / den_value
    return float(text)


def nontarget_probability(nontarget_ratio: float) -> float:
    """Per-draw nontarget probability of a target:nontarget ratio r:1."""
    if nontarget_ratio < 0:
        raise InvalidInputError(f"Ratio must be nonnegative, got {nontarget_ratio}.")
    if math.isinf(nontarget_ratio):
        return 0.0
    return 1.0 / (nontarget_ratio + 1.0)


def _power(samples: np.ndarray) -> float:
    return float(np.mean(samples ** 2)) if samples.size else 0.0


def sir_gain(target: np.ndarray, interferer: np.ndarray, sir_db: float,
             region: Optional[np.ndarray] = None) -> float:
    """Gain that puts interferer at sir_db below target, powers measured over `region`."""
    if math.isinf(sir_db) and sir_db > 0:
        return 0.0
    if region is None:
        n = min(target.size, interferer.size)
        region = np.ones(n, dtype=bool)
        target, interferer = target[:n], interferer[:n]
    p_target = _power(target[region])
    p_interferer = _power(interferer[region])
    if p_target == 0:
        raise InvalidInputError("Target has zero power in the overlap region.")
    if p_interferer == 0:
        raise InvalidInputError("Interferer has zero power; cannot reach a finite SIR.")
    return math.sqrt(p_target / (p_interferer * 10.0 ** (sir_db / 10.0)))


def scale_to_sir(target: Waveform, interferer: Waveform, sir_db: float) -> Waveform:
    """Interferer scaled so 10*log10(P_target / P_interferer) equals sir_db; +inf gives silence."""
    gain = sir_gain(target.samples, interferer.samples, sir_db)
    return Waveform(interferer.samples * gain, interferer.sample_rate_hz)


def fit_length(samples: np.ndarray, length: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Crop from a random offset, or loop, to exactly `length` samples."""
    if samples.size >= length:
        start = int(rng.integers(0, samples.size - length + 1)) if rng is not None else 0
        return samples[start:start + length]
    return np.resize(samples, length)


def snr_gain(speech: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    p_speech = _power(speech)
    p_noise = _power(noise)
    if p_speech == 0:
        raise InvalidInputError("Speech has zero power; SNR is undefined.")
    if p_noise == 0:
        raise InvalidInputError("Noise has zero power; cannot reach the requested SNR.")
    return math.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))


def add_noise_at_snr(speech: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """speech + scaled noise, noise cropped or looped to the speech length."""
    fitted = fit_length(noise.samples, len(speech))
    gain = snr_gain(speech.samples, fitted, snr_db)
    return Waveform(speech.samples + gain * fitted, speech.sample_rate_hz)


def place_interferer(samples: np.ndarray, length: int, rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, np.ndarray]:
    """Longer interferers are cropped from a random offset; shorter ones sit at a random offset.

    Returns the placed signal and the mask of samples it covers.
    """
    placed = np.zeros(length)
    mask = np.zeros(length, dtype=bool)
    if samples.size >= length:
        placed[:] = fit_length(samples, length, rng)
        mask[:] = True
    else:
        offset = int(rng.integers(0, length - samples.size + 1)) if rng is not None else 0
        placed[offset:offset + samples.size] = samples
        mask[offset:offset + samples.size] = True
    return placed, mask


def compose_mixture(target: Waveform, interferers: List[Waveform], noise: Waveform, sir_db: float, snr_db: float,
                    rng: Optional[np.random.Generator] = None) -> MixtureComponents:
    """target + interferers scaled jointly to sir_db + noise scaled to snr_db against the target."""
    length = len(target)
    interference = np.zeros(length)
    mask = np.zeros(length, dtype=bool)
    for interferer in interferers:
        placed, covered = place_interferer(interferer.samples, length, rng)
        interference += placed
        mask |= covered

    if interferers:
        gain = sir_gain(target.samples, interference, sir_db, region=mask)
        interference = interference * gain
        if gain == 0.0:
            mask = np.zeros(length, dtype=bool)

    fitted_noise = fit_length(noise.samples, length, rng)
    noise_scaled = fitted_noise * snr_gain(target.samples, fitted_noise, snr_db)
    return MixtureComponents(target.samples.copy(), interference, noise_scaled, mask)


def make_mixture(spec: MixtureSpec, target: Waveform, interferers: List[Waveform], noise: Waveform,
                 rng: Optional[np.random.Generator] = None) -> Tuple[Waveform, Waveform]:
    """(mixture, clean target reference) for a grid spec."""
    if len(interferers) != spec.n_speakers - 1:
        raise InvalidInputError(f"{spec!r} needs {spec.n_speakers - 1} interferers, got {len(interferers)}.")
    components = compose_mixture(target, interferers, noise, spec.sir_db, spec.snr_db, rng)
    return Waveform(components.mixture, target.sample_rate_hz), Waveform(components.target, target.sample_rate_hz)


def null_reference(length: int, rng: np.random.Generator) -> Waveform:
    """NULL reference: i.i.d. N(0, (1e-6)^2) samples."""
    if length < 1:
        raise InvalidInputError("NULL reference length must be at least 1.")
    return Waveform(rng.normal(0.0, NULL_SIGMA, int(length)))


def pink_noise(length: int, rng: np.random.Generator) -> np.ndarray:
    """1/f power spectrum noise with unit variance."""
    spectrum = np.fft.rfft(rng.normal(0.0, 1.0, length))
    freqs = np.arange(spectrum.size, dtype=np.float64)
    freqs[0] = 1.0
    noise = np.fft.irfft(spectrum / np.sqrt(freqs), n=length)
    noise -= noise.mean()
    return noise / (noise.std() + 1e-12)


def babble_noise(utterances: List[Utterance], length: int, rng: np.random.Generator, talkers: int = 4) -> np.ndarray:
    """Sum of a few talkers, each looped or cropped at a random offset, unit variance."""
    if not utterances:
        raise InvalidInputError("Babble noise needs at least one utterance.")
    chosen = rng.choice(len(utterances), size=min(talkers, len(utterances)), replace=False)
    babble = np.zeros(length)
    for i in chosen:
        samples = utterances[int(i)].waveform.samples
        babble += np.roll(fit_length(samples, length, rng), int(rng.integers(0, length)))
    babble -= babble.mean()
    return babble / (babble.std() + 1e-12)


def make_noise(kind: NoiseKind, length: int, rng: np.random.Generator,
               babble_pool: Optional[List[Utterance]] = None) -> Waveform:
    if kind is NoiseKind.PINK or (kind is NoiseKind.MIXED and not babble_pool):
        return Waveform(pink_noise(length, rng))
    if kind is NoiseKind.BABBLE:
        return Waveform(babble_noise(babble_pool, length, rng))
    return Waveform(pink_noise(length, rng) + 0.5 * babble_noise(babble_pool, length, rng))


def _other_speakers(corpus: SpeakerCorpus, exclude: List[str], count: int, rng: np.random.Generator) -> List[str]:
    pool = [s for s in corpus.speakers if s not in exclude]
    replace = len(pool) < count
    return [pool[int(i)] for i in rng.choice(len(pool), size=count, replace=replace)]


def sample_triplet(
        corpus: SpeakerCorpus,
        rng: np.random.Generator,
        nontarget_ratio: float = DEFAULT_NONTARGET_RATIO,
        enroll_count: int = 3,
        noise_kind: NoiseKind = NoiseKind.MIXED,
        triplet_id: str = '',
) -> TrainingTriplet:
    """Draw a target triplet, or with probability 1/(ratio+1) a nontarget one with the NULL reference."""
    speakers = corpus.speakers
    if len(speakers) < 2:
        raise InvalidInputError(f"Triplet sampling needs at least 2 speakers, corpus has {len(speakers)}.")

    is_nontarget = rng.random() < nontarget_probability(nontarget_ratio)
    spec = MixtureSpec.sample(rng)
    enrolled = speakers[int(rng.integers(len(speakers)))]
    own = corpus.utterances(enrolled)
    if not own:
        raise InvalidInputError(f"Speaker {enrolled} has no utterances.")

    if is_nontarget:
        enrollment = corpus.pick(enrolled, rng, count=min(enroll_count, len(own)))
        mixture_speakers = _other_speakers(corpus, [enrolled], spec.n_speakers, rng)
        target_utt = corpus.pick(mixture_speakers[0], rng)[0]
    else:
        if len(own) < 2:
            raise InvalidInputError(f"Speaker {enrolled} needs an enrollment and a distinct test utterance.")
        target_utt = corpus.pick(enrolled, rng)[0]
        enrollment = corpus.pick(enrolled, rng, count=min(enroll_count, len(own) - 1), exclude=[target_utt.id])
        mixture_speakers = [enrolled] + _other_speakers(corpus, [enrolled], spec.n_speakers - 1, rng)

    interferers = [corpus.pick(spk, rng)[0].waveform for spk in mixture_speakers[1:]]
    babble_pool = [u for spk in speakers if spk != enrolled for u in corpus.utterances(spk)]
    noise = make_noise(noise_kind, len(target_utt.waveform), rng, babble_pool)
    mixture, clean = make_mixture(spec, target_utt.waveform, interferers, noise, rng)

    return TrainingTriplet(
        triplet_id=triplet_id,
        enrollment=[u.waveform for u in enrollment],
        test_mixture=mixture,
        reference=None if is_nontarget else clean,
        label=TripletLabel.NONTARGET if is_nontarget else TripletLabel.TARGET,
        spec=spec,
        enroll_speaker=enrolled,
        mixture_speakers=mixture_speakers,
    )


def triplet_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator stream for triplet `index` under the global seed."""
    return np.random.default_rng([int(seed), int(index)])


def _write_triplet(triplet: TrainingTriplet, directory: str) -> TripletRecord:
    base = os.path.join(directory, triplet.id)
    enroll_paths = []
    for k, utt in enumerate(triplet.enrollment):
        path = os.path.join(base, f"enroll_{k}.wav")
        write_wav(utt, path)
        enroll_paths.append(path)
    mix_path = os.path.join(base, "mix.wav")
    write_wav(triplet.test_mixture, mix_path)
    ref_path = NULL_REFERENCE
    if triplet.reference is not None:
        ref_path = os.path.join(base, "ref.wav")
        write_wav(triplet.reference, ref_path)
    return TripletRecord({
        'id': triplet.id,
        'label': str(triplet.label),
        'enroll_paths': enroll_paths,
        'mix_path': mix_path,
        'ref_path': ref_path,
        'n_spk': triplet.spec.n_speakers,
        'sir_db': triplet.spec.sir_db,
        'snr_db': triplet.spec.snr_db,
        'speaker_ids': [triplet.enroll_speaker] + triplet.mixture_speakers,
    })


def generate_triplets(corpus: SpeakerCorpus, n_triplets: int, seed: int,
                      nontarget_ratio: float = DEFAULT_NONTARGET_RATIO, enroll_count: int = 3,
                      workers: int = 4) -> List[TrainingTriplet]:
    """In-memory triplets; triplet i depends only on (seed, i)."""
    def build(index: int) -> TrainingTriplet:
        return sample_triplet(corpus, triplet_rng(seed, index), nontarget_ratio, enroll_count,
                              triplet_id=f"t{index:06d}")

    return gather_in_threads(build, list(range(n_triplets)), workers=workers, description="Simulating")


def simulate_corpus(corpus: SpeakerCorpus, out_dir: str, n_triplets: int, seed: int,
                    nontarget_ratio: float = DEFAULT_NONTARGET_RATIO, enroll_count: int = 3,
                    workers: int = 4) -> CorpusManifest:
    """Simulate triplets, write their audio under out_dir and the manifest to out_dir/manifest.tsv."""
    triplet_dir = os.path.join(out_dir, 'triplets')

    def build_and_write(index: int) -> TripletRecord:
        triplet = sample_triplet(corpus, triplet_rng(seed, index), nontarget_ratio, enroll_count,
                                 triplet_id=f"t{index:06d}")
        return _write_triplet(triplet, triplet_dir)

    records = gather_in_threads(build_and_write, list(range(n_triplets)), workers=workers, description="Simulating")
    manifest = CorpusManifest(records, seed=seed)
    write_manifest(manifest, os.path.join(out_dir, 'manifest.tsv'))
    if nontarget_ratio > 0 and not math.isinf(nontarget_ratio) and manifest.nontarget_count() == 0:
        logging.warning("Simulated corpus contains no nontarget triplets.")
    logging.info(f"Simulated {len(manifest)} triplets ({manifest.nontarget_count()} nontarget) into {out_dir}")
    return manifest


def load_triplet(record: TripletRecord) -> TrainingTriplet:
    mixture = read_wav(record.mix_path)
    return TrainingTriplet(
        triplet_id=record.id,
        enrollment=[read_wav(p) for p in record.enroll_paths],
        test_mixture=mixture,
        reference=None if record.has_null_reference else read_wav(record.ref_path),
        label=record.label,
        spec=record.spec,
        enroll_speaker=record.enroll_speaker,
        mixture_speakers=record.mixture_speakers,
    )


def build_eval_utterances(
        corpus: SpeakerCorpus,
        seed: int,
        enroll_per_speaker: int = 3,
        tests_per_speaker: int = 6,
        enroll_snr_db: Optional[float] = None,
        snr_range_db: Tuple[float, float] = EVAL_SNR_RANGE_DB,
) -> List[Utterance]:
    """Evaluation utterances: single-speaker enrollment candidates and 1-3 speaker noisy test utterances.

    Enrollment candidates are clean (snr_db = inf) unless enroll_snr_db is set, in which case pink noise
    is added at that SNR. Test utterances carry the SNR of their target against the added noise.
    """
    rng = np.random.default_rng(seed)
    utterances: List[Utterance] = []
    for speaker in corpus.speakers:
        own = corpus.utterances(speaker)
        if len(own) < enroll_per_speaker + 1:
            logging.warning(f"Speaker {speaker} has {len(own)} utterances; skipped for evaluation.")
            continue
        for utt in own[:enroll_per_speaker]:
            waveform, snr_db = utt.waveform, math.inf
            if enroll_snr_db is not None:
                noise = Waveform(pink_noise(len(waveform), rng))
                waveform, snr_db = add_noise_at_snr(waveform, noise, enroll_snr_db), enroll_snr_db
            utterances.append(Utterance(f"{utt.id}_enr", [speaker], waveform, snr_db=snr_db))

        for k in range(tests_per_speaker):
            source = own[enroll_per_speaker + k % (len(own) - enroll_per_speaker)]
            n_speakers = int(rng.integers(1, 4))
            others = _other_speakers(corpus, [speaker], n_speakers - 1, rng)
            interferers = [corpus.pick(spk, rng)[0].waveform for spk in others]
            snr_db = float(rng.uniform(*snr_range_db))
            sir_db = float(rng.choice([0.0, 6.0, 12.0]))
            babble_pool = [u for spk in corpus.speakers if spk not in [speaker] + others for u in corpus.utterances(spk)]
            noise = make_noise(NoiseKind.MIXED, len(source.waveform), rng, babble_pool)
            components = compose_mixture(source.waveform, interferers, noise, sir_db, snr_db, rng)
            utterances.append(
                Utterance(f"{speaker}/test{k:03d}", sorted(set([speaker] + others)), Waveform(components.mixture),
                          snr_db=snr_db)
            )
    logging.info(f"Built {len(utterances)} evaluation utterances")
    return utterances


def write_eval_corpus(utterances: List[Utterance], out_dir: str) -> str:
    """Writes audio and the utterance manifest; returns the manifest path."""
    for utt in utterances:
        utt.path = os.path.join(out_dir, 'audio', f"{utt.id.replace('/', '_')}.wav")
        write_wav(utt.waveform, utt.path)
    manifest_path = os.path.join(out_dir, 'utterances.tsv')
    write_utterance_manifest(utterances, manifest_path)
    return manifest_path
