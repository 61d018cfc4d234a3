import csv
import logging
import os
import pickle
import struct
from typing import Any, List, Dict

import numpy as np
import pandas as pd
import soundfile as sf

from classes.speaker_corpus import SpeakerCorpus, Utterance
from classes.trial import Trial, ScoredTrial
from classes.triplet import CorpusManifest, TripletRecord
from classes.waveform import Waveform, FeatureMatrix, SAMPLE_RATE_HZ, N_BINS
from errors import InvalidInputError

FEATURE_MAGIC = b"TASEFEAT"
PCM16_SCALE = 32768.0

MANIFEST_COLUMNS = ['id', 'label', 'enroll_paths', 'mix_path', 'ref_path', 'n_spk', 'sir_db', 'snr_db',
                    'speaker_ids']
UTTERANCE_COLUMNS = ['utt_id', 'path', 'speaker_ids', 'snr_db']
TRIAL_COLUMNS = ['enroll_spk', 'enroll_utts', 'test_utt', 'label', 'snr_db']
SCORE_COLUMNS = TRIAL_COLUMNS + ['score', 'error']


def format_float(value: float) -> str:
    """Shortest text that parses back to the identical float ('inf', 'nan' included)."""
    return repr(float(value))


def save_pkl(obj: Any, filename: str) -> None:
    """Saves Python object as a pickle file."""
    try:
        os.makedirs(os.path.dirname(filename) or '.', exist_ok=True)
        with open(filename, 'wb') as out:  # Overwrites any existing file.
            pickle.dump(obj, out, pickle.HIGHEST_PROTOCOL)
        logging.info(f"Object successfully saved to {filename}")
    except (OSError, pickle.PicklingError) as e:
        logging.error(f"Failed to save object to {filename}: {e}")


def load_pkl(filename: str, value: Any = None) -> Any:
    """Loads a pickled object, returning `value` when it cannot be read."""
    try:
        with open(filename, 'rb') as inp:
            return pickle.load(inp)
    except FileNotFoundError:
        logging.warning(f"File not found: {filename}")
        return value
    except (OSError, pickle.UnpicklingError) as e:
        logging.error(f"Failed to load object from {filename}: {e}")
        return value


def read_wav(filename: str) -> Waveform:
    """PCM16 mono 16 kHz WAV, samples divided by 32768."""
    data, sample_rate = sf.read(filename, dtype='int16', always_2d=True)
    if data.shape[1] != 1:
        raise InvalidInputError(f"{filename}: expected mono audio, got {data.shape[1]} channels.")
    if sample_rate != SAMPLE_RATE_HZ:
        raise InvalidInputError(f"{filename}: expected {SAMPLE_RATE_HZ} Hz, got {sample_rate} Hz.")
    return Waveform(data[:, 0].astype(np.float64) / PCM16_SCALE, sample_rate)


def write_wav(w: Waveform, filename: str) -> None:
    os.makedirs(os.path.dirname(filename) or '.', exist_ok=True)
    clipped = np.clip(w.samples, -1.0, (PCM16_SCALE - 1) / PCM16_SCALE)
    if np.any(clipped != w.samples):
        logging.warning(f"Clipping {int(np.sum(clipped != w.samples))} samples while writing {filename}")
    pcm = np.round(clipped * PCM16_SCALE).astype('<i2')
    sf.write(filename, pcm, w.sample_rate_hz, subtype='PCM_16')


def write_features(f: FeatureMatrix, filename: str) -> None:
    os.makedirs(os.path.dirname(filename) or '.', exist_ok=True)
    with open(filename, 'wb') as out:
        out.write(FEATURE_MAGIC)
        out.write(struct.pack('<II', len(f), N_BINS))
        out.write(f.frames.astype('<f4').tobytes(order='C'))


def read_features(filename: str) -> FeatureMatrix:
    with open(filename, 'rb') as inp:
        magic = inp.read(len(FEATURE_MAGIC))
        if magic != FEATURE_MAGIC:
            raise InvalidInputError(f"{filename}: not a feature file (magic {magic!r}).")
        n_frames, n_bins = struct.unpack('<II', inp.read(8))
        payload = inp.read()
    if n_bins != N_BINS or len(payload) != 4 * n_frames * n_bins:
        raise InvalidInputError(f"{filename}: corrupt feature payload.")
    frames = np.frombuffer(payload, dtype='<f4').reshape(n_frames, n_bins)
    return FeatureMatrix(frames.astype(np.float64))


def load_speaker_corpus(directory: str) -> SpeakerCorpus:
    """Reads DIR/<speaker>/<utt>.wav into a SpeakerCorpus."""
    if not os.path.isdir(directory):
        raise InvalidInputError(f"Speaker directory not found: {directory}")
    corpus = SpeakerCorpus(name=os.path.basename(os.path.normpath(directory)))
    for speaker in sorted(os.listdir(directory)):
        speaker_dir = os.path.join(directory, speaker)
        if not os.path.isdir(speaker_dir):
            continue
        for name in sorted(os.listdir(speaker_dir)):
            if not name.endswith('.wav'):
                continue
            path = os.path.join(speaker_dir, name)
            utt_id = f"{speaker}/{os.path.splitext(name)[0]}"
            corpus.add_utterance(Utterance(utt_id, [speaker], read_wav(path), path=path))
    logging.info(f"Loaded {corpus!r} from {directory}")
    return corpus


def _write_table(rows: List[List[str]], columns: List[str], filename: str, header_line: str = '') -> None:
    os.makedirs(os.path.dirname(filename) or '.', exist_ok=True)
    obj_df = pd.DataFrame(rows, columns=columns, dtype='string')
    with open(filename, 'w', encoding='utf-8', newline='') as out:
        if header_line:
            out.write(header_line + '\n')
        obj_df.to_csv(out, sep='\t', header=False, index=False, lineterminator='\n', quoting=csv.QUOTE_NONE)


def _read_table(filename: str, columns: List[str], skiprows: int = 0) -> pd.DataFrame:
    if not os.path.exists(filename):
        raise InvalidInputError(f"Table not found: {filename}")
    try:
        return pd.read_csv(filename, sep='\t', header=None, names=columns, dtype=str, keep_default_na=False,
                           quoting=csv.QUOTE_NONE, skiprows=skiprows)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=columns, dtype=str)


def write_manifest(manifest: CorpusManifest, filename: str) -> None:
    rows = [
        [
            r.id,
            str(r.label),
            ','.join(r.enroll_paths),
            r.mix_path,
            r.ref_path,
            str(r.spec.n_speakers),
            format_float(r.spec.sir_db),
            format_float(r.spec.snr_db),
            ','.join(r.speaker_ids),
        ]
        for r in manifest.records
    ]
    _write_table(rows, MANIFEST_COLUMNS, filename, header_line=f"#seed\t{manifest.seed}")
    logging.info(f"Manifest with {len(manifest)} triplets saved to {filename}")


def read_manifest(filename: str) -> CorpusManifest:
    if not os.path.exists(filename):
        raise InvalidInputError(f"Manifest not found: {filename}")
    with open(filename, 'r', encoding='utf-8') as inp:
        first = inp.readline().rstrip('\n').split('\t')
    if len(first) != 2 or first[0] != '#seed':
        raise InvalidInputError(f"{filename}: missing '#seed' header line.")
    obj_df = _read_table(filename, MANIFEST_COLUMNS, skiprows=1)
    records = [
        TripletRecord({
            'id': row['id'],
            'label': row['label'],
            'enroll_paths': row['enroll_paths'].split(','),
            'mix_path': row['mix_path'],
            'ref_path': row['ref_path'],
            'n_spk': int(row['n_spk']),
            'sir_db': float(row['sir_db']),
            'snr_db': float(row['snr_db']),
            'speaker_ids': row['speaker_ids'].split(','),
        })
        for _, row in obj_df.iterrows()
    ]
    return CorpusManifest(records, seed=int(first[1]))


def write_utterance_manifest(utterances: List[Utterance], filename: str) -> None:
    rows = [[u.id, u.path, ','.join(u.speaker_ids), format_float(u.snr_db)] for u in utterances]
    _write_table(rows, UTTERANCE_COLUMNS, filename)
    logging.info(f"Utterance manifest with {len(utterances)} entries saved to {filename}")


def read_utterance_manifest(filename: str, load_audio: bool = True) -> List[Utterance]:
    """Utterances listed in an utterance manifest; audio is read only when load_audio is set."""
    obj_df = _read_table(filename, UTTERANCE_COLUMNS)
    utterances = []
    for _, row in obj_df.iterrows():
        waveform = read_wav(row['path']) if load_audio else Waveform([0.0])
        utterances.append(
            Utterance(row['utt_id'], row['speaker_ids'].split(','), waveform, path=row['path'],
                      snr_db=float(row['snr_db']))
        )
    return utterances


def write_trials(trials: List[Trial], filename: str) -> None:
    _write_table([t.to_row() for t in trials], TRIAL_COLUMNS, filename)
    logging.info(f"{len(trials)} trials saved to {filename}")


def read_trials(filename: str) -> List[Trial]:
    obj_df = _read_table(filename, TRIAL_COLUMNS)
    return [Trial.from_row(list(row)) for row in obj_df.itertuples(index=False)]


def write_scores(scored: List[ScoredTrial], filename: str) -> None:
    _write_table([s.to_row() for s in scored], SCORE_COLUMNS, filename)
    logging.info(f"{len(scored)} scores saved to {filename}")


def read_scores(filename: str) -> List[ScoredTrial]:
    obj_df = _read_table(filename, SCORE_COLUMNS)
    return [ScoredTrial.from_row(list(row)) for row in obj_df.itertuples(index=False)]


def utterance_index(utterances: List[Utterance]) -> Dict[str, Utterance]:
    return {u.id: u for u in utterances}
