"""Waveform normalisation, STFT features, VAD and segmentation."""
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import median_filter
from scipy.signal import get_window

from classes.waveform import Waveform, FeatureMatrix, VadMask, N_BINS, WINDOW_SAMPLES, HOP_SAMPLES, SAMPLE_RATE_HZ
from errors import InvalidInputError, NoVoicedFramesError

# VAD constants
VAD_BANDS = 20
VAD_SMOOTHING_FRAMES = 5
VAD_VARIANCE_MARGIN = 0.25  # bel^2 above the floor estimate
VAD_FLOOR_PERCENTILE = 10.0
VAD_FLOOR_CEILING = 0.25  # bel^2, caps the floor estimate on inputs with no quiet frames
VAD_ABSOLUTE_FLOOR_DB = -60.0
VAD_DYNAMIC_RANGE_DB = 50.0

SEGMENT_MIN_FRAMES = 100
SEGMENT_MAX_FRAMES = 200


def zero_mean_normalize(w: Waveform) -> Waveform:
    return Waveform(w.samples - np.mean(w.samples), w.sample_rate_hz)


def frame_count(n_samples: int) -> int:
    """Number of 32 ms frames with a 16 ms shift that fit in n_samples."""
    if n_samples < WINDOW_SAMPLES:
        return 0
    return (n_samples - WINDOW_SAMPLES) // HOP_SAMPLES + 1


def stft_features(w: Waveform, window: str = "hann") -> FeatureMatrix:
    """One-sided 512-point STFT magnitudes (T x 257).

    `window` is any scipy window name; 'hann' is the project default and
    'boxcar' gives the rectangular window.
    """
    if len(w) < WINDOW_SAMPLES:
        raise InvalidInputError(f"Need at least {WINDOW_SAMPLES} samples for one STFT window, got {len(w)}.")

    frames = sliding_window_view(w.samples, WINDOW_SAMPLES)[::HOP_SAMPLES]
    taper = get_window(window, WINDOW_SAMPLES, fftbins=True)
    magnitudes = np.abs(np.fft.rfft(frames * taper, n=WINDOW_SAMPLES, axis=1))
    return FeatureMatrix(magnitudes)


def _mel(hz: np.ndarray) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + hz / 700.0)


def _inverse_mel(mel: np.ndarray) -> np.ndarray:
    return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)


def band_edges(n_bands: int = VAD_BANDS) -> np.ndarray:
    """Bin edges of n_bands mel-spaced bands covering all 257 bins, each at least one bin wide."""
    nyquist = SAMPLE_RATE_HZ / 2
    mel_points = np.linspace(0.0, _mel(np.array(nyquist)), n_bands + 1)
    edges = np.round(_inverse_mel(mel_points) / (SAMPLE_RATE_HZ / WINDOW_SAMPLES)).astype(int)
    edges[-1] = N_BINS
    for i in range(1, n_bands + 1):
        edges[i] = max(edges[i], edges[i - 1] + 1)
    # Pull back any overflow from the minimum-width rule
    for i in range(n_bands - 1, 0, -1):
        edges[i] = min(edges[i], edges[i + 1] - 1)
    return edges


def band_log_power(f: FeatureMatrix, n_bands: int = VAD_BANDS) -> np.ndarray:
    """Per-frame log10 mean power of each mel band, shape T x n_bands."""
    edges = band_edges(n_bands)
    power = f.frames ** 2
    bands = np.stack([power[:, lo:hi].mean(axis=1) for lo, hi in zip(edges[:-1], edges[1:])], axis=1)
    return np.log10(bands + 1e-12)


def vad_mask(f: FeatureMatrix) -> VadMask:
    """Band-power-variance voice activity detector.

    A frame is voiced when the variance of its log band powers exceeds the
    floor estimate plus a fixed margin and its energy is inside the dynamic
    range of the file. The decision is median-smoothed over 5 frames.
    """
    if len(f) == 0:
        return VadMask(np.zeros(0, dtype=bool))

    log_bands = band_log_power(f)
    variance = log_bands.var(axis=1)
    floor = min(float(np.percentile(variance, VAD_FLOOR_PERCENTILE)), VAD_FLOOR_CEILING)

    energy_db = 10.0 * np.log10((f.frames ** 2).mean(axis=1) + 1e-20)
    energy_gate = max(VAD_ABSOLUTE_FLOOR_DB, float(energy_db.max()) - VAD_DYNAMIC_RANGE_DB)

    raw = (variance >= floor + VAD_VARIANCE_MARGIN) & (energy_db >= energy_gate)
    smoothed = median_filter(raw.astype(np.uint8), size=VAD_SMOOTHING_FRAMES, mode='nearest')
    return VadMask(smoothed.astype(bool))


def voiced_features(w: Waveform, window: str = "hann") -> FeatureMatrix:
    """STFT features of w restricted to VAD-positive frames."""
    features = stft_features(w, window)
    mask = vad_mask(features)
    if not mask.any():
        raise NoVoicedFramesError(f"no voiced frames in {w!r}")
    return features.select(mask.voiced)


def random_segment(
        f: FeatureMatrix,
        rng: np.random.Generator,
        min_frames: int = SEGMENT_MIN_FRAMES,
        max_frames: int = SEGMENT_MAX_FRAMES,
) -> FeatureMatrix:
    """Contiguous slice of uniformly drawn length in [min_frames, max_frames].

    Inputs shorter than the drawn length are padded by wrap-around.
    """
    if len(f) == 0:
        raise InvalidInputError("Cannot segment an empty feature matrix.")

    length = int(rng.integers(min_frames, max_frames + 1))
    n_frames = len(f)
    if n_frames >= length:
        start = int(rng.integers(0, n_frames - length + 1))
        return FeatureMatrix(f.frames[start:start + length])

    logging.debug(f"Wrap-around padding {n_frames} frames to {length}.")
    start = int(rng.integers(0, n_frames))
    index = np.arange(start, start + length)
    return FeatureMatrix(np.take(f.frames, index, axis=0, mode='wrap'))


def log_compress(frames: np.ndarray, mean_normalize: bool = True) -> np.ndarray:
    """log1p magnitude compression with optional per-utterance mean removal."""
    compressed = np.log1p(frames)
    if mean_normalize and compressed.shape[0] > 0:
        compressed = compressed - compressed.mean(axis=0, keepdims=True)
    return compressed
