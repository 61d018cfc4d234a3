"""Training objectives, each returning its value together with analytic gradients."""
import logging
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax

from classes.enums import SiSnrMode, TripletLabel
from classes.loss_output import LossOutput, SvLossWeights
from classes.waveform import Waveform
from errors import InvalidInputError
from mixture import null_reference

SI_SNR_EPS = 1e-8
SI_SNR_CLAMP_DB = 60.0
UNIT_NORM_TOLERANCE = 1e-6
DEFAULT_LMCL_MARGIN = 0.2
DEFAULT_LMCL_SCALE = 30.0
DEFAULT_TRIPLET_MARGIN = 0.2

_DB_PER_NEPER = 10.0 / np.log(10.0)

Signal = Union[Waveform, np.ndarray]


def _samples(signal: Signal) -> np.ndarray:
    if isinstance(signal, Waveform):
        return signal.samples
    return np.asarray(signal, dtype=np.float64).reshape(-1)


def si_snr(s_e: Signal, s_t: Signal, mode: SiSnrMode = SiSnrMode.STANDARD) -> LossOutput:
    """Scale-invariant SNR in dB of estimate `s_e` against reference `s_t`.

    Both signals are made zero-mean internally. The projection factor is
    (e.t + eps) / (t.t + eps); both norms are floored at eps and the value is
    clamped to +-60 dB with zero gradient once clamped. The loss is the negation.
    """
    estimate, reference = _samples(s_e), _samples(s_t)
    if estimate.shape != reference.shape:
        raise InvalidInputError(f"SI-SNR inputs differ in length: {estimate.size} vs {reference.size}.")
    e = estimate - estimate.mean()
    t = reference - reference.mean()
    tt = float(t @ t)
    if tt == 0.0:
        raise InvalidInputError("SI-SNR reference has zero power.")

    floor = SI_SNR_EPS ** 2
    denom = tt + SI_SNR_EPS
    alpha = (float(e @ t) + SI_SNR_EPS) / denom

    if mode is SiSnrMode.STANDARD:
        residual = e - alpha * t
        signal_power = alpha * alpha * tt
    else:
        residual = t - alpha * e
        signal_power = alpha * alpha * float(e @ e)
    residual_power = float(residual @ residual)

    value = _DB_PER_NEPER * (np.log(max(signal_power, floor)) - np.log(max(residual_power, floor)))
    if abs(value) >= SI_SNR_CLAMP_DB:
        value = float(np.clip(value, -SI_SNR_CLAMP_DB, SI_SNR_CLAMP_DB))
        return LossOutput(value, {'s_e': np.zeros_like(e), 's_t': np.zeros_like(t)})

    # unfloored terms contribute; floored ones are constants
    wp = 1.0 / signal_power if signal_power > floor else 0.0
    wr = 1.0 / residual_power if residual_power > floor else 0.0
    if mode is SiSnrMode.STANDARD:
        g_alpha = 2 * alpha * tt * wp + 2 * float(residual @ t) * wr
        g_e = -2 * residual * wr
        g_t = 2 * alpha * alpha * t * wp + 2 * alpha * residual * wr
    else:
        g_alpha = 2 * alpha * float(e @ e) * wp + 2 * float(residual @ e) * wr
        g_e = 2 * alpha * alpha * e * wp + 2 * alpha * residual * wr
        g_t = -2 * residual * wr
    g_e = g_e + g_alpha * t / denom
    g_t = g_t + g_alpha * (e - 2 * alpha * t) / denom

    g_e = _DB_PER_NEPER * (g_e - g_e.mean())
    g_t = _DB_PER_NEPER * (g_t - g_t.mean())
    return LossOutput(value, {'s_e': g_e, 's_t': g_t})


def si_snr_with_null(
        s_e: Signal,
        label: TripletLabel,
        x_t: Optional[Signal] = None,
        rng: Optional[np.random.Generator] = None,
        mode: SiSnrMode = SiSnrMode.STANDARD,
) -> LossOutput:
    """SI-SNR against the clean target, or against a fresh NULL draw for nontarget triplets."""
    if label is TripletLabel.TARGET:
        if x_t is None:
            raise InvalidInputError("Target triplet needs a reference signal.")
        return si_snr(s_e, x_t, mode)
    if rng is None:
        raise InvalidInputError("Nontarget triplet needs a generator for the NULL reference.")
    estimate = _samples(s_e)
    null = null_reference(estimate.size, rng)
    out = si_snr(estimate, null, mode)
    return LossOutput(out.value, {'s_e': out['s_e']})


def _check_unit_rows(matrix: np.ndarray, name: str) -> None:
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
        raise InvalidInputError(f"Rows of {name} must be unit-norm (worst deviation {np.max(np.abs(norms - 1.0)):.2e}).")


def lmcl(
        embeddings: np.ndarray,
        labels: Sequence[int],
        class_weights: np.ndarray,
        margin: float = DEFAULT_LMCL_MARGIN,
        scale: float = DEFAULT_LMCL_SCALE,
) -> LossOutput:
    """Large margin cosine loss, averaged over the batch.

    Cosines are the dot products of the unit rows, so the gradients are those
    of the dot-product form.
    """
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    class_weights = np.atleast_2d(np.asarray(class_weights, dtype=np.float64))
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if not 0.0 <= margin < 1.0 or scale <= 0.0:
        raise InvalidInputError(f"LMCL needs 0 <= margin < 1 and scale > 0, got m={margin}, s={scale}.")
    if labels.size != embeddings.shape[0]:
        raise InvalidInputError(f"{labels.size} labels for {embeddings.shape[0]} embeddings.")
    n_classes = class_weights.shape[0]
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise InvalidInputError(f"Label ids must be in [0, {n_classes}), got {labels.min()}..{labels.max()}.")
    _check_unit_rows(embeddings, 'embeddings')
    _check_unit_rows(class_weights, 'class_weights')

    n = embeddings.shape[0]
    rows = np.arange(n)
    logits = scale * (embeddings @ class_weights.T)
    logits[rows, labels] -= scale * margin
    value = float(np.mean(logsumexp(logits, axis=1) - logits[rows, labels]))

    g_logits = softmax(logits, axis=1)
    g_logits[rows, labels] -= 1.0
    g_cos = scale * g_logits / n
    return LossOutput(value, {
        'embeddings': g_cos @ class_weights,
        'class_weights': g_cos.T @ embeddings,
    })


def triplet_loss(anchor: np.ndarray, positive: np.ndarray, negative: np.ndarray,
                 margin: float = DEFAULT_TRIPLET_MARGIN) -> LossOutput:
    """max(0, margin + d(a, p) - d(a, n)) with cosine distance d = 1 - a.b."""
    if margin < 0:
        raise InvalidInputError(f"Triplet margin must be >= 0, got {margin}.")
    shape = np.shape(anchor)
    a, p, n = (np.asarray(v, dtype=np.float64).reshape(-1) for v in (anchor, positive, negative))
    value = margin + (1.0 - a @ p) - (1.0 - a @ n)
    if value <= 0.0:
        zero = np.zeros(shape)
        return LossOutput(0.0, {'anchor': zero, 'positive': zero.copy(), 'negative': zero.copy()})
    return LossOutput(float(value), {
        'anchor': (n - p).reshape(shape),
        'positive': (-a).reshape(shape),
        'negative': a.reshape(shape),
    })


def batch_triplet_loss(embeddings: np.ndarray, labels: Sequence, margin: float = DEFAULT_TRIPLET_MARGIN) -> LossOutput:
    """Mean triplet loss over every (anchor, positive) pair in the batch.

    Each pair takes the closest semi-hard negative, d(a,p) < d(a,n) < d(a,p) + margin,
    and the hardest negative when no semi-hard one exists.
    """
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    labels = np.asarray(labels).reshape(-1)
    if labels.size != embeddings.shape[0]:
        raise InvalidInputError(f"{labels.size} labels for {embeddings.shape[0]} embeddings.")
    distance = 1.0 - embeddings @ embeddings.T
    grad = np.zeros_like(embeddings)
    total, n_pairs = 0.0, 0
    for i in range(labels.size):
        same = labels == labels[i]
        negatives = np.flatnonzero(~same)
        if negatives.size == 0:
            continue
        for j in np.flatnonzero(same):
            if j == i:
                continue
            n_pairs += 1
            d_ap = distance[i, j]
            d_an = distance[i, negatives]
            semi_hard = (d_an > d_ap) & (d_an < d_ap + margin)
            pool = negatives[semi_hard] if semi_hard.any() else negatives
            k = pool[np.argmin(distance[i, pool])]
            out = triplet_loss(embeddings[i], embeddings[j], embeddings[k], margin)
            if out.value > 0.0:
                total += out.value
                grad[i] += out['anchor']
                grad[j] += out['positive']
                grad[k] += out['negative']
    if n_pairs == 0:
        logging.debug("Batch has no anchor/positive pair with a negative; triplet loss is zero")
        return LossOutput(0.0, {'embeddings': grad})
    return LossOutput(total / n_pairs, {'embeddings': grad / n_pairs})


def l2_regularization(parameters: Iterable) -> LossOutput:
    """Sum of squared trainable weights; normalisation parameters are skipped."""
    value, gradients = 0.0, {}
    for p in parameters:
        if not p.regularize:
            continue
        weights = p.value.astype(np.float64)
        value += float(np.sum(weights ** 2))
        gradients[p.name] = 2.0 * weights
    return LossOutput(value, gradients)


def sv_loss(triplet_term: LossOutput, lmcl_term: LossOutput, l2_term: LossOutput,
            weights: Optional[SvLossWeights] = None) -> LossOutput:
    weights = weights or SvLossWeights()
    return LossOutput.combine((1.0, triplet_term), (weights.omega1, lmcl_term), (weights.omega2, l2_term))


def tase_loss(si_snr_loss: LossOutput, sv: LossOutput, si_snr_weight: float = 1.0, sv_weight: float = 1.0) -> LossOutput:
    """Weighted sum of the enhancement loss (already -SI-SNR) and the SV loss."""
    return LossOutput.combine((si_snr_weight, si_snr_loss), (sv_weight, sv))


def ts_mse(y_teacher: np.ndarray, y_student: np.ndarray) -> LossOutput:
    """Mean squared embedding difference; gradient is taken w.r.t. the student."""
    y_teacher = np.asarray(y_teacher, dtype=np.float64)
    y_student = np.asarray(y_student, dtype=np.float64)
    if y_teacher.shape != y_student.shape:
        raise InvalidInputError(f"Teacher and student embeddings differ in shape: {y_teacher.shape} vs {y_student.shape}.")
    diff = y_teacher - y_student
    return LossOutput(float(np.mean(diff ** 2)), {'student': -2.0 * diff / diff.size})


def student_loss(sv: LossOutput, mse: LossOutput) -> LossOutput:
    return sv + mse


def mean_normalized_bias(embeddings: np.ndarray) -> Tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """Unit-normalised mean of the rows, plus the map from its gradient to row gradients."""
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if embeddings.shape[0] == 0:
        raise InvalidInputError("Cannot average an empty set of embeddings.")
    mean = embeddings.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        return np.zeros_like(mean), lambda g: np.zeros_like(embeddings)
    bias = mean / norm

    def backward(g_bias: np.ndarray) -> np.ndarray:
        g_bias = np.asarray(g_bias, dtype=np.float64).reshape(-1)
        g_mean = (g_bias - bias * (bias @ g_bias)) / norm
        return np.tile(g_mean / embeddings.shape[0], (embeddings.shape[0], 1))

    return bias, backward
