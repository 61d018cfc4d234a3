"""Trial generation, scoring, EER/DET metrics, SNR banding and reports."""
import io
import json
import logging
import math
import os
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from rich.console import Console
from rich.table import Table

from classes.enums import SnrBand, TripletLabel
from classes.speaker_corpus import Utterance
from classes.trial import Trial, ScoredTrial, DetPoint
from errors import InvalidInputError, InsufficientDataError, TaseError
from pipeline import Verifier
from to_thread import gather_in_threads

DEFAULT_TARGET_TRIALS = 100
DEFAULT_NONTARGET_TRIALS = 1000

Labels = Sequence[Union[bool, TripletLabel]]


def generate_trials(
        utterances: List[Utterance],
        n_target: int = DEFAULT_TARGET_TRIALS,
        n_nontarget: int = DEFAULT_NONTARGET_TRIALS,
        rng: Optional[np.random.Generator] = None,
        enroll_count: int = 3,
) -> List[Trial]:
    """Exactly n_target + n_nontarget trials, shuffled.

    Enrolments use single-speaker utterances only; a speaker is eligible when it
    has `enroll_count` of them besides the test utterance.
    """
    rng = rng or np.random.default_rng(0)
    utterances = sorted(utterances, key=lambda u: u.id)
    enrol_pool: Dict[str, List[Utterance]] = {}
    for utt in utterances:
        if utt.is_single_speaker:
            enrol_pool.setdefault(utt.speaker_id, []).append(utt)
    speakers = sorted(enrol_pool)

    def enrollable(speaker: str, test: Utterance) -> List[Utterance]:
        return [u for u in enrol_pool[speaker] if u.id != test.id]

    target_pairs = [(spk, utt) for utt in utterances for spk in sorted(set(utt.speaker_ids))
                    if spk in enrol_pool and len(enrollable(spk, utt)) >= enroll_count]
    nontarget_pairs = [(spk, utt) for utt in utterances for spk in speakers
                       if spk not in utt.speaker_ids and len(enrol_pool[spk]) >= enroll_count]
    counts = {
        'speakers': len(speakers),
        'target_pairs': len(target_pairs),
        'nontarget_pairs': len(nontarget_pairs),
        'n_target': n_target,
        'n_nontarget': n_nontarget,
    }
    if len(speakers) < 2:
        raise InsufficientDataError("Trial generation needs at least 2 enrollable speakers", counts)
    if (n_target > 0 and not target_pairs) or (n_nontarget > 0 and not nontarget_pairs):
        raise InsufficientDataError("Not enough utterances for the requested trials", counts)

    def draw(pairs, count: int, label: TripletLabel) -> List[Trial]:
        trials = []
        for i in rng.choice(len(pairs), size=count, replace=count > len(pairs)):
            speaker, test = pairs[int(i)]
            pool = enrollable(speaker, test)
            chosen = sorted(int(k) for k in rng.choice(len(pool), size=enroll_count, replace=False))
            trials.append(Trial({
                'enroll_spk': speaker,
                'enroll_utts': [pool[k].id for k in chosen],
                'test_utt': test.id,
                'label': str(label),
                'snr_db': test.snr_db,
            }))
        return trials

    trials = draw(target_pairs, n_target, TripletLabel.TARGET) + draw(nontarget_pairs, n_nontarget,
                                                                       TripletLabel.NONTARGET)
    order = rng.permutation(len(trials))
    logging.info(f"Generated {n_target} target and {n_nontarget} nontarget trials over {len(speakers)} speakers")
    return [trials[int(i)] for i in order]


def pick_enrollments(utterances: List[Utterance], speaker: str, count: int,
                     rng: np.random.Generator) -> List[Utterance]:
    """`count` single-speaker utterances of a speaker, clean ones (no added noise) first."""
    own = sorted((u for u in utterances if u.is_single_speaker and u.speaker_id == speaker), key=lambda u: u.id)
    if len(own) < count:
        raise InvalidInputError(f"Speaker {speaker} has {len(own)} single-speaker utterances, {count} needed.")
    clean = [u for u in own if math.isinf(u.snr_db) or math.isnan(u.snr_db)]
    noisy = [u for u in own if not (math.isinf(u.snr_db) or math.isnan(u.snr_db))]
    chosen = [clean[int(i)] for i in rng.permutation(len(clean))][:count]
    if len(chosen) < count:
        chosen += [noisy[int(i)] for i in rng.permutation(len(noisy))][:count - len(chosen)]
    return sorted(chosen, key=lambda u: u.id)


def score_trials(trials: List[Trial], utterances: Dict[str, Utterance], verifier: Verifier,
                 workers: int = 1) -> List[ScoredTrial]:
    """One ScoredTrial per trial, in input order; failures are recorded, not raised."""

    def run(trial: Trial) -> ScoredTrial:
        try:
            enrollments = [utterances[u] for u in trial.enroll_utts]
            test = utterances[trial.test_utt]
        except KeyError as e:
            logging.error(f"Cannot score {trial!r}: missing utterance {e.args[0]}")
            return ScoredTrial(trial, error=f"missing utterance {e.args[0]}")
        try:
            return ScoredTrial(trial, verifier.score(trial.enroll_spk, enrollments, test.waveform))
        except TaseError as e:
            logging.error(f"Cannot score {trial!r}: {e}")
            return ScoredTrial(trial, error=str(e))

    scored = gather_in_threads(run, trials, workers=workers, description="Scoring")
    failed = sum(1 for s in scored if not s.ok)
    if failed:
        logging.warning(f"{failed} of {len(scored)} trials could not be scored")
    return scored


def _split_scores(scores: Sequence[float], labels: Labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    is_target = np.array([label is TripletLabel.TARGET if isinstance(label, TripletLabel) else bool(label)
                          for label in labels], dtype=bool)
    if is_target.size != scores.size:
        raise InvalidInputError(f"{scores.size} scores for {is_target.size} labels.")
    if not is_target.any() or is_target.all():
        raise InvalidInputError("EER and DET need at least one target and one nontarget trial.")
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("Scores must be finite.")
    return np.sort(scores[is_target]), np.sort(scores[~is_target])


def operating_points(scores: Sequence[float], labels: Labels) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, far, miss) at every distinct score and at +inf; accept when score >= threshold."""
    targets, nontargets = _split_scores(scores, labels)
    thresholds = np.append(np.unique(np.concatenate([targets, nontargets])), np.inf)
    miss = np.searchsorted(targets, thresholds, side='left') / targets.size
    far = (nontargets.size - np.searchsorted(nontargets, thresholds, side='left')) / nontargets.size
    return thresholds, far, miss


def compute_eer(scores: Sequence[float], labels: Labels) -> Tuple[float, float]:
    """Equal error rate and its threshold.

    Takes the first operating point where far - miss <= 0; an exact crossing is
    returned as is, otherwise far and threshold are interpolated linearly from
    the previous point.
    """
    thresholds, far, miss = operating_points(scores, labels)
    diff = far - miss
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0:
        return float(far[k]), float(thresholds[k])
    w = diff[k - 1] / (diff[k - 1] - diff[k])
    eer = far[k - 1] + w * (far[k] - far[k - 1])
    if math.isinf(thresholds[k]):
        threshold = thresholds[k - 1]
    else:
        threshold = thresholds[k - 1] + w * (thresholds[k] - thresholds[k - 1])
    return float(eer), float(threshold)


def det_curve(scores: Sequence[float], labels: Labels) -> List[DetPoint]:
    thresholds, far, miss = operating_points(scores, labels)
    return [DetPoint(t, f, m) for t, f, m in zip(thresholds, far, miss)]


def far_at_miss(scores: Sequence[float], labels: Labels, miss_rate: float) -> float:
    """FAR where the miss rate reaches `miss_rate`, interpolated along the DET curve."""
    if not 0.0 <= miss_rate <= 1.0:
        raise InvalidInputError(f"miss_rate must be in [0, 1], got {miss_rate}.")
    _, far, miss = operating_points(scores, labels)
    # last operating point whose miss rate does not exceed the target
    j = int(np.flatnonzero(miss <= miss_rate)[-1])
    if miss[j] == miss_rate or j == miss.size - 1:
        return float(far[j])
    w = (miss_rate - miss[j]) / (miss[j + 1] - miss[j])
    return float(far[j] + w * (far[j + 1] - far[j]))


def split_by_snr(trials: Sequence[Union[Trial, ScoredTrial]]) -> Dict[SnrBand, list]:
    """Partition by the test utterance's SNR band; unannotated trials go to band D."""
    bands: Dict[SnrBand, list] = {band: [] for band in SnrBand}
    unannotated = 0
    for item in trials:
        trial = item.trial if isinstance(item, ScoredTrial) else item
        if not trial.has_snr:
            unannotated += 1
            bands[SnrBand.D].append(item)
        else:
            bands[trial.band()].append(item)
    if unannotated:
        logging.warning(f"{unannotated} trials have no SNR annotation; routed to band {SnrBand.D.name}")
    return bands


def _scores_and_labels(scored: Sequence[ScoredTrial]) -> Tuple[List[float], List[bool]]:
    usable = [s for s in scored if s.ok]
    return [s.score for s in usable], [s.trial.is_target for s in usable]


def _summary_row(scored: Sequence[ScoredTrial]) -> dict:
    scores, labels = _scores_and_labels(scored)
    row = {
        'n_target': sum(labels),
        'n_nontarget': len(labels) - sum(labels),
        'n_failed': sum(1 for s in scored if not s.ok),
        'eer': None,
        'threshold': None,
        'det': [],
    }
    if row['n_target'] and row['n_nontarget']:
        row['eer'], row['threshold'] = compute_eer(scores, labels)
        row['det'] = [p.to_payload() for p in det_curve(scores, labels)]
    return row


def evaluate(scored: Sequence[ScoredTrial], by_snr: bool = False) -> dict:
    """Pooled metrics and, when by_snr, metrics per SNR band."""
    results = {'pooled': _summary_row(scored), 'bands': {}}
    if by_snr:
        for band, members in split_by_snr(scored).items():
            results['bands'][band.name] = _summary_row(members)
    return results


def render_summary(results: dict, title: str = 'Verification') -> str:
    table = Table(title=title)
    for column in ('condition', 'targets', 'nontargets', 'failed', 'EER %', 'threshold'):
        table.add_column(column, justify='right' if column != 'condition' else 'left')
    rows = [('pooled', results['pooled'])] + [(f"SNR {name}", row) for name, row in results['bands'].items()]
    for name, row in rows:
        eer = 'n/a' if row['eer'] is None else f"{100 * row['eer']:.2f}"
        threshold = 'n/a' if row['threshold'] is None else f"{row['threshold']:.4f}"
        table.add_row(name, str(row['n_target']), str(row['n_nontarget']), str(row['n_failed']), eer, threshold)
    console = Console(file=io.StringIO(), width=100, record=True)
    console.print(table)
    return console.export_text()


def write_report(scored: Sequence[ScoredTrial], out_dir: str, by_snr: bool = True, title: str = 'Verification') -> dict:
    """Writes report.txt (summary table) and results.json (per-trial scores, EERs, DET points)."""
    results = evaluate(scored, by_snr)
    results['trials'] = [
        {**s.trial.to_payload(), 'score': s.score, 'error': s.error}
        for s in scored
    ]
    for entry in results['trials']:
        if isinstance(entry['snr_db'], float) and not math.isfinite(entry['snr_db']):
            entry['snr_db'] = str(entry['snr_db'])
    os.makedirs(out_dir, exist_ok=True)
    summary = render_summary(results, title)
    with open(os.path.join(out_dir, 'report.txt'), 'w', encoding='utf-8') as out:
        out.write(summary)
    with open(os.path.join(out_dir, 'results.json'), 'w', encoding='utf-8') as out:
        json.dump(results, out, indent=2)
    logging.info(f"Report written to {out_dir}")
    return results
