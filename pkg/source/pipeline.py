"""Multi-stage training, teacher/student distillation and two-pass verification."""
import copy
import logging
import math
import os
import threading
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import dsp
from classes.enums import StageId, FusionMode, TripletLabel
from classes.loss_output import LossOutput
from classes.speaker_corpus import SpeakerCorpus, Utterance
from classes.speaker_profile import SpeakerProfile
from classes.training_history import TrainingHistory
from classes.training_state import TrainingState
from classes.triplet import TrainingTriplet, CorpusManifest
from classes.verification_result import VerificationResult
from classes.waveform import Waveform, FeatureMatrix
from config import StageConfig
from corpus_io import save_pkl, load_pkl
from errors import InvalidInputError, NoVoicedFramesError, StageOrderError, CheckpointFormatError
from losses import (si_snr, si_snr_with_null, lmcl, batch_triplet_loss, l2_regularization, sv_loss, tase_loss,
                    ts_mse, student_loss, mean_normalized_bias)
from mixture import load_triplet
from models import (Embedder, TdnnEmbedder, TeacherEmbedder, Enhancer, LmclHead, embed, enroll_bias, enhance,
                    enroll, cosine, save_model)
from nnet import Optimizer, Parameter
from to_thread import gather_in_threads

FrameBank = Dict[str, List[np.ndarray]]


def make_optimizer(parameters: List[Parameter], config: StageConfig) -> Optimizer:
    return Optimizer(parameters, config.optimizer, config.lr, momentum=config.momentum)


def max_abs_gradient(parameters: Sequence[Parameter]) -> float:
    return max((float(np.max(np.abs(p.grad))) for p in parameters if p.grad.size), default=0.0)


def load_triplets(manifest: CorpusManifest) -> List[TrainingTriplet]:
    return [load_triplet(record) for record in manifest.records]


def voiced_frame_bank(corpus: SpeakerCorpus) -> FrameBank:
    """Voiced STFT frames of every utterance, grouped by speaker."""
    bank: FrameBank = {}
    for utt in corpus.utterances():
        try:
            bank.setdefault(utt.speaker_id, []).append(dsp.voiced_features(utt.waveform).frames)
        except NoVoicedFramesError:
            logging.warning(f"Skipping {utt.id}: no voiced frames")
    return {spk: frames for spk, frames in bank.items() if frames}


def sample_speaker_batch(bank: FrameBank, batch: int, rng: np.random.Generator,
                         segment: bool = True) -> List[Tuple[str, np.ndarray]]:
    """Two segments from each of max(2, batch // 2) speakers, so every anchor has a positive."""
    speakers = sorted(bank)
    if len(speakers) < 2:
        raise InvalidInputError(f"Training needs at least 2 speakers with voiced audio, got {len(speakers)}.")
    n_speakers = min(len(speakers), max(2, batch // 2))
    items = []
    for s in rng.choice(len(speakers), size=n_speakers, replace=False):
        speaker = speakers[int(s)]
        pool = bank[speaker]
        for p in rng.choice(len(pool), size=2, replace=len(pool) < 2):
            frames = pool[int(p)]
            if segment:
                frames = dsp.random_segment(FeatureMatrix(frames), rng).frames
            items.append((speaker, frames))
    return items


def embedder_step(embedder: Embedder, head: LmclHead, items: List[Tuple[str, np.ndarray]],
                  speaker_index: Dict[str, int], config: StageConfig, teacher: Optional[Embedder] = None) -> float:
    """Accumulates gradients of L_SV (plus the T/S MSE when a teacher is given) for one batch."""
    rows, traces = [], []
    for _, frames in items:
        e, trace = embedder.forward(embedder.prepare(frames))
        rows.append(e)
        traces.append(trace)
    embeddings = np.stack(rows).astype(np.float64)
    labels = np.array([speaker_index[spk] for spk, _ in items])

    triplet_term = batch_triplet_loss(embeddings, labels, config.triplet_margin)
    lmcl_term = lmcl(embeddings, labels, head.normalized(), config.lmcl_margin, config.lmcl_scale)
    l2_term = l2_regularization(embedder.parameters())
    total = sv_loss(triplet_term, lmcl_term, l2_term, config.sv_weights)
    g_embeddings = triplet_term['embeddings'] + config.omega1 * lmcl_term['embeddings']

    if teacher is not None:
        targets = np.stack([teacher.forward(teacher.prepare(frames))[0] for _, frames in items]).astype(np.float64)
        mse = ts_mse(targets, embeddings)
        total = student_loss(total, mse)
        g_embeddings = g_embeddings + mse['student']

    head.backward(config.omega1 * lmcl_term['class_weights'])
    for trace, g in zip(traces, g_embeddings):
        embedder.backward(trace, g)
    for p in embedder.parameters():
        if p.name in total.gradients:
            p.grad += total[p.name].astype(p.grad.dtype)
    return total.value


class EmbedderTrainer:
    """Stage-1 and distillation loop of one embedder; its state can be saved and resumed."""

    def __init__(self, embedder: Embedder, corpus: SpeakerCorpus, config: StageConfig, stage: StageId,
                 teacher: Optional[Embedder] = None, state: Optional[TrainingState] = None) -> None:
        self.embedder: Embedder = embedder
        self.config: StageConfig = config
        self.stage: StageId = stage
        self.teacher: Optional[Embedder] = teacher
        self.rng = np.random.default_rng(config.seed)
        self.bank: FrameBank = voiced_frame_bank(corpus)
        speakers = sorted(self.bank)
        if len(speakers) < 2:
            raise InvalidInputError(f"{stage} needs at least 2 speakers, corpus has {len(speakers)}.")
        self.speaker_index: Dict[str, int] = {spk: i for i, spk in enumerate(speakers)}
        self.head = LmclHead(len(speakers), embedder.embedding_dim, seed=config.seed, name=f"{embedder.name}.lmcl",
                             dtype=embedder.dtype)
        self.optimizer: Optimizer = make_optimizer(embedder.parameters() + self.head.parameters(), config)
        self.steps_per_epoch: int = max(1, math.ceil(sum(len(v) for v in self.bank.values()) / config.batch))
        self.history = TrainingHistory(stage)
        if state is not None:
            self.restore(state)

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(stage={self.stage}, embedder={self.embedder.name!r}, steps={self.optimizer.steps})"

    def accumulate(self) -> float:
        """Draws the next batch and accumulates its gradients without updating."""
        items = sample_speaker_batch(self.bank, self.config.batch, self.rng)
        return embedder_step(self.embedder, self.head, items, self.speaker_index, self.config, self.teacher)

    def step(self) -> float:
        loss = self.accumulate()
        self.history.record_step(loss, max_abs_gradient(self.embedder.parameters()))
        self.optimizer.step()
        return loss

    def train(self) -> TrainingHistory:
        logging.info(f"[{self.stage}] training {self.embedder!r} on {len(self.speaker_index)} speakers, "
                     f"{self.steps_per_epoch} steps per epoch")
        for _ in range(self.config.epochs):
            for _ in range(self.steps_per_epoch):
                self.step()
            self.history.end_epoch()
        self.embedder.stage = str(self.stage)
        return self.history

    def training_state(self) -> TrainingState:
        return TrainingState(self.stage, sorted(self.speaker_index), self.head.weight.value.copy(),
                             self.optimizer.state_dict(), copy.deepcopy(self.rng.bit_generator.state))

    def restore(self, state: TrainingState) -> None:
        if state.speakers != sorted(self.speaker_index):
            raise InvalidInputError(f"Saved state of {self.embedder.name} was trained on a different speaker set.")
        self.head.weight.assign(np.asarray(state.head_weight, dtype=self.head.weight.value.dtype))
        self.optimizer.load_state_dict(state.optimizer)
        self.rng.bit_generator.state = copy.deepcopy(state.rng_state)
        logging.info(f"Resumed {self!r}")


def train_embedder(embedder: Embedder, corpus: SpeakerCorpus, config: StageConfig, stage: StageId,
                   teacher: Optional[Embedder] = None) -> TrainingHistory:
    return EmbedderTrainer(embedder, corpus, config, stage, teacher).train()


def training_state_path(checkpoint: str) -> str:
    return f"{checkpoint}.state"


def load_training_state(checkpoint: str) -> Optional[TrainingState]:
    """State saved next to a checkpoint, or None when there is none."""
    path = training_state_path(checkpoint)
    if not os.path.exists(path):
        return None
    state = load_pkl(path)
    if not isinstance(state, TrainingState):
        raise CheckpointFormatError(f"{path} does not hold a training state.")
    return state


def _save_outputs(config: StageConfig, outputs: Dict[str, Tuple[object, TrainingHistory]],
                  states: Optional[Dict[str, TrainingState]] = None) -> None:
    if not config.out:
        return
    for name, (model, history) in outputs.items():
        filename = os.path.join(config.out, f"{name}.ckpt")
        save_model(model, filename)
        history.save(os.path.join(config.out, f"{name}.history.tsv"))
        if states and name in states:
            save_pkl(states[name], training_state_path(filename))


def stage1_pretrain(config: StageConfig, corpus: SpeakerCorpus, student: Optional[Embedder] = None,
                    teacher: Optional[Embedder] = None, states: Optional[Dict[str, TrainingState]] = None,
                    ) -> Tuple[Embedder, Embedder, Dict[str, TrainingHistory]]:
    """Trains the student and the teacher embedder with L_SV, resuming from `states` where given."""
    states = states or {}
    trainers = {
        'student': EmbedderTrainer(student or TdnnEmbedder(seed=config.seed, name='student'), corpus, config,
                                   StageId.PRETRAIN, state=states.get('student')),
        'teacher': EmbedderTrainer(teacher or TeacherEmbedder(seed=config.seed + 1, name='teacher'), corpus, config,
                                   StageId.PRETRAIN, state=states.get('teacher')),
    }
    histories = {name: trainer.train() for name, trainer in trainers.items()}
    _save_outputs(config, {name: (trainer.embedder, histories[name]) for name, trainer in trainers.items()},
                  {name: trainer.training_state() for name, trainer in trainers.items()})
    return trainers['student'].embedder, trainers['teacher'].embedder, histories


def ts_distill(teacher: Embedder, student: Embedder, corpus: SpeakerCorpus,
               config: StageConfig) -> Tuple[Embedder, TrainingHistory]:
    """Trains the student with L_SV + MSE to the frozen teacher's embeddings."""
    if teacher.embedding_dim != student.embedding_dim:
        raise InvalidInputError(
            f"Teacher embeds to {teacher.embedding_dim} dims, student to {student.embedding_dim}.")
    trainer = EmbedderTrainer(student, corpus, config, StageId.TS_DISTILL, teacher=teacher)
    history = trainer.train()
    student.distilled = True
    _save_outputs(config, {'net1': (student, history)}, {'net1': trainer.training_state()})
    return student, history


def mean_teacher_cosine(teacher: Embedder, student: Embedder, utterances: List[Utterance]) -> float:
    scores = []
    for utt in utterances:
        try:
            scores.append(cosine(embed(teacher, utt.waveform), embed(student, utt.waveform)))
        except NoVoicedFramesError:
            continue
    if not scores:
        raise InvalidInputError("No utterance with voiced frames to compare embeddings on.")
    return float(np.mean(scores))


def joint_step(enhancer: Enhancer, net1: Embedder, head: LmclHead, batch: List[TrainingTriplet],
               speaker_index: Dict[str, int], config: StageConfig, rng: np.random.Generator) -> float:
    """Accumulates gradients of L_TASE for a batch of triplets through the enhancer and net 1."""
    rows, traces, labels, pending = [], [], [], []
    enhancement_total = 0.0
    for triplet in batch:
        try:
            frames = [dsp.voiced_features(w).frames for w in triplet.enrollment]
        except NoVoicedFramesError:
            logging.warning(f"Skipping triplet {triplet.id}: an enrollment has no voiced frames")
            continue
        first = len(rows)
        for f in frames:
            e, trace = net1.forward(net1.prepare(f))
            rows.append(e.astype(np.float64))
            traces.append(trace)
            labels.append(speaker_index[triplet.enroll_speaker])
        bias, bias_backward = mean_normalized_bias(np.stack(rows[first:]))
        output, enhancer_trace = enhancer.forward(triplet.test_mixture.samples, bias)
        enhancement = si_snr_with_null(output, triplet.label, triplet.reference, rng, config.si_snr_mode).negate()
        enhancement_total += enhancement.value
        pending.append((slice(first, len(rows)), bias_backward, enhancer_trace, enhancement['s_e']))
    if not pending:
        logging.warning("No usable triplet in batch")
        return float('nan')
    n_used = len(pending)

    embeddings = np.stack(rows)
    labels = np.array(labels)
    triplet_term = batch_triplet_loss(embeddings, labels, config.triplet_margin)
    lmcl_term = lmcl(embeddings, labels, head.normalized(), config.lmcl_margin, config.lmcl_scale)
    l2_term = l2_regularization(net1.parameters())
    total = tase_loss(LossOutput(enhancement_total / n_used), sv_loss(triplet_term, lmcl_term, l2_term, config.sv_weights),
                      config.tase_si_snr_weight, config.tase_sv_weight)

    w_sv = config.tase_sv_weight
    g_embeddings = w_sv * (triplet_term['embeddings'] + config.omega1 * lmcl_term['embeddings'])
    for rows_of, bias_backward, enhancer_trace, g_output in pending:
        g_bias = enhancer.backward(enhancer_trace, config.tase_si_snr_weight * g_output / n_used)
        g_embeddings[rows_of] += bias_backward(g_bias)
    head.backward(w_sv * config.omega1 * lmcl_term['class_weights'])
    for trace, g in zip(traces, g_embeddings):
        net1.backward(trace, g)
    for p in net1.parameters():
        if p.name in total.gradients:
            p.grad += total[p.name].astype(p.grad.dtype)
    return total.value


def stage2_joint_train(enhancer: Enhancer, net1: Optional[Embedder], triplets: List[TrainingTriplet],
                       config: StageConfig) -> Tuple[Enhancer, Embedder, TrainingHistory]:
    """Joint training of the enhancer and net 1 with L_TASE on target and nontarget triplets."""
    if config.from_scratch:
        net1 = TdnnEmbedder(seed=config.seed, name=net1.name if net1 is not None else 'net1')
        logging.info("Joint training from scratch: net 1 freshly initialised")
    elif net1 is None:
        raise InvalidInputError("Joint training needs a net 1 checkpoint unless from_scratch is set.")
    elif not net1.distilled and not config.allow_undistilled:
        raise StageOrderError(f"{net1.name} is not tagged as distilled; run distillation first or allow_undistilled.")
    if not triplets:
        raise InvalidInputError("Joint training needs at least one triplet.")
    n_nontarget = sum(1 for t in triplets if t.label is TripletLabel.NONTARGET)
    if n_nontarget == 0 and 0 < config.nontarget_ratio < math.inf:
        logging.warning(f"No nontarget triplets among {len(triplets)}; training proceeds on target triplets only")

    speakers = sorted({t.enroll_speaker for t in triplets})
    if len(speakers) < 2:
        raise InvalidInputError(f"Joint training needs at least 2 enrolled speakers, got {len(speakers)}.")
    speaker_index = {spk: i for i, spk in enumerate(speakers)}
    head = LmclHead(len(speakers), net1.embedding_dim, seed=config.seed, name=f"{net1.name}.lmcl", dtype=net1.dtype)
    optimizer = make_optimizer(enhancer.parameters() + net1.parameters() + head.parameters(), config)
    rng = np.random.default_rng(config.seed)

    logging.info(f"[{StageId.JOINT_TRAIN}] {len(triplets)} triplets ({n_nontarget} nontarget), {enhancer!r}")
    history = TrainingHistory(StageId.JOINT_TRAIN)
    for _ in range(config.epochs):
        order = rng.permutation(len(triplets))
        for start in range(0, len(order), config.batch):
            batch = [triplets[int(i)] for i in order[start:start + config.batch]]
            loss = joint_step(enhancer, net1, head, batch, speaker_index, config, rng)
            history.record_step(loss, max_abs_gradient(enhancer.parameters() + net1.parameters()))
            optimizer.step()
        history.end_epoch()
    enhancer.stage = net1.stage = str(StageId.JOINT_TRAIN)
    _save_outputs(config, {'enhancer': (enhancer, history), 'net1': (net1, history)})
    return enhancer, net1, history


def finetune_banks(net2: Embedder, enhancer: Enhancer, triplets: List[TrainingTriplet],
                   net1: Optional[Embedder]) -> Tuple[FrameBank, FrameBank]:
    """Voiced frames of each unprocessed test mixture (raw) and of its enhanced version, by enrolled speaker."""
    anchor = net1 or net2
    raw: FrameBank = {}
    enhanced: FrameBank = {}
    for t in triplets:
        if not t.is_target:
            continue
        try:
            bias = enroll_bias(anchor, t.enrollment)
            enhanced_frames = dsp.voiced_features(enhance(enhancer, t.test_mixture, bias)).frames
            raw_frames = dsp.voiced_features(t.test_mixture).frames
        except NoVoicedFramesError:
            logging.warning(f"Skipping triplet {t.id} for fine-tuning: no voiced frames")
            continue
        raw.setdefault(t.enroll_speaker, []).append(raw_frames)
        enhanced.setdefault(t.enroll_speaker, []).append(enhanced_frames)
    return raw, enhanced


def finetune_step(net2: Embedder, items: List[Tuple[str, np.ndarray]], config: StageConfig) -> float:
    rows, traces = [], []
    for _, frames in items:
        e, trace = net2.forward(net2.prepare(frames))
        rows.append(e)
        traces.append(trace)
    labels = np.array([spk for spk, _ in items])
    loss = batch_triplet_loss(np.stack(rows).astype(np.float64), labels, config.triplet_margin)
    for trace, g in zip(traces, loss['embeddings']):
        net2.backward(trace, g)
    return loss.value


def stage3_finetune(net2: Embedder, enhancer: Enhancer, triplets: List[TrainingTriplet], config: StageConfig,
                    net1: Optional[Embedder] = None) -> Tuple[Embedder, TrainingHistory]:
    """Fine-tunes net 2 with the triplet loss on equal shares of raw and enhanced speech.

    The enhancer is frozen; its bias comes from net 1 when given, else from net 2
    before any update.
    """
    raw, enhanced = finetune_banks(net2, enhancer, triplets, net1)
    speakers = sorted(raw)
    if len(speakers) < 2:
        raise InvalidInputError(f"Fine-tuning needs target triplets of at least 2 speakers, got {len(speakers)}.")
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(net2.parameters(), config)
    steps = max(1, math.ceil(2 * sum(len(v) for v in raw.values()) / config.batch))

    history = TrainingHistory(StageId.FINETUNE)
    for _ in range(config.epochs):
        for _ in range(steps):
            n_speakers = min(len(speakers), max(2, config.batch // 2))
            items = []
            for s in rng.choice(len(speakers), size=n_speakers, replace=False):
                speaker = speakers[int(s)]
                # one raw and one enhanced segment per speaker
                for bank in (raw, enhanced):
                    pool = bank[speaker]
                    frames = pool[int(rng.integers(len(pool)))]
                    items.append((speaker, dsp.random_segment(FeatureMatrix(frames), rng).frames))
            loss = finetune_step(net2, items, config)
            history.record_step(loss, max_abs_gradient(net2.parameters()))
            optimizer.step()
        history.end_epoch()
    net2.stage = str(StageId.FINETUNE)
    _save_outputs(config, {'net2': (net2, history)})
    return net2, history


def second_pass_bias(profile: SpeakerProfile, enhancer: Enhancer, net1: Optional[Embedder]) -> np.ndarray:
    if profile.enhanced_bias is not None:
        return profile.enhanced_bias
    if net1 is None:
        raise InvalidInputError(f"Profile {profile.speaker_id} has no second-pass bias and no net 1 to build it.")
    return enroll_bias(net1, [enhance(enhancer, w, profile.bias) for w in profile.enrollments])


SUPPRESSED_TEST_SCORE = -1.0


def _score_enhanced_test(net2: Embedder, reference: np.ndarray, enhanced: Waveform) -> float:
    """Cosine of an enhanced test against the reference; a fully suppressed test gets the lowest score."""
    try:
        return cosine(reference, embed(net2, enhanced))
    except NoVoicedFramesError:
        logging.debug(f"Enhanced test has no voiced frames, scoring {SUPPRESSED_TEST_SCORE}")
        return SUPPRESSED_TEST_SCORE


def verify_two_pass(profile: SpeakerProfile, test: Waveform, enhancer: Enhancer, net2: Embedder,
                    fusion: FusionMode = FusionMode.MEAN, net1: Optional[Embedder] = None) -> VerificationResult:
    """Pass 1 scores the test enhanced with the raw-enrolment bias against the raw enrolments.

    Pass 2 enhances each enrolment with the raw bias, re-enhances the test with the
    bias of those enhanced enrolments and scores it against them. A test the enhancer
    silences is a rejection, not a failure; enrolments without voiced frames still raise.
    """
    reference1 = enroll_bias(net2, profile.enrollments)
    enhanced_enrollments = [enhance(enhancer, w, profile.bias) for w in profile.enrollments]
    reference2 = enroll_bias(net2, enhanced_enrollments)
    bias2 = second_pass_bias(profile, enhancer, net1)

    pass1 = _score_enhanced_test(net2, reference1, enhance(enhancer, test, profile.bias))
    pass2 = _score_enhanced_test(net2, reference2, enhance(enhancer, test, bias2))
    return VerificationResult(pass1, pass2, fusion)


def embedding_only_score(net: Embedder, enrollments: List[Waveform], test: Waveform) -> float:
    return cosine(enroll_bias(net, enrollments), embed(net, test))


def fused_embedding_score(net_a: Embedder, net_b: Embedder, enrollments: List[Waveform], test: Waveform) -> float:
    """Mean score of two embedders, e.g. a distilled and a non-distilled one."""
    return (embedding_only_score(net_a, enrollments, test) + embedding_only_score(net_b, enrollments, test)) / 2


class Verifier:
    """Scores a test waveform against an enrolled speaker's utterances."""
    name = 'verifier'

    def score(self, speaker_id: str, enrollments: List[Utterance], test: Waveform) -> float:
        raise NotImplementedError

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(name={self.name!r})"


class EmbeddingVerifier(Verifier):
    name = 'embedding'

    def __init__(self, net: Embedder) -> None:
        self.net: Embedder = net

    def score(self, speaker_id: str, enrollments: List[Utterance], test: Waveform) -> float:
        return embedding_only_score(self.net, [u.waveform for u in enrollments], test)


class FusedEmbeddingVerifier(Verifier):
    name = 'fused-embedding'

    def __init__(self, net_a: Embedder, net_b: Embedder) -> None:
        self.net_a: Embedder = net_a
        self.net_b: Embedder = net_b

    def score(self, speaker_id: str, enrollments: List[Utterance], test: Waveform) -> float:
        return fused_embedding_score(self.net_a, self.net_b, [u.waveform for u in enrollments], test)


class TwoPassVerifier(Verifier):
    name = 'two-pass'

    def __init__(self, net1: Embedder, net2: Embedder, enhancer: Enhancer, fusion: Optional[FusionMode] = None,
                 profiles: Optional[Dict[str, SpeakerProfile]] = None, config: Optional[StageConfig] = None) -> None:
        self.net1: Embedder = net1
        self.net2: Embedder = net2
        self.enhancer: Enhancer = enhancer
        # an explicit fusion wins over the config's
        if fusion is None:
            fusion = config.fusion if config is not None else FusionMode.MEAN
        self.fusion: FusionMode = fusion
        self.profiles: Dict[str, SpeakerProfile] = dict(profiles or {})
        self._lock = threading.Lock()

    def profile(self, speaker_id: str, enrollments: List[Utterance]) -> SpeakerProfile:
        key = f"{speaker_id}|{','.join(sorted(u.id for u in enrollments))}"
        with self._lock:
            cached = self.profiles.get(key)
        if cached is None:
            cached = enroll(speaker_id, enrollments, self.net1, self.enhancer)
            with self._lock:
                self.profiles[key] = cached
        return cached

    def verify(self, speaker_id: str, enrollments: List[Utterance], test: Waveform) -> VerificationResult:
        profile = self.profile(speaker_id, enrollments)
        return verify_two_pass(profile, test, self.enhancer, self.net2, self.fusion, self.net1)

    def score(self, speaker_id: str, enrollments: List[Utterance], test: Waveform) -> float:
        return self.verify(speaker_id, enrollments, test).fused_score


def si_snr_improvement(enhancer: Enhancer, net1: Embedder, triplets: List[TrainingTriplet], workers: int = 1) -> float:
    """Mean standard-mode SI-SNR gain of the enhanced output over the unprocessed mixture, target triplets only."""
    targets = [t for t in triplets if t.is_target]
    if not targets:
        raise InvalidInputError("No target triplets to measure SI-SNR improvement on.")

    def gain(t: TrainingTriplet) -> float:
        output = enhance(enhancer, t.test_mixture, enroll_bias(net1, t.enrollment))
        return si_snr(output, t.reference).value - si_snr(t.test_mixture, t.reference).value

    return float(np.mean(gather_in_threads(gain, targets, workers=workers)))


def nontarget_power_ratio(enhancer: Enhancer, net1: Embedder, triplets: List[TrainingTriplet], workers: int = 1) -> float:
    """Mean output-to-input power ratio on nontarget triplets."""
    nontargets = [t for t in triplets if not t.is_target]
    if not nontargets:
        raise InvalidInputError("No nontarget triplets to measure suppression on.")

    def ratio(t: TrainingTriplet) -> float:
        output = enhance(enhancer, t.test_mixture, enroll_bias(net1, t.enrollment))
        return output.power() / t.test_mixture.power()

    return float(np.mean(gather_in_threads(ratio, nontargets, workers=workers)))
