import math
import os

import numpy as np
import pytest

import dsp
import evaluation
import mixture
import pipeline
import synthetic
from classes.enums import StageId, FusionMode, TripletLabel
from classes.speaker_corpus import Utterance
from classes.trial import Trial
from classes.triplet import TrainingTriplet
from classes.verification_result import VerificationResult
from classes.waveform import Waveform
from config import StageConfig
from corpus_io import save_pkl
from errors import InvalidInputError, StageOrderError, CheckpointFormatError
from losses import ts_mse
from models import TdnnEmbedder, TeacherEmbedder, Enhancer, LmclHead, enroll, load_model, save_model, embed, cosine


DIM = 16
F64 = np.float64


def small_net(seed: int = 0, name: str = 'net1', dtype=F64, distilled: bool = False) -> TdnnEmbedder:
    net = TdnnEmbedder(channels=8, embedding_dim=DIM, seed=seed, name=name, dtype=dtype)
    net.distilled = distilled
    return net


def small_enhancer(seed: int = 0, dtype=F64) -> Enhancer:
    return Enhancer(encoder_channels=8, mask_blocks=2, embedding_dim=DIM, seed=seed, dtype=dtype)


class SilencingEnhancer(Enhancer):
    """Outputs silence for inputs of one length."""

    def __init__(self, silenced_length: int) -> None:
        super().__init__(encoder_channels=8, mask_blocks=2, embedding_dim=DIM, seed=0, dtype=F64)
        self.silenced_length = silenced_length

    def forward(self, samples, bias):
        output, trace = super().forward(samples, bias)
        if len(samples) == self.silenced_length:
            output = output * 0.0
        return output, trace


class IdentityEnhancer(Enhancer):
    def __init__(self) -> None:
        super().__init__(encoder_channels=8, mask_blocks=1, embedding_dim=DIM, seed=0, dtype=F64)

    def forward(self, samples, bias):
        return np.array(samples, dtype=F64), None


class ConstantTeacher(TeacherEmbedder):
    def __init__(self, direction: np.ndarray) -> None:
        super().__init__(channels=8, embedding_dim=DIM, seed=0, name='constant')
        self.direction = direction

    def forward(self, x):
        return self.direction.copy(), None


@pytest.fixture(scope='module')
def triplets(toy_corpus):
    return mixture.generate_triplets(toy_corpus, 8, seed=5, nontarget_ratio=1.0, enroll_count=2, workers=1)


@pytest.fixture(scope='module')
def target_triplets(toy_corpus):
    return mixture.generate_triplets(toy_corpus, 8, seed=6, nontarget_ratio=math.inf, enroll_count=2, workers=1)


def test_speaker_batch_pairs_every_speaker(toy_corpus, rng):
    bank = pipeline.voiced_frame_bank(toy_corpus)
    items = pipeline.sample_speaker_batch(bank, 4, rng)
    speakers = [spk for spk, _ in items]
    assert len(items) == 4
    assert all(speakers.count(s) == 2 for s in set(speakers))
    assert all(100 <= len(frames) <= 200 for _, frames in items)


def test_speaker_batch_needs_two_speakers(toy_corpus, rng):
    bank = pipeline.voiced_frame_bank(toy_corpus)
    single = {toy_corpus.speakers[0]: bank[toy_corpus.speakers[0]]}
    with pytest.raises(InvalidInputError):
        pipeline.sample_speaker_batch(single, 4, rng)


def test_pretrain_trains_and_saves_both_embedders(toy_corpus, tmp_path):
    config = StageConfig(StageId.PRETRAIN, epochs=1, batch=4, out=str(tmp_path))
    student = small_net(name='student', dtype=np.float32)
    teacher = TeacherEmbedder(channels=16, embedding_dim=DIM, seed=1, name='teacher')
    before = student.network.state_dict()
    student, teacher, histories = pipeline.stage1_pretrain(config, toy_corpus, student, teacher)
    assert set(histories) == {'student', 'teacher'}
    assert all(len(h.epoch_losses) == 1 and np.isfinite(h.epoch_losses[0]) for h in histories.values())
    assert student.stage == 'pretrain'
    assert any(not np.array_equal(before[k], v) for k, v in student.network.state_dict().items())
    for name in ('student', 'teacher'):
        assert os.path.exists(tmp_path / f"{name}.ckpt")
        assert os.path.exists(tmp_path / f"{name}.history.tsv")
        state = pipeline.load_training_state(str(tmp_path / f"{name}.ckpt"))
        assert state.stage is StageId.PRETRAIN and state.speakers == toy_corpus.speakers
    assert isinstance(load_model(str(tmp_path / 'teacher.ckpt')), TeacherEmbedder)


def test_distillation_tags_the_student(toy_corpus):
    config = StageConfig(StageId.TS_DISTILL, epochs=1, batch=4)
    teacher = TeacherEmbedder(channels=16, embedding_dim=DIM, seed=1)
    student, history = pipeline.ts_distill(teacher, small_net(dtype=np.float32), toy_corpus, config)
    assert student.distilled
    assert history.stage is StageId.TS_DISTILL
    assert np.isfinite(history.epoch_losses[0])
    assert -1.0 <= pipeline.mean_teacher_cosine(teacher, student, toy_corpus.utterances()[:4]) <= 1.0


def test_distillation_needs_matching_embedding_dims(toy_corpus):
    teacher = TeacherEmbedder(channels=16, embedding_dim=DIM + 1)
    with pytest.raises(InvalidInputError):
        pipeline.ts_distill(teacher, small_net(), toy_corpus, StageConfig(StageId.TS_DISTILL))


def test_first_joint_batch_reaches_both_networks(triplets, toy_corpus):
    enhancer, net1 = small_enhancer(), small_net(distilled=True)
    speakers = sorted({t.enroll_speaker for t in triplets})
    head = LmclHead(len(speakers), DIM, dtype=F64)
    config = StageConfig(StageId.JOINT_TRAIN, batch=4)
    loss = pipeline.joint_step(enhancer, net1, head, triplets[:4], {s: i for i, s in enumerate(speakers)}, config,
                               np.random.default_rng(0))
    assert np.isfinite(loss)
    assert any(np.abs(p.grad).max() > 0 for p in enhancer.parameters())
    assert any(np.abs(p.grad).max() > 0 for p in net1.parameters())
    assert np.abs(head.weight.grad).max() > 0


def test_joint_training_requires_distilled_net1(triplets):
    with pytest.raises(StageOrderError):
        pipeline.stage2_joint_train(small_enhancer(), small_net(), triplets, StageConfig(StageId.JOINT_TRAIN))


def test_joint_training_requires_net1_unless_from_scratch(triplets):
    with pytest.raises(InvalidInputError):
        pipeline.stage2_joint_train(small_enhancer(), None, triplets, StageConfig(StageId.JOINT_TRAIN))


def test_joint_training_needs_triplets():
    with pytest.raises(InvalidInputError):
        pipeline.stage2_joint_train(small_enhancer(), small_net(distilled=True), [], StageConfig(StageId.JOINT_TRAIN))


def test_joint_training_runs_with_undistilled_override(triplets):
    config = StageConfig(StageId.JOINT_TRAIN, epochs=1, batch=4, allow_undistilled=True)
    enhancer, net1, history = pipeline.stage2_joint_train(small_enhancer(), small_net(), triplets, config)
    assert len(history.step_losses) == 2
    assert enhancer.stage == net1.stage == 'joint_train'
    assert history.max_gradient > 0


def test_finetune_freezes_enhancer_and_bounds_updates(target_triplets):
    enhancer, net1, net2 = small_enhancer(), small_net(distilled=True), small_net(seed=9, name='net2')
    frozen = enhancer.state_dict()
    before = net2.network.state_dict()
    config = StageConfig(StageId.FINETUNE)
    assert config.lr == 1e-6 and config.epochs == 1
    net2, history = pipeline.stage3_finetune(net2, enhancer, target_triplets, config, net1=net1)

    for name, value in enhancer.state_dict().items():
        assert value.tobytes() == frozen[name].tobytes()
    bound = len(history.step_losses) * config.lr * history.max_gradient
    for name, value in net2.network.state_dict().items():
        assert np.max(np.abs(value - before[name])) <= bound * (1 + 1e-9)
    assert net2.stage == 'finetune'


def test_finetune_needs_target_triplets_of_two_speakers(triplets):
    nontargets = [t for t in triplets if t.label is TripletLabel.NONTARGET]
    with pytest.raises(InvalidInputError):
        pipeline.stage3_finetune(small_net(), small_enhancer(), nontargets, StageConfig(StageId.FINETUNE))


def test_two_pass_scores_and_fusion(toy_corpus):
    net1, net2, enhancer = small_net(distilled=True), small_net(seed=2, name='net2'), small_enhancer()
    speaker = toy_corpus.speakers[0]
    profile = enroll(speaker, toy_corpus.utterances(speaker)[:2], net1, enhancer)
    test = toy_corpus.utterances(toy_corpus.speakers[1])[0].waveform
    result = pipeline.verify_two_pass(profile, test, enhancer, net2, net1=net1)
    assert -1.0 <= result.pass1_score <= 1.0 and -1.0 <= result.pass2_score <= 1.0
    assert result.fused_score == pytest.approx((result.pass1_score + result.pass2_score) / 2)


def test_verification_leaves_models_untouched(toy_corpus):
    net1, net2, enhancer = small_net(distilled=True), small_net(seed=2, name='net2'), small_enhancer()
    states = [net1.network.state_dict(), net2.network.state_dict(), enhancer.state_dict()]
    verifier = pipeline.TwoPassVerifier(net1, net2, enhancer)
    speaker = toy_corpus.speakers[1]
    verifier.score(speaker, toy_corpus.utterances(speaker)[:2], toy_corpus.utterances(speaker)[4].waveform)
    after = [net1.network.state_dict(), net2.network.state_dict(), enhancer.state_dict()]
    for old, new in zip(states, after):
        assert all(old[k].tobytes() == new[k].tobytes() for k in old)


def test_joint_training_is_reproducible(triplets):
    config = StageConfig(StageId.JOINT_TRAIN, epochs=1, batch=4, seed=3)
    runs = [pipeline.stage2_joint_train(small_enhancer(), small_net(distilled=True), triplets, config)[2]
            for _ in range(2)]
    np.testing.assert_allclose(runs[0].step_losses, runs[1].step_losses, rtol=1e-5)


@pytest.mark.parametrize('fusion, expected', [(FusionMode.MEAN, 0.3), (FusionMode.PASS1, 0.5),
                                              (FusionMode.PASS2, 0.1)])
def test_fusion_modes(fusion, expected):
    assert VerificationResult(0.5, 0.1, fusion).fused_score == pytest.approx(expected)


def test_second_pass_bias_needs_net1_without_stored_bias(toy_corpus):
    net1, enhancer = small_net(), small_enhancer()
    speaker = toy_corpus.speakers[0]
    profile = enroll(speaker, toy_corpus.utterances(speaker)[:2], net1)
    with pytest.raises(InvalidInputError):
        pipeline.second_pass_bias(profile, enhancer, None)
    bias = pipeline.second_pass_bias(profile, enhancer, net1)
    assert np.linalg.norm(bias) == pytest.approx(1.0, abs=1e-9)


def test_two_pass_verifier_caches_profiles(toy_corpus):
    verifier = pipeline.TwoPassVerifier(small_net(), small_net(seed=3), small_enhancer())
    speaker = toy_corpus.speakers[2]
    enrollments = toy_corpus.utterances(speaker)[:2]
    test = toy_corpus.utterances(speaker)[3].waveform
    first = verifier.score(speaker, enrollments, test)
    second = verifier.score(speaker, list(reversed(enrollments)), test)
    assert len(verifier.profiles) == 1
    assert first == second


def test_fused_embedding_score_is_the_mean(toy_corpus):
    a, b = small_net(seed=1), small_net(seed=2)
    enrollments = [u.waveform for u in toy_corpus.utterances(toy_corpus.speakers[0])[:2]]
    test = toy_corpus.utterances(toy_corpus.speakers[1])[0].waveform
    fused = pipeline.fused_embedding_score(a, b, enrollments, test)
    expected = (pipeline.embedding_only_score(a, enrollments, test)
                + pipeline.embedding_only_score(b, enrollments, test)) / 2
    assert fused == pytest.approx(expected)


def test_enhancement_measurements(triplets):
    enhancer, net1 = small_enhancer(), small_net()
    assert np.isfinite(pipeline.si_snr_improvement(enhancer, net1, triplets, workers=2))
    assert pipeline.nontarget_power_ratio(enhancer, net1, triplets) >= 0.0
    targets = [t for t in triplets if t.is_target]
    with pytest.raises(InvalidInputError):
        pipeline.nontarget_power_ratio(enhancer, net1, targets)


def test_silenced_test_is_scored_as_a_rejection(toy_corpus):
    own, other = toy_corpus.speakers[0], toy_corpus.speakers[1]
    enrolments, target = toy_corpus.utterances(own)[:2], toy_corpus.utterances(own)[3]
    samples = np.concatenate([u.waveform.samples for u in toy_corpus.utterances(other)[:2]])
    silenced = Utterance('mix/000', [other], Waveform(samples))
    verifier = pipeline.TwoPassVerifier(small_net(distilled=True), small_net(seed=2, name='net2'),
                                        SilencingEnhancer(len(samples)))
    index = {u.id: u for u in enrolments + [target, silenced]}
    ids = [u.id for u in enrolments]
    trials = [Trial({'enroll_spk': own, 'enroll_utts': ids, 'test_utt': target.id, 'label': 'target'}),
              Trial({'enroll_spk': own, 'enroll_utts': ids, 'test_utt': silenced.id, 'label': 'nontarget'})]

    scored = evaluation.score_trials(trials, index, verifier)
    assert scored[1].ok
    assert scored[1].score == pipeline.SUPPRESSED_TEST_SCORE
    pooled = evaluation.evaluate(scored)['pooled']
    assert (pooled['n_target'], pooled['n_nontarget'], pooled['n_failed']) == (1, 1, 0)
    assert pooled['eer'] is not None


def test_silent_enrolment_still_fails_verification(toy_corpus):
    speaker = toy_corpus.speakers[0]
    net1, enhancer = small_net(distilled=True), small_enhancer()
    profile = enroll(speaker, toy_corpus.utterances(speaker)[:2], net1, enhancer)
    profile.enrollments = [Waveform(np.zeros(16000))]
    with pytest.raises(InvalidInputError):
        pipeline.verify_two_pass(profile, toy_corpus.utterances(speaker)[3].waveform, enhancer, small_net(), net1=net1)


def test_pretraining_resumes_where_it_stopped(toy_corpus, tmp_path):
    config = StageConfig(StageId.PRETRAIN, epochs=1, batch=4, seed=2)
    trainer = pipeline.EmbedderTrainer(small_net(name='student', dtype=np.float32), toy_corpus, config,
                                       StageId.PRETRAIN)
    trainer.step()
    trainer.step()
    checkpoint = str(tmp_path / 'student.ckpt')
    save_model(trainer.embedder, checkpoint)
    save_pkl(trainer.training_state(), pipeline.training_state_path(checkpoint))
    expected_loss = trainer.step()

    resumed = pipeline.EmbedderTrainer(load_model(checkpoint), toy_corpus, config, StageId.PRETRAIN,
                                       state=pipeline.load_training_state(checkpoint))
    assert resumed.optimizer.steps == 2
    assert resumed.step() == pytest.approx(expected_loss, abs=1e-6)
    expected = trainer.embedder.network.state_dict()
    for name, value in resumed.embedder.network.state_dict().items():
        np.testing.assert_allclose(value, expected[name], atol=1e-6)
    np.testing.assert_allclose(resumed.head.weight.value, trainer.head.weight.value, atol=1e-6)


def test_resume_needs_the_same_speakers(toy_corpus):
    config = StageConfig(StageId.PRETRAIN, batch=4)
    state = pipeline.EmbedderTrainer(small_net(), toy_corpus, config, StageId.PRETRAIN).training_state()
    state.speakers = state.speakers[:-1]
    with pytest.raises(InvalidInputError):
        pipeline.EmbedderTrainer(small_net(), toy_corpus, config, StageId.PRETRAIN, state=state)


def test_training_state_file_must_hold_a_state(tmp_path):
    checkpoint = str(tmp_path / 'student.ckpt')
    assert pipeline.load_training_state(checkpoint) is None
    save_pkl({'steps': 3}, pipeline.training_state_path(checkpoint))
    with pytest.raises(CheckpointFormatError):
        pipeline.load_training_state(checkpoint)


def test_first_pretraining_step_is_reproducible(toy_corpus):
    config = StageConfig(StageId.PRETRAIN, batch=4, seed=11)
    grads = []
    for _ in range(2):
        trainer = pipeline.EmbedderTrainer(small_net(seed=3), toy_corpus, config, StageId.PRETRAIN)
        trainer.accumulate()
        grads.append([p.grad.tobytes() for p in trainer.embedder.parameters() + trainer.head.parameters()])
    assert grads[0] == grads[1]


def test_student_equal_to_teacher_starts_at_zero_mse(toy_corpus):
    student, teacher = small_net(seed=4, name='twin'), small_net(seed=4, name='twin')
    frames = [dsp.voiced_features(u.waveform).frames for u in toy_corpus.utterances()[:3]]
    y_student = np.stack([student.forward(student.prepare(f))[0] for f in frames])
    y_teacher = np.stack([teacher.forward(teacher.prepare(f))[0] for f in frames])
    assert ts_mse(y_teacher, y_student).value == 0.0


def test_skipped_triplet_does_not_dilute_the_joint_loss(target_triplets):
    first = target_triplets[0]
    second = next(t for t in target_triplets if t.enroll_speaker != first.enroll_speaker)
    silent = TrainingTriplet(f"{first.id}-silent", [Waveform(np.zeros(16000))], first.test_mixture, first.reference,
                             first.label, first.spec, first.enroll_speaker, first.mixture_speakers)
    speakers = sorted({t.enroll_speaker for t in target_triplets})
    index = {s: i for i, s in enumerate(speakers)}
    config = StageConfig(StageId.JOINT_TRAIN, batch=4)
    runs = []
    for batch in ([first, second], [first, silent, second]):
        enhancer, net1 = small_enhancer(), small_net(distilled=True)
        head = LmclHead(len(speakers), DIM, dtype=F64)
        loss = pipeline.joint_step(enhancer, net1, head, batch, index, config, np.random.default_rng(0))
        runs.append((loss, [p.grad.copy() for p in enhancer.parameters() + net1.parameters()]))
    assert runs[1][0] == pytest.approx(runs[0][0], rel=1e-12)
    for with_silent, without in zip(runs[1][1], runs[0][1]):
        np.testing.assert_allclose(with_silent, without, rtol=1e-10, atol=1e-14)


def test_finetune_raw_half_is_the_unprocessed_mixture(target_triplets):
    raw, enhanced = pipeline.finetune_banks(small_net(), small_enhancer(), target_triplets, None)
    mixtures = [dsp.voiced_features(t.test_mixture).frames for t in target_triplets]
    assert sum(len(v) for v in raw.values()) == sum(len(v) for v in enhanced.values()) > 0
    for frames_list in raw.values():
        for frames in frames_list:
            assert any(frames.shape == m.shape and np.array_equal(frames, m) for m in mixtures)


def test_verifier_fusion_falls_back_to_config(toy_corpus):
    net1, net2, enhancer = small_net(distilled=True), small_net(seed=2, name='net2'), small_enhancer()
    speaker = toy_corpus.speakers[0]
    enrollments, test = toy_corpus.utterances(speaker)[:2], toy_corpus.utterances(speaker)[3].waveform
    config = StageConfig(fusion=FusionMode.PASS2)

    from_config = pipeline.TwoPassVerifier(net1, net2, enhancer, config=config)
    result = from_config.verify(speaker, enrollments, test)
    assert from_config.fusion is FusionMode.PASS2
    assert from_config.score(speaker, enrollments, test) == result.pass2_score
    explicit = pipeline.TwoPassVerifier(net1, net2, enhancer, FusionMode.PASS1, config=config)
    assert explicit.score(speaker, enrollments, test) == result.pass1_score
    assert pipeline.TwoPassVerifier(net1, net2, enhancer).fusion is FusionMode.MEAN


def test_identity_enhancement_gives_matching_passes(toy_corpus):
    net1, net2, enhancer = small_net(distilled=True), small_net(seed=2, name='net2'), IdentityEnhancer()
    speaker = toy_corpus.speakers[1]
    profile = enroll(speaker, toy_corpus.utterances(speaker)[:3], net1, enhancer)
    result = pipeline.verify_two_pass(profile, toy_corpus.utterances(speaker)[4].waveform, enhancer, net2, net1=net1)
    assert abs(result.pass1_score - result.pass2_score) <= 0.1


def test_scoring_a_trial_twice_gives_the_same_score(toy_corpus):
    speaker = toy_corpus.speakers[2]
    utterances = toy_corpus.utterances(speaker)
    index = {u.id: u for u in utterances}
    trial = Trial({'enroll_spk': speaker, 'enroll_utts': [u.id for u in utterances[:2]],
                   'test_utt': utterances[3].id, 'label': 'target'})
    verifier = pipeline.TwoPassVerifier(small_net(distilled=True), small_net(seed=2, name='net2'), small_enhancer())
    first, second = evaluation.score_trials([trial, trial], index, verifier)
    assert first.ok and first.score == second.score


def test_embedding_score_is_symmetric(toy_corpus):
    net = small_net(seed=5)
    a = toy_corpus.utterances(toy_corpus.speakers[0])[0].waveform
    b = toy_corpus.utterances(toy_corpus.speakers[1])[0].waveform
    assert pipeline.embedding_only_score(net, [a], b) == pytest.approx(pipeline.embedding_only_score(net, [b], a),
                                                                       abs=1e-12)


@pytest.mark.slow
def test_pretraining_lowers_the_loss_every_epoch():
    corpus = synthetic.make_speaker_corpus(4, 16, seconds=1.0, seed=7)
    config = StageConfig(StageId.PRETRAIN, epochs=6, batch=8, lr=3e-3)
    losses = pipeline.train_embedder(small_net(dtype=np.float32), corpus, config, StageId.PRETRAIN).epoch_losses
    assert all(later < earlier for earlier, later in zip(losses[:5], losses[1:6]))


@pytest.mark.slow
def test_distillation_pulls_the_student_towards_the_teacher(toy_corpus):
    teacher = TeacherEmbedder(channels=16, embedding_dim=DIM, seed=1)
    pipeline.train_embedder(teacher, toy_corpus, StageConfig(StageId.PRETRAIN, epochs=3, batch=8), StageId.PRETRAIN)
    student = small_net(dtype=np.float32)
    utterances = toy_corpus.utterances()
    before = pipeline.mean_teacher_cosine(teacher, student, utterances)
    pipeline.ts_distill(teacher, student, toy_corpus, StageConfig(StageId.TS_DISTILL, epochs=6, batch=8, lr=3e-3))
    assert pipeline.mean_teacher_cosine(teacher, student, utterances) > before


@pytest.mark.slow
def test_joint_training_improves_si_snr(toy_corpus):
    triplets = mixture.generate_triplets(toy_corpus, 24, seed=8, nontarget_ratio=11.0, enroll_count=2, workers=2)
    net1 = small_net(distilled=True)
    enhancer = small_enhancer()
    before = pipeline.si_snr_improvement(enhancer, net1, triplets)
    pipeline.stage2_joint_train(enhancer, net1, triplets, StageConfig(StageId.JOINT_TRAIN, epochs=5, batch=4))
    assert pipeline.si_snr_improvement(enhancer, net1, triplets) > before


@pytest.mark.slow
def test_nontarget_training_suppresses_nontarget_mixtures(toy_corpus):
    held_out = [t for t in mixture.generate_triplets(toy_corpus, 24, seed=99, nontarget_ratio=1.0, enroll_count=2)
                if not t.is_target]
    ratios = {}
    for name, ratio in (('vanilla', math.inf), ('nontarget', 1.0)):
        triplets = mixture.generate_triplets(toy_corpus, 24, seed=8, nontarget_ratio=ratio, enroll_count=2)
        config = StageConfig(StageId.JOINT_TRAIN, epochs=5, batch=4, nontarget_ratio=ratio)
        enhancer, net1, _ = pipeline.stage2_joint_train(small_enhancer(), small_net(distilled=True), triplets, config)
        ratios[name] = pipeline.nontarget_power_ratio(enhancer, net1, held_out)
    assert ratios['nontarget'] < ratios['vanilla']


@pytest.mark.slow
def test_constant_teacher_drives_a_constant_student(toy_corpus):
    direction = np.random.default_rng(3).normal(size=DIM)
    direction /= np.linalg.norm(direction)
    student = small_net(dtype=np.float32)
    utterances = toy_corpus.utterances()

    def agreement() -> float:
        return float(np.mean([cosine(direction, embed(student, u.waveform)) for u in utterances]))

    before = agreement()
    config = StageConfig(StageId.TS_DISTILL, epochs=15, batch=8, lr=1e-2, omega1=0.0, triplet_margin=0.0)
    pipeline.ts_distill(ConstantTeacher(direction), student, toy_corpus, config)
    after = agreement()
    assert after > before
    assert after > 0.5


@pytest.mark.slow
def test_finetuning_does_not_raise_held_out_eer(toy_corpus):
    held_out = synthetic.make_speaker_corpus(4, 6, seconds=1.0, seed=21).utterances()
    trials = evaluation.generate_trials(held_out, 24, 48, np.random.default_rng(0), enroll_count=2)
    index = {u.id: u for u in held_out}

    def eer(net) -> float:
        scored = evaluation.score_trials(trials, index, pipeline.EmbeddingVerifier(net))
        return evaluation.evaluate(scored)['pooled']['eer']

    before, after = [], []
    for seed in (1, 2, 3):
        triplets = mixture.generate_triplets(toy_corpus, 16, seed=seed, nontarget_ratio=math.inf, enroll_count=2)
        net2 = small_net(seed=seed, name='net2')
        before.append(eer(net2))
        pipeline.stage3_finetune(net2, small_enhancer(seed), triplets, StageConfig(StageId.FINETUNE, seed=seed),
                                 net1=small_net(distilled=True))
        after.append(eer(net2))
    assert np.mean(after) <= np.mean(before) + 1e-2
