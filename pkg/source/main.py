import argparse
import logging
import os
import sys
from logging.handlers import TimedRotatingFileHandler
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv

import evaluation
import mixture
import models
import pipeline
import synthetic
from classes.enums import StageId, FusionMode
from config import StageConfig
from corpus_io import (load_speaker_corpus, read_manifest, read_utterance_manifest, read_trials, write_trials,
                       read_scores, write_scores, utterance_index, read_wav, save_pkl, load_pkl)
from errors import TaseError, InvalidInputError


def setup_logging() -> None:
    log_dir = os.getenv('TASE_LOG_DIR', 'logs')
    os.makedirs(log_dir, exist_ok=True)
    # Set up the log file handler to rotate daily
    log_file_handler = TimedRotatingFileHandler(
        filename=os.path.join(log_dir, 'logfile.log'),
        when='midnight',
        interval=1,
        backupCount=30,
        encoding='utf-8',
        utc=False
    )
    logging.basicConfig(
        level=os.getenv('TASE_LOG_LEVEL', 'INFO').upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            log_file_handler,
            logging.StreamHandler()
        ]
    )


def workers() -> int:
    return int(os.getenv('TASE_WORKERS', '4'))


def _stage_config(args: argparse.Namespace, stage: StageId) -> StageConfig:
    if args.config:
        config = StageConfig.from_file(args.config, stage, seed=args.seed)
    else:
        config = StageConfig(stage, **({'seed': args.seed} if args.seed is not None else {}))
    if getattr(args, 'corpus', None):
        config.corpus = args.corpus
    if getattr(args, 'out', None):
        config.out = args.out
    if config.stage is not stage:
        raise InvalidInputError(f"Config is for stage '{config.stage}', command runs '{stage}'.")
    if not config.corpus:
        raise InvalidInputError("No corpus given: set 'corpus' in the config or pass --corpus.")
    return config


def _inference_config(args: argparse.Namespace) -> StageConfig:
    """Config of the inference commands; only `seed`, `fusion` and `enroll_count` are read."""
    seed = getattr(args, 'seed', None)
    if args.config:
        return StageConfig.from_file(args.config, seed=seed)
    return StageConfig(**({'seed': seed} if seed is not None else {}))


def _fusion(args: argparse.Namespace, config: StageConfig) -> FusionMode:
    return FusionMode(args.fusion) if args.fusion else config.fusion


def _load_embedder(filename: str) -> models.Embedder:
    model = models.load_model(filename)
    if not isinstance(model, models.Embedder):
        raise InvalidInputError(f"{filename} is not an embedder checkpoint.")
    return model


def _load_enhancer(filename: str) -> models.Enhancer:
    model = models.load_model(filename)
    if not isinstance(model, models.Enhancer):
        raise InvalidInputError(f"{filename} is not an enhancer checkpoint.")
    return model


def cmd_make_speakers(args: argparse.Namespace) -> None:
    corpus = synthetic.make_speaker_corpus(args.n_speakers, args.utts, seconds=args.seconds, seed=args.seed)
    synthetic.write_speaker_corpus(corpus, args.out)


def cmd_simulate(args: argparse.Namespace) -> None:
    corpus = load_speaker_corpus(args.speakers)
    mixture.simulate_corpus(corpus, args.out, args.n_triplets, args.seed, mixture.parse_ratio(args.nontarget_ratio),
                            enroll_count=args.enroll_count, workers=workers())


def cmd_simulate_eval(args: argparse.Namespace) -> None:
    corpus = load_speaker_corpus(args.speakers)
    utterances = mixture.build_eval_utterances(corpus, args.seed, args.enroll_per_speaker, args.tests_per_speaker,
                                               enroll_snr_db=args.enroll_snr)
    path = mixture.write_eval_corpus(utterances, args.out)
    logging.info(f"Evaluation corpus manifest: {path}")


def cmd_pretrain(args: argparse.Namespace) -> None:
    config = _stage_config(args, StageId.PRETRAIN)
    student = _load_embedder(args.student) if args.student else None
    teacher = _load_embedder(args.teacher) if args.teacher else None
    states = {}
    for name, checkpoint in (('student', args.student), ('teacher', args.teacher)):
        state = pipeline.load_training_state(checkpoint) if checkpoint else None
        if state is not None:
            states[name] = state
        elif checkpoint:
            logging.warning(f"No training state next to {checkpoint}; head and optimizer start fresh")
    pipeline.stage1_pretrain(config, load_speaker_corpus(config.corpus), student, teacher, states)


def cmd_distill(args: argparse.Namespace) -> None:
    config = _stage_config(args, StageId.TS_DISTILL)
    teacher, student = _load_embedder(args.teacher), _load_embedder(args.student)
    pipeline.ts_distill(teacher, student, load_speaker_corpus(config.corpus), config)


def cmd_train_enhancer(args: argparse.Namespace) -> None:
    config = _stage_config(args, StageId.JOINT_TRAIN)
    config.allow_undistilled = config.allow_undistilled or args.allow_undistilled
    config.from_scratch = config.from_scratch or args.from_scratch
    net1 = _load_embedder(args.net1) if args.net1 else None
    manifest = read_manifest(os.path.join(config.corpus, 'manifest.tsv'))
    enhancer = models.Enhancer(seed=config.seed)
    pipeline.stage2_joint_train(enhancer, net1, pipeline.load_triplets(manifest), config)


def cmd_finetune(args: argparse.Namespace) -> None:
    config = _stage_config(args, StageId.FINETUNE)
    net2, enhancer = _load_embedder(args.net2), _load_enhancer(args.enhancer)
    net1 = _load_embedder(args.net1) if args.net1 else None
    manifest = read_manifest(os.path.join(config.corpus, 'manifest.tsv'))
    pipeline.stage3_finetune(net2, enhancer, pipeline.load_triplets(manifest), config, net1=net1)


def cmd_enroll(args: argparse.Namespace) -> None:
    config = _inference_config(args)
    utterances = read_utterance_manifest(args.utterances)
    if args.utts:
        index = utterance_index(utterances)
        ids = args.utts.split(',')
        missing = [u for u in ids if u not in index]
        if missing:
            raise InvalidInputError(f"Utterances not in {args.utterances}: {', '.join(missing)}")
        chosen = [index[u] for u in ids]
    else:
        chosen = evaluation.pick_enrollments(utterances, args.speaker, config.enroll_count,
                                             np.random.default_rng(config.seed))
        logging.info(f"Enrolling {args.speaker} with {', '.join(u.id for u in chosen)}")
    enhancer = _load_enhancer(args.enhancer) if args.enhancer else None
    profile = models.enroll(args.speaker, chosen, _load_embedder(args.net1), enhancer)
    save_pkl(profile, args.out)


def cmd_verify(args: argparse.Namespace) -> None:
    profile = load_pkl(args.profile)
    if profile is None:
        raise InvalidInputError(f"Cannot read profile {args.profile}.")
    config = _inference_config(args)
    net1 = _load_embedder(args.net1) if args.net1 else None
    result = pipeline.verify_two_pass(profile, read_wav(args.test), _load_enhancer(args.enhancer),
                                      _load_embedder(args.net2), _fusion(args, config), net1)
    print(f"pass1\t{result.pass1_score:.6f}\npass2\t{result.pass2_score:.6f}\nfused\t{result.fused_score:.6f}")


def cmd_trials(args: argparse.Namespace) -> None:
    utterances = read_utterance_manifest(args.utterances, load_audio=False)
    trials = evaluation.generate_trials(utterances, args.n_target, args.n_nontarget, np.random.default_rng(args.seed),
                                        enroll_count=args.enroll_count)
    write_trials(trials, args.out)


def _verifier(args: argparse.Namespace, config: StageConfig) -> pipeline.Verifier:
    if args.system == 'embedding':
        return pipeline.EmbeddingVerifier(_load_embedder(args.net2))
    if args.system == 'fused-embedding':
        return pipeline.FusedEmbeddingVerifier(_load_embedder(args.net1), _load_embedder(args.net2))
    fusion = FusionMode(args.fusion) if args.fusion else None
    return pipeline.TwoPassVerifier(_load_embedder(args.net1), _load_embedder(args.net2),
                                    _load_enhancer(args.enhancer), fusion, config=config)


def cmd_score(args: argparse.Namespace) -> None:
    trials = read_trials(args.trials)
    index = utterance_index(read_utterance_manifest(args.utterances))
    scored = evaluation.score_trials(trials, index, _verifier(args, _inference_config(args)), workers=workers())
    write_scores(scored, args.out)


def cmd_eval(args: argparse.Namespace) -> None:
    results = evaluation.write_report(read_scores(args.scores), args.out, by_snr=args.by_snr)
    print(evaluation.render_summary(results))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='tase-sv', description='Target speaker enhancement for speaker verification.')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('make-speakers', help='Synthesize a toy speaker corpus')
    p.add_argument('--out', required=True)
    p.add_argument('--n-speakers', type=int, default=12)
    p.add_argument('--utts', type=int, default=10)
    p.add_argument('--seconds', type=float, default=2.0)
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_make_speakers)

    p = sub.add_parser('simulate', help='Simulate training triplets')
    p.add_argument('--speakers', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--n-triplets', type=int, default=2000)
    p.add_argument('--nontarget-ratio', default='11:1')
    p.add_argument('--enroll-count', type=int, default=3)
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('simulate-eval', help='Build the evaluation utterance corpus')
    p.add_argument('--speakers', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--enroll-per-speaker', type=int, default=3)
    p.add_argument('--tests-per-speaker', type=int, default=6)
    p.add_argument('--enroll-snr', type=float, default=None)
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_simulate_eval)

    for name, func, help_text in (
            ('pretrain', cmd_pretrain, 'Stage 1: pre-train student and teacher embedders'),
            ('distill', cmd_distill, 'Teacher/student distillation of the student embedder'),
            ('train-enhancer', cmd_train_enhancer, 'Stage 2: joint training of enhancer and net 1'),
            ('finetune', cmd_finetune, 'Stage 3: fine-tune net 2 with the enhancer frozen'),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--config', default='')
        p.add_argument('--seed', type=int, default=None)
        p.add_argument('--corpus', default='')
        p.add_argument('--out', default='')
        if name == 'pretrain':
            p.add_argument('--student', default='', help='resume from this checkpoint')
            p.add_argument('--teacher', default='', help='resume from this checkpoint')
        elif name == 'distill':
            p.add_argument('--teacher', required=True)
            p.add_argument('--student', required=True)
        elif name == 'train-enhancer':
            p.add_argument('--net1', default='')
            p.add_argument('--allow-undistilled', action='store_true')
            p.add_argument('--from-scratch', action='store_true')
        elif name == 'finetune':
            p.add_argument('--net2', required=True)
            p.add_argument('--enhancer', required=True)
            p.add_argument('--net1', default='')
        p.set_defaults(func=func)

    p = sub.add_parser('enroll', help='Enroll a speaker into a pickled profile')
    p.add_argument('--utterances', required=True)
    p.add_argument('--speaker', required=True)
    p.add_argument('--utts', default='', help='comma-separated utterance ids; picked from the manifest when omitted')
    p.add_argument('--net1', required=True)
    p.add_argument('--enhancer', default='')
    p.add_argument('--out', required=True)
    p.add_argument('--config', default='')
    p.add_argument('--seed', type=int, default=None)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser('verify', help='Two-pass verification of one test file')
    p.add_argument('--profile', required=True)
    p.add_argument('--test', required=True)
    p.add_argument('--enhancer', required=True)
    p.add_argument('--net2', required=True)
    p.add_argument('--net1', default='')
    p.add_argument('--fusion', default=None, choices=[str(m) for m in FusionMode])
    p.add_argument('--config', default='')
    p.add_argument('--seed', type=int, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser('trials', help='Generate verification trials')
    p.add_argument('--utterances', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--n-target', type=int, default=evaluation.DEFAULT_TARGET_TRIALS)
    p.add_argument('--n-nontarget', type=int, default=evaluation.DEFAULT_NONTARGET_TRIALS)
    p.add_argument('--enroll-count', type=int, default=3)
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser('score', help='Score trials')
    p.add_argument('--trials', required=True)
    p.add_argument('--utterances', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--system', default='two-pass', choices=['two-pass', 'embedding', 'fused-embedding'])
    p.add_argument('--net1', default='')
    p.add_argument('--net2', required=True)
    p.add_argument('--enhancer', default='')
    p.add_argument('--fusion', default=None, choices=[str(m) for m in FusionMode])
    p.add_argument('--config', default='')
    p.set_defaults(func=cmd_score)

    p = sub.add_parser('eval', help='EER, DET and SNR-band report from a score file')
    p.add_argument('--scores', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--by-snr', action='store_true')
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except TaseError as e:
        logging.error(f"{args.command} failed: {e}")
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
