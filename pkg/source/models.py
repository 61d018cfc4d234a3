"""Speaker embedders, the speaker-conditioned enhancer, and the inference helpers built on them."""
from __future__ import annotations

import logging
import os
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values, set_key

import dsp
from classes.enums import LayerKind, PaddingMode
from classes.speaker_corpus import Utterance
from classes.speaker_profile import SpeakerProfile
from classes.types_base import ModelManifest
from classes.waveform import Waveform, FeatureMatrix, N_BINS
from errors import InvalidInputError, CheckpointFormatError
from losses import mean_normalized_bias
from nnet import Network, Trace, LayerSpec, Parameter, save_checkpoint, load_checkpoint

EMBEDDING_DIM = 128
STUDENT_CHANNELS = 64
TEACHER_CHANNELS = 256
# (kernel, dilation) of the five context layers
TDNN_CONTEXT = ((5, 1), (3, 2), (3, 3), (1, 1), (1, 1))

ENCODER_CHANNELS = 128
ENCODER_KERNEL = 16
ENCODER_STRIDE = 8
MASK_BLOCKS = 4


def tdnn_specs(channels: int, in_dim: int = N_BINS, embedding_dim: int = EMBEDDING_DIM) -> List[LayerSpec]:
    specs = []
    width = in_dim
    for kernel, dilation in TDNN_CONTEXT:
        specs.append(LayerSpec(LayerKind.CONV1D, in_channels=width, out_channels=channels, kernel=kernel,
                               dilation=dilation))
        specs.append(LayerSpec(LayerKind.RELU))
        specs.append(LayerSpec(LayerKind.LAYERNORM, channels=channels))
        width = channels
    specs += [
        LayerSpec(LayerKind.STATS_POOL_TIME),
        LayerSpec(LayerKind.POINTWISE_LINEAR, in_channels=2 * channels, out_channels=embedding_dim),
        LayerSpec(LayerKind.L2_NORMALIZE),
    ]
    return specs


def receptive_field() -> int:
    return 1 + sum((kernel - 1) * dilation for kernel, dilation in TDNN_CONTEXT)


class Embedder:
    """TDNN speaker embedder over log-compressed STFT frames; emits unit vectors."""
    kind = 'tdnn'
    default_channels = STUDENT_CHANNELS

    def __init__(self, channels: Optional[int] = None, embedding_dim: int = EMBEDDING_DIM, seed: int = 0,
                 name: str = 'spk_embd', dtype=np.float32) -> None:
        self.channels: int = channels or self.default_channels
        self.embedding_dim: int = embedding_dim
        self.name: str = name
        self.network: Network = Network.from_specs(name, tdnn_specs(self.channels, N_BINS, embedding_dim),
                                                   np.random.default_rng(seed), dtype)
        self.distilled: bool = False
        self.stage: str = ''

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return (f"{cls_name}(name={self.name!r}, channels={self.channels}, "
                f"parameters={self.network.num_parameters()}, distilled={self.distilled})")

    @property
    def dtype(self):
        return self.network.parameters()[0].value.dtype

    def parameters(self) -> List[Parameter]:
        return self.network.parameters()

    def prepare(self, frames: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
        """Raw T x 257 magnitudes -> (257, T) network input, wrap-padded to the receptive field."""
        if isinstance(frames, FeatureMatrix):
            frames = frames.frames
        if len(frames) == 0:
            raise InvalidInputError("No frames to embed.")
        x = dsp.log_compress(frames).T
        minimum = receptive_field()
        if x.shape[1] < minimum:
            logging.debug(f"Wrap-around padding {x.shape[1]} frames to the {minimum}-frame receptive field")
            x = np.take(x, np.arange(minimum), axis=1, mode='wrap')
        return x.astype(self.dtype)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Trace]:
        y, trace = self.network.forward(x)
        return y[:, 0], trace

    def backward(self, trace: Trace, g_embedding: np.ndarray) -> None:
        self.network.backward(trace, np.asarray(g_embedding, dtype=self.dtype).reshape(-1, 1))

    def embed_frames(self, frames: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
        return _unit64(self.forward(self.prepare(frames))[0])

    def manifest(self) -> ModelManifest:
        return {
            'kind': self.kind,
            'name': self.name,
            'in_dim': N_BINS,
            'channels': self.channels,
            'embedding_dim': self.embedding_dim,
            'distilled': self.distilled,
            'stage': self.stage,
        }

    def copy(self) -> Embedder:
        clone = type(self).__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.network = self.network.copy()
        return clone


class TdnnEmbedder(Embedder):
    kind = 'tdnn'
    default_channels = STUDENT_CHANNELS


class TeacherEmbedder(Embedder):
    """Same topology as the student at four times the width."""
    kind = 'teacher'
    default_channels = TEACHER_CHANNELS


class EnhancerTrace:
    def __init__(self, length: int, padded_length: int, encoded: np.ndarray, mask: np.ndarray,
                 encoder: Trace, mask_net: Trace, decoder: Trace) -> None:
        self.length = length
        self.padded_length = padded_length
        self.encoded = encoded
        self.mask = mask
        self.encoder = encoder
        self.mask_net = mask_net
        self.decoder = decoder


class Enhancer:
    """Time-domain target speaker extractor.

    A strided conv encoder, a mask network conditioned on the speaker bias
    (concatenated to every encoder frame), and a transposed-conv decoder.
    """
    kind = 'enhancer'

    def __init__(self, encoder_channels: int = ENCODER_CHANNELS, mask_blocks: int = MASK_BLOCKS,
                 embedding_dim: int = EMBEDDING_DIM, kernel: int = ENCODER_KERNEL, stride: int = ENCODER_STRIDE,
                 seed: int = 0, name: str = 'enhancer', dtype=np.float32) -> None:
        self.encoder_channels, self.mask_blocks, self.embedding_dim = encoder_channels, mask_blocks, embedding_dim
        self.kernel, self.stride, self.name = kernel, stride, name
        self.stage: str = ''
        rng = np.random.default_rng(seed)
        c = encoder_channels
        self.encoder = Network.from_specs(f"{name}.encoder", [
            LayerSpec(LayerKind.CONV1D, in_channels=1, out_channels=c, kernel=kernel, stride=stride),
            LayerSpec(LayerKind.RELU),
        ], rng, dtype)
        mask_specs = [
            LayerSpec(LayerKind.POINTWISE_LINEAR, in_channels=c + embedding_dim, out_channels=c),
            LayerSpec(LayerKind.PRELU, channels=c),
            LayerSpec(LayerKind.LAYERNORM, channels=c),
        ]
        for i in range(mask_blocks):
            mask_specs += [
                LayerSpec(LayerKind.CONV1D, in_channels=c, out_channels=c, kernel=3, dilation=2 ** i,
                          padding=PaddingMode.REPLICATE),
                LayerSpec(LayerKind.PRELU, channels=c),
                LayerSpec(LayerKind.LAYERNORM, channels=c),
            ]
        mask_specs += [
            LayerSpec(LayerKind.POINTWISE_LINEAR, in_channels=c, out_channels=c),
            LayerSpec(LayerKind.SIGMOID_MASK),
        ]
        self.mask_net = Network.from_specs(f"{name}.mask", mask_specs, rng, dtype)
        self.decoder = Network.from_specs(f"{name}.decoder", [
            LayerSpec(LayerKind.TRANSPOSED_CONV1D, in_channels=c, out_channels=1, kernel=kernel, stride=stride),
        ], rng, dtype)

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(channels={self.encoder_channels}, blocks={self.mask_blocks}, parameters={self.num_parameters()})"

    @property
    def networks(self) -> List[Network]:
        return [self.encoder, self.mask_net, self.decoder]

    @property
    def dtype(self):
        return self.encoder.parameters()[0].value.dtype

    def parameters(self) -> List[Parameter]:
        return [p for net in self.networks for p in net.parameters()]

    def num_parameters(self) -> int:
        return sum(net.num_parameters() for net in self.networks)

    def zero_grad(self) -> None:
        for net in self.networks:
            net.zero_grad()

    def padded_length(self, length: int) -> int:
        if length < self.kernel:
            raise InvalidInputError(f"Enhancer input needs at least {self.kernel} samples, got {length}.")
        n_frames = -(-(length - self.kernel) // self.stride) + 1
        return (n_frames - 1) * self.stride + self.kernel

    def forward(self, samples: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, EnhancerTrace]:
        samples = np.asarray(samples, dtype=self.dtype).reshape(-1)
        bias = np.asarray(bias, dtype=self.dtype).reshape(-1)
        if bias.size != self.embedding_dim:
            raise InvalidInputError(f"Bias must be {self.embedding_dim}-d, got {bias.size}.")
        length = samples.size
        padded = self.padded_length(length)
        x = np.zeros((1, padded), dtype=self.dtype)
        x[0, :length] = samples

        encoded, encoder_trace = self.encoder.forward(x)
        conditioned = np.concatenate([encoded, np.repeat(bias[:, None], encoded.shape[1], axis=1)], axis=0)
        mask, mask_trace = self.mask_net.forward(conditioned)
        decoded, decoder_trace = self.decoder.forward(encoded * mask)
        trace = EnhancerTrace(length, padded, encoded, mask, encoder_trace, mask_trace, decoder_trace)
        return decoded[0, :length], trace

    def backward(self, trace: EnhancerTrace, g_output: np.ndarray) -> np.ndarray:
        """Accumulates parameter gradients and returns the gradient w.r.t. the bias."""
        g_full = np.zeros((1, trace.padded_length), dtype=self.dtype)
        g_full[0, :trace.length] = g_output
        g_masked = self.decoder.backward(trace.decoder, g_full)
        g_conditioned = self.mask_net.backward(trace.mask_net, g_masked * trace.encoded)
        c = self.encoder_channels
        g_encoded = g_masked * trace.mask + g_conditioned[:c]
        self.encoder.backward(trace.encoder, g_encoded)
        return g_conditioned[c:].sum(axis=1)

    def manifest(self) -> ModelManifest:
        return {
            'kind': self.kind,
            'name': self.name,
            'embedding_dim': self.embedding_dim,
            'encoder_channels': self.encoder_channels,
            'encoder_kernel': self.kernel,
            'encoder_stride': self.stride,
            'mask_channels': self.encoder_channels,
            'mask_blocks': self.mask_blocks,
            'stage': self.stage,
        }

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        for net in self.networks:
            state.update(net.state_dict())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for net in self.networks:
            names = {p.name for p in net.parameters()}
            net.load_state_dict({k: v for k, v in state.items() if k in names})


class LmclHead:
    """Class-weight matrix for LMCL; rows are normalised in the forward pass."""

    def __init__(self, n_classes: int, embedding_dim: int = EMBEDDING_DIM, seed: int = 0, name: str = 'lmcl',
                 dtype=np.float32) -> None:
        if n_classes < 2:
            raise InvalidInputError(f"LMCL needs at least 2 classes, got {n_classes}.")
        rng = np.random.default_rng(seed)
        self.weight = Parameter(f"{name}.weight", rng.standard_normal((n_classes, embedding_dim)).astype(dtype),
                                regularize=False)

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(classes={self.n_classes})"

    @property
    def n_classes(self) -> int:
        return self.weight.value.shape[0]

    def parameters(self) -> List[Parameter]:
        return [self.weight]

    def normalized(self) -> np.ndarray:
        w = self.weight.value.astype(np.float64)
        return w / np.linalg.norm(w, axis=1, keepdims=True)

    def backward(self, g_normalized: np.ndarray) -> None:
        w = self.weight.value.astype(np.float64)
        norm = np.linalg.norm(w, axis=1, keepdims=True)
        unit = w / norm
        g = (g_normalized - unit * np.sum(unit * g_normalized, axis=1, keepdims=True)) / norm
        self.weight.grad += g.astype(self.weight.grad.dtype)


Model = Union[Embedder, Enhancer]


def _unit64(vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(vector)
    return vector / norm if norm > 0 else vector


def embed(net: Embedder, utterance: Waveform) -> np.ndarray:
    """128-d unit embedding of the voiced frames of an utterance."""
    return net.embed_frames(dsp.voiced_features(utterance))


def enroll_bias(net: Embedder, utterances: List[Waveform]) -> np.ndarray:
    if not utterances:
        raise InvalidInputError("Enrolment needs at least one utterance.")
    bias, _ = mean_normalized_bias(np.stack([embed(net, u) for u in utterances]))
    return bias


def enhance(net: Enhancer, mixture: Waveform, bias: np.ndarray) -> Waveform:
    bias = np.asarray(bias, dtype=np.float64).reshape(-1)
    if abs(np.linalg.norm(bias) - 1.0) > 1e-4:
        raise InvalidInputError(f"Enhancer bias must be unit-norm, got norm {np.linalg.norm(bias):.6f}.")
    output, _ = net.forward(mixture.samples, bias)
    return Waveform(output.astype(np.float64), mixture.sample_rate_hz)


def enroll(speaker_id: str, utterances: List[Utterance], net1: Embedder, enhancer: Optional[Enhancer] = None) -> SpeakerProfile:
    """Profile with the raw enrolment bias and, given an enhancer, the bias of self-enhanced enrolments."""
    waveforms = [u.waveform for u in utterances]
    bias = enroll_bias(net1, waveforms)
    enhanced_bias = None
    if enhancer is not None:
        enhanced_bias = enroll_bias(net1, [enhance(enhancer, w, bias) for w in waveforms])
    profile = SpeakerProfile(speaker_id, [u.id for u in utterances], waveforms, bias, enhanced_bias)
    logging.info(f"Enrolled {profile!r}")
    return profile


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clipped to [-1, 1]; 0 when either vector is zero."""
    a, b = np.asarray(a, dtype=np.float64).reshape(-1), np.asarray(b, dtype=np.float64).reshape(-1)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.clip(a @ b / denom, -1.0, 1.0))


def manifest_path(checkpoint: str) -> str:
    return f"{checkpoint}.manifest"


def save_model(model: Model, filename: str) -> None:
    state = model.state_dict() if isinstance(model, Enhancer) else model.network.state_dict()
    save_checkpoint(state, filename)
    path = manifest_path(filename)
    open(path, 'w').close()
    for key, value in model.manifest().items():
        set_key(path, key, str(value).lower() if isinstance(value, bool) else str(value), quote_mode='never')
    logging.info(f"Saved {model!r} to {filename}")


def read_model_manifest(filename: str) -> ModelManifest:
    path = manifest_path(filename)
    if not os.path.exists(path):
        raise CheckpointFormatError(f"Model manifest {path} is missing.")
    raw = dotenv_values(path)
    manifest: ModelManifest = {}
    for key, value in raw.items():
        if key in ('kind', 'name', 'stage'):
            manifest[key] = value or ''
        elif key == 'distilled':
            manifest[key] = (value or '').lower() == 'true'
        else:
            manifest[key] = int(value)
    return manifest


def load_model(filename: str) -> Model:
    manifest = read_model_manifest(filename)
    kind = manifest.get('kind')
    if kind == Enhancer.kind:
        model = Enhancer(encoder_channels=manifest['encoder_channels'], mask_blocks=manifest['mask_blocks'],
                         embedding_dim=manifest['embedding_dim'], kernel=manifest['encoder_kernel'],
                         stride=manifest['encoder_stride'], name=manifest.get('name', 'enhancer'))
        model.load_state_dict(load_checkpoint(filename))
    elif kind in (TdnnEmbedder.kind, TeacherEmbedder.kind):
        cls = TdnnEmbedder if kind == TdnnEmbedder.kind else TeacherEmbedder
        model = cls(channels=manifest['channels'], embedding_dim=manifest['embedding_dim'],
                    name=manifest.get('name', 'spk_embd'))
        model.network.load_state_dict(load_checkpoint(filename))
        model.distilled = manifest.get('distilled', False)
    else:
        raise CheckpointFormatError(f"Unknown model kind {kind!r} in {manifest_path(filename)}.")
    model.stage = manifest.get('stage', '')
    logging.info(f"Loaded {model!r} from {filename}")
    return model
