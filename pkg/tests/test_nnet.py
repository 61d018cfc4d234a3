import logging

import numpy as np
import pytest

from classes.enums import LayerKind, OptimizerKind, PaddingMode
from errors import ShapeMismatchError, StaleTraceError, CheckpointFormatError, InvalidInputError
from nnet import (
    Network, LayerSpec, Parameter, Conv1d, PointwiseLinear, ReLU, L2Normalize, StatsPoolTime, Optimizer,
    grad_check, relative_error, encode_checkpoint, decode_checkpoint, save_checkpoint, load_checkpoint,
    average_gradients,
)

F64 = np.float64


def projection_loss(rng: np.random.Generator):
    """Linear random projection of the output, fixed across calls."""
    weights = {}

    def loss(y):
        if y.shape not in weights:
            weights[y.shape] = rng.normal(size=y.shape)
        c = weights[y.shape]
        return float(np.sum(c * y)), c

    return loss


LAYER_CASES = {
    'conv1d': [LayerSpec(LayerKind.CONV1D, in_channels=3, out_channels=4, kernel=3, dilation=2)],
    'conv1d-strided': [LayerSpec(LayerKind.CONV1D, in_channels=3, out_channels=2, kernel=4, stride=2)],
    'conv1d-replicate': [LayerSpec(LayerKind.CONV1D, in_channels=3, out_channels=3, kernel=3, dilation=2,
                                   padding=PaddingMode.REPLICATE)],
    'transposed-conv1d': [LayerSpec(LayerKind.TRANSPOSED_CONV1D, in_channels=3, out_channels=2, kernel=4, stride=2)],
    'pointwise-linear': [LayerSpec(LayerKind.POINTWISE_LINEAR, in_channels=3, out_channels=5)],
    'relu': [LayerSpec(LayerKind.RELU)],
    'prelu': [LayerSpec(LayerKind.PRELU, channels=3)],
    'layernorm': [LayerSpec(LayerKind.LAYERNORM, channels=3)],
    'mean-pool-time': [LayerSpec(LayerKind.MEAN_POOL_TIME)],
    'stats-pool-time': [LayerSpec(LayerKind.STATS_POOL_TIME)],
    'l2-normalize': [LayerSpec(LayerKind.L2_NORMALIZE)],
    'sigmoid-mask': [LayerSpec(LayerKind.SIGMOID_MASK)],
}


@pytest.mark.parametrize('case', sorted(LAYER_CASES))
def test_every_layer_kind_passes_grad_check(case, rng):
    net = Network.from_specs(case, LAYER_CASES[case], rng, dtype=F64)
    x = rng.normal(size=(3, 12))
    assert grad_check(net, x, projection_loss(rng), rng=rng) <= 1e-4


def test_composed_stack_passes_grad_check(rng):
    specs = [
        LayerSpec(LayerKind.CONV1D, in_channels=4, out_channels=6, kernel=3, dilation=1),
        LayerSpec(LayerKind.PRELU, channels=6),
        LayerSpec(LayerKind.LAYERNORM, channels=6),
        LayerSpec(LayerKind.CONV1D, in_channels=6, out_channels=6, kernel=3, dilation=2,
                  padding=PaddingMode.REPLICATE),
        LayerSpec(LayerKind.RELU),
        LayerSpec(LayerKind.STATS_POOL_TIME),
        LayerSpec(LayerKind.POINTWISE_LINEAR, in_channels=12, out_channels=5),
        LayerSpec(LayerKind.L2_NORMALIZE),
    ]
    net = Network.from_specs('stack', specs, rng, dtype=F64)
    assert grad_check(net, rng.normal(size=(4, 20)), projection_loss(rng), rng=rng) <= 1e-4


def test_grad_check_catches_sign_flip(rng):
    net = Network.from_specs('bad', [LayerSpec(LayerKind.POINTWISE_LINEAR, in_channels=6, out_channels=8)], rng,
                             dtype=F64)
    layer = net.layers[0]
    original = layer.backward

    def flipped(cache, gy):
        gx = original(cache, gy)
        layer.weight.grad *= -1
        return gx

    layer.backward = flipped
    assert grad_check(net, rng.normal(size=(6, 5)), projection_loss(rng), rng=rng, include_input=False) >= 1e-1


def test_grad_check_warns_on_large_step(rng, caplog):
    net = Network.from_specs('relu', [LayerSpec(LayerKind.SIGMOID_MASK)], rng, dtype=F64)
    with caplog.at_level(logging.WARNING):
        grad_check(net, rng.normal(size=(2, 3)), projection_loss(rng), step=1e-1, rng=rng)
    assert any('large' in r.getMessage() for r in caplog.records)


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 0.5) == 0.5


def test_relu_forward():
    y, _ = ReLU('relu').forward(np.array([[-1.0, 0.0, 2.0]]))
    np.testing.assert_array_equal(y, [[0.0, 0.0, 2.0]])


def test_identity_kernel_conv(rng):
    conv = Conv1d('id', 1, 1, 1, rng, dtype=F64)
    conv.weight.assign(np.ones((1, 1, 1)))
    x = rng.normal(size=(1, 9))
    np.testing.assert_array_equal(conv.forward(x)[0], x)


def test_dilated_conv_valid_length(rng):
    conv = Conv1d('dil', 2, 2, 3, rng, dilation=2, dtype=F64)
    assert conv.forward(rng.normal(size=(2, 30)))[0].shape == (2, 26)
    assert conv.output_length(30) == 26


def test_replicate_conv_keeps_length(rng):
    conv = Conv1d('rep', 2, 2, 3, rng, dilation=4, padding=PaddingMode.REPLICATE, dtype=F64)
    assert conv.forward(rng.normal(size=(2, 7)))[0].shape == (2, 7)


def test_linear_weight_gradient_closed_form(rng):
    layer = PointwiseLinear('lin', 4, 3, rng, dtype=F64)
    x = rng.normal(size=(4, 1))
    g = rng.normal(size=(3, 1))
    _, cache = layer.forward(x)
    layer.backward(cache, g)
    np.testing.assert_allclose(layer.weight.grad, g @ x.T)


def test_zero_upstream_gradient_gives_zero_parameter_gradients(rng):
    specs = [LayerSpec(LayerKind.CONV1D, in_channels=3, out_channels=4, kernel=3),
             LayerSpec(LayerKind.LAYERNORM, channels=4), LayerSpec(LayerKind.STATS_POOL_TIME)]
    net = Network.from_specs('zero', specs, rng, dtype=F64)
    y, trace = net.forward(rng.normal(size=(3, 10)))
    net.backward(trace, np.zeros_like(y))
    assert all(not p.grad.any() for p in net.parameters())


def test_shape_mismatch_names_the_layer(rng):
    net = Network.from_specs('net', [LayerSpec(LayerKind.RELU),
                                     LayerSpec(LayerKind.POINTWISE_LINEAR, in_channels=4, out_channels=2)], rng)
    with pytest.raises(ShapeMismatchError) as info:
        net.forward(rng.normal(size=(3, 5)))
    assert info.value.layer_name == 'net.1.pointwise-linear'
    assert 'net.1.pointwise-linear' in str(info.value)


def test_short_input_for_valid_conv(rng):
    conv = Conv1d('ctx', 2, 2, 5, rng)
    with pytest.raises(ShapeMismatchError):
        conv.forward(np.zeros((2, 4)))


def test_stale_trace_rejected(rng):
    net = Network.from_specs('net', [LayerSpec(LayerKind.POINTWISE_LINEAR, in_channels=2, out_channels=2)], rng)
    y, trace = net.forward(rng.normal(size=(2, 3)).astype(np.float32))
    net.backward(trace, np.ones_like(y))
    Optimizer(net.parameters(), learning_rate=0.1).step()
    with pytest.raises(StaleTraceError):
        net.backward(trace, np.ones_like(y))


def test_foreign_trace_rejected(rng):
    specs = [LayerSpec(LayerKind.RELU)]
    a = Network.from_specs('a', specs, rng)
    b = Network.from_specs('b', specs, rng)
    y, trace = a.forward(np.ones((2, 2)))
    with pytest.raises(StaleTraceError):
        b.backward(trace, y)


def test_forward_is_deterministic(rng):
    net = Network.from_specs('det', LAYER_CASES['conv1d'], rng)
    x = rng.normal(size=(3, 12)).astype(np.float32)
    np.testing.assert_array_equal(net(x), net(x))


def test_stats_pool_doubles_channels(rng):
    y, _ = StatsPoolTime('pool').forward(rng.normal(size=(5, 8)))
    assert y.shape == (10, 1)


def test_l2_normalize_unit_and_zero_columns(rng):
    layer = L2Normalize('l2')
    x = np.concatenate([rng.normal(size=(6, 3)), np.zeros((6, 1))], axis=1)
    y, cache = layer.forward(x)
    np.testing.assert_allclose(np.linalg.norm(y[:, :3], axis=0), 1.0, atol=1e-6)
    assert not y[:, 3].any()
    gx = layer.backward(cache, np.ones_like(y))
    assert not gx[:, 3].any()


def test_layer_spec_rejects_nonpositive_sizes():
    with pytest.raises(InvalidInputError):
        LayerSpec(LayerKind.CONV1D, in_channels=0, out_channels=2, kernel=3)


def test_duplicate_parameter_names_rejected(rng):
    layer = PointwiseLinear('same', 2, 2, rng)
    with pytest.raises(InvalidInputError):
        Network('dup', [layer, layer])


def test_sgd_step_arithmetic():
    p = Parameter('p', np.array([1.0]))
    p.grad[...] = 1.0
    Optimizer([p], OptimizerKind.SGD, learning_rate=0.1).step()
    assert p.value[0] == pytest.approx(0.9)
    assert p.grad[0] == 0.0
    assert p.version == 1


def test_sgd_momentum_accumulates():
    p = Parameter('p', np.array([0.0]))
    opt = Optimizer([p], OptimizerKind.SGD, learning_rate=1.0, momentum=0.5)
    for _ in range(2):
        p.grad[...] = 1.0
        opt.step()
    assert p.value[0] == pytest.approx(-2.5)


def test_adam_converges_on_quadratic():
    target = 1.0
    p = Parameter('p', np.array([3.0]))
    opt = Optimizer([p], OptimizerKind.ADAM, learning_rate=0.05)
    for _ in range(500):
        p.grad[...] = 2 * (p.value - target)
        opt.step()
    assert p.value[0] == pytest.approx(target, abs=1e-2)


def test_fine_tune_learning_rate_bound(rng):
    p = Parameter('w', rng.normal(size=50))
    before = p.value.copy()
    g = rng.normal(size=50)
    p.grad[...] = g
    Optimizer([p], OptimizerKind.SGD, learning_rate=1e-6).step()
    assert np.all(np.abs(p.value - before) <= 1e-6 * np.max(np.abs(g)) * (1 + 1e-9))


def test_gradient_clipping(rng):
    p = Parameter('w', np.zeros(4))
    p.grad[...] = [3.0, 4.0, 0.0, 0.0]
    Optimizer([p], learning_rate=1.0, clip_norm=1.0).step()
    np.testing.assert_allclose(p.value, [-0.6, -0.8, 0.0, 0.0])


def test_nonpositive_learning_rate_rejected():
    with pytest.raises(InvalidInputError):
        Optimizer([Parameter('p', np.zeros(1))], learning_rate=0.0)


def test_adam_state_resumes_the_same_trajectory():
    def run(opt, p, steps):
        for _ in range(steps):
            p.grad[...] = 2 * (p.value - 1.0)
            opt.step()

    p = Parameter('p', np.array([3.0, -2.0]))
    opt = Optimizer([p], OptimizerKind.ADAM, learning_rate=0.05)
    run(opt, p, 3)
    state = opt.state_dict()
    saved = p.value.copy()
    run(opt, p, 2)

    q = Parameter('p', saved)
    resumed = Optimizer([q], OptimizerKind.ADAM, learning_rate=0.05)
    resumed.load_state_dict(state)
    assert resumed.steps == 3
    run(resumed, q, 2)
    assert q.value.tobytes() == p.value.tobytes()


def test_optimizer_state_must_match():
    state = Optimizer([Parameter('p', np.zeros(2))], OptimizerKind.ADAM).state_dict()
    with pytest.raises(InvalidInputError):
        Optimizer([Parameter('p', np.zeros(2))], OptimizerKind.SGD).load_state_dict(state)
    with pytest.raises(InvalidInputError):
        Optimizer([Parameter('p', np.zeros(3))], OptimizerKind.ADAM).load_state_dict(state)
    with pytest.raises(InvalidInputError):
        Optimizer([Parameter('q', np.zeros(2))], OptimizerKind.ADAM).load_state_dict(state)


def test_checkpoint_round_trip_is_bit_exact(rng, tmp_path):
    tensors = {'a.weight': rng.normal(size=(3, 4, 5)).astype(np.float32), 'a.bias': np.zeros(3, np.float32),
               'scalar': np.full((), 1.5, np.float32)}
    data = encode_checkpoint(tensors)
    assert data[:8] == b'TASECKPT'
    decoded = decode_checkpoint(data)
    assert list(decoded) == list(tensors)
    for name, value in tensors.items():
        assert decoded[name].tobytes() == value.tobytes()
        assert decoded[name].shape == value.shape
    assert encode_checkpoint(decoded) == data
    path = str(tmp_path / 'ckpt' / 'net.ckpt')
    save_checkpoint(tensors, path)
    assert encode_checkpoint(load_checkpoint(path)) == data


@pytest.mark.parametrize('mangle', [
    lambda d: b'NOTACKPT' + d[8:],
    lambda d: d[:-3],
    lambda d: d + b'\x00',
    lambda d: d[:8] + (2).to_bytes(4, 'little') + d[12:],
])
def test_checkpoint_corruption_detected(mangle, rng):
    data = encode_checkpoint({'w': rng.normal(size=(2, 2)).astype(np.float32)})
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(mangle(data))


def test_state_dict_round_trip_and_strict_load(rng):
    specs = LAYER_CASES['conv1d'] + [LayerSpec(LayerKind.LAYERNORM, channels=4)]
    a = Network.from_specs('net', specs, np.random.default_rng(1))
    b = Network.from_specs('net', specs, np.random.default_rng(2))
    b.load_state_dict(a.state_dict())
    x = rng.normal(size=(3, 12)).astype(np.float32)
    np.testing.assert_array_equal(a(x), b(x))
    with pytest.raises(InvalidInputError):
        b.load_state_dict({'other': np.zeros(1)})


def test_copy_and_astype_are_independent(rng):
    net = Network.from_specs('net', LAYER_CASES['pointwise-linear'], rng)
    twin = net.copy()
    wide = net.astype(F64)
    net.parameters()[0].value += 1.0
    assert not np.array_equal(twin.parameters()[0].value, net.parameters()[0].value)
    assert wide.parameters()[0].value.dtype == F64


def test_average_gradients(rng):
    replicas = [Network.from_specs('net', LAYER_CASES['pointwise-linear'], np.random.default_rng(0)) for _ in range(2)]
    replicas[0].parameters()[0].grad[...] = 1.0
    replicas[1].parameters()[0].grad[...] = 3.0
    average_gradients(replicas)
    for net in replicas:
        np.testing.assert_array_equal(net.parameters()[0].grad, 2.0)
