"""
Tests for the dense network engine and the checkpoint container
"""
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from utils.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from utils.errors import BatchSizeError, CheckpointError, ConfigError, MissingForwardStateError
from utils.neuro import (
    AdamState,
    BatchNormState,
    DenseLayer,
    Network,
    adam_step,
    backward,
    build_network,
    cross_entropy,
    grad_check,
    sgd_step,
    update_running_stats,
    xavier_init,
)


def _batch(rng, rows=8, width=4, outputs=3):
    x = rng.normal(size=(rows, width))
    t = rng.integers(0, 2, size=(rows, outputs)).astype(float)
    return x, t


# ==================== INITIALIZATION ====================

def test_xavier_statistics():
    w = xavier_init(400, 300, np.random.default_rng(0))
    limit = np.sqrt(6.0 / 700)
    assert w.shape == (400, 300)
    assert np.abs(w).max() <= limit
    assert w.var() == pytest.approx(2.0 / 700, rel=0.02)
    assert abs(w.mean()) < 5 * np.sqrt(2.0 / 700 / w.size)


def test_xavier_rejects_empty_layer():
    with pytest.raises(ConfigError):
        xavier_init(0, 3, np.random.default_rng(0))


def test_build_network_layout():
    net = build_network([8, 5, 5, 12], rng=np.random.default_rng(1))
    assert [layer.activation for layer in net.layers] == ['tanh', 'tanh', 'sigmoid']
    assert [bn is not None for bn in net.norms] == [True, True, False]
    assert all((layer.b == 0).all() for layer in net.layers)
    assert sorted(net.parameters()) == sorted([
        'layer0.W', 'layer0.b', 'layer0.gamma', 'layer0.beta',
        'layer1.W', 'layer1.b', 'layer1.gamma', 'layer1.beta',
        'layer2.W', 'layer2.b',
    ])


# ==================== BATCH NORMALIZATION ====================

def _single_bn(eps=1e-8, momentum=0.9):
    layer = DenseLayer(np.array([[1.0]]), np.zeros(1), 'identity')
    return Network([layer], [BatchNormState.fresh(1, eps=eps, momentum=momentum)])


def test_batch_norm_train_mode_example():
    net = _single_bn()
    out = net.forward(np.array([[1.0], [2.0], [3.0]]), mode='train')
    assert_allclose(out.ravel(), [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_batch_norm_running_stats():
    net = _single_bn(momentum=0.9)
    net.forward(np.array([[1.0], [2.0], [3.0]]), mode='train')
    assert net.norms[0].running_mean[0] == pytest.approx(0.2)
    assert net.norms[0].running_var[0] == pytest.approx(0.9 + 0.1 * 2.0 / 3.0)

    net.forward(np.array([[1.0], [2.0], [3.0]]), mode='train', update_stats=False)
    assert net.norms[0].running_mean[0] == pytest.approx(0.2)


def test_update_running_stats_in_place():
    bn = BatchNormState.fresh(2, momentum=0.5)
    update_running_stats(bn, np.array([2.0, 4.0]), np.array([3.0, 3.0]))
    assert_allclose(bn.running_mean, [1.0, 2.0])
    assert_allclose(bn.running_var, [2.0, 2.0])


def test_batch_norm_needs_two_rows():
    net = build_network([4, 3, 2], rng=np.random.default_rng(0))
    with pytest.raises(BatchSizeError):
        net.forward(np.ones((1, 4)), mode='train')
    # inference on a single row is fine
    assert net.forward(np.ones((1, 4))).shape == (1, 2)


def test_bad_momentum_rejected():
    with pytest.raises(ConfigError):
        BatchNormState.fresh(3, momentum=1.0)


def test_constant_batch_stays_finite():
    net = build_network([4, 6, 3], rng=np.random.default_rng(2))
    x = np.ones((5, 4))
    probs = net.forward(x, mode='train')
    grads = backward(net, np.zeros((5, 3)))
    assert np.isfinite(probs).all()
    assert all(np.isfinite(g).all() for g in grads.values())


def test_batch_norm_output_moments_follow_gamma_beta():
    rng = np.random.default_rng(4)
    bn = BatchNormState(gamma=rng.uniform(0.5, 2.0, 5), beta=rng.normal(size=5), eps=1e-8)
    net = Network([DenseLayer(rng.normal(size=(6, 5)), rng.normal(size=5), 'identity')], [bn])
    out = net.forward(rng.normal(size=(64, 6)), mode='train')
    assert_allclose(out.mean(axis=0), bn.beta, atol=1e-6)
    assert_allclose(out.var(axis=0), bn.gamma ** 2, atol=1e-4)


def test_batch_norm_input_gradient_sums_to_zero_on_constant_batch():
    rng = np.random.default_rng(5)
    bn = BatchNormState(gamma=rng.uniform(0.5, 2.0, 4), beta=rng.normal(size=4))
    net = Network([DenseLayer(rng.normal(size=(3, 4)), np.zeros(4), 'identity')], [bn])
    net.forward(np.tile([0.3, -1.0, 2.0], (16, 1)), mode='train')
    grads, grad_input = net.backward(rng.normal(size=(16, 4)))
    assert np.isfinite(grad_input).all()
    assert_allclose(grad_input.sum(axis=0), 0.0, atol=1e-9)
    assert_allclose(grads['layer0.W'], 0.0, atol=1e-9)


def test_infer_mode_matches_train_mode_after_stats_settle():
    rng = np.random.default_rng(6)
    net = build_network([4, 6, 3], rng=rng, momentum=0.9)
    shift = np.array([0.5, -1.0, 2.0, 0.0])
    for _ in range(200):
        net.forward(rng.normal(size=(256, 4)) + shift, mode='train')
    x = rng.normal(size=(4096, 4)) + shift
    train = net.forward(x, mode='train', update_stats=False)
    assert np.abs(net.predict(x) - train).max() <= 0.02


def test_predict_matches_infer_forward():
    rng = np.random.default_rng(3)
    net = build_network([4, 6, 6, 3], rng=rng)
    net.forward(rng.normal(size=(16, 4)), mode='train')
    x = rng.normal(size=(7, 4))
    assert_array_equal(net.predict(x), net.forward(x, mode='infer'))


# ==================== LOSS ====================

def test_cross_entropy_values():
    assert cross_entropy([[1.0]], [[0.5]]) == pytest.approx(np.log(2))
    assert cross_entropy([[1.0, 0.0]], [[0.9, 0.2]]) == pytest.approx(-np.log(0.9) - np.log(0.8))
    # clamped at the floor instead of returning inf
    assert np.isfinite(cross_entropy([[1.0]], [[0.0]]))
    assert cross_entropy([[1.0]], [[0.0]]) == pytest.approx(-np.log(1e-12))


def test_cross_entropy_is_non_negative():
    rng = np.random.default_rng(7)
    for i in range(50):
        t = rng.integers(0, 2, size=(8, 12)).astype(float)
        # odd rounds hit the clamp at both ends
        p = rng.choice([0.0, 1.0, 0.5, 1e-15], size=(8, 12)) if i % 2 else rng.uniform(size=(8, 12))
        assert cross_entropy(t, p) >= 0.0
    assert cross_entropy([[1.0, 0.0]], [[1.0, 0.0]]) >= 0.0


# ==================== GRADIENTS ====================

@pytest.mark.parametrize('activation', ['tanh', 'sigmoid', 'relu', 'identity'])
def test_grad_check_without_batch_norm(activation):
    rng = np.random.default_rng(10)
    net = build_network([4, 5, 3], hidden_activation=activation, batch_norm=False, rng=rng)
    x, t = _batch(rng)
    report = grad_check(net, x, t)
    assert report.passed(1e-4), str(report)


@pytest.mark.parametrize('activation', ['tanh', 'sigmoid', 'relu', 'identity'])
def test_grad_check_with_batch_norm(activation):
    rng = np.random.default_rng(11)
    net = build_network([4, 5, 5, 3], hidden_activation=activation, rng=rng)
    x, t = _batch(rng)
    report = grad_check(net, x, t)
    assert report.passed(1e-4), str(report)


def test_grad_check_catches_corrupted_gradient():
    rng = np.random.default_rng(12)
    net = build_network([4, 5, 3], rng=rng)
    x, t = _batch(rng)
    net.forward(x, mode='train', update_stats=False)
    grads = backward(net, t)
    grads['layer1.W'][2, 1] += 0.1
    report = grad_check(net, x, t, analytic=grads)
    assert not report.passed(1e-4)
    assert report.worst_param == 'layer1.W'
    assert report.worst_index == (2, 1)


def test_grad_check_step_range():
    rng = np.random.default_rng(13)
    net = build_network([4, 3], rng=rng)
    x, t = _batch(rng)
    with pytest.raises(ConfigError):
        grad_check(net, x, t, eps=1e-2)


def test_backward_needs_forward_state():
    net = build_network([4, 3, 2], rng=np.random.default_rng(0))
    with pytest.raises(MissingForwardStateError):
        backward(net, np.zeros((2, 2)))
    net.forward(np.ones((3, 4)), mode='infer')
    with pytest.raises(MissingForwardStateError):
        backward(net, np.zeros((3, 2)))


# ==================== OPTIMIZERS ====================

def test_sgd_step():
    params = {'w': np.array([1.0, -2.0])}
    sgd_step(params, {'w': np.array([0.5, 0.5])}, lr=0.2)
    assert_allclose(params['w'], [0.9, -2.1])


def test_adam_first_step_moves_by_lr():
    params = {'w': np.array([1.0, 1.0, 1.0])}
    state = AdamState(lr=1e-3)
    adam_step(params, {'w': np.array([4.0, -0.01, 0.0])}, state)
    assert_allclose(params['w'], [1.0 - 1e-3, 1.0 + 1e-3, 1.0], atol=1e-8)
    assert state.step == 1


def test_adam_zero_gradient_leaves_parameters():
    start = np.array([0.7, -1.3, 2.0])
    params = {'w': start.copy()}
    state = AdamState(lr=1e-2)
    for _ in range(20):
        adam_step(params, {'w': np.zeros(3)}, state)
    assert_array_equal(params['w'], start)


def test_adam_constant_gradient_steps_by_lr_times_sign():
    g = np.array([4.0, -0.5, 0.02])
    params = {'w': np.zeros(3)}
    state = AdamState(lr=1e-3)
    for _ in range(50):
        before = params['w'].copy()
        adam_step(params, {'w': g}, state)
        assert_allclose(params['w'] - before, -1e-3 * np.sign(g), rtol=1e-5)
    assert_allclose(params['w'], -50 * 1e-3 * np.sign(g), rtol=1e-5)


def test_training_reduces_loss():
    rng = np.random.default_rng(21)
    net = build_network([4, 8, 2], rng=rng)
    x = rng.normal(size=(64, 4))
    t = (x[:, :2] > 0).astype(float)
    state = AdamState(lr=1e-2)
    first = cross_entropy(t, net.forward(x, mode='train'))
    for _ in range(200):
        net.forward(x, mode='train')
        adam_step(net.parameters(), backward(net, t), state)
    assert cross_entropy(t, net.predict(x)) < 0.5 * first


# ==================== CHECKPOINTS ====================

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(30)
    net = build_network([4, 6, 3], rng=rng)
    net.forward(rng.normal(size=(10, 4)), mode='train')
    path = str(tmp_path / 'net.ckpt')
    save_checkpoint(path, {'decoder': net}, {'kind': 'test', 'seed': 30})

    sections, meta = load_checkpoint(path)
    assert meta == {'kind': 'test', 'seed': 30}
    x = rng.normal(size=(5, 4))
    assert_array_equal(sections['decoder'].predict(x), net.predict(x))


def test_checkpoint_bytes_are_deterministic():
    net = build_network([3, 4, 2], rng=np.random.default_rng(31))
    first = encode_checkpoint({'b': net, 'a': net.snapshot()}, {'z': 1, 'a': [1, 2]})
    again = encode_checkpoint({'a': net.snapshot(), 'b': net}, {'a': [1, 2], 'z': 1})
    assert first == again
    sections, meta = decode_checkpoint(first)
    assert encode_checkpoint(sections, meta) == first


@pytest.mark.parametrize('raw', [b'', b'NOTACKPT' + bytes(12)])
def test_corrupt_checkpoint_rejected(raw):
    with pytest.raises(CheckpointError):
        decode_checkpoint(raw)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
