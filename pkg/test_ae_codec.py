"""
Tests for the codebook autoencoder
"""
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from utils.ae_codec import (
    AETrainingHyper,
    JointSymbolStream,
    StackArch,
    ae_backward,
    ae_forward,
    build_autoencoder,
    extract_codebooks,
    load_autoencoder,
    make_dcma_masks,
    noiseless_round_trip,
    overlap_degree,
    save_autoencoder,
    train_autoencoder,
)
from utils.checkpoint import save_checkpoint
from utils.errors import CheckpointError, ConfigError, MissingForwardStateError
from utils.neuro import build_network, compare_gradients, cross_entropy
from utils.scma_model import FactorGraph, derive_masks, encode_frames, superpose

TINY_ENCODER = StackArch(1, 4)
TINY_DECODER = StackArch(1, 6)


@pytest.fixture
def small_ae(small_codebook):
    masks = derive_masks(small_codebook.graph())
    return build_autoencoder(small_codebook.config, masks, TINY_ENCODER, TINY_DECODER,
                             rng=np.random.default_rng(0))


def _all_bits(ae):
    stream = JointSymbolStream(ae.config, np.random.default_rng(0))
    return stream.bits(np.arange(stream.total)).astype(float)


# ==================== MASKS ====================

def test_dcma_density_one_is_fully_dense(canonical_config):
    masks = make_dcma_masks(canonical_config, density=1.0)
    per_resource, d_f = overlap_degree(masks)
    assert_array_equal(per_resource, [6, 6, 6, 6])
    assert d_f == 6.0
    assert all(m.ones == 8 for m in masks)


def test_dcma_base_density_reproduces_sparse_graph(canonical_config):
    masks = make_dcma_masks(canonical_config, density=0.5)
    for mask, expected in zip(masks, derive_masks(FactorGraph.canonical())):
        assert_array_equal(mask.vector, expected.vector)
    assert overlap_degree(masks)[1] == 3.0


def test_dcma_partial_density(canonical_config):
    masks = make_dcma_masks(canonical_config, density=0.75)
    base = FactorGraph.canonical()
    for j, mask in enumerate(masks):
        assert len(mask.support) == 3
        assert set(base.support(j)) <= set(mask.support)


def test_dcma_explicit_pattern(canonical_config):
    pattern = np.ones((4, 6), dtype=np.uint8)
    pattern[0, 0] = 0
    masks = make_dcma_masks(canonical_config, pattern=pattern)
    assert masks[0].support == (1, 2, 3)
    with pytest.raises(ConfigError):
        make_dcma_masks(canonical_config, density=0.0)


# ==================== FORWARD / BACKWARD ====================

def test_masked_positions_are_exact_zeros(small_ae):
    result = ae_forward(small_ae, _all_bits(small_ae), 5.0, np.random.default_rng(1), mode='train')
    for output, mask in zip(result.user_outputs, small_ae.masks):
        off = mask.vector == 0
        assert (output[:, off] == 0).all()
        assert not np.signbit(output[:, off]).any()


def test_extracted_codebook_matches_infer_forward(small_ae):
    ae_forward(small_ae, _all_bits(small_ae), 5.0, np.random.default_rng(2), mode='train')
    bits = _all_bits(small_ae)
    result = ae_forward(small_ae, bits, None, None, mode='infer')
    codebook = extract_codebooks(small_ae)
    assert codebook.supports == ((0,), (1,), (0,))
    expected = superpose(encode_frames(bits.astype(np.uint8), codebook), small_ae.gains)
    assert_allclose(result.clean, expected, rtol=0, atol=1e-12)


def test_backward_matches_finite_differences(small_ae):
    """Noise is drawn once and held fixed so the loss is a function of the weights only"""
    rng = np.random.default_rng(3)
    bits = _all_bits(small_ae)
    noise = rng.normal(0.0, 0.3, size=(bits.shape[0], 4))

    ae_forward(small_ae, bits, None, None, mode='train', noise=noise, update_stats=False)
    analytic = ae_backward(small_ae, bits)

    def loss_fn():
        result = ae_forward(small_ae, bits, None, None, mode='train', noise=noise, update_stats=False)
        return cross_entropy(bits, result.probs)

    report = compare_gradients(small_ae.parameters(), analytic, loss_fn)
    assert report.passed(1e-4), str(report)


def test_backward_needs_forward(small_ae):
    with pytest.raises(MissingForwardStateError):
        ae_backward(small_ae, _all_bits(small_ae))


def test_train_mode_noise_tracks_batch_power(small_ae):
    bits = _all_bits(small_ae)
    result = ae_forward(small_ae, bits, 5.0, np.random.default_rng(4), mode='train')
    power = (result.clean ** 2).sum(axis=1).mean()
    snr = 10 ** 0.5 * 1 * 3 / 2
    assert result.noise_var == pytest.approx(power / (snr * 4))


# ==================== TRAINING ====================

def test_joint_stream_covers_every_symbol(canonical_config):
    stream = JointSymbolStream(canonical_config, np.random.default_rng(5))
    first = stream.draw(100)
    assert len(set(first.tolist())) == 100
    assert stream.coverage()['visited'] == 100
    stream.draw(3996)
    assert stream.coverage() == {'visited': 4096, 'total': 4096, 'complete': True}


def test_training_runs_and_improves(small_ae):
    untrained = noiseless_round_trip(small_ae)
    hyper = AETrainingHyper(train_ebn0_db=10.0, batch_size=32, samples=512, epochs=30, lr=1e-2, seed=6)
    result = train_autoencoder(small_ae, hyper)
    assert len(result.loss_curve) == 30
    assert result.loss_curve[-1] < result.loss_curve[0]
    assert result.coverage['complete']
    assert noiseless_round_trip(result.autoencoder) <= min(0.05, untrained)


def test_learned_codeword_components_stay_in_unit_range(small_ae, canonical_config):
    train_autoencoder(small_ae, AETrainingHyper(train_ebn0_db=5.0, batch_size=32, samples=256,
                                                epochs=3, lr=5e-2, seed=9))
    dense = build_autoencoder(canonical_config, make_dcma_masks(canonical_config, density=1.0),
                              TINY_ENCODER, TINY_DECODER, rng=np.random.default_rng(10))
    for codebook in (extract_codebooks(small_ae), extract_codebooks(dense)):
        assert np.abs(codebook.codewords.real).max() <= 1.0
        assert np.abs(codebook.codewords.imag).max() <= 1.0


@pytest.mark.parametrize('density', [1.0, 0.5])
def test_users_per_resource_in_extracted_codebook(canonical_config, density):
    masks = make_dcma_masks(canonical_config, density=density)
    ae = build_autoencoder(canonical_config, masks, TINY_ENCODER, TINY_DECODER, rng=np.random.default_rng(11))
    codebook = extract_codebooks(ae)
    # a user occupies a resource when any of its codewords is nonzero there
    per_resource = (np.abs(codebook.codewords) > 0).any(axis=1).sum(axis=0)
    expected, d_f = overlap_degree(masks)
    assert_array_equal(per_resource, expected)
    if density == 1.0:
        assert (per_resource == canonical_config.users).all()
    else:
        assert per_resource.max() <= d_f


# ==================== PERSISTENCE ====================

def test_dense_autoencoder_codebook_config(canonical_config):
    masks = make_dcma_masks(canonical_config, density=1.0)
    ae = build_autoencoder(canonical_config, masks, TINY_ENCODER, TINY_DECODER, rng=np.random.default_rng(7))
    codebook = extract_codebooks(ae)
    assert codebook.config.mode == 'dcma'
    assert codebook.config.nonzero_per_codeword == 4
    assert codebook.config.overlap_degree == 6


def test_save_load_preserves_codebook(tmp_path, small_ae):
    ae_forward(small_ae, _all_bits(small_ae), 5.0, np.random.default_rng(8), mode='train')
    path = str(tmp_path / 'ae.ckpt')
    save_autoencoder(small_ae, path, provenance={'seed': 8})
    again = load_autoencoder(path)
    assert again.config == small_ae.config
    assert_array_equal(extract_codebooks(again).codewords, extract_codebooks(small_ae).codewords)


def test_load_rejects_decoder_checkpoint(tmp_path):
    path = str(tmp_path / 'dl.ckpt')
    save_checkpoint(path, {'decoder': build_network([4, 3])}, {'kind': 'dl-decoder'})
    with pytest.raises(CheckpointError):
        load_autoencoder(path)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
