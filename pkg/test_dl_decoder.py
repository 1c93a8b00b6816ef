"""
Tests for the neural decoder: data synthesis, training, decoding, storage
"""
import sys

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from utils.checkpoint import save_checkpoint
from utils.detectors import OperationCount
from utils.dl_decoder import (
    DecoderArch,
    TrainingHyper,
    TrainingSet,
    decode,
    export_training_set,
    generate_training_set,
    hard_decision,
    load_decoder,
    load_training_set,
    save_decoder,
    train_decoder,
)
from utils.errors import CheckpointError, ConfigError, ShapeMismatchError, TrainingDivergedError
from utils.neuro import build_network
from utils.scma_model import ChannelGain, encode_frames, superpose

SMALL_GAINS = ChannelGain.unit(2)


@pytest.fixture
def small_arch(small_codebook):
    return DecoderArch.for_config(small_codebook.config, hidden_layers=2, hidden_width=16)


@pytest.fixture
def noiseless_set(small_codebook):
    return generate_training_set(small_codebook.config, small_codebook, SMALL_GAINS,
                                 [(5.0, 2000)], np.random.default_rng(0), noise_disabled=True)


def test_canonical_architecture(canonical_config):
    arch = DecoderArch.for_config(canonical_config)
    assert arch.widths() == [8, 48, 48, 48, 48, 48, 48, 12]
    assert arch.operation_count() == OperationCount(14784, 252, 0)


def test_hyper_validation():
    with pytest.raises(ConfigError):
        TrainingHyper(batch_size=1)
    with pytest.raises(ConfigError):
        TrainingHyper(validation_fraction=0.5)


def test_training_set_groups(small_codebook):
    ts = generate_training_set(small_codebook.config, small_codebook, SMALL_GAINS,
                               [(3.0, 100), (6.0, 50)], np.random.default_rng(1))
    assert ts.inputs.shape == (150, 4)
    assert ts.labels.shape == (150, 3)
    assert ts.groups == ((3.0, 100), (6.0, 50))
    with pytest.raises(ConfigError):
        generate_training_set(small_codebook.config, small_codebook, SMALL_GAINS,
                              [(3.0, 0)], np.random.default_rng(1))


def test_noiseless_samples_are_exact(small_codebook, noiseless_set):
    expected = superpose(encode_frames(noiseless_set.labels, small_codebook), SMALL_GAINS)
    assert_array_equal(noiseless_set.inputs, expected)


def test_training_set_file(tmp_path, small_codebook):
    ts = generate_training_set(small_codebook.config, small_codebook, SMALL_GAINS,
                               [(2.0, 40), (4.0, 30)], np.random.default_rng(2))
    path = str(tmp_path / 'train.bin')
    export_training_set(ts, path)
    again = load_training_set(path)
    assert_array_equal(again.inputs, ts.inputs)
    assert_array_equal(again.labels, ts.labels)
    assert again.groups == ts.groups

    with open(path, 'ab') as f:
        f.write(b'\x00')
    with pytest.raises(CheckpointError):
        load_training_set(path)


def test_training_labels_are_unbiased(canonical_codebook, unit_gains):
    ts = generate_training_set(canonical_codebook.config, canonical_codebook, unit_gains,
                               [(4.0, 10_000), (8.0, 10_000)], np.random.default_rng(3))
    n = ts.labels.size
    sigma = np.sqrt(0.25 / n)
    assert abs(ts.labels.mean() - 0.5) <= 3 * sigma


def test_untrained_loss_is_near_chance(canonical_codebook, canonical_config, unit_gains):
    ts = generate_training_set(canonical_config, canonical_codebook, unit_gains,
                               [(5.0, 512)], np.random.default_rng(4))
    model = train_decoder(DecoderArch.for_config(canonical_config), ts,
                          TrainingHyper(batch_size=256, epochs=1, lr=1e-4, seed=5))
    chance = canonical_config.frame_bits * np.log(2)
    assert model.provenance['initial_loss'] == pytest.approx(chance, rel=0.25)
    assert model.loss_curve[0] == pytest.approx(chance, rel=0.25)


def test_hard_decision_threshold():
    assert_array_equal(hard_decision([[0.49, 0.5, 0.51]]), [[0, 1, 1]])


def test_training_learns_noiseless_toy_system(small_codebook, small_arch, noiseless_set):
    model = train_decoder(small_arch, noiseless_set, TrainingHyper(batch_size=64, epochs=30, lr=1e-2, seed=4))
    assert len(model.loss_curve) == 30
    assert 1 <= model.provenance['best_epoch'] <= 30
    assert model.provenance['best_loss'] < model.provenance['initial_loss']

    bits = np.random.default_rng(9).integers(0, 2, size=(500, 3))
    decoded = decode(model, superpose(encode_frames(bits, small_codebook), SMALL_GAINS))
    assert decoded.shape == (500, 3)
    assert (decoded == bits).mean() > 0.99


def test_training_is_seeded(small_arch, noiseless_set):
    hyper = TrainingHyper(batch_size=64, epochs=2, lr=1e-3, seed=6)
    first = train_decoder(small_arch, noiseless_set, hyper)
    second = train_decoder(small_arch, noiseless_set, hyper)
    assert first.loss_curve == second.loss_curve


def test_training_rejects_mismatched_arch(canonical_config, noiseless_set):
    with pytest.raises(ShapeMismatchError):
        train_decoder(DecoderArch.for_config(canonical_config), noiseless_set)


def test_training_reports_divergence(small_arch, noiseless_set):
    inputs = noiseless_set.inputs.copy()
    inputs[:, 0] = np.nan
    broken = TrainingSet(inputs, noiseless_set.labels, noiseless_set.groups)
    with pytest.raises(TrainingDivergedError):
        train_decoder(small_arch, broken, TrainingHyper(batch_size=64, epochs=1))


def test_decoder_save_load(tmp_path, small_codebook, small_arch, noiseless_set):
    model = train_decoder(small_arch, noiseless_set, TrainingHyper(batch_size=128, epochs=1, seed=2))
    model.system = small_codebook.config
    path = str(tmp_path / 'dl.ckpt')
    save_decoder(model, path, extra={'codebook': 'toy'})
    again = load_decoder(path)
    assert again.arch == model.arch
    assert again.loss_curve == model.loss_curve
    assert again.system == small_codebook.config
    frames = noiseless_set.inputs[:50]
    assert_array_equal(decode(again, frames), decode(model, frames))


def test_load_decoder_rejects_other_checkpoints(tmp_path):
    path = str(tmp_path / 'other.ckpt')
    save_checkpoint(path, {'decoder': build_network([4, 3])}, {'kind': 'autoencoder'})
    with pytest.raises(CheckpointError):
        load_decoder(path)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
